//! Loads published results tables into run records so the same analytics
//! can be replayed without running agents.
//!
//! Score table columns: `model,t0,t1,t2,t3,t4,t5,mr,cost`. A cost of `---`
//! means unknown. A row whose model is `Baseline` is kept apart from the
//! ranked rows. Companion extras columns: `model,time_s,tokens_m,stage`,
//! where empty fields are unknown and `tokens_m` is in millions.
//! Lines starting with `#` are comments in both files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ExecutionTrace, ResourceUsage};
use crate::failure::{classify_run, ClassifierConfig};
use crate::metrics::run_metrics;
use crate::orchestrator::{Mode, RunRecord, TaskResult};

pub const TABLE_HEADER: [&str; 9] = ["model", "t0", "t1", "t2", "t3", "t4", "t5", "mr", "cost"];
pub const EXTRAS_HEADER: [&str; 4] = ["model", "time_s", "tokens_m", "stage"];
pub const UNKNOWN_COST: &str = "---";
pub const BASELINE_MODEL: &str = "Baseline";
/// Task weights of the six-task compiler chain the published tables use.
pub const TABLE_WEIGHTS: [f64; 6] = [0.05, 0.20, 0.20, 0.15, 0.30, 0.10];
pub const TABLE_CHAIN_ID: &str = "published";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at line {line}: {reason}")]
    Schema { line: u64, reason: String },
    #[error("{model}: {field} = {value} is out of range")]
    Range {
        model: String,
        field: String,
        value: f64,
    },
}

fn schema(line: u64, reason: impl Into<String>) -> IngestError {
    IngestError::Schema {
        line,
        reason: reason.into(),
    }
}

/// Figures published alongside a table rather than inside it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PublishedExtras {
    pub time_s: Option<f64>,
    pub tokens_m: Option<f64>,
    pub stage: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    pub model_id: String,
    pub scores: Vec<f64>,
    pub mr_reported: f64,
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extras: Option<PublishedExtras>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PublishedTable {
    pub rows: Vec<PublishedRow>,
    pub baseline: Option<PublishedRow>,
}

impl PublishedTable {
    pub fn score_matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.scores.clone()).collect()
    }

    pub fn row(&self, model_id: &str) -> Option<&PublishedRow> {
        self.rows
            .iter()
            .chain(self.baseline.as_ref())
            .find(|r| r.model_id == model_id)
    }
}

/// Published figures carried on a replayed run record. Token counts are raw
/// tokens, not millions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedFigures {
    pub mr: f64,
    pub cost: Option<f64>,
    pub time_s: Option<f64>,
    pub tokens: Option<f64>,
    pub stage: Option<i64>,
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), IngestError> {
    let header = rdr.headers().map_err(|e| schema(1, e.to_string()))?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(schema(
            1,
            format!("header {found:?} does not match {expected:?}"),
        ));
    }
    Ok(())
}

fn parse_number(field: &str, line: u64, name: &str) -> Result<f64, IngestError> {
    let value: f64 = field
        .parse()
        .map_err(|_| schema(line, format!("{name} {field:?} is not a number")))?;
    if !value.is_finite() {
        return Err(schema(line, format!("{name} {field:?} is not finite")));
    }
    Ok(value)
}

fn parse_optional(field: &str, line: u64, name: &str) -> Result<Option<f64>, IngestError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_number(field, line, name).map(Some)
    }
}

fn in_range(model: &str, field: &str, value: f64, lo: f64, hi: f64) -> Result<f64, IngestError> {
    if (lo..=hi).contains(&value) {
        Ok(value)
    } else {
        Err(IngestError::Range {
            model: model.to_string(),
            field: field.to_string(),
            value,
        })
    }
}

pub fn parse_table<R: Read>(input: R) -> Result<PublishedTable, IngestError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &TABLE_HEADER)?;
    let mut table = PublishedTable::default();
    for record in rdr.records() {
        let record =
            record.map_err(|e| schema(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != TABLE_HEADER.len() {
            return Err(schema(
                line,
                format!(
                    "expected {} fields, found {}",
                    TABLE_HEADER.len(),
                    record.len()
                ),
            ));
        }
        let model = record[0].to_string();
        if model.is_empty() {
            return Err(schema(line, "model name is empty"));
        }
        let mut scores = Vec::with_capacity(6);
        for (i, name) in TABLE_HEADER[1..7].iter().enumerate() {
            let value = parse_number(&record[i + 1], line, name)?;
            scores.push(in_range(&model, name, value, 0.0, 100.0)?);
        }
        let mr = in_range(
            &model,
            "mr",
            parse_number(&record[7], line, "mr")?,
            0.0,
            100.0,
        )?;
        let cost = match &record[8] {
            UNKNOWN_COST | "" => None,
            field => Some(in_range(
                &model,
                "cost",
                parse_number(field, line, "cost")?,
                0.0,
                f64::MAX,
            )?),
        };
        let row = PublishedRow {
            model_id: model,
            scores,
            mr_reported: mr,
            cost,
            extras: None,
        };
        if row.model_id.eq_ignore_ascii_case(BASELINE_MODEL) {
            if table.baseline.is_some() {
                return Err(schema(line, "more than one baseline row"));
            }
            table.baseline = Some(row);
        } else {
            if table.rows.iter().any(|r| r.model_id == row.model_id) {
                return Err(schema(line, format!("duplicate model {}", row.model_id)));
            }
            table.rows.push(row);
        }
    }
    Ok(table)
}

pub fn ingest_table(path: &Path) -> Result<PublishedTable, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_table(file)
}

pub fn parse_extras<R: Read>(input: R) -> Result<BTreeMap<String, PublishedExtras>, IngestError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &EXTRAS_HEADER)?;
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record =
            record.map_err(|e| schema(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != EXTRAS_HEADER.len() {
            return Err(schema(line, "wrong number of fields"));
        }
        let model = record[0].to_string();
        let time_s = parse_optional(&record[1], line, "time_s")?;
        let tokens_m = parse_optional(&record[2], line, "tokens_m")?;
        for (name, value) in [("time_s", time_s), ("tokens_m", tokens_m)] {
            if let Some(v) = value {
                in_range(&model, name, v, 0.0, f64::MAX)?;
            }
        }
        let stage = match &record[3] {
            "" => None,
            field => Some(
                field
                    .parse::<i64>()
                    .map_err(|_| schema(line, format!("stage {field:?} is not an integer")))?,
            ),
        };
        out.insert(
            model,
            PublishedExtras {
                time_s,
                tokens_m,
                stage,
            },
        );
    }
    Ok(out)
}

pub fn ingest_extras(path: &Path) -> Result<BTreeMap<String, PublishedExtras>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_extras(file)
}

/// Attaches extras to matching rows. Returns the extras models that did not
/// match any row.
pub fn attach_extras(
    table: &mut PublishedTable,
    extras: &BTreeMap<String, PublishedExtras>,
) -> Vec<String> {
    let mut unmatched = Vec::new();
    for (model, extra) in extras {
        let row = table
            .rows
            .iter_mut()
            .chain(table.baseline.as_mut())
            .find(|r| &r.model_id == model);
        match row {
            Some(row) => row.extras = Some(extra.clone()),
            None => unmatched.push(model.clone()),
        }
    }
    unmatched
}

/// Writes a table in the same format [`parse_table`] reads. Numbers are
/// written in their shortest exact form.
pub fn write_table<W: Write>(table: &PublishedTable, out: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(TABLE_HEADER)?;
    for row in table.rows.iter().chain(table.baseline.as_ref()) {
        let mut fields = vec![row.model_id.clone()];
        fields.extend(row.scores.iter().map(f64::to_string));
        fields.push(row.mr_reported.to_string());
        fields.push(
            row.cost
                .map_or_else(|| UNKNOWN_COST.to_string(), |c| c.to_string()),
        );
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Turns published rows into cascade-mode run records with empty traces.
/// Published figures ride along in `published`.
pub fn to_records(rows: &[PublishedRow], threshold: f64) -> Vec<RunRecord> {
    rows.iter().map(|row| to_record(row, threshold)).collect()
}

pub fn to_record(row: &PublishedRow, threshold: f64) -> RunRecord {
    let results = row
        .scores
        .iter()
        .enumerate()
        .map(|(task_id, &score)| TaskResult {
            task_id,
            score,
            passed: score >= threshold,
            resurrected_before_next: false,
            usage: ResourceUsage::default(),
        })
        .collect();
    let extras = row.extras.clone().unwrap_or_default();
    let mut record = RunRecord {
        run_id: format!("published-{}", row.model_id),
        model_id: row.model_id.clone(),
        mode: Mode::SerialCascade,
        chain_id: TABLE_CHAIN_ID.to_string(),
        weights: TABLE_WEIGHTS[..row.scores.len().min(TABLE_WEIGHTS.len())].to_vec(),
        pass_threshold: threshold,
        results,
        trace: ExecutionTrace::new(row.model_id.clone(), TABLE_CHAIN_ID),
        trace_file: None,
        usage: ResourceUsage {
            total_cost: row.cost,
            ..ResourceUsage::default()
        },
        resurrections: Vec::new(),
        metrics: None,
        failure: None,
        published: Some(PublishedFigures {
            mr: row.mr_reported,
            cost: row.cost,
            time_s: extras.time_s,
            tokens: extras.tokens_m.map(|m| m * 1e6),
            stage: extras.stage,
        }),
    };
    record.metrics = run_metrics(&record).ok();
    record.failure = classify_run(&record, &ClassifierConfig::default());
    record
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# sample
model,t0,t1,t2,t3,t4,t5,mr,cost
A,100,100,100,100,68.4,100,93.39,126.24
B,100,67.4,38.5,1.4,39.6,0,30.88,---
Baseline,100,17.6,20.6,1.4,35.1,0.0,23.38,---
";

    #[test]
    fn parses_rows_and_baseline() {
        let table = parse_table(SAMPLE.as_bytes()).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[1].cost, None);
        assert_eq!(table.baseline.as_ref().unwrap().mr_reported, 23.38);
    }

    #[test]
    fn out_of_range_score() {
        let bad = "model,t0,t1,t2,t3,t4,t5,mr,cost\nX,101,0,0,0,0,0,1,1\n";
        assert!(matches!(
            parse_table(bad.as_bytes()),
            Err(IngestError::Range { .. })
        ));
    }

    #[test]
    fn wrong_header() {
        let bad = "model,t0,mr\nX,1,1\n";
        assert!(matches!(
            parse_table(bad.as_bytes()),
            Err(IngestError::Schema { .. })
        ));
    }

    #[test]
    fn threshold_sets_passed_flags() {
        let table = parse_table(SAMPLE.as_bytes()).unwrap();
        let records = to_records(&table.rows, 60.0);
        assert!(records[0].results.iter().all(|r| r.passed));
        let none = to_records(&table.rows, 101.0);
        assert!(none.iter().flat_map(|r| &r.results).all(|r| !r.passed));
    }

    #[test]
    fn extras_parse_blank_as_unknown() {
        let text = "model,time_s,tokens_m,stage\nA,11913.79,218.86,\nB,,22.18,3\n";
        let extras = parse_extras(text.as_bytes()).unwrap();
        assert_eq!(extras["A"].stage, None);
        assert_eq!(extras["B"].time_s, None);
        assert_eq!(extras["B"].stage, Some(3));
    }
}
