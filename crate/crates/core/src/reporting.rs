//! Leaderboards, cost/performance regressions, radar data and report
//! rendering for a cohort of run records.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::failure::FailureCategory;
use crate::metrics::{
    aei_of_figures, maxima_of_figures, AeiBreakdown, CohortMaxima, Dimension, MetricsError,
    RecordFigures,
};
use crate::orchestrator::{Mode, RunRecord};
use crate::sandbox::{write_atomic, SandboxError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("regression needs at least two points with distinct x and y values")]
    DegenerateData,
    #[error("regression predictor must be positive, got {0}")]
    NonPositivePredictor(f64),
    #[error("{dimension} is unknown or zero for {model_id}")]
    UnknownValue {
        model_id: String,
        dimension: Dimension,
    },
    #[error("unsupported report format {0:?}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("could not serialize report: {0}")]
    Serialize(String),
    #[error(transparent)]
    Write(#[from] SandboxError),
}

/// Reward used for ranking: the published figure when there is one,
/// otherwise the value computed from task scores.
pub fn effective_mr(record: &RunRecord) -> f64 {
    RecordFigures::of(record).reward
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub run_id: String,
    pub model_id: String,
    pub mode: Mode,
    pub per_task_scores: Vec<f64>,
    pub mr_reported: Option<f64>,
    pub mr_computed: f64,
    /// Computed minus reported, when a reported value exists.
    pub mr_delta: Option<f64>,
    pub cost: Option<f64>,
    pub stage: i64,
    pub aei: Option<f64>,
    pub failure_category: Option<FailureCategory>,
}

fn entry_of(record: &RunRecord) -> LeaderboardEntry {
    let figures = RecordFigures::of(record);
    let mr_computed = record
        .metrics
        .as_ref()
        .map(|m| m.mr)
        .or_else(|| crate::metrics::run_metrics(record).ok().map(|m| m.mr))
        .unwrap_or(0.0);
    let mr_reported = record.published.as_ref().map(|p| p.mr);
    LeaderboardEntry {
        rank: 0,
        run_id: record.run_id.clone(),
        model_id: record.model_id.clone(),
        mode: record.mode,
        per_task_scores: record.scores(),
        mr_reported,
        mr_computed,
        mr_delta: mr_reported.map(|r| mr_computed - r),
        cost: figures.cost,
        stage: figures.stage,
        aei: None,
        failure_category: record.failure.as_ref().map(|f| f.category),
    }
}

fn entry_order(a: &LeaderboardEntry, b: &LeaderboardEntry) -> Ordering {
    let mr = |e: &LeaderboardEntry| e.mr_reported.unwrap_or(e.mr_computed);
    mr(b)
        .total_cmp(&mr(a))
        .then_with(|| match (a.cost, b.cost) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        })
        .then_with(|| a.model_id.cmp(&b.model_id))
        .then_with(|| a.run_id.cmp(&b.run_id))
}

/// Orders by reward descending, then cost ascending with unknown cost last,
/// then model id. Ranks run 1..n.
pub fn rank(records: &[RunRecord]) -> Vec<LeaderboardEntry> {
    let mut entries: Vec<LeaderboardEntry> = records.iter().map(entry_of).collect();
    entries.sort_by(entry_order);
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    entries
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    Log10Cost,
    Log10Time,
}

impl Predictor {
    pub fn dimension(self) -> Dimension {
        match self {
            Predictor::Log10Cost => Dimension::Cost,
            Predictor::Log10Time => Dimension::Time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
    pub predictor: Predictor,
}

/// Ordinary least squares of `y` on `log10(x)` with an intercept.
pub fn ols_fit(points: &[(f64, f64)], predictor: Predictor) -> Result<RegressionFit, ReportError> {
    if points.len() < 2 {
        return Err(ReportError::DegenerateData);
    }
    if let Some(&(x, _)) = points.iter().find(|(x, _)| x.is_nan() || *x <= 0.0) {
        return Err(ReportError::NonPositivePredictor(x));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| *y).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    if sxx == 0.0 || ss_tot == 0.0 {
        return Err(ReportError::DegenerateData);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared: (1.0 - ss_res / ss_tot).clamp(0.0, 1.0),
        n: points.len(),
        predictor,
    })
}

/// Points for a regression of effective reward on a resource, skipping
/// records where that resource is unknown or not positive.
pub fn regression_points(records: &[RunRecord], predictor: Predictor) -> Vec<(f64, f64)> {
    records
        .iter()
        .map(RecordFigures::of)
        .filter_map(|f| {
            f.value(predictor.dimension())
                .filter(|&x| x > 0.0)
                .map(|x| (x, f.reward))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarProfile {
    pub model_id: String,
    pub stage: f64,
    pub reward: f64,
    pub time: f64,
    pub cost: f64,
    pub tokens: f64,
}

/// Radar axes are the efficiency-index components, unchanged.
pub fn radar(record: &RunRecord, maxima: &CohortMaxima) -> Result<RadarProfile, MetricsError> {
    let b = crate::metrics::aei(record, maxima)?;
    Ok(radar_of(&record.model_id, &b))
}

fn radar_of(model_id: &str, b: &AeiBreakdown) -> RadarProfile {
    RadarProfile {
        model_id: model_id.to_string(),
        stage: b.s_stage,
        reward: b.s_reward,
        time: b.s_time,
        cost: b.s_cost,
        tokens: b.s_tokens,
    }
}

/// `a`'s value over `b`'s for a resource dimension.
pub fn resource_ratio(
    a: &RunRecord,
    b: &RunRecord,
    dimension: Dimension,
) -> Result<f64, ReportError> {
    let fa = RecordFigures::of(a);
    let fb = RecordFigures::of(b);
    let unknown = |f: &RecordFigures| ReportError::UnknownValue {
        model_id: f.model_id.clone(),
        dimension,
    };
    let va = fa.value(dimension).ok_or_else(|| unknown(&fa))?;
    let vb = fb
        .value(dimension)
        .filter(|&v| v > 0.0)
        .ok_or_else(|| unknown(&fb))?;
    Ok(va / vb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub model_id: String,
    pub per_task_scores: Vec<f64>,
    pub mr: f64,
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub entries: Vec<LeaderboardEntry>,
    #[serde(default)]
    pub baseline: Option<BaselineRow>,
    pub maxima: Option<CohortMaxima>,
    pub fits: Vec<RegressionFit>,
    pub radar: Vec<RadarProfile>,
    pub exclusions: Vec<Exclusion>,
    pub generated_at: String,
}

/// Ranks the cohort, computes maxima, efficiency indices, both regressions
/// and radar profiles. `generated_at` is stamped verbatim so that equal
/// inputs render identically.
pub fn build_leaderboard(
    records: &[RunRecord],
    baseline: Option<&RunRecord>,
    generated_at: &str,
) -> Leaderboard {
    let mut entries = rank(records);
    let figures: Vec<RecordFigures> = records.iter().map(RecordFigures::of).collect();
    let maxima = maxima_of_figures(&figures).ok();
    let figures_of = |run_id: &str| {
        records
            .iter()
            .zip(&figures)
            .find(|(r, _)| r.run_id == run_id)
            .map(|(_, f)| f)
            .expect("every entry comes from a record")
    };
    let mut exclusions = Vec::new();
    let mut radar_profiles = Vec::new();
    if let Some(maxima) = &maxima {
        for entry in &mut entries {
            match aei_of_figures(figures_of(&entry.run_id), maxima) {
                Ok(b) => {
                    entry.aei = Some(b.aei);
                    radar_profiles.push(radar_of(&entry.model_id, &b));
                }
                Err(e) => exclusions.push(Exclusion {
                    model_id: entry.model_id.clone(),
                    reason: format!("no efficiency index: {e}"),
                }),
            }
        }
    }
    for f in &figures {
        if f.cost.is_none() {
            exclusions.push(Exclusion {
                model_id: f.model_id.clone(),
                reason: "cost unknown: left out of cost maximum and cost regression".to_string(),
            });
        }
    }
    let fits = [Predictor::Log10Cost, Predictor::Log10Time]
        .into_iter()
        .filter_map(|p| ols_fit(&regression_points(records, p), p).ok())
        .collect();
    let baseline = baseline.map(|b| BaselineRow {
        model_id: b.model_id.clone(),
        per_task_scores: b.scores(),
        mr: effective_mr(b),
        cost: RecordFigures::of(b).cost,
    });
    Leaderboard {
        entries,
        baseline,
        maxima,
        fits,
        radar: radar_profiles,
        exclusions,
        generated_at: generated_at.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(ReportError::UnsupportedFormat(s.to_string())),
        }
    }
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_opt(v: Option<f64>, missing: &str) -> String {
    v.map_or_else(|| missing.to_string(), fmt2)
}

fn task_count(board: &Leaderboard) -> usize {
    board
        .entries
        .iter()
        .map(|e| e.per_task_scores.len())
        .chain(board.baseline.iter().map(|b| b.per_task_scores.len()))
        .max()
        .unwrap_or(0)
}

pub fn render(board: &Leaderboard, format: ReportFormat) -> Result<String, ReportError> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(board)
                .map_err(|e| ReportError::Serialize(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => render_csv(board),
        ReportFormat::Markdown => Ok(render_markdown(board)),
    }
}

fn render_csv(board: &Leaderboard) -> Result<String, ReportError> {
    let tasks = task_count(board);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["rank".to_string(), "model".to_string(), "mode".to_string()];
    header.extend((0..tasks).map(|t| format!("t{t}")));
    header.extend(["mr", "mr_computed", "cost", "stage", "aei", "failure"].map(String::from));
    let ser = |e: csv::Error| ReportError::Serialize(e.to_string());
    wtr.write_record(&header).map_err(ser)?;
    for e in &board.entries {
        let mut row = vec![
            e.rank.to_string(),
            e.model_id.clone(),
            mode_label(e.mode).to_string(),
        ];
        row.extend((0..tasks).map(|t| fmt_opt(e.per_task_scores.get(t).copied(), "")));
        row.push(fmt2(e.mr_reported.unwrap_or(e.mr_computed)));
        row.push(fmt2(e.mr_computed));
        row.push(fmt_opt(e.cost, ""));
        row.push(e.stage.to_string());
        row.push(fmt_opt(e.aei, ""));
        row.push(
            e.failure_category
                .map(|c| format!("{c:?}"))
                .unwrap_or_default(),
        );
        wtr.write_record(&row).map_err(ser)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| ReportError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Serialize(e.to_string()))
}

fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::SerialWithResurrection => "mode 1",
        Mode::SerialCascade => "mode 2",
    }
}

fn render_markdown(board: &Leaderboard) -> String {
    let tasks = task_count(board);
    let mut out = String::new();
    let _ = write!(out, "| Rank | Model |");
    for t in 0..tasks {
        let _ = write!(out, " T{t} |");
    }
    out.push_str(" MR | Cost$ |\n|---:|---|");
    for _ in 0..tasks {
        out.push_str("---:|");
    }
    out.push_str("---:|---:|\n");
    let row =
        |out: &mut String, rank: &str, model: &str, scores: &[f64], mr: f64, cost: Option<f64>| {
            let _ = write!(out, "| {rank} | {model} |");
            for t in 0..tasks {
                let _ = write!(out, " {} |", fmt_opt(scores.get(t).copied(), ""));
            }
            let _ = writeln!(out, " {} | {} |", fmt2(mr), fmt_opt(cost, "---"));
        };
    let mixed_modes = board
        .entries
        .iter()
        .any(|e| e.mode != board.entries[0].mode);
    for e in &board.entries {
        let label = if mixed_modes {
            format!("{} ({})", e.model_id, mode_label(e.mode))
        } else {
            e.model_id.clone()
        };
        row(
            &mut out,
            &e.rank.to_string(),
            &label,
            &e.per_task_scores,
            e.mr_reported.unwrap_or(e.mr_computed),
            e.cost,
        );
    }
    if let Some(b) = &board.baseline {
        row(&mut out, "-", &b.model_id, &b.per_task_scores, b.mr, b.cost);
    }
    if !board.fits.is_empty() {
        out.push_str("\n| Fit | n | slope | intercept | R² |\n|---|---:|---:|---:|---:|\n");
        for f in &board.fits {
            let name = match f.predictor {
                Predictor::Log10Cost => "MR ~ log10(cost)",
                Predictor::Log10Time => "MR ~ log10(time)",
            };
            let _ = writeln!(
                out,
                "| {name} | {} | {:.2} | {:.2} | {:.3} |",
                f.n, f.slope, f.intercept, f.r_squared
            );
        }
    }
    if !board.exclusions.is_empty() {
        out.push_str("\nExclusions:\n");
        for x in &board.exclusions {
            let _ = writeln!(out, "- {}: {}", x.model_id, x.reason);
        }
    }
    out
}

/// Writes a rendered report in one step: either the old file or the full new
/// one is visible, never a partial write.
pub fn write_report(path: &Path, contents: &str) -> Result<(), ReportError> {
    write_atomic(path, contents.as_bytes())?;
    Ok(())
}
