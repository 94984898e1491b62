//! Run-level scoring: mean reward, pipeline stage, and the cohort-relative
//! efficiency index, plus column statistics over score tables.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{RunRecord, TaskResult};
use crate::workload::WeightVector;

/// Factor for a task whose output was used as produced.
pub const UNASSISTED_FACTOR: f64 = 1.2;
/// Factor for a task whose output was replaced by the golden artifact.
pub const RESURRECTED_FACTOR: f64 = 1.0;
/// Score a task needs for it to count toward the pipeline stage.
pub const PERFECT_SCORE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Stage,
    Reward,
    Time,
    Cost,
    Tokens,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Stage => "stage",
            Dimension::Reward => "reward",
            Dimension::Time => "time",
            Dimension::Cost => "cost",
            Dimension::Tokens => "tokens",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{scores} scores but {weights} weights")]
    DimensionMismatch { scores: usize, weights: usize },
    #[error("weights and factors must be positive and finite")]
    InvalidWeights,
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("cost is unknown for {0}")]
    UnknownCost(String),
    #[error("{dimension} is unknown for {model_id}")]
    UnknownValue {
        model_id: String,
        dimension: Dimension,
    },
    #[error("{dimension} of {model_id} lies outside the cohort maxima")]
    OutsideCohort {
        model_id: String,
        dimension: Dimension,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRResult {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub per_task_b: Vec<f64>,
}

pub fn resurrection_factor(result: &TaskResult) -> f64 {
    if result.resurrected_before_next {
        RESURRECTED_FACTOR
    } else {
        UNASSISTED_FACTOR
    }
}

/// Weighted mean of task scores where each weight is scaled by the task's
/// resurrection factor.
pub fn mean_reward(
    results: &[TaskResult],
    weights: &WeightVector,
) -> Result<MRResult, MetricsError> {
    let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
    let factors: Vec<f64> = results.iter().map(resurrection_factor).collect();
    mean_reward_raw(&scores, weights.as_slice(), &factors)
}

pub fn mean_reward_raw(
    scores: &[f64],
    weights: &[f64],
    factors: &[f64],
) -> Result<MRResult, MetricsError> {
    if scores.len() != weights.len() || scores.len() != factors.len() {
        return Err(MetricsError::DimensionMismatch {
            scores: scores.len(),
            weights: weights.len(),
        });
    }
    let positive = |x: &f64| x.is_finite() && *x > 0.0;
    if scores.is_empty() || !weights.iter().all(positive) || !factors.iter().all(positive) {
        return Err(MetricsError::InvalidWeights);
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for ((s, w), b) in scores.iter().zip(weights).zip(factors) {
        numerator += s * w * b;
        denominator += w * b;
    }
    Ok(MRResult {
        value: numerator / denominator,
        numerator,
        denominator,
        per_task_b: factors.to_vec(),
    })
}

/// Index of the last task in the longest perfect-score prefix, or -1 when
/// task 0 is not perfect.
pub fn pipeline_stage(scores: &[f64]) -> i64 {
    scores.iter().take_while(|&&s| s >= PERFECT_SCORE).count() as i64 - 1
}

pub fn pipeline_stage_of(results: &[TaskResult]) -> i64 {
    let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
    pipeline_stage(&scores)
}

/// Metrics stored on a finished run. The efficiency index needs a cohort and
/// is filled in when a leaderboard is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mr: f64,
    pub stage: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aei: Option<AeiBreakdown>,
}

pub fn run_metrics(record: &RunRecord) -> Result<RunMetrics, MetricsError> {
    let weights = WeightVector::unchecked(record.weights.clone());
    Ok(RunMetrics {
        mr: mean_reward(&record.results, &weights)?.value,
        stage: pipeline_stage_of(&record.results),
        aei: None,
    })
}

/// The values a record contributes to cohort comparisons. Published figures
/// take priority over measured usage; a record that carries published
/// figures reports only what was published.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFigures {
    pub model_id: String,
    pub stage: i64,
    pub reward: f64,
    pub time_s: Option<f64>,
    pub cost: Option<f64>,
    pub tokens: Option<f64>,
}

impl RecordFigures {
    pub fn of(record: &RunRecord) -> Self {
        let computed = record.metrics.clone().or_else(|| run_metrics(record).ok());
        let computed_mr = computed.as_ref().map(|m| m.mr).unwrap_or(0.0);
        let computed_stage = computed
            .as_ref()
            .map(|m| m.stage)
            .unwrap_or_else(|| pipeline_stage_of(&record.results));
        match &record.published {
            Some(p) => Self {
                model_id: record.model_id.clone(),
                stage: p.stage.unwrap_or(computed_stage),
                reward: p.mr,
                time_s: p.time_s,
                cost: p.cost,
                tokens: p.tokens,
            },
            None => Self {
                model_id: record.model_id.clone(),
                stage: computed_stage,
                reward: computed_mr,
                time_s: Some(record.usage.total_time),
                cost: record.usage.total_cost,
                tokens: Some(record.usage.total_tokens as f64),
            },
        }
    }

    pub fn value(&self, dimension: Dimension) -> Option<f64> {
        match dimension {
            Dimension::Stage => Some(self.stage.max(0) as f64),
            Dimension::Reward => Some(self.reward),
            Dimension::Time => self.time_s,
            Dimension::Cost => self.cost,
            Dimension::Tokens => self.tokens,
        }
    }
}

/// Column maxima over a cohort. A maximum is `None` when no record in the
/// cohort has a known value for that column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMaxima {
    pub s_max: f64,
    pub r_max: f64,
    pub t_max: Option<f64>,
    pub c_max: Option<f64>,
    pub k_max: Option<f64>,
    /// Models left out of `c_max` because their cost is unknown.
    #[serde(default)]
    pub cost_excluded: Vec<String>,
}

impl CohortMaxima {
    pub fn max(&self, dimension: Dimension) -> Option<f64> {
        match dimension {
            Dimension::Stage => Some(self.s_max),
            Dimension::Reward => Some(self.r_max),
            Dimension::Time => self.t_max,
            Dimension::Cost => self.c_max,
            Dimension::Tokens => self.k_max,
        }
    }
}

pub fn cohort_maxima(records: &[RunRecord]) -> Result<CohortMaxima, MetricsError> {
    let figures: Vec<RecordFigures> = records.iter().map(RecordFigures::of).collect();
    maxima_of_figures(&figures)
}

pub fn maxima_of_figures(figures: &[RecordFigures]) -> Result<CohortMaxima, MetricsError> {
    if figures.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    let column = |d: Dimension| {
        figures
            .iter()
            .filter_map(|f| f.value(d))
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            })
    };
    let mut cost_excluded: Vec<String> = figures
        .iter()
        .filter(|f| f.cost.is_none())
        .map(|f| f.model_id.clone())
        .collect();
    cost_excluded.sort();
    Ok(CohortMaxima {
        s_max: column(Dimension::Stage).unwrap_or(0.0).max(0.0),
        r_max: column(Dimension::Reward).unwrap_or(0.0).max(0.0),
        t_max: column(Dimension::Time),
        c_max: column(Dimension::Cost),
        k_max: column(Dimension::Tokens),
        cost_excluded,
    })
}

/// Normalizes one value against its cohort maximum. Stage and reward scale
/// up toward the maximum; time, cost and tokens are inverted so that less is
/// better. A zero maximum scores 100 for everyone.
pub fn normalize(dimension: Dimension, value: f64, max: f64) -> f64 {
    if max <= 0.0 {
        return 100.0;
    }
    match dimension {
        Dimension::Stage | Dimension::Reward => value / max * 100.0,
        Dimension::Time | Dimension::Cost | Dimension::Tokens => (max - value) / max * 100.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeiBreakdown {
    pub s_stage: f64,
    pub s_reward: f64,
    pub s_time: f64,
    pub s_cost: f64,
    pub s_tokens: f64,
    pub aei: f64,
}

impl AeiBreakdown {
    pub fn from_components(
        s_stage: f64,
        s_reward: f64,
        s_time: f64,
        s_cost: f64,
        s_tokens: f64,
    ) -> Self {
        Self {
            s_stage,
            s_reward,
            s_time,
            s_cost,
            s_tokens,
            aei: (s_stage + s_reward + s_time + s_cost + s_tokens) / 5.0,
        }
    }

    pub fn components(&self) -> [f64; 5] {
        [
            self.s_stage,
            self.s_reward,
            self.s_time,
            self.s_cost,
            self.s_tokens,
        ]
    }
}

/// Per-dimension scores for a record, with `None` where the record's value
/// is not known. Useful when only some published figures exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialBreakdown {
    pub s_stage: f64,
    pub s_reward: f64,
    pub s_time: Option<f64>,
    pub s_cost: Option<f64>,
    pub s_tokens: Option<f64>,
}

fn component(
    figures: &RecordFigures,
    maxima: &CohortMaxima,
    dimension: Dimension,
) -> Result<Option<f64>, MetricsError> {
    let Some(value) = figures.value(dimension) else {
        return Ok(None);
    };
    let outside = || MetricsError::OutsideCohort {
        model_id: figures.model_id.clone(),
        dimension,
    };
    let max = maxima.max(dimension).ok_or_else(outside)?;
    if value < 0.0 || value > max + 1e-9 * max.abs().max(1.0) {
        return Err(outside());
    }
    Ok(Some(normalize(dimension, value, max).clamp(0.0, 100.0)))
}

pub fn partial_breakdown(
    figures: &RecordFigures,
    maxima: &CohortMaxima,
) -> Result<PartialBreakdown, MetricsError> {
    Ok(PartialBreakdown {
        s_stage: component(figures, maxima, Dimension::Stage)?.unwrap_or(0.0),
        s_reward: component(figures, maxima, Dimension::Reward)?.unwrap_or(0.0),
        s_time: component(figures, maxima, Dimension::Time)?,
        s_cost: component(figures, maxima, Dimension::Cost)?,
        s_tokens: component(figures, maxima, Dimension::Tokens)?,
    })
}

pub fn aei_of_figures(
    figures: &RecordFigures,
    maxima: &CohortMaxima,
) -> Result<AeiBreakdown, MetricsError> {
    if figures.cost.is_none() {
        return Err(MetricsError::UnknownCost(figures.model_id.clone()));
    }
    let partial = partial_breakdown(figures, maxima)?;
    let require = |v: Option<f64>, dimension| {
        v.ok_or_else(|| MetricsError::UnknownValue {
            model_id: figures.model_id.clone(),
            dimension,
        })
    };
    Ok(AeiBreakdown::from_components(
        partial.s_stage,
        partial.s_reward,
        require(partial.s_time, Dimension::Time)?,
        require(partial.s_cost, Dimension::Cost)?,
        require(partial.s_tokens, Dimension::Tokens)?,
    ))
}

pub fn aei(record: &RunRecord, maxima: &CohortMaxima) -> Result<AeiBreakdown, MetricsError> {
    aei_of_figures(&RecordFigures::of(record), maxima)
}

/// Which scores count as a completed task in [`completion_rates`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompletionRule {
    PerfectScore,
    AtLeast(f64),
}

impl CompletionRule {
    fn completes(&self, score: f64) -> bool {
        match *self {
            CompletionRule::PerfectScore => score >= PERFECT_SCORE,
            CompletionRule::AtLeast(t) => score >= t,
        }
    }
}

fn column_count(table: &[Vec<f64>]) -> usize {
    table.iter().map(Vec::len).max().unwrap_or(0)
}

/// Percentage of rows completing each task column.
pub fn completion_rates(table: &[Vec<f64>], rule: CompletionRule) -> Vec<f64> {
    let n = table.len() as f64;
    (0..column_count(table))
        .map(|t| {
            let done = table
                .iter()
                .filter(|row| row.get(t).is_some_and(|&s| rule.completes(s)))
                .count();
            done as f64 / n * 100.0
        })
        .collect()
}

/// Arithmetic mean of each task column.
pub fn stage_means(table: &[Vec<f64>]) -> Vec<f64> {
    let n = table.len() as f64;
    (0..column_count(table))
        .map(|t| {
            table
                .iter()
                .map(|row| row.get(t).copied().unwrap_or(0.0))
                .sum::<f64>()
                / n
        })
        .collect()
}
