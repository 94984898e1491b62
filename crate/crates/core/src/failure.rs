//! Assigns one primary failure category to a failed run from observable
//! trace events.
//!
//! Triggers map to categories as follows:
//!
//! | trigger                    | category             |
//! |----------------------------|----------------------|
//! | `FrameworkError` marker    | `Infrastructure`     |
//! | `ToolError` marker         | `ToolingIntegration` |
//! | `ContextOverflow` marker   | `Context`            |
//! | `SkipDecision` marker      | `Planning`           |
//! | repeated command loop      | `Reasoning`          |
//!
//! The earliest trigger in the trace decides the label. Triggers on the same
//! turn are ordered by [`ClassifierConfig::precedence`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ExecutionTrace, MarkerKind};
use crate::orchestrator::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureCategory {
    Reasoning,
    Planning,
    Context,
    ToolingIntegration,
    Infrastructure,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 5] = [
        FailureCategory::Reasoning,
        FailureCategory::Planning,
        FailureCategory::Context,
        FailureCategory::ToolingIntegration,
        FailureCategory::Infrastructure,
    ];

    /// Category signalled by a trace marker, if any.
    pub fn of_marker(kind: MarkerKind) -> Option<Self> {
        match kind {
            MarkerKind::FrameworkError => Some(FailureCategory::Infrastructure),
            MarkerKind::ToolError => Some(FailureCategory::ToolingIntegration),
            MarkerKind::ContextOverflow => Some(FailureCategory::Context),
            MarkerKind::SkipDecision => Some(FailureCategory::Planning),
            MarkerKind::BudgetExhausted => None,
        }
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureCategory::Reasoning => "Reasoning",
            FailureCategory::Planning => "Planning",
            FailureCategory::Context => "Context",
            FailureCategory::ToolingIntegration => "Tooling & Integration",
            FailureCategory::Infrastructure => "Infrastructure",
        })
    }
}

/// A span of turns over which the same command sequence repeated with no
/// change in observed score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopEvidence {
    pub start_turn: usize,
    /// Turn on which the minimum number of repeats was first reached.
    pub confirm_turn: usize,
    pub end_turn: usize,
    /// Length of the repeating unit, in turns.
    pub period: usize,
    pub repeats: usize,
}

/// A pointer into a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Marker {
        turn: usize,
        position: usize,
        marker: MarkerKind,
    },
    Loop(LoopEvidence),
}

impl Evidence {
    pub fn trigger_turn(&self) -> usize {
        match self {
            Evidence::Marker { turn, .. } => *turn,
            Evidence::Loop(l) => l.confirm_turn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureLabel {
    pub category: FailureCategory,
    pub task_id: usize,
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("loop window must be at least 2, got {0}")]
    WindowTooSmall(usize),
    #[error("loop repeats must be at least 2, got {0}")]
    RepeatsTooSmall(usize),
    #[error("precedence must list each category exactly once")]
    BadPrecedence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Longest repeating unit considered by loop detection, in turns.
    pub loop_window: usize,
    pub loop_min_repeats: usize,
    /// Tie-break order for triggers on the same turn, strongest first.
    pub precedence: Vec<FailureCategory>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            loop_window: 5,
            loop_min_repeats: 3,
            precedence: vec![
                FailureCategory::Infrastructure,
                FailureCategory::ToolingIntegration,
                FailureCategory::Context,
                FailureCategory::Planning,
                FailureCategory::Reasoning,
            ],
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.loop_window < 2 {
            return Err(ConfigError::WindowTooSmall(self.loop_window));
        }
        if self.loop_min_repeats < 2 {
            return Err(ConfigError::RepeatsTooSmall(self.loop_min_repeats));
        }
        let mut sorted = self.precedence.clone();
        sorted.sort();
        if sorted != FailureCategory::ALL {
            return Err(ConfigError::BadPrecedence);
        }
        Ok(())
    }

    fn rank(&self, category: FailureCategory) -> usize {
        self.precedence
            .iter()
            .position(|&c| c == category)
            .unwrap_or(usize::MAX)
    }
}

/// Finds stretches where the same sequence of turns, compared by their
/// command lines, repeats back to back at least `loop_min_repeats` times.
/// Turns without commands are ignored. A stretch only counts while every
/// observed score inside it stays the same; the smallest repeating unit up
/// to `loop_window` turns is reported, and stretches do not overlap.
pub fn detect_loop(trace: &ExecutionTrace, config: &ClassifierConfig) -> Vec<LoopEvidence> {
    let units: Vec<(usize, Vec<&str>)> = trace
        .turns
        .iter()
        .filter(|t| !t.commands.is_empty())
        .map(|t| {
            (
                t.index,
                t.commands.iter().map(|c| c.command_line.as_str()).collect(),
            )
        })
        .collect();
    let min_repeats = config.loop_min_repeats.max(2);
    let score_steady = |from_turn: usize, to_turn: usize| {
        let mut seen: Option<f64> = None;
        for turn in &trace.turns[from_turn..=to_turn] {
            if let Some(s) = turn.observed_score {
                match seen {
                    Some(prev) if prev != s => return false,
                    _ => seen = Some(s),
                }
            }
        }
        true
    };

    let mut found = Vec::new();
    let mut i = 0;
    while i < units.len() {
        let mut matched = None;
        for period in 1..=config.loop_window {
            if i + period * min_repeats > units.len() {
                break;
            }
            let unit = &units[i..i + period];
            let mut repeats = 1;
            loop {
                let next = i + repeats * period;
                if next + period > units.len() {
                    break;
                }
                let same = units[next..next + period]
                    .iter()
                    .zip(unit)
                    .all(|(a, b)| a.1 == b.1);
                let end_turn = units[next + period - 1].0;
                if !same || !score_steady(units[i].0, end_turn) {
                    break;
                }
                repeats += 1;
            }
            if repeats >= min_repeats {
                matched = Some((period, repeats));
                break;
            }
        }
        match matched {
            Some((period, repeats)) => {
                found.push(LoopEvidence {
                    start_turn: units[i].0,
                    confirm_turn: units[i + period * min_repeats - 1].0,
                    end_turn: units[i + period * repeats - 1].0,
                    period,
                    repeats,
                });
                i += period * repeats;
            }
            None => i += 1,
        }
    }
    found
}

/// All skip markers, in trace order.
pub fn detect_skip(trace: &ExecutionTrace) -> Vec<Evidence> {
    trace
        .markers()
        .filter(|(_, _, m)| m.kind == MarkerKind::SkipDecision)
        .map(|(turn, position, m)| Evidence::Marker {
            turn,
            position,
            marker: m.kind,
        })
        .collect()
}

struct Trigger {
    category: FailureCategory,
    task_id: usize,
    turn: usize,
    position: usize,
    evidence: Evidence,
}

fn triggers(trace: &ExecutionTrace, config: &ClassifierConfig) -> Vec<Trigger> {
    let mut out: Vec<Trigger> = trace
        .markers()
        .filter_map(|(turn, position, m)| {
            FailureCategory::of_marker(m.kind).map(|category| Trigger {
                category,
                task_id: m.task_id,
                turn,
                position,
                evidence: Evidence::Marker {
                    turn,
                    position,
                    marker: m.kind,
                },
            })
        })
        .collect();
    out.extend(detect_loop(trace, config).into_iter().map(|l| Trigger {
        category: FailureCategory::Reasoning,
        task_id: trace.task_of_turn(l.confirm_turn).unwrap_or(0),
        turn: l.confirm_turn,
        position: usize::MAX,
        evidence: Evidence::Loop(l),
    }));
    out
}

/// Labels a run that failed at least one task. Returns `None` for runs where
/// every task passed, and for failed runs whose trace holds no trigger.
pub fn classify_run(record: &RunRecord, config: &ClassifierConfig) -> Option<FailureLabel> {
    if record.results.iter().all(|r| r.passed) {
        return None;
    }
    classify_trace(&record.trace, config)
}

/// The label the earliest trigger in `trace` would produce.
pub fn classify_trace(trace: &ExecutionTrace, config: &ClassifierConfig) -> Option<FailureLabel> {
    triggers(trace, config)
        .into_iter()
        .min_by_key(|t| (t.turn, config.rank(t.category), t.position))
        .map(|t| FailureLabel {
            category: t.category,
            task_id: t.task_id,
            evidence: vec![t.evidence],
        })
}

/// Every category whose trigger appears anywhere in a failed run, not just
/// the primary one.
pub fn observed_categories(record: &RunRecord, config: &ClassifierConfig) -> Vec<FailureCategory> {
    let mut seen: Vec<FailureCategory> = triggers(&record.trace, config)
        .into_iter()
        .map(|t| t.category)
        .collect();
    seen.sort();
    seen.dedup();
    seen
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramCell {
    pub category: FailureCategory,
    pub task_id: usize,
    pub count: usize,
}

/// Counts of labels per (category, task).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureHistogram {
    pub cells: Vec<HistogramCell>,
}

impl FailureHistogram {
    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.count).sum()
    }

    pub fn count(&self, category: FailureCategory) -> usize {
        self.cells
            .iter()
            .filter(|c| c.category == category)
            .map(|c| c.count)
            .sum()
    }

    pub fn count_at(&self, category: FailureCategory, task_id: usize) -> usize {
        self.cells
            .iter()
            .find(|c| c.category == category && c.task_id == task_id)
            .map_or(0, |c| c.count)
    }

    /// Percentage of `cohort_size` runs carrying this category.
    pub fn share(&self, category: FailureCategory, cohort_size: usize) -> f64 {
        if cohort_size == 0 {
            return 0.0;
        }
        self.count(category) as f64 / cohort_size as f64 * 100.0
    }
}

pub fn stage_distribution(labels: &[FailureLabel]) -> FailureHistogram {
    let mut counts: BTreeMap<(FailureCategory, usize), usize> = BTreeMap::new();
    for label in labels {
        *counts.entry((label.category, label.task_id)).or_default() += 1;
    }
    FailureHistogram {
        cells: counts
            .into_iter()
            .map(|((category, task_id), count)| HistogramCell {
                category,
                task_id,
                count,
            })
            .collect(),
    }
}

/// Per-category count of runs where the category was observed at all.
pub fn observed_distribution(
    records: &[RunRecord],
    config: &ClassifierConfig,
) -> BTreeMap<FailureCategory, usize> {
    let mut counts = BTreeMap::new();
    for record in records {
        for category in observed_categories(record, config) {
            *counts.entry(category).or_default() += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{CommandEvent, MarkerEvent, TraceFragment, TurnRecord};

    fn turn(i: usize, cmds: &[&str], score: Option<f64>) -> TurnRecord {
        TurnRecord {
            commands: cmds
                .iter()
                .map(|c| CommandEvent {
                    command_line: c.to_string(),
                    exit_code: 0,
                    duration: 0.1,
                })
                .collect(),
            observed_score: score,
            ..TurnRecord::empty(i)
        }
    }

    fn trace_of(turns: Vec<TurnRecord>) -> ExecutionTrace {
        let mut trace = ExecutionTrace::new("m", "c");
        let mut fragment = TraceFragment::new(0);
        fragment.turns = turns;
        trace.append(fragment).unwrap();
        trace
    }

    #[test]
    fn alternating_commands_form_one_loop() {
        let names = ["build", "test", "build", "test", "build", "test"];
        let turns = names
            .iter()
            .enumerate()
            .map(|(i, c)| turn(i, &[c], Some(10.0)))
            .collect();
        let loops = detect_loop(&trace_of(turns), &ClassifierConfig::default());
        assert_eq!(
            loops,
            vec![LoopEvidence {
                start_turn: 0,
                confirm_turn: 5,
                end_turn: 5,
                period: 2,
                repeats: 3
            }]
        );
    }

    #[test]
    fn distinct_commands_have_no_loop() {
        let turns = (0..8).map(|i| turn(i, &[&format!("c{i}")], None)).collect();
        assert!(detect_loop(&trace_of(turns), &ClassifierConfig::default()).is_empty());
    }

    #[test]
    fn score_change_breaks_loop() {
        let turns = vec![
            turn(0, &["build"], Some(10.0)),
            turn(1, &["test"], Some(10.0)),
            turn(2, &["build"], Some(20.0)),
            turn(3, &["test"], Some(20.0)),
            turn(4, &["build"], Some(30.0)),
            turn(5, &["test"], Some(30.0)),
        ];
        assert!(detect_loop(&trace_of(turns), &ClassifierConfig::default()).is_empty());
    }

    #[test]
    fn same_turn_tie_uses_precedence() {
        let mut trace = trace_of(vec![turn(0, &["a"], None), turn(1, &["b"], None)]);
        trace.turns[1]
            .markers
            .push(MarkerEvent::new(MarkerKind::ContextOverflow, 0, "ctx"));
        trace.turns[1]
            .markers
            .push(MarkerEvent::new(MarkerKind::FrameworkError, 0, "fw"));
        let label = classify_trace(&trace, &ClassifierConfig::default()).unwrap();
        assert_eq!(label.category, FailureCategory::Infrastructure);
    }

    #[test]
    fn default_config_is_valid() {
        assert!(ClassifierConfig::default().validate().is_ok());
        let bad = ClassifierConfig {
            precedence: vec![FailureCategory::Context; 5],
            ..ClassifierConfig::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::BadPrecedence));
    }

    #[test]
    fn shares() {
        let label = |category| FailureLabel {
            category,
            task_id: 2,
            evidence: vec![],
        };
        let labels: Vec<_> = (0..9).map(|_| label(FailureCategory::Context)).collect();
        let hist = stage_distribution(&labels);
        assert_eq!(hist.total(), 9);
        assert!((hist.share(FailureCategory::Context, 15) - 60.0).abs() < 1e-12);
        assert_eq!(stage_distribution(&[]).total(), 0);
    }
}
