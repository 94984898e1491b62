//! Deterministic stand-in agents driven by a per-task profile.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::{CommandEvent, MarkerEvent, MarkerKind, TraceFragment, TurnRecord};
use super::{AgentBackend, BackendError, TaskContext};
use crate::sandbox::{run_grader, GraderExecutor};
use crate::workload::TaskChain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedMarker {
    pub kind: MarkerKind,
    #[serde(default)]
    pub detail: String,
    /// Turn within the task; defaults to the task's last turn.
    #[serde(default)]
    pub at_turn: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub score_when_prereq_valid: f64,
    pub score_when_prereq_broken: f64,
    pub turns: usize,
    /// Input plus output tokens per turn.
    pub tokens_per_turn: u64,
    /// Portion of `tokens_per_turn` billed as output.
    #[serde(default)]
    pub output_tokens_per_turn: u64,
    #[serde(default)]
    pub commands_per_turn: usize,
    #[serde(default)]
    pub seconds_per_turn: f64,
    #[serde(default)]
    pub inject_markers: Vec<ScriptedMarker>,
    /// Command lines issued in rotation; generated names when empty.
    #[serde(default)]
    pub command_cycle: Vec<String>,
}

impl ProfileEntry {
    /// Entry with no commands, markers, or elapsed time.
    pub fn scores(valid: f64, broken: f64, turns: usize, tokens_per_turn: u64) -> Self {
        Self {
            score_when_prereq_valid: valid,
            score_when_prereq_broken: broken,
            turns,
            tokens_per_turn,
            output_tokens_per_turn: 0,
            commands_per_turn: 0,
            seconds_per_turn: 0.0,
            inject_markers: Vec::new(),
            command_cycle: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedAgentProfile {
    pub model_id: String,
    pub tasks: Vec<ProfileEntry>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("profile has no entry for task {0}")]
    MissingProfileEntry(usize),
    #[error("profile entry for task {task_id} is invalid: {reason}")]
    InvalidEntry { task_id: usize, reason: String },
}

impl SimulatedAgentProfile {
    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let profile: Self = serde_json::from_str(&text).map_err(io::Error::other)?;
        profile.validate().map_err(io::Error::other)?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for (task_id, entry) in self.tasks.iter().enumerate() {
            let invalid = |reason: &str| ProfileError::InvalidEntry {
                task_id,
                reason: reason.to_string(),
            };
            for score in [
                entry.score_when_prereq_valid,
                entry.score_when_prereq_broken,
            ] {
                if !(0.0..=100.0).contains(&score) {
                    return Err(invalid("scores must lie in [0, 100]"));
                }
            }
            if entry.output_tokens_per_turn > entry.tokens_per_turn {
                return Err(invalid("output tokens exceed tokens per turn"));
            }
            if !(entry.seconds_per_turn >= 0.0 && entry.seconds_per_turn.is_finite()) {
                return Err(invalid("seconds per turn must be non-negative"));
            }
            for marker in &entry.inject_markers {
                let at = marker.at_turn.unwrap_or(entry.turns.saturating_sub(1));
                if entry.turns == 0 || at >= entry.turns {
                    return Err(invalid("marker placed outside the task's turns"));
                }
            }
        }
        Ok(())
    }
}

/// Score and trace fragment a profile yields for one task. Pure: the same
/// inputs always produce the same fragment.
pub fn simulate_task(
    profile: &SimulatedAgentProfile,
    prereq_valid: bool,
    task_id: usize,
) -> Result<(f64, TraceFragment), ProfileError> {
    let entry = profile
        .tasks
        .get(task_id)
        .ok_or(ProfileError::MissingProfileEntry(task_id))?;
    let score = if prereq_valid {
        entry.score_when_prereq_valid
    } else {
        entry.score_when_prereq_broken
    };
    let command_duration = if entry.commands_per_turn == 0 {
        0.0
    } else {
        entry.seconds_per_turn / entry.commands_per_turn as f64
    };
    let mut fragment = TraceFragment::new(task_id);
    for turn in 0..entry.turns {
        let commands = (0..entry.commands_per_turn)
            .map(|j| {
                let command_line = if entry.command_cycle.is_empty() {
                    format!("task{task_id}-turn{turn}-cmd{j}")
                } else {
                    let slot = turn * entry.commands_per_turn + j;
                    entry.command_cycle[slot % entry.command_cycle.len()].clone()
                };
                CommandEvent {
                    command_line,
                    exit_code: 0,
                    duration: command_duration,
                }
            })
            .collect();
        fragment.turns.push(TurnRecord {
            index: turn,
            tokens_in: entry.tokens_per_turn - entry.output_tokens_per_turn,
            tokens_out: entry.output_tokens_per_turn,
            commands,
            markers: Vec::new(),
            wall_time: entry.seconds_per_turn,
            observed_score: None,
        });
    }
    for marker in &entry.inject_markers {
        let at = marker.at_turn.unwrap_or(entry.turns.saturating_sub(1));
        if let Some(turn) = fragment.turns.get_mut(at) {
            turn.markers.push(MarkerEvent::new(
                marker.kind,
                task_id,
                marker.detail.clone(),
            ));
        }
    }
    Ok((score, fragment))
}

/// How a simulated agent decides whether the artifact it was handed is sound.
pub trait PrereqProbe: Send {
    fn prereq_valid(&self, ctx: &TaskContext) -> bool;
}

pub struct AssumeValid;

impl PrereqProbe for AssumeValid {
    fn prereq_valid(&self, _ctx: &TaskContext) -> bool {
        true
    }
}

/// Runs the predecessor's grader against the workspace, the way an agent
/// would run the previous stage's tests. Valid iff that score passes.
pub struct GraderProbe {
    chain: Arc<TaskChain>,
    executor: Arc<dyn GraderExecutor>,
}

impl GraderProbe {
    pub fn new(chain: Arc<TaskChain>, executor: Arc<dyn GraderExecutor>) -> Self {
        Self { chain, executor }
    }
}

impl PrereqProbe for GraderProbe {
    fn prereq_valid(&self, ctx: &TaskContext) -> bool {
        if ctx.task_id == 0 {
            return true;
        }
        let Some(prev) = self.chain.tasks.get(ctx.task_id - 1) else {
            return false;
        };
        match run_grader(self.executor.as_ref(), &ctx.workspace, prev) {
            Ok(grade) => grade.score >= self.chain.pass_threshold,
            Err(_) => false,
        }
    }
}

/// Writes the output artifact a simulated agent produces for a task, sized so
/// the workload's grader awards `target_score`.
pub trait ArtifactSynthesizer: Send {
    fn write_output(&self, workspace: &Path, task_id: usize, target_score: f64) -> io::Result<()>;
}

pub struct SimulatedBackend {
    profile: SimulatedAgentProfile,
    probe: Box<dyn PrereqProbe>,
    synthesizer: Option<Box<dyn ArtifactSynthesizer>>,
}

impl SimulatedBackend {
    pub fn new(profile: SimulatedAgentProfile) -> Self {
        Self {
            profile,
            probe: Box::new(AssumeValid),
            synthesizer: None,
        }
    }

    pub fn with_probe(mut self, probe: impl PrereqProbe + 'static) -> Self {
        self.probe = Box::new(probe);
        self
    }

    pub fn with_synthesizer(mut self, synthesizer: impl ArtifactSynthesizer + 'static) -> Self {
        self.synthesizer = Some(Box::new(synthesizer));
        self
    }

    pub fn profile(&self) -> &SimulatedAgentProfile {
        &self.profile
    }
}

impl AgentBackend for SimulatedBackend {
    fn model_id(&self) -> &str {
        &self.profile.model_id
    }

    fn attempt(&mut self, ctx: &TaskContext) -> Result<TraceFragment, BackendError> {
        let prereq_valid = self.probe.prereq_valid(ctx);
        let (score, mut fragment) = simulate_task(&self.profile, prereq_valid, ctx.task_id)
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        if fragment.turns.len() > ctx.remaining_budget {
            // Out of turns before finishing: nothing gets written.
            fragment.turns.truncate(ctx.remaining_budget);
            fragment.truncated = true;
            return Ok(fragment);
        }
        if let Some(synthesizer) = &self.synthesizer {
            synthesizer
                .write_output(&ctx.workspace, ctx.task_id, score)
                .map_err(|e| BackendError::Protocol(format!("writing output artifact: {e}")))?;
        }
        Ok(fragment)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{run_task, RunTaskError};

    fn profile(entries: Vec<ProfileEntry>) -> SimulatedAgentProfile {
        SimulatedAgentProfile {
            model_id: "sim".into(),
            tasks: entries,
        }
    }

    fn ctx(task_id: usize, remaining: usize) -> TaskContext {
        TaskContext {
            run_id: "r".into(),
            workspace: std::env::temp_dir(),
            task_id,
            task_name: "t".into(),
            remaining_budget: remaining,
        }
    }

    #[test]
    fn selector_semantics() {
        let p = profile(vec![ProfileEntry::scores(100.0, 0.0, 1, 1)]);
        assert_eq!(simulate_task(&p, true, 0).unwrap().0, 100.0);
        assert_eq!(simulate_task(&p, false, 0).unwrap().0, 0.0);
        assert_eq!(
            simulate_task(&p, true, 1).unwrap_err(),
            ProfileError::MissingProfileEntry(1)
        );
    }

    #[test]
    fn fragment_arithmetic() {
        let p = profile(vec![ProfileEntry::scores(80.0, 30.0, 2, 50)]);
        let (score, fragment) = simulate_task(&p, true, 0).unwrap();
        assert_eq!(score, 80.0);
        assert_eq!(fragment.turns.len(), 2);
        let tokens: u64 = fragment.turns.iter().map(TurnRecord::tokens).sum();
        assert_eq!(tokens, 100);
        assert_eq!(simulate_task(&p, true, 0).unwrap().1, fragment);
    }

    #[test]
    fn four_turns_of_one_hundred_tokens() {
        let mut backend =
            SimulatedBackend::new(profile(vec![ProfileEntry::scores(100.0, 0.0, 4, 100)]));
        let fragment = run_task(&mut backend, &ctx(0, 500)).unwrap();
        assert_eq!(fragment.turns.len(), 4);
        assert_eq!(
            fragment.turns.iter().map(TurnRecord::tokens).sum::<u64>(),
            400
        );
    }

    #[test]
    fn thirty_turns_against_ten_remaining() {
        let mut backend =
            SimulatedBackend::new(profile(vec![ProfileEntry::scores(100.0, 0.0, 30, 10)]));
        match run_task(&mut backend, &ctx(0, 10)) {
            Err(RunTaskError::BudgetExceededDuringTask(fragment)) => {
                assert_eq!(fragment.turns.len(), 10);
                let last = fragment.turns.last().unwrap();
                assert_eq!(
                    last.markers.last().unwrap().kind,
                    MarkerKind::BudgetExhausted
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn markers_and_command_cycle() {
        let mut entry = ProfileEntry::scores(50.0, 0.0, 3, 10);
        entry.commands_per_turn = 2;
        entry.seconds_per_turn = 4.0;
        entry.command_cycle = vec!["build".into(), "test".into()];
        entry.inject_markers = vec![ScriptedMarker {
            kind: MarkerKind::ContextOverflow,
            detail: "context length exceeded".into(),
            at_turn: Some(1),
        }];
        let p = profile(vec![entry]);
        p.validate().unwrap();
        let (_, fragment) = simulate_task(&p, true, 0).unwrap();
        let lines: Vec<&str> = fragment
            .turns
            .iter()
            .flat_map(|t| t.commands.iter().map(|c| c.command_line.as_str()))
            .collect();
        assert_eq!(lines, ["build", "test", "build", "test", "build", "test"]);
        assert_eq!(
            fragment.turns[1].markers[0].kind,
            MarkerKind::ContextOverflow
        );
        assert_eq!(fragment.turns[0].commands[0].duration, 2.0);
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let p = profile(vec![ProfileEntry::scores(120.0, 0.0, 1, 1)]);
        assert!(p.validate().is_err());
        let mut entry = ProfileEntry::scores(10.0, 0.0, 0, 1);
        entry.inject_markers.push(ScriptedMarker {
            kind: MarkerKind::ToolError,
            detail: String::new(),
            at_turn: None,
        });
        assert!(profile(vec![entry]).validate().is_err());
    }
}
