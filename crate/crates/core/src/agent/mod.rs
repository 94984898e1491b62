//! Agent backend contract, trace recording, and resource accounting.
//!
//! Backends only see a [`TaskContext`] and the workspace it points at. The
//! context carries no hint about whether the orchestrator restored any
//! artifact before the task started.

mod gateway;
mod simulated;
mod trace;
mod usage;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gateway::{GatewayBackend, GATEWAY_KEY_ENV, GATEWAY_URL_ENV};
pub use simulated::{
    simulate_task, ArtifactSynthesizer, AssumeValid, GraderProbe, PrereqProbe, ProfileEntry,
    ProfileError, ScriptedMarker, SimulatedAgentProfile, SimulatedBackend,
};
pub use trace::{
    CommandEvent, ExecutionTrace, MarkerEvent, MarkerKind, TraceError, TraceFragment, TurnRecord,
};
pub use usage::{aggregate_usage, usage_of_turns, ModelPrice, PriceTable, ResourceUsage};

/// Everything a backend is told about the task it should work on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskContext {
    pub run_id: String,
    pub workspace: PathBuf,
    pub task_id: usize,
    pub task_name: String,
    pub remaining_budget: usize,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Error)]
pub enum RunTaskError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    /// The fragment was cut at the remaining budget and ends with a
    /// `BudgetExhausted` marker.
    #[error("turn budget exhausted during task {}", .0.task_id)]
    BudgetExceededDuringTask(TraceFragment),
}

pub trait AgentBackend: Send {
    fn model_id(&self) -> &str;

    /// Works on one task, mutating the workspace as it goes. Implementations
    /// should stop at `ctx.remaining_budget` turns and set
    /// [`TraceFragment::truncated`] when they had to.
    fn attempt(&mut self, ctx: &TaskContext) -> Result<TraceFragment, BackendError>;
}

/// Runs one task on `backend` and enforces the turn budget on the returned
/// fragment, whatever the backend did.
pub fn run_task(
    backend: &mut dyn AgentBackend,
    ctx: &TaskContext,
) -> Result<TraceFragment, RunTaskError> {
    let mut fragment = match backend.attempt(ctx) {
        Ok(fragment) => fragment,
        Err(e) => return Err(RunTaskError::BackendUnavailable(e.to_string())),
    };
    fragment.task_id = ctx.task_id;
    if fragment.turns.len() > ctx.remaining_budget {
        fragment.turns.truncate(ctx.remaining_budget);
        fragment.truncated = true;
    }
    if !fragment.truncated {
        return Ok(fragment);
    }
    let marker = MarkerEvent::new(
        MarkerKind::BudgetExhausted,
        ctx.task_id,
        format!("turn budget exhausted after {} turns", fragment.turns.len()),
    );
    match fragment.turns.last_mut() {
        Some(last) => last.markers.push(marker),
        None => {
            let mut turn = TurnRecord::empty(0);
            turn.markers.push(marker);
            fragment.turns.push(turn);
        }
    }
    Err(RunTaskError::BudgetExceededDuringTask(fragment))
}
