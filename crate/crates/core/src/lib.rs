//! Runtime assessment harness for agents working through serially dependent
//! task chains.
//!
//! A [`workload::TaskChain`] describes an ordered pipeline where every task
//! consumes the artifact produced by its predecessor. The
//! [`orchestrator`] drives an [`agent::AgentBackend`] through the chain inside
//! an isolated [`sandbox`] workspace, optionally restoring failed intermediate
//! artifacts from the golden store so downstream tasks can still be assessed.
//! Finished runs are scored by [`metrics`], labelled by [`failure`], and
//! aggregated into leaderboards by [`reporting`]. Published result tables can
//! be replayed through the same analytics via [`ingestion`].

pub mod agent;
pub mod digest;
pub mod failure;
pub mod ingestion;
pub mod metrics;
pub mod minichain;
pub mod orchestrator;
pub mod reporting;
pub mod sandbox;
pub mod workload;

pub use agent::{AgentBackend, ExecutionTrace, ResourceUsage, TaskContext};
pub use orchestrator::{Mode, Orchestrator, PipelineConfig, RunRecord, TaskResult};
pub use sandbox::{Sandbox, Workspace};
pub use workload::{load_manifest, TaskChain, TaskSpec, WeightVector};

/// Turn budget applied across a whole pipeline when none is given.
pub const DEFAULT_TURN_BUDGET: usize = 500;
