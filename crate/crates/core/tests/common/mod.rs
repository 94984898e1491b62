#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use ramp_core::agent::{GraderProbe, ProfileEntry, SimulatedAgentProfile, SimulatedBackend};
use ramp_core::minichain::MiniChainSynthesizer;
use ramp_core::sandbox::{GraderExecutor, ProcessExecutor, Sandbox};
use ramp_core::workload::GraderCommand;
use ramp_core::{load_manifest, Orchestrator, TaskChain};
use tempfile::TempDir;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn mini_chain_manifest() -> PathBuf {
    crate_dir().join("workloads/mini-chain/manifest.json")
}

/// The bundled mini-chain with its grader pointed at the freshly built binary.
pub fn mini_chain() -> TaskChain {
    load_manifest(&mini_chain_manifest())
        .expect("bundled manifest loads")
        .with_grader(GraderCommand {
            program: env!("CARGO_BIN_EXE_ramp-minichain-grader").to_string(),
            args: Vec::new(),
        })
}

pub struct Harness {
    pub dir: TempDir,
    pub orchestrator: Orchestrator,
    pub executor: Arc<dyn GraderExecutor>,
    pub chain: TaskChain,
}

impl Harness {
    pub fn new() -> Self {
        Self::with_chain(mini_chain())
    }

    pub fn with_chain(chain: TaskChain) -> Self {
        let dir = TempDir::new().unwrap();
        let executor: Arc<dyn GraderExecutor> = Arc::new(ProcessExecutor::default());
        let sandbox = Sandbox::with_executor(dir.path().join("ws"), executor.clone());
        Self {
            dir,
            orchestrator: Orchestrator::new(Arc::new(sandbox)),
            executor,
            chain,
        }
    }

    /// A simulated agent that checks its input by running the previous
    /// stage's grader and writes output sized to its profile score.
    pub fn backend(&self, profile: SimulatedAgentProfile) -> SimulatedBackend {
        SimulatedBackend::new(profile)
            .with_probe(GraderProbe::new(
                Arc::new(self.chain.clone()),
                self.executor.clone(),
            ))
            .with_synthesizer(MiniChainSynthesizer)
    }

    pub fn workspace_base(&self) -> PathBuf {
        self.dir.path().join("ws")
    }
}

pub fn entry(valid: f64, broken: f64, turns: usize) -> ProfileEntry {
    ProfileEntry {
        commands_per_turn: 1,
        seconds_per_turn: 2.0,
        output_tokens_per_turn: 100,
        ..ProfileEntry::scores(valid, broken, turns, 1000)
    }
}

pub fn profile(model: &str, entries: Vec<ProfileEntry>) -> SimulatedAgentProfile {
    SimulatedAgentProfile {
        model_id: model.to_string(),
        tasks: entries,
    }
}

/// Passes task 0, fails task 1 regardless of input, and does well on task 2
/// only when its input is sound.
pub fn fail_task_1() -> SimulatedAgentProfile {
    profile(
        "fail-task-1",
        vec![
            entry(100.0, 0.0, 10),
            entry(30.0, 30.0, 10),
            entry(90.0, 10.0, 10),
        ],
    )
}

pub mod corpus;
