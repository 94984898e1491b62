//! Pipeline state machine: runs a chain's tasks in order, grades each one,
//! restores failed artifacts from the golden store in resurrection mode, and
//! enforces the global turn budget.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    run_task, usage_of_turns, AgentBackend, ExecutionTrace, MarkerEvent, MarkerKind, PriceTable,
    ResourceUsage, RunTaskError, TaskContext,
};
use crate::failure::{classify_run, ClassifierConfig, FailureLabel};
use crate::ingestion::PublishedFigures;
use crate::metrics::{self, RunMetrics};
use crate::sandbox::{InjectionReport, Sandbox, SandboxError, Workspace};
use crate::workload::{golden_lookup, validate_chain, TaskChain, ValidationReport, WorkloadError};
use crate::DEFAULT_TURN_BUDGET;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Failed artifacts are replaced by golden ones before the next task.
    SerialWithResurrection,
    /// Failed artifacts flow downstream untouched.
    SerialCascade,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::SerialWithResurrection => "serial_with_resurrection",
            Mode::SerialCascade => "serial_cascade",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "serial_with_resurrection" | "resurrection" => Ok(Mode::SerialWithResurrection),
            "2" | "serial_cascade" | "cascade" => Ok(Mode::SerialCascade),
            other => Err(format!("unknown mode {other:?}; expected 1 or 2")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: usize,
    pub score: f64,
    pub passed: bool,
    pub resurrected_before_next: bool,
    pub usage: ResourceUsage,
}

impl TaskResult {
    fn not_run(task_id: usize, cost: Option<f64>) -> Self {
        Self {
            task_id,
            score: 0.0,
            passed: false,
            resurrected_before_next: false,
            usage: ResourceUsage {
                total_cost: cost,
                ..ResourceUsage::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub current_task: usize,
    pub prereq_valid: bool,
    pub resurrections_applied: BTreeSet<usize>,
    pub turns_used: usize,
    pub finished: bool,
}

impl Default for PipelineState {
    fn default() -> Self {
        Self {
            current_task: 0,
            prereq_valid: true,
            resurrections_applied: BTreeSet::new(),
            turns_used: 0,
            finished: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetDecision {
    Continue,
    Halt,
}

/// Halt once the pipeline has used its whole turn budget.
pub fn enforce_budget(state: &PipelineState, budget: usize) -> BudgetDecision {
    if state.turns_used >= budget {
        BudgetDecision::Halt
    } else {
        BudgetDecision::Continue
    }
}

/// Whether a graded task should have its output replaced before the next
/// task starts. Scores exactly at the threshold pass.
pub fn resurrection_decision(result: &TaskResult, mode: Mode, threshold: f64) -> bool {
    mode == Mode::SerialWithResurrection && result.score < threshold
}

/// One model, one mode, one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub model_id: String,
    pub mode: Mode,
    pub chain_id: String,
    pub weights: Vec<f64>,
    pub pass_threshold: f64,
    pub results: Vec<TaskResult>,
    /// Kept in a sibling NDJSON file on disk; see [`RunRecord::save`].
    #[serde(skip)]
    pub trace: ExecutionTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
    pub usage: ResourceUsage,
    #[serde(default)]
    pub resurrections: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published: Option<PublishedFigures>,
}

impl RunRecord {
    pub fn scores(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.score).collect()
    }

    /// Writes `<dir>/<run_id>.json` and the trace next to it as
    /// `<run_id>.trace.jsonl`. Returns the record path.
    pub fn save(&mut self, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let trace_name = format!("{}.trace.jsonl", self.run_id);
        let mut trace_bytes = Vec::new();
        self.trace.write_jsonl(&mut trace_bytes)?;
        crate::sandbox::write_atomic(&dir.join(&trace_name), &trace_bytes)
            .map_err(io::Error::other)?;
        self.trace_file = Some(trace_name);
        let path = dir.join(format!("{}.json", self.run_id));
        let json = serde_json::to_vec_pretty(self).map_err(io::Error::other)?;
        crate::sandbox::write_atomic(&path, &json).map_err(io::Error::other)?;
        Ok(path)
    }

    /// Reads a record and, when it names one, its trace file.
    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut record: RunRecord = serde_json::from_str(&text).map_err(io::Error::other)?;
        if let Some(name) = &record.trace_file {
            let trace_path = path.parent().unwrap_or_else(|| Path::new(".")).join(name);
            let file = fs::File::open(trace_path)?;
            record.trace = ExecutionTrace::read_jsonl(BufReader::new(file))?;
        }
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub budget: usize,
    pub run_id: String,
    pub pricing: Option<PriceTable>,
    pub classifier: ClassifierConfig,
}

impl PipelineConfig {
    pub fn new(mode: Mode, run_id: impl Into<String>) -> Self {
        Self {
            mode,
            budget: DEFAULT_TURN_BUDGET,
            run_id: run_id.into(),
            pricing: None,
            classifier: ClassifierConfig::default(),
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_pricing(mut self, pricing: PriceTable) -> Self {
        self.pricing = Some(pricing);
        self
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("chain is invalid: {0}")]
    InvalidChain(ValidationReport),
    #[error("turn budget must be positive")]
    ZeroBudget,
    #[error("could not provision workspace: {0}")]
    Provision(#[source] SandboxError),
    #[error("resurrection of task {task_id} failed: {source}")]
    MissingGolden {
        task_id: usize,
        #[source]
        source: WorkloadError,
    },
    #[error("resurrection of task {task_id} failed: {source}")]
    Injection {
        task_id: usize,
        #[source]
        source: SandboxError,
    },
}

/// Points in a run where an observer may inspect the workspace.
#[derive(Debug)]
pub enum PipelineEvent<'a> {
    TaskStarting { context: &'a TaskContext },
    TaskGraded { task_id: usize, score: f64 },
    ResurrectionStarting { task_id: usize },
    ResurrectionApplied { report: &'a InjectionReport },
}

pub trait PipelineObserver {
    fn on_event(&mut self, event: &PipelineEvent<'_>, workspace: &Workspace);
}

impl PipelineObserver for () {
    fn on_event(&mut self, _event: &PipelineEvent<'_>, _workspace: &Workspace) {}
}

pub struct Orchestrator {
    sandbox: Arc<Sandbox>,
}

impl Orchestrator {
    pub fn new(sandbox: Arc<Sandbox>) -> Self {
        Self { sandbox }
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn execute_pipeline(
        &self,
        backend: &mut dyn AgentBackend,
        chain: &TaskChain,
        config: &PipelineConfig,
    ) -> Result<RunRecord, PipelineError> {
        self.execute_observed(backend, chain, config, &mut ())
    }

    /// Runs the whole chain in a fresh workspace that is torn down afterwards,
    /// whatever the outcome.
    pub fn execute_observed(
        &self,
        backend: &mut dyn AgentBackend,
        chain: &TaskChain,
        config: &PipelineConfig,
        observer: &mut dyn PipelineObserver,
    ) -> Result<RunRecord, PipelineError> {
        let report = validate_chain(chain);
        if !report.is_valid() {
            return Err(PipelineError::InvalidChain(report));
        }
        if config.budget == 0 {
            return Err(PipelineError::ZeroBudget);
        }
        let workspace = self
            .sandbox
            .provision(chain, &config.run_id)
            .map_err(PipelineError::Provision)?;
        let outcome = self.drive(backend, chain, config, &workspace, observer);
        self.sandbox.teardown(&workspace);
        outcome
    }

    /// Injects the golden artifact for `task_id` and raises its revive flag.
    pub fn apply_resurrection(
        &self,
        workspace: &Workspace,
        chain: &TaskChain,
        task_id: usize,
    ) -> Result<InjectionReport, PipelineError> {
        let golden = golden_lookup(chain, task_id)
            .map_err(|source| PipelineError::MissingGolden { task_id, source })?;
        let task = &chain.tasks[task_id];
        let report = self
            .sandbox
            .inject_golden(workspace, task, &golden.bytes)
            .map_err(|source| PipelineError::Injection { task_id, source })?;
        self.sandbox
            .write_revive_flag(workspace, task)
            .map_err(|source| PipelineError::Injection { task_id, source })?;
        Ok(report)
    }

    fn drive(
        &self,
        backend: &mut dyn AgentBackend,
        chain: &TaskChain,
        config: &PipelineConfig,
        workspace: &Workspace,
        observer: &mut dyn PipelineObserver,
    ) -> Result<RunRecord, PipelineError> {
        let model_id = backend.model_id().to_string();
        let pricing = config.pricing.as_ref();
        let zero_cost = pricing.and_then(|p| p.get(&model_id)).map(|_| 0.0);
        let mut trace = ExecutionTrace::new(model_id.clone(), chain.id.clone());
        let mut state = PipelineState::default();
        let mut results = Vec::with_capacity(chain.len());

        for task in &chain.tasks {
            state.current_task = task.id;
            if enforce_budget(&state, config.budget) == BudgetDecision::Halt {
                if !state.finished {
                    mark_budget_exhausted(&mut trace, task.id, config.budget);
                    state.finished = true;
                }
                results.push(TaskResult::not_run(task.id, zero_cost));
                continue;
            }

            let context = TaskContext {
                run_id: config.run_id.clone(),
                workspace: workspace.root.clone(),
                task_id: task.id,
                task_name: task.name.clone(),
                remaining_budget: config.budget - state.turns_used,
            };
            observer.on_event(
                &PipelineEvent::TaskStarting { context: &context },
                workspace,
            );

            let mut halted = false;
            let graded = match run_task(backend, &context) {
                Ok(fragment) => {
                    append(&mut trace, fragment);
                    true
                }
                Err(RunTaskError::BudgetExceededDuringTask(fragment)) => {
                    append(&mut trace, fragment);
                    halted = true;
                    true
                }
                Err(RunTaskError::BackendUnavailable(reason)) => {
                    trace.attach_marker(MarkerEvent::new(MarkerKind::ToolError, task.id, reason));
                    false
                }
            };
            let score = if graded {
                match self.sandbox.grade(workspace, task) {
                    Ok(grade) => grade.score,
                    Err(e) => {
                        trace.attach_marker(MarkerEvent::new(
                            MarkerKind::FrameworkError,
                            task.id,
                            e.to_string(),
                        ));
                        0.0
                    }
                }
            } else {
                0.0
            };
            state.turns_used = trace.turns_used();
            observer.on_event(
                &PipelineEvent::TaskGraded {
                    task_id: task.id,
                    score,
                },
                workspace,
            );

            let mut result = TaskResult {
                task_id: task.id,
                score,
                passed: score >= chain.pass_threshold,
                resurrected_before_next: false,
                usage: usage_of_turns(&model_id, trace.task_turns(task.id), pricing),
            };
            let has_consumer = task.id + 1 < chain.len();
            if !halted
                && has_consumer
                && resurrection_decision(&result, config.mode, chain.pass_threshold)
            {
                observer.on_event(
                    &PipelineEvent::ResurrectionStarting { task_id: task.id },
                    workspace,
                );
                let report = self.apply_resurrection(workspace, chain, task.id)?;
                observer.on_event(
                    &PipelineEvent::ResurrectionApplied { report: &report },
                    workspace,
                );
                state.resurrections_applied.insert(task.id);
                result.resurrected_before_next = true;
            }
            state.prereq_valid = result.passed || result.resurrected_before_next;
            results.push(result);
            if halted {
                state.finished = true;
            }
        }

        let usage = usage_of_turns(&model_id, &trace.turns, pricing);
        let mut record = RunRecord {
            run_id: config.run_id.clone(),
            model_id,
            mode: config.mode,
            chain_id: chain.id.clone(),
            weights: chain.weights.as_slice().to_vec(),
            pass_threshold: chain.pass_threshold,
            results,
            trace,
            trace_file: None,
            usage,
            resurrections: state.resurrections_applied.into_iter().collect(),
            metrics: None,
            failure: None,
            published: None,
        };
        record.metrics = metrics::run_metrics(&record).ok();
        record.failure = classify_run(&record, &config.classifier);
        Ok(record)
    }
}

fn append(trace: &mut ExecutionTrace, fragment: crate::agent::TraceFragment) {
    // Tasks are appended strictly in order, so this cannot be out of order.
    trace
        .append(fragment)
        .expect("fragments are appended in task order");
}

fn mark_budget_exhausted(trace: &mut ExecutionTrace, task_id: usize, budget: usize) {
    let Some(last) = trace.turns.last_mut() else {
        return;
    };
    if last
        .markers
        .iter()
        .any(|m| m.kind == MarkerKind::BudgetExhausted)
    {
        return;
    }
    last.markers.push(MarkerEvent::new(
        MarkerKind::BudgetExhausted,
        task_id,
        format!("turn budget of {budget} reached before task {task_id}"),
    ));
}
