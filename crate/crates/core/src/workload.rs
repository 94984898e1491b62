//! Task chains, their dependency structure, scoring weights, and the golden
//! artifact store used when a failed stage has to be restored.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

/// Score at or above which a task counts as passed.
pub const DEFAULT_PASS_THRESHOLD: f64 = 60.0;

/// Tolerance on the sum of a weight vector.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_ARTIFACT_DIR: &str = "artifacts";
pub const DEFAULT_BUILD_CONFIG: &str = "config.cmake";

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid task chain: {0}")]
    Chain(ValidationReport),
    #[error("task {task_id} is outside the chain (length {len})")]
    TaskOutOfRange { task_id: usize, len: usize },
    #[error("no golden artifact for task {task_id}: {reason}")]
    MissingGolden { task_id: usize, reason: String },
}

/// How a grader is launched. `program` is resolved relative to the manifest
/// directory when it is a relative path with more than one component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraderCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl GraderCommand {
    pub fn parse(cmd: &str) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self {
            program,
            args: parts.collect(),
        })
    }
}

impl fmt::Display for GraderCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.program)?;
        for arg in &self.args {
            write!(f, " {arg}")?;
        }
        Ok(())
    }
}

/// Content-addressed pointer to a reference-implementation output. The digest
/// is captured when the manifest is loaded; later reads must reproduce it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenRef {
    pub path: PathBuf,
    pub digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    pub name: String,
    pub grader: GraderCommand,
    pub input_artifact_key: Option<String>,
    pub output_artifact_key: String,
    pub golden_artifact: Option<GoldenRef>,
    pub revive_flag_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Builds a weight vector, rejecting non-positive entries and sums that
    /// miss 1.0. Nothing is renormalized.
    pub fn new(weights: Vec<f64>) -> Result<Self, ValidationReport> {
        let defects = weight_defects(&weights);
        if defects.is_empty() {
            Ok(Self(weights))
        } else {
            Err(ValidationReport { defects })
        }
    }

    /// Wraps weights without checking them; `validate_chain` will still
    /// report any defects.
    pub fn unchecked(weights: Vec<f64>) -> Self {
        Self(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The same vector multiplied by `factor` and divided by its new sum.
    pub fn rescaled(&self, factor: f64) -> Self {
        let scaled: Vec<f64> = self.0.iter().map(|w| w * factor).collect();
        let sum: f64 = scaled.iter().sum();
        Self(scaled.into_iter().map(|w| w / sum).collect())
    }
}

fn weight_defects(weights: &[f64]) -> Vec<Defect> {
    let mut defects = Vec::new();
    for (task_id, &weight) in weights.iter().enumerate() {
        if !(weight > 0.0 && weight.is_finite()) {
            defects.push(Defect::NonPositiveWeight { task_id, weight });
        }
    }
    let sum: f64 = weights.iter().sum();
    if !weights.is_empty() && (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        defects.push(Defect::WeightSum { sum });
    }
    defects
}

/// Where artifacts and the build configuration live inside a workspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceLayout {
    pub artifact_dir: String,
    pub build_config: String,
}

impl Default for WorkspaceLayout {
    fn default() -> Self {
        Self {
            artifact_dir: DEFAULT_ARTIFACT_DIR.to_string(),
            build_config: DEFAULT_BUILD_CONFIG.to_string(),
        }
    }
}

impl WorkspaceLayout {
    /// Path of an artifact relative to the workspace root.
    pub fn artifact_path(&self, key: &str) -> PathBuf {
        Path::new(&self.artifact_dir).join(key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskChain {
    pub id: String,
    pub tasks: Vec<TaskSpec>,
    pub weights: WeightVector,
    pub pass_threshold: f64,
    pub repo_template: PathBuf,
    pub layout: WorkspaceLayout,
}

impl TaskChain {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, task_id: usize) -> Result<&TaskSpec, WorkloadError> {
        self.tasks
            .get(task_id)
            .ok_or(WorkloadError::TaskOutOfRange {
                task_id,
                len: self.tasks.len(),
            })
    }

    /// Replace every grader command; used when graders are installed
    /// somewhere other than where the manifest expects them.
    pub fn with_grader(mut self, grader: GraderCommand) -> Self {
        for task in &mut self.tasks {
            task.grader = grader.clone();
        }
        self
    }
}

/// A single broken invariant found by [`validate_chain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Defect {
    EmptyChain,
    WeightCount {
        tasks: usize,
        weights: usize,
    },
    NonPositiveWeight {
        task_id: usize,
        weight: f64,
    },
    WeightSum {
        sum: f64,
    },
    NonContiguousId {
        position: usize,
        id: usize,
    },
    UnexpectedInput {
        task_id: usize,
    },
    BrokenHandoff {
        task_id: usize,
        predecessor: usize,
        expected: String,
        found: Option<String>,
    },
    MissingGolden {
        task_id: usize,
        path: Option<PathBuf>,
    },
    GoldenDigestMismatch {
        task_id: usize,
        path: PathBuf,
    },
    ThresholdOutOfRange {
        threshold: f64,
    },
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::EmptyChain => write!(f, "chain has no tasks"),
            Defect::WeightCount { tasks, weights } => {
                write!(f, "{tasks} tasks but {weights} weights")
            }
            Defect::NonPositiveWeight { task_id, weight } => {
                write!(f, "weight {weight} for task {task_id} is not positive")
            }
            Defect::WeightSum { sum } => write!(f, "weights sum to {sum}, expected 1"),
            Defect::NonContiguousId { position, id } => {
                write!(f, "task at position {position} has id {id}")
            }
            Defect::UnexpectedInput { task_id } => {
                write!(f, "task {task_id} declares an input artifact")
            }
            Defect::BrokenHandoff {
                task_id,
                predecessor,
                expected,
                found,
            } => write!(
                f,
                "task {task_id} input {found:?} does not match task {predecessor} output {expected:?}"
            ),
            Defect::MissingGolden { task_id, path } => {
                write!(f, "task {task_id} golden artifact missing ({path:?})")
            }
            Defect::GoldenDigestMismatch { task_id, path } => write!(
                f,
                "task {task_id} golden artifact {} changed since load",
                path.display()
            ),
            Defect::ThresholdOutOfRange { threshold } => {
                write!(f, "pass threshold {threshold} outside [0, 100]")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub defects: Vec<Defect>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.defects.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.defects.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks every chain invariant and lists what is broken. Reads golden files
/// to confirm they still exist and still hash to the recorded digest, but
/// never writes anything.
pub fn validate_chain(chain: &TaskChain) -> ValidationReport {
    let mut defects = Vec::new();
    if chain.tasks.is_empty() {
        defects.push(Defect::EmptyChain);
    }
    if chain.tasks.len() != chain.weights.len() {
        defects.push(Defect::WeightCount {
            tasks: chain.tasks.len(),
            weights: chain.weights.len(),
        });
    }
    defects.extend(weight_defects(chain.weights.as_slice()));
    if !(0.0..=100.0).contains(&chain.pass_threshold) {
        defects.push(Defect::ThresholdOutOfRange {
            threshold: chain.pass_threshold,
        });
    }

    let last = chain.tasks.len().saturating_sub(1);
    for (position, task) in chain.tasks.iter().enumerate() {
        if task.id != position {
            defects.push(Defect::NonContiguousId {
                position,
                id: task.id,
            });
        }
        if position == 0 {
            if task.input_artifact_key.is_some() {
                defects.push(Defect::UnexpectedInput { task_id: task.id });
            }
        } else {
            let prev = &chain.tasks[position - 1];
            if task.input_artifact_key.as_deref() != Some(prev.output_artifact_key.as_str()) {
                defects.push(Defect::BrokenHandoff {
                    task_id: task.id,
                    predecessor: prev.id,
                    expected: prev.output_artifact_key.clone(),
                    found: task.input_artifact_key.clone(),
                });
            }
        }

        match &task.golden_artifact {
            None if position < last => defects.push(Defect::MissingGolden {
                task_id: task.id,
                path: None,
            }),
            None => {}
            Some(golden) => match fs::read(&golden.path) {
                Err(_) => defects.push(Defect::MissingGolden {
                    task_id: task.id,
                    path: Some(golden.path.clone()),
                }),
                Ok(bytes) => {
                    if let Some(expected) = &golden.digest {
                        if &sha256_hex(&bytes) != expected {
                            defects.push(Defect::GoldenDigestMismatch {
                                task_id: task.id,
                                path: golden.path.clone(),
                            });
                        }
                    }
                }
            },
        }
    }
    ValidationReport { defects }
}

/// Bytes of a golden artifact together with their digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenArtifact {
    pub task_id: usize,
    pub digest: String,
    pub bytes: Vec<u8>,
}

/// Reads the golden output for `task_id`, refusing content whose hash no
/// longer matches the digest recorded at load time.
pub fn golden_lookup(chain: &TaskChain, task_id: usize) -> Result<GoldenArtifact, WorkloadError> {
    let task = chain.task(task_id)?;
    let golden = task
        .golden_artifact
        .as_ref()
        .ok_or_else(|| WorkloadError::MissingGolden {
            task_id,
            reason: "no golden artifact declared".into(),
        })?;
    let bytes = fs::read(&golden.path).map_err(|e| WorkloadError::MissingGolden {
        task_id,
        reason: format!("{}: {e}", golden.path.display()),
    })?;
    let digest = sha256_hex(&bytes);
    if let Some(expected) = &golden.digest {
        if &digest != expected {
            return Err(WorkloadError::MissingGolden {
                task_id,
                reason: format!(
                    "{} no longer matches digest {expected}",
                    golden.path.display()
                ),
            });
        }
    }
    Ok(GoldenArtifact {
        task_id,
        digest,
        bytes,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTask {
    pub id: usize,
    pub name: String,
    pub grader_cmd: String,
    #[serde(default)]
    pub input_key: Option<String>,
    pub output_key: String,
    #[serde(default)]
    pub golden_path: Option<PathBuf>,
    pub revive_flag_key: String,
}

/// On-disk workload manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_id: Option<String>,
    pub tasks: Vec<ManifestTask>,
    pub weights: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub pass_threshold: f64,
    pub repo_template: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build_config: Option<String>,
}

fn default_threshold() -> f64 {
    DEFAULT_PASS_THRESHOLD
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl Manifest {
    /// Resolves relative paths against `base` and records golden digests.
    pub fn into_chain(self, base: &Path, fallback_id: &str) -> TaskChain {
        let tasks = self
            .tasks
            .into_iter()
            .map(|t| {
                let mut grader = GraderCommand::parse(&t.grader_cmd).unwrap_or(GraderCommand {
                    program: String::new(),
                    args: Vec::new(),
                });
                let program = Path::new(&grader.program);
                if program.is_relative() && program.components().count() > 1 {
                    grader.program = base.join(program).to_string_lossy().into_owned();
                }
                let golden_artifact = t.golden_path.map(|p| {
                    let path = resolve(base, &p);
                    let digest = fs::read(&path).ok().map(|b| sha256_hex(&b));
                    GoldenRef { path, digest }
                });
                TaskSpec {
                    id: t.id,
                    name: t.name,
                    grader,
                    input_artifact_key: t.input_key,
                    output_artifact_key: t.output_key,
                    golden_artifact,
                    revive_flag_key: t.revive_flag_key,
                }
            })
            .collect();
        let defaults = WorkspaceLayout::default();
        TaskChain {
            id: self.chain_id.unwrap_or_else(|| fallback_id.to_string()),
            tasks,
            weights: WeightVector::unchecked(self.weights),
            pass_threshold: self.pass_threshold,
            repo_template: resolve(base, &self.repo_template),
            layout: WorkspaceLayout {
                artifact_dir: self.artifact_dir.unwrap_or(defaults.artifact_dir),
                build_config: self.build_config.unwrap_or(defaults.build_config),
            },
        }
    }
}

/// Loads and validates a workload manifest. Relative paths inside the
/// manifest are taken relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<TaskChain, WorkloadError> {
    let text = fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| WorkloadError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let fallback_id = base
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "chain".to_string());
    let chain = manifest.into_chain(base, &fallback_id);
    let report = validate_chain(&chain);
    if report.is_valid() {
        Ok(chain)
    } else {
        Err(WorkloadError::Chain(report))
    }
}
