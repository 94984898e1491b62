//! Per-run workspaces, grader execution, and the file-level half of
//! resurrection (golden injection and revive flags).
//!
//! Isolation is an interface: [`GraderExecutor`] decides how a grader
//! process is launched. The default [`ProcessExecutor`] runs it as a plain
//! subprocess inside the workspace; a container-backed executor can replace
//! it without touching the rest of the harness.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::digest::sha256_hex;
use crate::workload::{TaskChain, TaskSpec, WorkspaceLayout};

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("repository template {0} is missing")]
    TemplateMissing(PathBuf),
    #[error("run id {0} is already in use")]
    Collision(String),
    #[error("workspace for run {0} is not live")]
    NotLive(String),
    #[error("grader for task {task_id} crashed: {reason}")]
    GraderCrash { task_id: usize, reason: String },
    #[error("golden artifact is empty")]
    EmptyGolden,
    #[error("write to {path} failed: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("workspace io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workspace {
    pub run_id: String,
    pub root: PathBuf,
    pub chain_id: String,
    pub created_at: DateTime<Utc>,
    pub layout: WorkspaceLayout,
}

impl Workspace {
    pub fn artifact_path(&self, key: &str) -> PathBuf {
        self.root.join(self.layout.artifact_path(key))
    }

    pub fn build_config_path(&self) -> PathBuf {
        self.root.join(&self.layout.build_config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    pub task_id: usize,
    pub score: f64,
    pub grader_stdout_digest: String,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub task_id: usize,
    pub artifact_path: PathBuf,
    pub previous_digest: Option<String>,
    pub digest: String,
}

/// Launches grader processes.
pub trait GraderExecutor: Send + Sync {
    fn execute(&self, program: &str, args: &[String], cwd: &Path) -> io::Result<Output>;
}

/// Runs graders as child processes. Directories in `extra_path` are put in
/// front of the child's `PATH`, so bundled graders resolve without changing
/// the parent environment.
#[derive(Debug, Clone, Default)]
pub struct ProcessExecutor {
    pub extra_path: Vec<PathBuf>,
}

impl ProcessExecutor {
    pub fn with_path(extra_path: Vec<PathBuf>) -> Self {
        Self { extra_path }
    }
}

impl GraderExecutor for ProcessExecutor {
    fn execute(&self, program: &str, args: &[String], cwd: &Path) -> io::Result<Output> {
        // Command looks bare names up in the parent's PATH, so resolve them
        // against the extra directories first.
        let resolved = if program.contains('/') {
            None
        } else {
            self.extra_path
                .iter()
                .map(|dir| dir.join(program))
                .find(|p| p.is_file())
        };
        let mut command = match resolved {
            Some(path) => Command::new(path),
            None => Command::new(program),
        };
        command.args(args).current_dir(cwd);
        if !self.extra_path.is_empty() {
            let mut paths = self.extra_path.clone();
            if let Some(existing) = std::env::var_os("PATH") {
                paths.extend(std::env::split_paths(&existing));
            }
            let joined: OsString = std::env::join_paths(paths).map_err(io::Error::other)?;
            command.env("PATH", joined);
        }
        command.output()
    }
}

/// Parses the grader's final non-empty line, which must read
/// `SCORE: <number>` with the number in [0, 100].
pub fn parse_score(stdout: &str) -> Result<f64, String> {
    let last = stdout
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| "grader printed nothing".to_string())?;
    let value = last
        .trim()
        .strip_prefix("SCORE:")
        .ok_or_else(|| format!("final line {last:?} is not a score line"))?
        .trim();
    let score: f64 = value
        .parse()
        .map_err(|_| format!("score {value:?} is not a number"))?;
    if !(0.0..=100.0).contains(&score) {
        return Err(format!("score {score} outside [0, 100]"));
    }
    Ok(score)
}

/// Runs a task's grader against the directory `root`, as
/// `<grader> --task <id> --workspace <root>`.
pub fn run_grader(
    executor: &dyn GraderExecutor,
    root: &Path,
    task: &TaskSpec,
) -> Result<GradeResult, SandboxError> {
    let crash = |reason: String| SandboxError::GraderCrash {
        task_id: task.id,
        reason,
    };
    let mut args = task.grader.args.clone();
    args.extend([
        "--task".to_string(),
        task.id.to_string(),
        "--workspace".to_string(),
        root.to_string_lossy().into_owned(),
    ]);
    let started = Instant::now();
    let output = executor
        .execute(&task.grader.program, &args, root)
        .map_err(|e| crash(format!("could not start {}: {e}", task.grader.program)))?;
    let duration = started.elapsed().as_secs_f64();
    if !output.status.success() {
        return Err(crash(format!(
            "exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let score = parse_score(&stdout).map_err(crash)?;
    Ok(GradeResult {
        task_id: task.id,
        score,
        grader_stdout_digest: sha256_hex(&output.stdout),
        duration,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SandboxError> {
    let wrap = |source: io::Error| SandboxError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(wrap)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(bytes).map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

fn copy_tree(from: &Path, to: &Path) -> io::Result<()> {
    for entry in WalkDir::new(from) {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(from).map_err(io::Error::other)?;
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest)?;
        } else {
            fs::copy(entry.path(), &dest)?;
        }
    }
    Ok(())
}

/// Owns the directory that workspaces are created in and the registry of
/// live run ids.
pub struct Sandbox {
    base: PathBuf,
    executor: Arc<dyn GraderExecutor>,
    live: Mutex<HashSet<String>>,
}

impl Sandbox {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self::with_executor(base, Arc::new(ProcessExecutor::default()))
    }

    pub fn with_executor(base: impl Into<PathBuf>, executor: Arc<dyn GraderExecutor>) -> Self {
        Self {
            base: base.into(),
            executor,
            live: Mutex::new(HashSet::new()),
        }
    }

    pub fn executor(&self) -> Arc<dyn GraderExecutor> {
        Arc::clone(&self.executor)
    }

    pub fn is_live(&self, workspace: &Workspace) -> bool {
        self.live
            .lock()
            .expect("workspace registry poisoned")
            .contains(&workspace.run_id)
    }

    fn require_live(&self, workspace: &Workspace) -> Result<(), SandboxError> {
        if self.is_live(workspace) {
            Ok(())
        } else {
            Err(SandboxError::NotLive(workspace.run_id.clone()))
        }
    }

    /// Creates `<base>/<run_id>` as a full copy of the chain's template.
    pub fn provision(&self, chain: &TaskChain, run_id: &str) -> Result<Workspace, SandboxError> {
        if !chain.repo_template.is_dir() {
            return Err(SandboxError::TemplateMissing(chain.repo_template.clone()));
        }
        let root = self.base.join(run_id);
        {
            let mut live = self.live.lock().expect("workspace registry poisoned");
            if live.contains(run_id) || root.exists() {
                return Err(SandboxError::Collision(run_id.to_string()));
            }
            live.insert(run_id.to_string());
        }
        if let Err(e) = copy_tree(&chain.repo_template, &root) {
            let _ = fs::remove_dir_all(&root);
            self.live
                .lock()
                .expect("workspace registry poisoned")
                .remove(run_id);
            return Err(e.into());
        }
        Ok(Workspace {
            run_id: run_id.to_string(),
            root,
            chain_id: chain.id.clone(),
            created_at: Utc::now(),
            layout: chain.layout.clone(),
        })
    }

    pub fn grade(
        &self,
        workspace: &Workspace,
        task: &TaskSpec,
    ) -> Result<GradeResult, SandboxError> {
        self.require_live(workspace)?;
        run_grader(self.executor.as_ref(), &workspace.root, task)
    }

    /// Replaces the task's output artifact with `golden`, byte for byte.
    pub fn inject_golden(
        &self,
        workspace: &Workspace,
        task: &TaskSpec,
        golden: &[u8],
    ) -> Result<InjectionReport, SandboxError> {
        self.require_live(workspace)?;
        if golden.is_empty() {
            return Err(SandboxError::EmptyGolden);
        }
        let path = workspace.artifact_path(&task.output_artifact_key);
        let previous_digest = fs::read(&path).ok().map(|b| sha256_hex(&b));
        write_atomic(&path, golden)?;
        let digest = sha256_hex(&fs::read(&path)?);
        Ok(InjectionReport {
            task_id: task.id,
            artifact_path: path,
            previous_digest,
            digest,
        })
    }

    /// Ensures the build config holds exactly one `set(<KEY> ON)` line for
    /// the task's revive flag.
    pub fn write_revive_flag(
        &self,
        workspace: &Workspace,
        task: &TaskSpec,
    ) -> Result<(), SandboxError> {
        self.require_live(workspace)?;
        let path = workspace.build_config_path();
        let line = format!("set({} ON)", task.revive_flag_key);
        let current = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(source) => return Err(SandboxError::Write { path, source }),
        };
        if current.lines().any(|l| l.trim() == line) {
            return Ok(());
        }
        let mut text = current;
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&line);
        text.push('\n');
        write_atomic(&path, text.as_bytes())
    }

    /// Removes the workspace and frees its run id. Safe to call repeatedly.
    pub fn teardown(&self, workspace: &Workspace) {
        if workspace.root.exists() {
            if let Err(e) = fs::remove_dir_all(&workspace.root) {
                log::warn!(
                    "could not remove workspace {}: {e}",
                    workspace.root.display()
                );
            }
        }
        self.live
            .lock()
            .expect("workspace registry poisoned")
            .remove(&workspace.run_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_line_contract() {
        assert_eq!(parse_score("log\nSCORE: 42.5\n"), Ok(42.5));
        assert_eq!(parse_score("SCORE: 100\n\n"), Ok(100.0));
        assert!(parse_score("SCORE: 101").is_err());
        assert!(parse_score("SCORE: abc").is_err());
        assert!(parse_score("SCORE: 10\ntrailing").is_err());
        assert!(parse_score("").is_err());
    }
}
