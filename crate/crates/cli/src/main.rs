use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ramp_core::agent::{
    aggregate_usage, usage_of_turns, AgentBackend, GatewayBackend, GraderProbe, PriceTable,
    SimulatedAgentProfile, SimulatedBackend,
};
use ramp_core::ingestion::{attach_extras, ingest_extras, ingest_table, to_record, to_records};
use ramp_core::metrics::{completion_rates, mean_reward_raw, stage_means, CompletionRule};
use ramp_core::minichain::MiniChainSynthesizer;
use ramp_core::orchestrator::{Mode, Orchestrator, PipelineConfig, RunRecord};
use ramp_core::reporting::{build_leaderboard, render, write_report, ReportFormat};
use ramp_core::sandbox::{ProcessExecutor, Sandbox};
use ramp_core::{load_manifest, TaskChain, DEFAULT_TURN_BUDGET};

const MINICHAIN_GRADER: &str = "ramp-minichain-grader";

#[derive(Parser)]
#[command(
    name = "ramp",
    version,
    about = "Run and score agents on serially dependent task chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one backend through a workload and save the run record.
    Run(RunArgs),
    /// Build a leaderboard from saved run records.
    Report {
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        /// Re-prices each run's trace with this table.
        #[arg(long)]
        pricing: Option<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulated agent profile and print the run record.
    Simulate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "1")]
        mode: Mode,
        #[arg(long, default_value_t = DEFAULT_TURN_BUDGET)]
        budget: usize,
        /// Save the record and trace to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
    /// Load a published score table and print replayed statistics.
    IngestTable {
        #[arg(long)]
        csv: PathBuf,
        /// Companion file with time, token and stage figures.
        #[arg(long)]
        extras: Option<PathBuf>,
        #[arg(long, default_value_t = 60.0)]
        threshold: f64,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Save one run record per row to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulated profile in both modes and compare per-task scores.
    CompareModes {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TURN_BUDGET)]
        budget: usize,
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `sim:<profile.json>` for a simulated agent, otherwise a model id
    /// served by the gateway at $RAMP_GATEWAY_URL.
    #[arg(long)]
    backend: String,
    /// 1 = serial with resurrection, 2 = serial cascade.
    #[arg(long, default_value = "1")]
    mode: Mode,
    #[arg(long, default_value_t = DEFAULT_TURN_BUDGET)]
    budget: usize,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Per-token prices, used to cost the run.
    #[arg(long)]
    pricing: Option<PathBuf>,
    /// Directory workspaces are created in.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

fn executor() -> Arc<ProcessExecutor> {
    // Bundled graders are installed next to this binary.
    let dirs = std::env::current_exe()
        .ok()
        .and_then(|exe| exe.parent().map(Path::to_path_buf))
        .into_iter()
        .collect();
    Arc::new(ProcessExecutor::with_path(dirs))
}

fn work_dir(given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| std::env::temp_dir().join("ramp-workspaces"))
}

fn new_run_id(model: &str, mode: Mode) -> String {
    let safe: String = model
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    let tag = match mode {
        Mode::SerialWithResurrection => "m1",
        Mode::SerialCascade => "m2",
    };
    format!("{safe}-{tag}-{}", uuid::Uuid::new_v4().simple())
}

fn simulated_backend(
    profile: SimulatedAgentProfile,
    chain: &TaskChain,
    executor: Arc<ProcessExecutor>,
) -> SimulatedBackend {
    let backend = SimulatedBackend::new(profile)
        .with_probe(GraderProbe::new(Arc::new(chain.clone()), executor));
    if chain
        .tasks
        .iter()
        .all(|t| t.grader.program == MINICHAIN_GRADER)
    {
        backend.with_synthesizer(MiniChainSynthesizer)
    } else {
        backend
    }
}

fn load_profile(path: &Path, chain: &TaskChain) -> Result<SimulatedAgentProfile> {
    let profile = SimulatedAgentProfile::load(path)
        .with_context(|| format!("loading profile {}", path.display()))?;
    if profile.tasks.len() < chain.len() {
        bail!(
            "profile {} covers {} tasks but the chain has {}",
            path.display(),
            profile.tasks.len(),
            chain.len()
        );
    }
    Ok(profile)
}

struct Runner {
    orchestrator: Orchestrator,
    executor: Arc<ProcessExecutor>,
}

impl Runner {
    fn new(work: Option<PathBuf>) -> Result<Self> {
        let base = work_dir(work);
        fs::create_dir_all(&base).with_context(|| format!("creating {}", base.display()))?;
        let executor = executor();
        let sandbox = Sandbox::with_executor(base, executor.clone());
        Ok(Self {
            orchestrator: Orchestrator::new(Arc::new(sandbox)),
            executor,
        })
    }

    fn simulate(
        &self,
        profile: &SimulatedAgentProfile,
        chain: &TaskChain,
        config: &PipelineConfig,
    ) -> Result<RunRecord> {
        let mut backend = simulated_backend(profile.clone(), chain, self.executor.clone());
        Ok(self
            .orchestrator
            .execute_pipeline(&mut backend, chain, config)?)
    }
}

fn summary(record: &RunRecord) -> serde_json::Value {
    serde_json::json!({
        "run_id": record.run_id,
        "model_id": record.model_id,
        "mode": record.mode,
        "scores": record.scores(),
        "resurrections": record.resurrections,
        "turns": record.trace.turns_used(),
        "metrics": record.metrics,
        "failure": record.failure,
        "usage": record.usage,
    })
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let RunArgs {
        manifest,
        backend: backend_name,
        mode,
        budget,
        out,
        pricing,
        work_dir: work,
        run_id,
    } = args;
    let chain = load_manifest(&manifest)
        .with_context(|| format!("loading manifest {}", manifest.display()))?;
    let runner = Runner::new(work)?;
    let mut backend: Box<dyn AgentBackend> = match backend_name.strip_prefix("sim:") {
        Some(path) => {
            let profile = load_profile(Path::new(path), &chain)?;
            Box::new(simulated_backend(profile, &chain, runner.executor.clone()))
        }
        None => Box::new(GatewayBackend::from_env(backend_name)?),
    };
    let mut config = PipelineConfig::new(
        mode,
        run_id.unwrap_or_else(|| new_run_id(backend.model_id(), mode)),
    )
    .with_budget(budget);
    if let Some(path) = pricing {
        config = config.with_pricing(
            PriceTable::load(&path)
                .with_context(|| format!("loading pricing {}", path.display()))?,
        );
    }
    let mut record = runner
        .orchestrator
        .execute_pipeline(backend.as_mut(), &chain, &config)?;
    let path = record
        .save(&out)
        .with_context(|| format!("saving run to {}", out.display()))?;
    println!("{}", serde_json::to_string_pretty(&summary(&record))?);
    eprintln!("saved {}", path.display());
    Ok(())
}

fn load_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|n| n != "leaderboard.json")
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| RunRecord::load(p).with_context(|| format!("loading run {}", p.display())))
        .collect()
}

fn cmd_report(runs: &Path, pricing: Option<&Path>, format: &str, out: Option<&Path>) -> Result<()> {
    let format: ReportFormat = format.parse()?;
    let mut records = load_runs(runs)?;
    if let Some(path) = pricing {
        let table = PriceTable::load(path)
            .with_context(|| format!("loading pricing {}", path.display()))?;
        for record in &mut records {
            if record.trace.turns.is_empty() {
                continue;
            }
            record.usage = aggregate_usage(&record.trace, Some(&table));
            for result in &mut record.results {
                result.usage = usage_of_turns(
                    &record.model_id,
                    record.trace.task_turns(result.task_id),
                    Some(&table),
                );
            }
        }
    }
    let board = build_leaderboard(&records, None, &chrono::Utc::now().to_rfc3339());
    let text = render(&board, format)?;
    if let Some(path) = out {
        write_report(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_simulate(
    profile: &Path,
    manifest: &Path,
    mode: Mode,
    budget: usize,
    out: Option<&Path>,
    work: Option<PathBuf>,
) -> Result<()> {
    let chain = load_manifest(manifest)
        .with_context(|| format!("loading manifest {}", manifest.display()))?;
    let profile = load_profile(profile, &chain)?;
    let runner = Runner::new(work)?;
    let config = PipelineConfig::new(mode, new_run_id(&profile.model_id, mode)).with_budget(budget);
    let mut record = runner.simulate(&profile, &chain, &config)?;
    if let Some(dir) = out {
        let path = record.save(dir)?;
        eprintln!("saved {}", path.display());
    }
    println!("{}", serde_json::to_string_pretty(&summary(&record))?);
    Ok(())
}

fn cmd_ingest(
    csv: &Path,
    extras: Option<&Path>,
    threshold: f64,
    format: &str,
    out: Option<&Path>,
) -> Result<()> {
    let format: ReportFormat = format.parse()?;
    let mut table = ingest_table(csv)?;
    if let Some(path) = extras {
        let unmatched = attach_extras(&mut table, &ingest_extras(path)?);
        for model in unmatched {
            log::warn!("extras row {model} matches no table row");
        }
    }
    let mut records = to_records(&table.rows, threshold);
    let baseline = table.baseline.as_ref().map(|b| to_record(b, threshold));
    let board = build_leaderboard(
        &records,
        baseline.as_ref(),
        &chrono::Utc::now().to_rfc3339(),
    );
    print!("{}", render(&board, format)?);

    let matrix = table.score_matrix();
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.2}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!();
    println!("rows: {}", table.rows.len());
    println!(
        "completion rates (%): [{}]",
        fmt(&completion_rates(&matrix, CompletionRule::PerfectScore))
    );
    println!("stage means: [{}]", fmt(&stage_means(&matrix)));
    if let Some(b) = &table.baseline {
        let weights = &ramp_core::ingestion::TABLE_WEIGHTS[..b.scores.len()];
        let mr = mean_reward_raw(&b.scores, weights, &vec![1.0; b.scores.len()])?;
        println!(
            "baseline MR recomputed: {:.2} (reported {:.2})",
            mr.value, b.mr_reported
        );
    }
    if let Some(dir) = out {
        records.extend(baseline);
        for record in &mut records {
            record.save(dir)?;
        }
        eprintln!("saved {} records to {}", records.len(), dir.display());
    }
    Ok(())
}

fn cmd_compare(
    profile: &Path,
    manifest: &Path,
    budget: usize,
    work: Option<PathBuf>,
) -> Result<()> {
    let chain = load_manifest(manifest)
        .with_context(|| format!("loading manifest {}", manifest.display()))?;
    let profile = load_profile(profile, &chain)?;
    let runner = Runner::new(work)?;
    let run = |mode| {
        let config =
            PipelineConfig::new(mode, new_run_id(&profile.model_id, mode)).with_budget(budget);
        runner.simulate(&profile, &chain, &config)
    };
    let m1 = run(Mode::SerialWithResurrection)?;
    let m2 = run(Mode::SerialCascade)?;
    println!("model: {}", profile.model_id);
    println!(
        "resurrections in mode 1: {} {:?}",
        m1.resurrections.len(),
        m1.resurrections
    );
    println!("| Task | Mode 1 | Mode 2 | Delta |\n|---:|---:|---:|---:|");
    for (a, b) in m1.results.iter().zip(&m2.results) {
        println!(
            "| {} | {:.2} | {:.2} | {:+.2} |",
            a.task_id,
            a.score,
            b.score,
            a.score - b.score
        );
    }
    let mr = |r: &RunRecord| r.metrics.as_ref().map_or(0.0, |m| m.mr);
    println!("MR: mode 1 {:.2}, mode 2 {:.2}", mr(&m1), mr(&m2));
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Report {
            runs,
            pricing,
            format,
            out,
        } => cmd_report(&runs, pricing.as_deref(), &format, out.as_deref()),
        Command::Simulate {
            profile,
            manifest,
            mode,
            budget,
            out,
            work_dir,
        } => cmd_simulate(&profile, &manifest, mode, budget, out.as_deref(), work_dir),
        Command::IngestTable {
            csv,
            extras,
            threshold,
            format,
            out,
        } => cmd_ingest(&csv, extras.as_deref(), threshold, &format, out.as_deref()),
        Command::CompareModes {
            profile,
            manifest,
            budget,
            work_dir,
        } => cmd_compare(&profile, &manifest, budget, work_dir),
    }
}
