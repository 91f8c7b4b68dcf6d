//! `gangsim` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 invariant
//! violation inside the simulator, 3 a replay check failed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gangsim::metrics::{deadlock_cdf, failure_impact, idle_gpu_cdf, metrics_csv, RunMetrics};
use gangsim::replay::{run_experiment, Experiment, SCENARIOS};
use gangsim::scenario::{Overrides, Prepared, Scenario};
use gangsim::sched::Policy;
use gangsim::sim::{SimError, SimResult};
use gangsim::workload::{generate_synthetic, write_trace, WorkloadConfig};

#[derive(Parser)]
#[command(name = "gangsim", version, about = "Gang-scheduling simulator for multi-tenant GPU clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seed of a scenario and write its exports.
    Run(RunArgs),
    /// Run every seed of a scenario in parallel.
    Batch(RunArgs),
    /// Write a synthetic workload trace as JSON.
    GenTrace(GenTraceArgs),
    /// Run a built-in reproduction and print its verdict table.
    ReplayPaper {
        #[arg(value_enum)]
        experiment: ExperimentArg,
    },
    /// Load and check a scenario without running it.
    Validate(ScenarioArgs),
    /// Print a scenario with overrides applied, as JSON.
    DumpConfig(ScenarioArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Fragmentation,
    Gang,
    SpreadVsPack,
    Faults,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Experiment {
        match e {
            ExperimentArg::Fragmentation => Experiment::Fragmentation,
            ExperimentArg::Gang => Experiment::Gang,
            ExperimentArg::SpreadVsPack => Experiment::SpreadVsPack,
            ExperimentArg::Faults => Experiment::Faults,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Gang,
    PodSpread,
    PodPack,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Policy {
        match p {
            PolicyArg::Gang => Policy::Gang,
            PolicyArg::PodSpread => Policy::PodSpread,
            PolicyArg::PodPack => Policy::PodPack,
        }
    }
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file, or `shipped:NAME` for a built-in one.
    #[arg(long)]
    scenario: String,
    /// Use only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use seeds 0..N.
    #[arg(long, conflicts_with = "seed")]
    seeds: Option<u64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Gang placement samples per decision.
    #[arg(long)]
    samples: Option<u32>,
    #[arg(long)]
    threshold_s: Option<f64>,
    #[arg(long)]
    horizon_s: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long, default_value = "gangsim-out")]
    out: PathBuf,
    /// Metrics file format.
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Also write the final coordination-store contents as store.json.
    #[arg(long)]
    dump_store: bool,
}

#[derive(Args)]
struct GenTraceArgs {
    /// Workload generator config (JSON).
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Take the workload of this scenario instead.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Invariant(String),
    Replay,
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Failure {
        match e {
            SimError::Config(m) => Failure::Config(m),
            SimError::Invariant(m) => Failure::Invariant(m),
        }
    }
}

fn config(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Config(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("GANGSIM_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error[config]: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("error[invariant]: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Replay) => {
            eprintln!("error[replay]: at least one check failed");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(a) => run(&a),
        Command::Batch(a) => batch(&a),
        Command::GenTrace(a) => gen_trace(&a),
        Command::ReplayPaper { experiment } => {
            let verdict = run_experiment(experiment.into())?;
            print!("{}", verdict.table());
            if verdict.passed() {
                Ok(())
            } else {
                Err(Failure::Replay)
            }
        }
        Command::Validate(a) => {
            let p = prepare(&load(&a)?)?;
            println!(
                "{}: ok ({} nodes, {} GPUs, policy {}, seeds {:?})",
                p.name,
                p.topology.len(),
                p.topology.iter().map(|n| n.gpus).sum::<u32>(),
                p.config.scheduler.policy,
                p.seeds
            );
            Ok(())
        }
        Command::DumpConfig(a) => {
            let s = load(&a)?;
            println!("{}", serde_json::to_string_pretty(&s).map_err(config)?);
            Ok(())
        }
    }
}

fn load(a: &ScenarioArgs) -> Result<Scenario, Failure> {
    let mut s = match a.scenario.strip_prefix("shipped:") {
        Some(name) => {
            let (_, text) = SCENARIOS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
                let names: Vec<&str> = SCENARIOS.iter().map(|(n, _)| *n).collect();
                Failure::Config(format!("no shipped scenario {name:?} (expected one of {})", names.join(", ")))
            })?;
            Scenario::parse(text, Path::new(".")).map_err(config)?
        }
        None => Scenario::load(Path::new(&a.scenario)).map_err(config)?,
    };
    s.apply(&Overrides {
        seed: a.seed,
        seeds: a.seeds,
        policy: a.policy.map(Policy::from),
        samples: a.samples,
        horizon_s: a.horizon_s,
        threshold_s: a.threshold_s,
    });
    Ok(s)
}

fn prepare(s: &Scenario) -> Result<Prepared, Failure> {
    s.prepare().map_err(config)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(io(path))
}

fn write_metrics(dir: &Path, rows: &[RunMetrics], format: Format) -> Result<PathBuf, Failure> {
    let (path, text) = match format {
        Format::Csv => (dir.join("metrics.csv"), metrics_csv(rows)),
        Format::Json => (dir.join("metrics.json"), serde_json::to_string_pretty(rows).map_err(config)? + "\n"),
    };
    write(&path, &text)?;
    Ok(path)
}

fn export(r: &SimResult, dir: &Path, dump_store: bool) -> Result<(), Failure> {
    r.write_exports(dir).map_err(io(dir))?;
    if dump_store {
        let path = dir.join("store.json");
        write(&path, &(serde_json::to_string_pretty(&r.store_dump).map_err(config)? + "\n"))?;
    }
    Ok(())
}

fn summary(r: &SimResult, m: &RunMetrics) {
    println!(
        "seed {}: {} jobs, {} completed, {} failed, peak deadlocked learners {}, peak idle GPUs {:.1}%, queued over threshold {}",
        r.seed, m.jobs, m.completed, m.failed, m.deadlocked_learners, m.idle_gpu_pct_peak, m.queued_over_threshold
    );
}

fn run(a: &RunArgs) -> Result<(), Failure> {
    let p = prepare(&load(&a.scenario)?)?;
    let seed = p.seeds[0];
    let r = p.run(seed)?;
    fs::create_dir_all(&a.out).map_err(io(&a.out))?;
    export(&r, &a.out, a.dump_store)?;
    let m = RunMetrics::from_result(&r, p.threshold);
    write_metrics(&a.out, std::slice::from_ref(&m), a.format)?;
    summary(&r, &m);
    Ok(())
}

fn batch(a: &RunArgs) -> Result<(), Failure> {
    let p = prepare(&load(&a.scenario)?)?;
    log::info!("{}: {} seeds", p.name, p.seeds.len());
    let results: Vec<SimResult> = p.run_all().into_iter().collect::<Result<_, _>>()?;
    fs::create_dir_all(&a.out).map_err(io(&a.out))?;
    let mut rows = Vec::new();
    for r in &results {
        export(r, &a.out.join(format!("seed-{}", r.seed)), a.dump_store)?;
        let m = RunMetrics::from_result(r, p.threshold);
        summary(r, &m);
        rows.push(m);
    }
    write_metrics(&a.out, &rows, a.format)?;
    write(&a.out.join("deadlock_cdf.csv"), &deadlock_cdf(&results).to_csv())?;
    write(&a.out.join("idle_gpu_cdf.csv"), &idle_gpu_cdf(&results).to_csv())?;
    let fi = failure_impact(&results);
    write(&a.out.join("failure_impact.json"), &(serde_json::to_string_pretty(&fi).map_err(config)? + "\n"))?;
    println!(
        "{} runs: pod deletions {:.2}%, jobs restarted from scratch {:.2}%",
        results.len(),
        fi.pod_deletion_pct,
        fi.job_cancel_pct
    );
    Ok(())
}

fn gen_trace(a: &GenTraceArgs) -> Result<(), Failure> {
    let jobs = match (&a.config, &a.scenario) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(io(path))?;
            let cfg: WorkloadConfig =
                serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            generate_synthetic(&cfg, a.seed).map_err(config)?
        }
        (None, Some(scenario)) => {
            let args = ScenarioArgs {
                scenario: scenario.clone(),
                seed: None,
                seeds: None,
                policy: None,
                samples: None,
                threshold_s: None,
                horizon_s: None,
            };
            prepare(&load(&args)?)?.workload_for(a.seed)?
        }
        (None, None) => return Err(Failure::Config("either --config or --scenario is required".into())),
    };
    match &a.out {
        Some(path) => {
            let f = fs::File::create(path).map_err(io(path))?;
            write_trace(&jobs, std::io::BufWriter::new(f)).map_err(io(path))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            match write_trace(&jobs, &mut lock).and_then(|()| lock.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(config(e)),
                _ => {}
            }
        }
    }
    log::info!("wrote {} jobs", jobs.len());
    Ok(())
}
