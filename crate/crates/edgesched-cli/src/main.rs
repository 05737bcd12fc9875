//! `edgesched` command line: generate dataflow pools and workload scripts,
//! run scenarios, compare traces, and audit a trace's final state.
//!
//! Exit codes: 0 success, 2 bad input (missing files, invalid configuration),
//! 3 invariant breach (constraint violations found by `validate`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgesched::rebalance::RebalanceMode;
use edgesched::resources::PoolConfig;
use edgesched::schedulers::Strategy;
use edgesched::simulator::{
    audit_trace, compare_runs, run_scenario, write_csv, ScenarioConfig, SimTrace,
};
use edgesched::workload::{generate_pool, generate_workload, DagPool, WorkloadModel, WorkloadScript};

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "edgesched", version, about = "Edge/cloud dataflow placement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Small,
    Large,
}

impl Preset {
    fn config(self) -> PoolConfig {
        match self {
            Preset::Small => PoolConfig::small(),
            Preset::Large => PoolConfig::large(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Rw,
    Poisson,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pool of random dataflow shapes.
    GenPool {
        #[arg(long, default_value_t = 39)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Resource preset used for the feasibility check.
        #[arg(long, value_enum, default_value_t = Preset::Small)]
        preset: Preset,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Unroll a workload model into a per-interval activity script.
    GenWorkload {
        /// Dataflow pool produced by gen-pool.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, value_enum)]
        model: ModelKind,
        /// Random-walk utilization target (queries per resource).
        #[arg(long, default_value_t = 2.0)]
        target: f64,
        /// Random-walk hysteresis band around the target.
        #[arg(long, default_value_t = 0.5)]
        band: f64,
        /// Poisson mean dataflow size.
        #[arg(long, default_value_t = 12.0)]
        lambda: f64,
        /// Poisson warmup arrivals before alternation starts.
        #[arg(long, default_value_t = 16)]
        warmup: usize,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        /// Resource preset sizing the utilization denominator.
        #[arg(long, value_enum, default_value_t = Preset::Small)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run one scenario and write <out>.json and <out>.csv.
    Run(RunArgs),
    /// Compare two traces of the same pool and workload interval by interval.
    Compare {
        trace_a: PathBuf,
        trace_b: PathBuf,
        /// CSV of per-interval objective deltas.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Re-check the constraints on a trace's embedded final state.
    Validate { trace: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = Preset::Small)]
    preset: Preset,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, default_value = "none")]
    rebalance: RebalanceMode,
    /// Per-operator migration downtime in seconds.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    /// Embed per-interval placement snapshots in the JSON trace.
    #[arg(long)]
    record_states: bool,
    /// Output path prefix; `.json` and `.csv` are appended.
    #[arg(short, long)]
    out: PathBuf,
}

fn log(msg: &str) {
    if std::env::var_os("EDGESCHED_LOG").is_some() {
        eprintln!("edgesched: {msg}");
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let file = File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| format!("cannot parse {}: {e}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let file = File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    writeln!(w).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn run(args: RunArgs) -> Result<(), String> {
    let dag_pool: DagPool = read_json(&args.pool)?;
    let script: WorkloadScript = read_json(&args.workload)?;
    let mut config = ScenarioConfig::new(args.preset.config(), args.strategy, args.rebalance);
    config.migration_cost_sec = args.eta;
    config.seed = args.seed;
    config.horizon = args.horizon;
    config.record_states = args.record_states;

    log(&format!(
        "running {} / {} over {} intervals (seed {})",
        config.strategy.name(),
        config.rebalance.name(),
        config.horizon.min(script.activities.len()),
        config.seed
    ));
    let trace = run_scenario(&config, &dag_pool, &script).map_err(|e| e.to_string())?;

    let json_path = args.out.with_extension("json");
    let csv_path = args.out.with_extension("csv");
    write_json(&json_path, &trace)?;
    let csv = File::create(&csv_path)
        .map_err(|e| format!("cannot create {}: {e}", csv_path.display()))?;
    write_csv(&trace, BufWriter::new(csv)).map_err(|e| e.to_string())?;
    println!(
        "wrote {} and {} (config {}, mean objective {:.4}s, {} rejections)",
        json_path.display(),
        csv_path.display(),
        &trace.config_hash[..12],
        trace.summary.objective.mean,
        trace.summary.rejections
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), (u8, String)> {
    let bad = |m: String| (EXIT_BAD_INPUT, m);
    match cli.command {
        Command::GenPool { count, seed, preset, output } => {
            let pool = generate_pool(count, seed, &preset.config())
                .map_err(|e| bad(e.to_string()))?;
            write_json(&output, &pool).map_err(bad)?;
            println!("wrote {} ({count} dataflows, seed {seed})", output.display());
            Ok(())
        }
        Command::GenWorkload {
            pool,
            model,
            target,
            band,
            lambda,
            warmup,
            horizon,
            preset,
            seed,
            output,
        } => {
            let dag_pool: DagPool = read_json(&pool).map_err(bad)?;
            let model = match model {
                ModelKind::Rw => WorkloadModel::RandomWalk { target, band },
                ModelKind::Poisson => WorkloadModel::Poisson { lambda, warmup },
            };
            let cfg = preset.config();
            let resources = (cfg.edge_count + cfg.cloud_count) as usize;
            let script = generate_workload(&dag_pool, model, horizon, seed, resources)
                .map_err(|e| bad(e.to_string()))?;
            write_json(&output, &script).map_err(bad)?;
            println!("wrote {} ({horizon} intervals, seed {seed})", output.display());
            Ok(())
        }
        Command::Run(args) => run(args).map_err(bad),
        Command::Compare { trace_a, trace_b, output } => {
            let a: SimTrace = read_json(&trace_a).map_err(bad)?;
            let b: SimTrace = read_json(&trace_b).map_err(bad)?;
            let cmp = compare_runs(&a, &b).map_err(|e| bad(e.to_string()))?;
            let file = File::create(&output)
                .map_err(|e| bad(format!("cannot create {}: {e}", output.display())))?;
            let mut w = BufWriter::new(file);
            let io_err = |e: std::io::Error| bad(format!("cannot write {}: {e}", output.display()));
            writeln!(w, "t,objective_a,objective_b,delta,relative_improvement").map_err(io_err)?;
            for r in &cmp.rows {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    r.t, r.objective_a, r.objective_b, r.delta, r.relative_improvement
                )
                .map_err(io_err)?;
            }
            println!(
                "wrote {} (max improvement {:.2}%, mean {:.2}%)",
                output.display(),
                100.0 * cmp.max_relative_improvement,
                100.0 * cmp.mean_relative_improvement
            );
            Ok(())
        }
        Command::Validate { trace } => {
            let t: SimTrace = read_json(&trace).map_err(bad)?;
            let report = audit_trace(&t).map_err(|e| bad(e.to_string()))?;
            if report.all_ok() {
                println!(
                    "{}: final state valid ({} dataflows, config {})",
                    trace.display(),
                    t.final_state.dataflows.len(),
                    &t.config_hash[..12]
                );
                Ok(())
            } else {
                for v in &report.violations {
                    eprintln!(
                        "constraint {} violated by {}: {}",
                        v.constraint, v.subject, v.detail
                    );
                }
                Err((
                    EXIT_INVARIANT,
                    format!("{} constraint violations", report.violations.len()),
                ))
            }
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
