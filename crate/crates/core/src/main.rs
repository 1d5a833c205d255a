use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otfs_ra::harness::{
    bench_gamp, export_results, oracle_check, run_experiment, summarize, Algorithm, ExperimentConfig, Profile,
};
use otfs_ra::Result;

#[derive(Parser)]
#[command(
    name = "otfs-ra",
    version,
    about = "Grant-free MIMO-OTFS channel estimation and activity detection simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo sweep; writes per-trial CSV plus a JSON sidecar.
    Run(RunArgs),
    /// Time-domain chain vs closed-form delay-Doppler relation on random instances.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Per-iteration ConvSBL-GAMP wall-clock against the device count.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
        devices: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[command(flatten)]
        sweep: SweepArgs,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// TOML configuration; command-line options override it.
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    antennas: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    overhead: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, value_delimiter = ',')]
    algos: Option<Vec<Algorithm>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    active: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

impl SweepArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.profile) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, p) => ExperimentConfig::profile(p.unwrap_or_default()),
        };
        if let (Some(_), Some(p)) = (&self.config, self.profile) {
            if p != cfg.profile {
                let base = ExperimentConfig::profile(p);
                cfg.profile = p;
                cfg.grid = base.grid;
            }
        }
        if let Some(v) = &self.snr {
            cfg.snr_db = v.clone();
        }
        if let Some(v) = &self.antennas {
            cfg.antennas = v.clone();
        }
        if let Some(v) = &self.overhead {
            cfg.overhead = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        Ok(cfg)
    }
}

fn run(args: RunArgs) -> Result<bool> {
    let mut cfg = args.sweep.config()?;
    if let Some(v) = args.algos {
        cfg.algorithms = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.devices {
        cfg.devices = v;
    }
    if let Some(v) = args.active {
        cfg.active = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    let side = export_results(&out, &cfg, &args.out)?;
    println!(
        "{:<8} {:>8} {:>9} {:>9} {:>7} {:>6} {:>10} {:>8}",
        "algo", "snr_db", "antennas", "overhead", "trials", "fail", "nmse_db", "pe"
    );
    for r in summarize(&out) {
        println!(
            "{:<8} {:>8.1} {:>9} {:>9.3} {:>7} {:>6} {:>10.2} {:>8.4}",
            r.algorithm.name(),
            r.snr_db,
            r.n_antennas,
            r.overhead,
            r.trials,
            r.failures,
            r.nmse_db,
            r.pe
        );
    }
    println!("wrote {} and {}", args.out.display(), side.display());
    Ok(out.failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::OracleCheck { instances, seed, tol } => oracle_check(instances, seed).map(|rep| {
            println!(
                "{} instances, max relative error {:.3e}, mean {:.3e}",
                rep.instances, rep.max_rel_error, rep.mean_rel_error
            );
            rep.max_rel_error <= tol
        }),
        Command::Bench { devices, iterations, repeats, sweep } => sweep.config().and_then(|cfg| {
            let points = bench_gamp(&cfg, &devices, iterations, repeats)?;
            let base = points.first().map(|p| p.per_iteration_ms / p.devices as f64).unwrap_or(1.0);
            println!("{:>8} {:>14} {:>18}", "devices", "ms/iteration", "relative to linear");
            for p in &points {
                println!(
                    "{:>8} {:>14.3} {:>18.2}",
                    p.devices,
                    p.per_iteration_ms,
                    p.per_iteration_ms / (base * p.devices as f64)
                );
            }
            Ok(true)
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
