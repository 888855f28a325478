use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use koopid_core::{Error, InputSignal, Stage};

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "koopid", version, about = "Identify polynomial vector fields from snapshot data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct OutDir {
    /// Output directory (created if missing).
    #[arg(long, env = "KOOPID_OUT_DIR")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a built-in system or a field file and write a dataset.
    Simulate(SimulateArgs),
    /// Identify a vector field from a dataset.
    Identify(IdentifyArgs),
    /// Repeated simulate + identify runs of a benchmark system.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["system", "field"])))]
struct SimulateArgs {
    /// Built-in system name.
    system: Option<String>,
    /// Field JSON file to simulate instead of a built-in system.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trajectories: Option<usize>,
    /// Sampling period.
    #[arg(long)]
    ts: Option<f64>,
    /// Snapshots per trajectory, including the initial one.
    #[arg(long)]
    snapshots: Option<usize>,
    /// Initial conditions are uniform in [-a, a] in every coordinate.
    #[arg(long = "box")]
    half_width: Option<f64>,
    #[arg(long)]
    sigma_meas: Option<f64>,
    /// Process-noise intensity; implies Euler-Maruyama integration.
    #[arg(long)]
    sigma_proc: Option<f64>,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long)]
    input: Option<InputSignal>,
    /// Also apply measurement noise to x_k.
    #[arg(long)]
    noise_on_x: bool,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    /// Dataset CSV; its JSON sidecar is read when present.
    dataset: PathBuf,
    #[arg(long, default_value_t = 1)]
    m1: u32,
    #[arg(long = "mF", alias = "mf", default_value_t = 3)]
    mf: u32,
    /// Fit the diffusion coefficient as an extra unknown.
    #[arg(long)]
    diffusion: bool,
    #[arg(long)]
    rcond: Option<f64>,
    /// Scale variables to unit maximum magnitude before lifting.
    #[arg(long)]
    rescale: bool,
    /// Ground-truth field JSON; prints RMSE and writes comparison tables.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Link threshold used for the comparison tables.
    #[arg(long, default_value_t = koopid_core::experiments::DEFAULT_LINK_THRESHOLD)]
    threshold: f64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// One of vdp, unstable, lorenz, duffing-input, duffing-noise, network.
    name: String,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the protocol's trajectory count.
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long, default_value_t = koopid_core::experiments::DEFAULT_LINK_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    m1: u32,
    #[arg(long = "mF", alias = "mf", default_value_t = 3)]
    mf: u32,
    /// Maximum number of concurrent runs; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    out: OutDir,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        return 3;
    }
    match e.root() {
        Error::Io(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a, &argv),
        Command::Identify(a) => commands::identify(a, &argv),
        Command::Benchmark(a) => commands::benchmark(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Stage { stage: Stage::Logarithm, source } = &e {
                if matches!(**source, Error::SingularMatrix(_)) {
                    eprintln!("hint: the estimated Koopman matrix has no logarithm; add data or reduce T_s");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
