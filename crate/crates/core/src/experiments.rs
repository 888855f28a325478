//! Seeded benchmark runs: simulate a built-in system, identify it and score the result.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{builtin_system, BuiltinSystem};
use crate::error::{Error, Result};
use crate::identify::{identify, IdentificationConfig, IdentificationResult};
use crate::metrics::{coefficient_error, link_score, reconstruct_links, CoefficientError, LinkScore};

pub const BENCHMARK_NAMES: [&str; 6] = ["vdp", "unstable", "lorenz", "duffing-input", "duffing-noise", "network"];

pub const DEFAULT_LINK_THRESHOLD: f64 = 0.1;

/// Built-in system simulated by a benchmark.
pub fn benchmark_system(name: &str) -> Result<&'static str> {
    match name {
        "vdp" => Ok("vdp"),
        "unstable" => Ok("unstable"),
        "lorenz" => Ok("lorenz"),
        "duffing-input" => Ok("duffing"),
        "duffing-noise" => Ok("duffing-noise"),
        "network" => Ok("network"),
        other => Err(Error::UnknownSystem {
            name: other.to_string(),
            choices: BENCHMARK_NAMES.to_vec(),
        }),
    }
}

/// Seed of run `run` derived from `base`.
pub fn derive_seed(base: u64, run: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(run as u64 + 1);
    rng.next_u64()
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkOptions {
    pub runs: usize,
    pub seed: u64,
    /// Overrides the protocol's trajectory count.
    pub trajectories: Option<usize>,
    pub threshold: f64,
    pub config: IdentificationConfig,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            runs: 10,
            seed: 0,
            trajectories: None,
            threshold: DEFAULT_LINK_THRESHOLD,
            config: IdentificationConfig::default(),
        }
    }
}

/// One simulate + identify cycle with everything needed for scoring.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub system: BuiltinSystem,
    pub diverged: usize,
    pub result: IdentificationResult,
    pub error: CoefficientError,
    pub links: Option<LinkScore>,
}

pub fn prepare_system(name: &str, seed: u64, trajectories: Option<usize>) -> Result<BuiltinSystem> {
    let mut system = builtin_system(benchmark_system(name)?, seed)?;
    if let Some(t) = trajectories {
        if t == 0 {
            return Err(Error::Config("trajectory count must be at least 1".into()));
        }
        system.protocol.trajectories = t;
    }
    Ok(system)
}

pub fn run_once(name: &str, seed: u64, options: &BenchmarkOptions) -> Result<RunArtifacts> {
    let system = prepare_system(name, seed, options.trajectories)?;
    let sim = system.simulate()?;
    let mut config = options.config.clone();
    config.input_dim = Some(system.field.input_dim());
    let result = identify(&sim.dataset, &config)?;
    let error = coefficient_error(&result.field, &system.field)?;
    let links = match &system.adjacency {
        Some(truth) => Some(link_score(&reconstruct_links(&result.field, options.threshold)?, truth)?),
        None => None,
    };
    Ok(RunArtifacts {
        diverged: sim.diverged.len(),
        system,
        result,
        error,
        links,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub run: usize,
    pub seed: u64,
    pub rmse: Option<f64>,
    pub nrmse: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub diverged: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkSummary {
    pub name: String,
    pub runs: Vec<RunOutcome>,
    pub mean_rmse: Option<f64>,
    pub mean_nrmse: Option<f64>,
    pub mean_tpr: Option<f64>,
    pub mean_fpr: Option<f64>,
    pub failures: usize,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `options.runs` independent runs; failed runs are recorded and left out of the means.
pub fn run_benchmark(name: &str, options: &BenchmarkOptions) -> Result<BenchmarkSummary> {
    benchmark_system(name)?;
    if options.runs == 0 {
        return Err(Error::Config("number of runs must be at least 1".into()));
    }
    options.config.validate()?;
    let runs: Vec<RunOutcome> = (0..options.runs)
        .into_par_iter()
        .map(|run| {
            let seed = derive_seed(options.seed, run);
            match run_once(name, seed, options) {
                Ok(a) => RunOutcome {
                    run,
                    seed,
                    rmse: Some(a.error.rmse),
                    nrmse: Some(a.error.nrmse),
                    tpr: a.links.as_ref().and_then(|l| l.tpr),
                    fpr: a.links.as_ref().and_then(|l| l.fpr),
                    diverged: a.diverged,
                    error: None,
                },
                Err(e) => RunOutcome {
                    run,
                    seed,
                    rmse: None,
                    nrmse: None,
                    tpr: None,
                    fpr: None,
                    diverged: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(BenchmarkSummary {
        name: name.to_string(),
        mean_rmse: mean(runs.iter().map(|r| r.rmse)),
        mean_nrmse: mean(runs.iter().map(|r| r.nrmse)),
        mean_tpr: mean(runs.iter().map(|r| r.tpr)),
        mean_fpr: mean(runs.iter().map(|r| r.fpr)),
        failures: runs.iter().filter(|r| r.error.is_some()).count(),
        runs,
    })
}
