use log::warn;
use serde_json::json;

use koopid_core::dynamics::{simulate_ode, simulate_sde, DEFAULT_SUBSTEPS, SIGMA_MEAS};
use koopid_core::experiments::{derive_seed, run_once};
use koopid_core::io::{
    benchmark_csv, coefficient_scatter_csv, dataset_csv, dataset_meta, read_dataset, read_field, roc_csv,
};
use koopid_core::{
    builtin_system, coefficient_error, link_score, reconstruct_links, roc_sweep, run_benchmark,
    BenchmarkOptions, Error, IdentificationConfig, InputSignal, PolynomialVectorField, Result, SimulationProtocol,
};

use crate::manifest::OutputSet;
use crate::{BenchmarkArgs, IdentifyArgs, SimulateArgs};

/// Thresholds of the ROC tables, log-spaced over [1e-3, 10].
fn roc_thresholds() -> Vec<f64> {
    (0..=40).map(|i| 10f64.powf(-3.0 + 0.1 * i as f64)).collect()
}

/// Off-diagonal support of a field, used as link ground truth.
fn support(field: &PolynomialVectorField) -> Result<Vec<Vec<bool>>> {
    reconstruct_links(field, f64::MIN_POSITIVE)
}

fn field_protocol(field: &PolynomialVectorField, a: &SimulateArgs) -> SimulationProtocol {
    let ts = a.ts.unwrap_or(0.5);
    SimulationProtocol {
        initial_box: vec![(-a.half_width.unwrap_or(1.0), a.half_width.unwrap_or(1.0)); field.dim()],
        trajectories: a.trajectories.unwrap_or(10),
        snapshot_times: SimulationProtocol::uniform_times(0.0, ts, a.snapshots.unwrap_or(3)),
        integrator_substeps: a.substeps.unwrap_or(DEFAULT_SUBSTEPS),
        seed: a.seed,
        sigma_meas: a.sigma_meas.unwrap_or(SIGMA_MEAS),
        sigma_proc: a.sigma_proc.unwrap_or(0.0),
        input_signal: a.input.or((field.input_dim() > 0).then_some(InputSignal::Cos)),
        noise_on_x: a.noise_on_x,
    }
}

fn override_protocol(p: &mut SimulationProtocol, a: &SimulateArgs) {
    if let Some(t) = a.trajectories {
        p.trajectories = t;
    }
    if a.ts.is_some() || a.snapshots.is_some() {
        let ts = a.ts.unwrap_or_else(|| p.sampling_period());
        let count = a.snapshots.unwrap_or(p.snapshot_times.len());
        p.snapshot_times = SimulationProtocol::uniform_times(p.snapshot_times[0], ts, count);
    }
    if let Some(h) = a.half_width {
        p.initial_box.iter_mut().for_each(|b| *b = (-h, h));
    }
    if let Some(s) = a.sigma_meas {
        p.sigma_meas = s;
    }
    if let Some(s) = a.sigma_proc {
        p.sigma_proc = s;
    }
    if let Some(s) = a.substeps {
        p.integrator_substeps = s;
    }
    if a.input.is_some() {
        p.input_signal = a.input;
    }
    p.noise_on_x |= a.noise_on_x;
}

pub fn simulate(a: SimulateArgs, argv: &[String]) -> Result<()> {
    let (name, field, protocol, stochastic, inputs) = match (&a.system, &a.field) {
        (Some(name), None) => {
            let mut sys = builtin_system(name, a.seed)?;
            override_protocol(&mut sys.protocol, &a);
            let stochastic = sys.stochastic || sys.protocol.sigma_proc > 0.0;
            (name.clone(), sys.field, sys.protocol, stochastic, vec![])
        }
        (None, Some(path)) => {
            let field = read_field(path)?;
            let protocol = field_protocol(&field, &a);
            let stochastic = protocol.sigma_proc > 0.0;
            (path.display().to_string(), field, protocol, stochastic, vec![path.clone()])
        }
        _ => return Err(Error::Config("give either a system name or --field".into())),
    };
    let sim = if stochastic {
        simulate_sde(&field, &protocol)?
    } else {
        simulate_ode(&field, &protocol)?
    };
    for w in &sim.warnings {
        warn!("{w}");
    }
    if !sim.diverged.is_empty() {
        warn!(
            "{} of {} trajectories diverged and were dropped",
            sim.diverged.len(),
            protocol.trajectories
        );
    }

    let mut out = OutputSet::create(&a.out.out)?;
    let mut meta = dataset_meta(&sim.dataset);
    meta.seed = Some(a.seed);
    meta.system = Some(name.clone());
    meta.protocol = Some(protocol.clone());
    out.bytes("dataset.csv", &dataset_csv(&sim.dataset)?)?;
    out.json("dataset.json", &meta)?;
    out.json("field.json", &field)?;
    println!(
        "{name}: {} pairs from {} trajectories, T_s = {}",
        sim.dataset.len(),
        protocol.trajectories - sim.diverged.len(),
        sim.dataset.sampling_period()
    );
    let config = json!({
        "system": name,
        "stochastic": stochastic,
        "protocol": protocol,
        "diverged": sim.diverged,
    });
    out.finish("simulate", argv, Some(a.seed), config, inputs)
}

pub fn identify(a: IdentifyArgs, argv: &[String]) -> Result<()> {
    let (dataset, meta) = read_dataset(&a.dataset)?;
    let config = IdentificationConfig {
        m1: a.m1,
        mf: a.mf,
        rcond: a.rcond,
        estimate_diffusion: a.diffusion,
        input_dim: Some(dataset.input_dim()),
        rescale: a.rescale,
    };
    let result = koopid_core::identify(&dataset, &config)?;
    for w in &result.warnings {
        warn!("{w}");
    }
    let mut out = OutputSet::create(&a.out.out)?;
    let mut inputs = vec![a.dataset.clone()];
    if meta.is_some() {
        inputs.push(koopid_core::io::sidecar_path(&a.dataset));
    }
    out.json("result.json", &result.report())?;
    out.json("field.json", &result.field)?;
    println!(
        "identified {} coefficients from {} pairs (design rank {})",
        result.field.coefficients().len(),
        dataset.len(),
        result.design_rank
    );
    if let Some(s) = result.sigma_proc_hat {
        println!("sigma_proc estimate {s:.6}");
    }

    if let Some(truth_path) = &a.truth {
        let truth = read_field(truth_path)?;
        inputs.push(truth_path.clone());
        let err = coefficient_error(&result.field, &truth)?;
        println!("RMSE {:.6}  NRMSE {:.6}", err.rmse, err.nrmse);
        let adjacency = support(&truth)?;
        let links = link_score(&reconstruct_links(&result.field, a.threshold)?, &adjacency)?;
        if let (Some(tpr), Some(fpr)) = (links.tpr, links.fpr) {
            println!("TPR {tpr:.4}  FPR {fpr:.4} at threshold {}", a.threshold);
        }
        out.bytes("coefficients.csv", &coefficient_scatter_csv(&result.field, &truth)?)?;
        out.bytes("roc.csv", &roc_csv(&roc_sweep(&result.field, &adjacency, &roc_thresholds())?)?)?;
        out.json("metrics.json", &json!({ "error": err, "links": links }))?;
    }
    let seed = meta.as_ref().and_then(|m| m.seed);
    let config = json!({ "identification": config, "threshold": a.threshold });
    out.finish("identify", argv, seed, config, inputs)
}

pub fn benchmark(a: BenchmarkArgs, argv: &[String]) -> Result<()> {
    if let Some(j) = a.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let options = BenchmarkOptions {
        runs: a.runs,
        seed: a.seed,
        trajectories: a.trajectories,
        threshold: a.threshold,
        config: IdentificationConfig {
            m1: a.m1,
            mf: a.mf,
            ..Default::default()
        },
    };
    let summary = run_benchmark(&a.name, &options)?;
    let mut out = OutputSet::create(&a.out.out)?;
    out.bytes("benchmark.csv", &benchmark_csv(&summary)?)?;
    out.json("summary.json", &summary)?;

    // Coefficient scatter (and ROC for the network) of the first run.
    if let Ok(run) = run_once(&a.name, derive_seed(a.seed, 0), &options) {
        out.bytes("run0_coefficients.csv", &coefficient_scatter_csv(&run.result.field, &run.system.field)?)?;
        if let Some(adj) = &run.system.adjacency {
            out.bytes("run0_roc.csv", &roc_csv(&roc_sweep(&run.result.field, adj, &roc_thresholds())?)?)?;
        }
    }

    for r in &summary.runs {
        match &r.error {
            Some(e) => println!("run {:>3}  seed {:>20}  failed: {e}", r.run, r.seed),
            None => println!(
                "run {:>3}  seed {:>20}  RMSE {:.6}  NRMSE {:.6}{}",
                r.run,
                r.seed,
                r.rmse.unwrap_or(f64::NAN),
                r.nrmse.unwrap_or(f64::NAN),
                match (r.tpr, r.fpr) {
                    (Some(t), Some(f)) => format!("  TPR {t:.4}  FPR {f:.4}"),
                    _ => String::new(),
                }
            ),
        }
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
    println!(
        "{}: mean RMSE {}  NRMSE {}  ({} of {} runs failed)",
        summary.name,
        fmt(summary.mean_rmse),
        fmt(summary.mean_nrmse),
        summary.failures,
        summary.runs.len()
    );
    if summary.mean_tpr.is_some() {
        println!("mean TPR {}  FPR {}", fmt(summary.mean_tpr), fmt(summary.mean_fpr));
    }
    let config = json!({ "benchmark": a.name, "options": options, "jobs": a.jobs });
    out.finish("benchmark", argv, Some(a.seed), config, vec![])
}
