//! Synthetic data: polynomial ODE/SDE integration, measurement noise, the
//! built-in benchmark systems and the random network generator.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::MultiIndex;
use crate::edmd::{PairOrigin, SnapshotDataset, SnapshotPair};
use crate::error::{Error, Result};
use crate::identify::PolynomialVectorField;

pub const DEFAULT_SUBSTEPS: usize = 100;
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Known input signal `u(t)`, held constant between snapshots in the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSignal {
    Cos,
    Sin,
}

impl InputSignal {
    pub fn value(self, t: f64) -> f64 {
        match self {
            InputSignal::Cos => t.cos(),
            InputSignal::Sin => t.sin(),
        }
    }
}

impl fmt::Display for InputSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputSignal::Cos => "cos",
            InputSignal::Sin => "sin",
        })
    }
}

impl FromStr for InputSignal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cos" => Ok(InputSignal::Cos),
            "sin" => Ok(InputSignal::Sin),
            other => Err(Error::Config(format!("unknown input signal '{other}', expected cos or sin"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationProtocol {
    /// Per-dimension interval for uniform initial conditions.
    pub initial_box: Vec<(f64, f64)>,
    pub trajectories: usize,
    /// Increasing, equally spaced.
    pub snapshot_times: Vec<f64>,
    pub integrator_substeps: usize,
    pub seed: u64,
    /// Standard deviation of the multiplicative measurement noise.
    pub sigma_meas: f64,
    /// Process-noise intensity; only used by [`simulate_sde`].
    pub sigma_proc: f64,
    pub input_signal: Option<InputSignal>,
    /// Also perturb `x_k` with measurement noise.
    #[serde(default)]
    pub noise_on_x: bool,
}

impl SimulationProtocol {
    /// `count` snapshots at `t0, t0 + ts, ...`.
    pub fn uniform_times(t0: f64, ts: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| t0 + ts * i as f64).collect()
    }

    pub fn sampling_period(&self) -> f64 {
        let t = &self.snapshot_times;
        (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64
    }

    pub fn validate(&self, field: &PolynomialVectorField) -> Result<()> {
        let n = field.dim();
        if self.initial_box.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "initial box has {} intervals for a {n}-dimensional field",
                self.initial_box.len()
            )));
        }
        if self.initial_box.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return Err(Error::Config("initial box intervals must be finite with lo <= hi".into()));
        }
        if self.trajectories == 0 {
            return Err(Error::Config("at least one trajectory is required".into()));
        }
        if self.integrator_substeps == 0 {
            return Err(Error::Config("integrator substeps must be at least 1".into()));
        }
        let t = &self.snapshot_times;
        if t.len() < 2 || t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("need at least two finite snapshot times".into()));
        }
        let ts = self.sampling_period();
        if ts <= 0.0 {
            return Err(Error::Config("snapshot times must be increasing".into()));
        }
        if t.windows(2).any(|w| ((w[1] - w[0]) - ts).abs() > 1e-9 * ts.max(1.0)) {
            return Err(Error::Config("snapshot times must be equally spaced".into()));
        }
        for (name, s) in [("sigma_meas", self.sigma_meas), ("sigma_proc", self.sigma_proc)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {s}")));
            }
        }
        match (field.input_dim(), self.input_signal) {
            (0, None) | (1, Some(_)) => Ok(()),
            (0, Some(_)) => Err(Error::Config("input signal given for a field without inputs".into())),
            (1, None) => Err(Error::Config("field has an input but no input signal is set".into())),
            (p, _) => Err(Error::Config(format!("{p} inputs requested; only a single input channel is supported"))),
        }
    }
}

/// Sparse evaluator: only monomials with a nonzero coefficient are computed.
#[derive(Debug, Clone)]
pub struct FieldEvaluator {
    dim: usize,
    nvars: usize,
    monomials: Vec<Vec<(usize, u32)>>,
    terms: Vec<(usize, usize, f64)>,
}

impl FieldEvaluator {
    pub fn new(field: &PolynomialVectorField) -> Self {
        let w = field.coefficients();
        let mut monomials = Vec::new();
        let mut terms = Vec::new();
        for (k, s) in field.basis().indices().iter().enumerate() {
            let rows: Vec<usize> = (0..field.dim()).filter(|&j| w[(j, k)] != 0.0).collect();
            if rows.is_empty() {
                continue;
            }
            let m = monomials.len();
            monomials.push(
                s.exponents()
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(i, &e)| (i, e))
                    .collect(),
            );
            terms.extend(rows.into_iter().map(|j| (j, m, w[(j, k)])));
        }
        FieldEvaluator {
            dim: field.dim(),
            nvars: field.dim() + field.input_dim(),
            monomials,
            terms,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `out = F(x, u)`.
    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len() + u.len(), self.nvars);
        let var = |i: usize| if i < x.len() { x[i] } else { u[i - x.len()] };
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut current = usize::MAX;
        let mut value = 0.0;
        for &(j, m, w) in &self.terms {
            if m != current {
                current = m;
                value = self.monomials[m]
                    .iter()
                    .map(|&(i, e)| {
                        let v = var(i);
                        (1..e).fold(v, |acc, _| acc * v)
                    })
                    .product();
            }
            out[j] += w * value;
        }
    }
}

/// `F(x)` at the augmented point (state followed by inputs).
pub fn evaluate_field(field: &PolynomialVectorField, x: &[f64]) -> Vec<f64> {
    field.eval(x)
}

fn input_at(signal: Option<InputSignal>, t: f64) -> Vec<f64> {
    signal.map(|s| vec![s.value(t)]).unwrap_or_default()
}

fn rk4_step(f: &FieldEvaluator, x: &mut [f64], t: f64, h: f64, signal: Option<InputSignal>, buf: &mut [Vec<f64>; 5]) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = buf;
    let u0 = input_at(signal, t);
    let um = input_at(signal, t + 0.5 * h);
    let u1 = input_at(signal, t + h);
    f.eval_into(x, &u0, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f.eval_into(tmp, &um, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f.eval_into(tmp, &um, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f.eval_into(tmp, &u1, k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn workspace(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

fn escaped(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_GUARD)
}

/// Classical RK4 from `t0` to `t1` in `steps` equal steps.
pub fn integrate_rk4(
    field: &PolynomialVectorField,
    x0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
    signal: Option<InputSignal>,
) -> Vec<f64> {
    let f = FieldEvaluator::new(field);
    let mut x = x0.to_vec();
    let mut buf = workspace(x.len());
    let h = (t1 - t0) / steps as f64;
    for s in 0..steps {
        rk4_step(&f, &mut x, t0 + s as f64 * h, h, signal, &mut buf);
    }
    x
}

/// Result of a simulation run.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: SnapshotDataset,
    /// Trajectories excluded because they left the `|x_i| <= 1e6` region.
    pub diverged: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Scheme {
    Rk4,
    EulerMaruyama,
}

struct TrajectoryData {
    pairs: Vec<SnapshotPair>,
    inputs: Vec<Vec<f64>>,
    origins: Vec<PairOrigin>,
}

fn noisy(x: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let e: f64 = StandardNormal.sample(rng);
            v * (1.0 + sigma * e)
        })
        .collect()
}

fn run_trajectory(
    f: &FieldEvaluator,
    protocol: &SimulationProtocol,
    traj: usize,
    scheme: Scheme,
) -> Option<TrajectoryData> {
    let n = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    rng.set_stream(traj as u64);
    let mut x: Vec<f64> = protocol
        .initial_box
        .iter()
        .map(|&(lo, hi)| if lo < hi { rng.random_range(lo..hi) } else { lo })
        .collect();
    let times = &protocol.snapshot_times;
    let signal = protocol.input_signal;
    let steps = protocol.integrator_substeps;
    let mut buf = workspace(n);
    let mut drift = vec![0.0; n];
    let mut out = TrajectoryData {
        pairs: Vec::with_capacity(times.len() - 1),
        inputs: Vec::new(),
        origins: Vec::new(),
    };
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = (t1 - t0) / steps as f64;
        let start = x.clone();
        for s in 0..steps {
            let t = t0 + s as f64 * h;
            match scheme {
                Scheme::Rk4 => rk4_step(f, &mut x, t, h, signal, &mut buf),
                Scheme::EulerMaruyama => {
                    f.eval_into(&x, &input_at(signal, t), &mut drift);
                    let scale = protocol.sigma_proc * h.sqrt();
                    for i in 0..n {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x[i] += h * drift[i] + scale * e;
                    }
                }
            }
            if escaped(&x) {
                return None;
            }
        }
        let y = noisy(&x, protocol.sigma_meas, &mut rng);
        let xk = if protocol.noise_on_x {
            noisy(&start, protocol.sigma_meas, &mut rng)
        } else {
            start
        };
        out.pairs.push(SnapshotPair { x: xk, y });
        if let Some(s) = signal {
            out.inputs.push(vec![s.value(t0)]);
        }
        out.origins.push(PairOrigin { trajectory: traj, t: t0 });
    }
    Some(out)
}

fn simulate(field: &PolynomialVectorField, protocol: &SimulationProtocol, scheme: Scheme) -> Result<Simulation> {
    protocol.validate(field)?;
    let f = FieldEvaluator::new(field);
    let results: Vec<Option<TrajectoryData>> = (0..protocol.trajectories)
        .into_par_iter()
        .map(|traj| run_trajectory(&f, protocol, traj, scheme))
        .collect();

    let mut pairs = Vec::new();
    let mut inputs = Vec::new();
    let mut origins = Vec::new();
    let mut diverged = Vec::new();
    for (traj, r) in results.into_iter().enumerate() {
        match r {
            Some(d) => {
                pairs.extend(d.pairs);
                inputs.extend(d.inputs);
                origins.extend(d.origins);
            }
            None => diverged.push(traj),
        }
    }
    let mut warnings = Vec::new();
    if !diverged.is_empty() {
        let msg = format!(
            "{} of {} trajectories diverged (|x| > {DIVERGENCE_GUARD:e}) and were excluded",
            diverged.len(),
            protocol.trajectories
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ts = protocol.sampling_period();
    let dataset = if protocol.input_signal.is_some() {
        SnapshotDataset::with_inputs(field.dim(), pairs, ts, inputs)?
    } else {
        SnapshotDataset::new(field.dim(), pairs, ts)?
    }
    .with_origins(origins)?;
    Ok(Simulation {
        dataset,
        diverged,
        warnings,
    })
}

/// Deterministic trajectories integrated with RK4, noisy `y_k = phi(x_k) (1 + v_k)`.
pub fn simulate_ode(field: &PolynomialVectorField, protocol: &SimulationProtocol) -> Result<Simulation> {
    simulate(field, protocol, Scheme::Rk4)
}

/// Euler-Maruyama trajectories of `dx = F(x) dt + sigma_proc dW`.
pub fn simulate_sde(field: &PolynomialVectorField, protocol: &SimulationProtocol) -> Result<Simulation> {
    simulate(field, protocol, Scheme::EulerMaruyama)
}

/// Names accepted by [`builtin_system`].
pub const SYSTEM_NAMES: [&str; 7] = [
    "vdp",
    "vdp-standard",
    "unstable",
    "lorenz",
    "duffing",
    "duffing-noise",
    "network",
];

#[derive(Debug, Clone)]
pub struct BuiltinSystem {
    pub name: String,
    pub field: PolynomialVectorField,
    pub protocol: SimulationProtocol,
    /// Simulate with Euler-Maruyama rather than RK4.
    pub stochastic: bool,
    /// Ground-truth adjacency, for the network system.
    pub adjacency: Option<Vec<Vec<bool>>>,
}

impl BuiltinSystem {
    pub fn simulate(&self) -> Result<Simulation> {
        if self.stochastic {
            simulate_sde(&self.field, &self.protocol)
        } else {
            simulate_ode(&self.field, &self.protocol)
        }
    }
}

pub const SIGMA_MEAS: f64 = 0.01;

fn protocol(n: usize, half_width: f64, trajectories: usize, ts: f64, snapshots: usize, seed: u64) -> SimulationProtocol {
    SimulationProtocol {
        initial_box: vec![(-half_width, half_width); n],
        trajectories,
        snapshot_times: SimulationProtocol::uniform_times(0.0, ts, snapshots),
        integrator_substeps: DEFAULT_SUBSTEPS,
        seed,
        sigma_meas: SIGMA_MEAS,
        sigma_proc: 0.0,
        input_signal: None,
        noise_on_x: false,
    }
}

fn duffing_terms(forced: bool) -> Vec<(usize, Vec<u32>, f64)> {
    let pad = |mut s: Vec<u32>| {
        if forced {
            s.push(0);
        }
        s
    };
    let mut t = vec![
        (0, pad(vec![0, 1]), 1.0),
        (1, pad(vec![1, 0]), 1.0),
        (1, pad(vec![3, 0]), -1.0),
        (1, pad(vec![0, 1]), -0.2),
    ];
    if forced {
        t.push((1, vec![2, 0, 1], 0.2));
    }
    t
}

/// Benchmark system with its default protocol. `seed` seeds the data and,
/// for `network`, the random system itself.
pub fn builtin_system(name: &str, seed: u64) -> Result<BuiltinSystem> {
    let (field, protocol, stochastic, adjacency) = match name {
        // Transcribed as printed: x2' = (1 - x1^2) x2 - x2.
        "vdp" => (
            PolynomialVectorField::from_terms(
                2,
                0,
                3,
                &[(0, vec![0, 1], 1.0), (1, vec![0, 1], 1.0), (1, vec![2, 1], -1.0), (1, vec![0, 1], -1.0)],
            )?,
            protocol(2, 1.0, 10, 0.5, 3, seed),
            false,
            None,
        ),
        "vdp-standard" => (
            PolynomialVectorField::from_terms(
                2,
                0,
                3,
                &[(0, vec![0, 1], 1.0), (1, vec![0, 1], 1.0), (1, vec![2, 1], -1.0), (1, vec![1, 0], -1.0)],
            )?,
            protocol(2, 1.0, 10, 0.5, 3, seed),
            false,
            None,
        ),
        "unstable" => (
            PolynomialVectorField::from_terms(
                2,
                0,
                3,
                &[
                    (0, vec![1, 0], 3.0),
                    (0, vec![0, 1], 0.5),
                    (0, vec![1, 1], -1.0),
                    (0, vec![0, 2], 1.0),
                    (0, vec![3, 0], 2.0),
                    (1, vec![1, 0], 0.5),
                    (1, vec![0, 1], 4.0),
                ],
            )?,
            protocol(2, 1.0, 20, 0.1, 2, seed),
            false,
            None,
        ),
        "lorenz" => (
            PolynomialVectorField::from_terms(
                3,
                0,
                3,
                &[
                    (0, vec![1, 0, 0], -10.0),
                    (0, vec![0, 1, 0], 10.0),
                    (1, vec![1, 0, 0], 28.0),
                    (1, vec![1, 0, 1], -1.0),
                    (1, vec![0, 1, 0], -1.0),
                    (2, vec![1, 1, 0], 1.0),
                    (2, vec![0, 0, 1], -8.0 / 3.0),
                ],
            )?,
            protocol(3, 20.0, 10, 1.0 / 30.0, 31, seed),
            false,
            None,
        ),
        "duffing" => {
            let mut p = protocol(2, 1.0, 5, 0.2, 51, seed);
            p.input_signal = Some(InputSignal::Cos);
            (PolynomialVectorField::from_terms(2, 1, 3, &duffing_terms(true))?, p, false, None)
        }
        "duffing-noise" => {
            let mut p = protocol(2, 1.0, 10, 0.2, 51, seed);
            p.sigma_proc = 1.0;
            (PolynomialVectorField::from_terms(2, 0, 3, &duffing_terms(false))?, p, true, None)
        }
        "network" => {
            let p = protocol(NETWORK_DIM, 1.0, 500, 0.5, 3, seed);
            let (_, net) = well_posed_network(seed, &p)?;
            (net.field, p, false, Some(net.adjacency))
        }
        other => {
            return Err(Error::UnknownSystem {
                name: other.to_string(),
                choices: SYSTEM_NAMES.to_vec(),
            })
        }
    };
    Ok(BuiltinSystem {
        name: name.to_string(),
        field,
        protocol,
        stochastic,
        adjacency,
    })
}

pub const NETWORK_DIM: usize = 12;

#[derive(Debug, Clone)]
pub struct NetworkSystem {
    pub field: PolynomialVectorField,
    /// `adjacency[j][l]` is true iff there is a link `x_l -> x_j`; the diagonal is always false.
    pub adjacency: Vec<Vec<bool>>,
}

/// Random 12-node network: `x_j' = -xi_j x_j + sum_k zeta_jk x_a^p x_b^q` with
/// `p + q` in `{2, 3}`.
pub fn random_network_system(seed: u64) -> NetworkSystem {
    let n = NETWORK_DIM;
    // Separate stream from the trajectories simulated with the same seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut field = PolynomialVectorField::zeros(n, 0, 3).expect("fixed small basis");
    let mut adjacency = vec![vec![false; n]; n];
    for j in 0..n {
        let xi: f64 = rng.random_range(0.0..1.0);
        field
            .add_term(j, &MultiIndex::unit(n, j), -xi)
            .expect("linear monomial in basis");
        for _ in 0..3 {
            let zeta: f64 = StandardNormal.sample(&mut rng);
            let nu = [rng.random_range(0..n), rng.random_range(0..n)];
            let sigma = loop {
                let s = [rng.random_range(0..=3u32), rng.random_range(0..=3u32)];
                if (2..=3).contains(&(s[0] + s[1])) {
                    break s;
                }
            };
            let mut exps = vec![0u32; n];
            for r in 0..2 {
                exps[nu[r]] += sigma[r];
                if sigma[r] != 0 && nu[r] != j {
                    adjacency[j][nu[r]] = true;
                }
            }
            field
                .add_term(j, &MultiIndex::new(exps), zeta)
                .expect("degree <= 3 monomial in basis");
        }
    }
    NetworkSystem { field, adjacency }
}

/// Attempts made by [`well_posed_network`] before giving up.
pub const NETWORK_SEARCH_LIMIT: u64 = 1000;

/// First network from structure seeds `seed, seed + 1, ...` for which no
/// trajectory of `protocol` diverges. Returns the structure seed used.
pub fn well_posed_network(seed: u64, protocol: &SimulationProtocol) -> Result<(u64, NetworkSystem)> {
    for candidate in (0..NETWORK_SEARCH_LIMIT).map(|i| seed.wrapping_add(i)) {
        let net = random_network_system(candidate);
        match simulate_ode(&net.field, protocol) {
            Ok(sim) if sim.diverged.is_empty() => return Ok((candidate, net)),
            Ok(_) | Err(Error::EmptyDataset) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Config(format!(
        "no network with bounded trajectories among {NETWORK_SEARCH_LIMIT} structure seeds from {seed}"
    )))
}
