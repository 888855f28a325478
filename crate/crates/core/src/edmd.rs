//! Lifting of snapshot pairs and least-squares estimation of the projected
//! Koopman matrix `U = P_x^+ P_y` and its generator `L = log(U) / T_s`.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::MonomialBasis;
use crate::error::{Error, Result, Stage};
use crate::linalg::{self, RealMatrix, SpectrumReport};

/// One `(x_k, y_k)` pair with `y_k` observed one sampling period after `x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Where a pair came from, when known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOrigin {
    pub trajectory: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    dim: usize,
    pairs: Vec<SnapshotPair>,
    sampling_period: f64,
    inputs: Option<Vec<Vec<f64>>>,
    origins: Option<Vec<PairOrigin>>,
}

impl SnapshotDataset {
    pub fn new(dim: usize, pairs: Vec<SnapshotPair>, sampling_period: f64) -> Result<Self> {
        Self::build(dim, pairs, sampling_period, None)
    }

    /// Dataset whose pairs carry a zero-order-hold input `u_k` each.
    pub fn with_inputs(
        dim: usize,
        pairs: Vec<SnapshotPair>,
        sampling_period: f64,
        inputs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::build(dim, pairs, sampling_period, Some(inputs))
    }

    fn build(
        dim: usize,
        pairs: Vec<SnapshotPair>,
        sampling_period: f64,
        inputs: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("state dimension must be at least 1".into()));
        }
        if !(sampling_period.is_finite() && sampling_period > 0.0) {
            return Err(Error::Config(format!(
                "sampling period must be positive, got {sampling_period}"
            )));
        }
        for (k, p) in pairs.iter().enumerate() {
            if p.x.len() != dim || p.y.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "pair {k} has lengths ({}, {}), expected {dim}",
                    p.x.len(),
                    p.y.len()
                )));
            }
        }
        if let Some(u) = &inputs {
            if u.len() != pairs.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} inputs for {} pairs",
                    u.len(),
                    pairs.len()
                )));
            }
            if let Some(first) = u.first() {
                if first.is_empty() || u.iter().any(|v| v.len() != first.len()) {
                    return Err(Error::DimensionMismatch(
                        "inputs must all have the same positive length".into(),
                    ));
                }
            }
        }
        Ok(SnapshotDataset {
            dim,
            pairs,
            sampling_period,
            inputs,
            origins: None,
        })
    }

    pub fn with_origins(mut self, origins: Vec<PairOrigin>) -> Result<Self> {
        if origins.len() != self.pairs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} origins for {} pairs",
                origins.len(),
                self.pairs.len()
            )));
        }
        self.origins = Some(origins);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[SnapshotPair] {
        &self.pairs
    }

    pub fn sampling_period(&self) -> f64 {
        self.sampling_period
    }

    pub fn inputs(&self) -> Option<&[Vec<f64>]> {
        self.inputs.as_deref()
    }

    pub fn origins(&self) -> Option<&[PairOrigin]> {
        self.origins.as_deref()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs
            .as_ref()
            .and_then(|u| u.first())
            .map_or(0, Vec::len)
    }

    /// State dimension plus input dimension.
    pub fn effective_dim(&self) -> usize {
        self.dim + self.input_dim()
    }

    /// Pair `k` as the augmented points `([x_k, u_k], [y_k, u_k])`.
    pub fn augmented_pair(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let p = &self.pairs[k];
        match &self.inputs {
            Some(u) => {
                let mut x = p.x.clone();
                let mut y = p.y.clone();
                x.extend_from_slice(&u[k]);
                y.extend_from_slice(&u[k]);
                (x, y)
            }
            None => (p.x.clone(), p.y.clone()),
        }
    }

    /// Same pairs in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        SnapshotDataset {
            dim: self.dim,
            pairs: order.iter().map(|&k| self.pairs[k].clone()).collect(),
            sampling_period: self.sampling_period,
            inputs: self
                .inputs
                .as_ref()
                .map(|u| order.iter().map(|&k| u[k].clone()).collect()),
            origins: self
                .origins
                .as_ref()
                .map(|o| order.iter().map(|&k| o[k]).collect()),
        }
    }

    /// Apply `f` to every augmented point (state and input parts together).
    pub(crate) fn map_points(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let n = self.dim;
        let mut out = self.clone();
        for (k, p) in out.pairs.iter_mut().enumerate() {
            let (ax, ay) = self.augmented_pair(k);
            let fx = f(&ax);
            let fy = f(&ay);
            p.x = fx[..n].to_vec();
            p.y = fy[..n].to_vec();
            if let Some(u) = out.inputs.as_mut() {
                u[k] = fx[n..].to_vec();
            }
        }
        out
    }
}

/// Lift every pair: row `k` of `P_x` is `p(x_k)^T`, row `k` of `P_y` is `p(y_k)^T`.
pub fn build_data_matrices(
    dataset: &SnapshotDataset,
    basis: &MonomialBasis,
) -> Result<(RealMatrix, RealMatrix)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if basis.dim() != dataset.effective_dim() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} variables, dataset has effective dimension {}",
            basis.dim(),
            dataset.effective_dim()
        )));
    }
    let k = dataset.len();
    let nb = basis.len();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let (x, y) = dataset.augmented_pair(i);
            Ok((basis.lift(&x)?, basis.lift(&y)?))
        })
        .collect::<Result<_>>()?;
    let mut px = RealMatrix::zeros(k, nb);
    let mut py = RealMatrix::zeros(k, nb);
    for (i, (lx, ly)) in rows.iter().enumerate() {
        for c in 0..nb {
            px[(i, c)] = lx[c];
            py[(i, c)] = ly[c];
        }
    }
    Ok((px, py))
}

/// Least-squares solution of `P_x U ~= P_y`.
pub fn estimate_koopman(px: &RealMatrix, py: &RealMatrix, rcond: f64) -> Result<RealMatrix> {
    if px.shape() != py.shape() {
        return Err(Error::DimensionMismatch(format!(
            "P_x is {:?}, P_y is {:?}",
            px.shape(),
            py.shape()
        )));
    }
    linalg::lstsq(px, py, rcond)
}

#[derive(Debug, Clone, Serialize)]
pub struct KoopmanDiagnostics {
    pub pairs: usize,
    pub basis_size: usize,
    pub rank_px: usize,
    /// Fewer pairs than basis functions, or rank-deficient `P_x`.
    pub underdetermined: bool,
    /// `||P_x U - P_y||_F / ||P_y||_F`.
    pub relative_residual: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct KoopmanEstimate {
    pub basis: MonomialBasis,
    pub px: RealMatrix,
    pub py: RealMatrix,
    pub u_bar: RealMatrix,
    pub l_bar_data: RealMatrix,
    pub spectrum: SpectrumReport,
    pub diagnostics: KoopmanDiagnostics,
}

/// Step 1 of the method: lift, estimate `U`, and take `log(U) / T_s`.
pub fn estimate_generator(
    dataset: &SnapshotDataset,
    basis: &MonomialBasis,
    rcond: f64,
) -> Result<KoopmanEstimate> {
    let (px, py) = build_data_matrices(dataset, basis).map_err(Error::at(Stage::DataMatrices))?;
    let sol = linalg::lstsq_detailed(&px, &py, rcond).map_err(Error::at(Stage::KoopmanEstimate))?;
    let u_bar = sol.solution;
    let nb = basis.len();
    let mut warnings = Vec::new();
    let underdetermined = dataset.len() < nb || sol.rank < nb;
    if underdetermined {
        let msg = format!(
            "underdetermined Koopman estimate: {} pairs, rank(P_x) = {} for {} basis functions; \
             minimum-norm solution returned",
            dataset.len(),
            sol.rank,
            nb
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    let py_norm = py.norm();
    let relative_residual = if py_norm > 0.0 {
        (&px * &u_bar - &py).norm() / py_norm
    } else {
        0.0
    };

    let (log_u, spectrum) = linalg::logm_principal(&u_bar).map_err(Error::at(Stage::Logarithm))?;
    if spectrum.aliasing_suspected() {
        warnings.push(format!(
            "max |Im log(eig U)| = {:.3} > 0.9*pi: reduce the sampling period",
            spectrum.max_abs_imag_log
        ));
    }
    let l_bar_data = log_u / dataset.sampling_period();

    Ok(KoopmanEstimate {
        basis: basis.clone(),
        px,
        py,
        u_bar,
        l_bar_data,
        spectrum,
        diagnostics: KoopmanDiagnostics {
            pairs: dataset.len(),
            basis_size: nb,
            rank_px: sol.rank,
            underdetermined,
            relative_residual,
            warnings,
        },
    })
}
