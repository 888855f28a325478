//! Coefficient error metrics and network-reconstruction scoring.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::identify::PolynomialVectorField;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientError {
    pub rmse: f64,
    /// `rmse` divided by the mean magnitude of the nonzero exact coefficients.
    pub nrmse: f64,
    /// Signed `estimated - exact`, `n x N_F`.
    pub per_coefficient: Vec<Vec<f64>>,
}

pub fn coefficient_error(
    estimated: &PolynomialVectorField,
    exact: &PolynomialVectorField,
) -> Result<CoefficientError> {
    if estimated.dim() != exact.dim()
        || estimated.input_dim() != exact.input_dim()
        || estimated.degree() != exact.degree()
    {
        return Err(Error::DimensionMismatch(format!(
            "estimated field (n={}, p={}, m_F={}) vs exact field (n={}, p={}, m_F={})",
            estimated.dim(),
            estimated.input_dim(),
            estimated.degree(),
            exact.dim(),
            exact.input_dim(),
            exact.degree()
        )));
    }
    let diff = estimated.coefficients() - exact.coefficients();
    let rmse = (diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64).sqrt();
    let nonzero: Vec<f64> = exact
        .coefficients()
        .iter()
        .filter(|&&w| w != 0.0)
        .map(|w| w.abs())
        .collect();
    if nonzero.is_empty() {
        return Err(Error::UndefinedMetric("NRMSE of an identically zero exact field"));
    }
    let w_bar = nonzero.iter().sum::<f64>() / nonzero.len() as f64;
    Ok(CoefficientError {
        rmse,
        nrmse: rmse / w_bar,
        per_coefficient: diff.row_iter().map(|r| r.iter().copied().collect()).collect(),
    })
}

/// `links[j][l]` is true iff some `|w^j_k| > threshold` on a monomial containing `x_l`.
/// Self-links are never reported; input variables are not nodes.
pub fn reconstruct_links(estimated: &PolynomialVectorField, threshold: f64) -> Result<Vec<Vec<bool>>> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
    }
    let n = estimated.dim();
    let w = estimated.coefficients();
    let mut links = vec![vec![false; n]; n];
    for (k, s) in estimated.basis().indices().iter().enumerate() {
        for j in 0..n {
            if w[(j, k)].abs() > threshold {
                for l in (0..n).filter(|&l| l != j && s.get(l) > 0) {
                    links[j][l] = true;
                }
            }
        }
    }
    Ok(links)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkScore {
    /// `None` when the truth has no links.
    pub tpr: Option<f64>,
    /// `None` when the truth has no missing links.
    pub fpr: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub positives: usize,
    pub negatives: usize,
    pub predicted_adjacency: Vec<Vec<bool>>,
}

/// Rates over the off-diagonal entries.
pub fn link_score(predicted: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<LinkScore> {
    let n = truth.len();
    if predicted.len() != n || predicted.iter().chain(truth).any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("adjacency matrices must be square and of equal size".into()));
    }
    let (mut tp, mut fp, mut pos, mut neg) = (0, 0, 0, 0);
    for j in 0..n {
        for l in (0..n).filter(|&l| l != j) {
            match (truth[j][l], predicted[j][l]) {
                (true, hit) => {
                    pos += 1;
                    tp += usize::from(hit);
                }
                (false, hit) => {
                    neg += 1;
                    fp += usize::from(hit);
                }
            }
        }
    }
    let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(LinkScore {
        tpr: rate(tp, pos),
        fpr: rate(fp, neg),
        true_positives: tp,
        false_positives: fp,
        positives: pos,
        negatives: neg,
        predicted_adjacency: predicted.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

pub fn roc_sweep(
    estimated: &PolynomialVectorField,
    truth: &[Vec<bool>],
    thresholds: &[f64],
) -> Result<Vec<RocPoint>> {
    thresholds
        .iter()
        .map(|&threshold| {
            let s = link_score(&reconstruct_links(estimated, threshold)?, truth)?;
            Ok(RocPoint {
                threshold,
                tpr: s.tpr,
                fpr: s.fpr,
            })
        })
        .collect()
}
