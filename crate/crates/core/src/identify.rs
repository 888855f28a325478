//! Step 2 and the end-to-end pipeline: trim the data generator, solve for the
//! vector-field coefficients and package the result.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::basis::{MonomialBasis, MultiIndex};
use crate::edmd::{self, KoopmanDiagnostics, KoopmanEstimate, SnapshotDataset};
use crate::error::{Error, Result, Stage};
use crate::generator::{assemble_design, GeneratorSystem};
use crate::linalg::{default_rcond, vec, RealMatrix, SpectrumReport};

/// Polynomial vector field `F_j(x) = sum_k w[j,k] p_k(x)`.
///
/// With inputs the monomials range over `(x, u)` (`dim + input_dim`
/// variables) while only the `dim` state rows are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FieldRepr", try_from = "FieldRepr")]
pub struct PolynomialVectorField {
    dim: usize,
    input_dim: usize,
    basis: MonomialBasis,
    coefficients: RealMatrix,
}

impl PolynomialVectorField {
    pub fn new(dim: usize, input_dim: usize, degree: u32, coefficients: RealMatrix) -> Result<Self> {
        let basis = MonomialBasis::new(dim + input_dim, degree)?;
        if coefficients.shape() != (dim, basis.len()) {
            return Err(Error::DimensionMismatch(format!(
                "coefficient table is {}x{}, expected {}x{}",
                coefficients.nrows(),
                coefficients.ncols(),
                dim,
                basis.len()
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector field coefficients"));
        }
        Ok(PolynomialVectorField {
            dim,
            input_dim,
            basis,
            coefficients,
        })
    }

    pub fn zeros(dim: usize, input_dim: usize, degree: u32) -> Result<Self> {
        let n_f = MonomialBasis::new(dim + input_dim, degree)?.len();
        Self::new(dim, input_dim, degree, RealMatrix::zeros(dim, n_f))
    }

    /// Build from `(row, exponents, coefficient)` terms; coincident monomials are summed.
    pub fn from_terms(
        dim: usize,
        input_dim: usize,
        degree: u32,
        terms: &[(usize, Vec<u32>, f64)],
    ) -> Result<Self> {
        let mut f = Self::zeros(dim, input_dim, degree)?;
        for (j, s, c) in terms {
            f.add_term(*j, &MultiIndex::new(s.clone()), *c)?;
        }
        Ok(f)
    }

    pub fn add_term(&mut self, j: usize, s: &MultiIndex, c: f64) -> Result<()> {
        if j >= self.dim {
            return Err(Error::DimensionMismatch(format!(
                "row {j} out of range for a {}-dimensional field",
                self.dim
            )));
        }
        let k = self.basis.index_of(s)? - 1;
        self.coefficients[(j, k)] += c;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn degree(&self) -> u32 {
        self.basis.max_degree()
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn n_f(&self) -> usize {
        self.basis.len()
    }

    /// `dim x N_F` table, entry `(j, k)` is `w^j_k`.
    pub fn coefficients(&self) -> &RealMatrix {
        &self.coefficients
    }

    pub fn coefficient(&self, j: usize, s: &MultiIndex) -> Option<f64> {
        self.basis.position(s).map(|k| self.coefficients[(j, k)])
    }

    /// Evaluate at the augmented point `(x, u)`.
    pub fn eval(&self, xu: &[f64]) -> Vec<f64> {
        assert_eq!(xu.len(), self.dim + self.input_dim, "point dimension");
        let mut out = vec![0.0; self.dim];
        for (k, s) in self.basis.indices().iter().enumerate() {
            let col = self.coefficients.column(k);
            if col.iter().all(|&w| w == 0.0) {
                continue;
            }
            let p = s.eval(xu);
            for (o, w) in out.iter_mut().zip(col.iter()) {
                *o += w * p;
            }
        }
        out
    }

    /// Field in relabeled state coordinates `z_i = x_{perm[i]}`; inputs keep their order.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.dim;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Config(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let mut out = Self::zeros(n, self.input_dim, self.degree())?;
        for (k, s) in self.basis.indices().iter().enumerate() {
            let mut t = s.exponents().to_vec();
            for i in 0..n {
                t[i] = s.get(perm[i]);
            }
            let kk = out.basis.index_of(&MultiIndex::new(t))? - 1;
            for j in 0..n {
                out.coefficients[(inv[j], kk)] = self.coefficients[(j, k)];
            }
        }
        Ok(out)
    }
}

/// JSON shape of a [`PolynomialVectorField`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldRepr {
    pub dim: usize,
    #[serde(default)]
    pub input_dim: usize,
    pub degree: u32,
    pub monomial_order: Vec<Vec<u32>>,
    pub coefficients: Vec<Vec<f64>>,
}

impl From<PolynomialVectorField> for FieldRepr {
    fn from(f: PolynomialVectorField) -> Self {
        FieldRepr {
            dim: f.dim,
            input_dim: f.input_dim,
            degree: f.degree(),
            monomial_order: f.basis.indices().iter().map(|s| s.exponents().to_vec()).collect(),
            coefficients: f
                .coefficients
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<FieldRepr> for PolynomialVectorField {
    type Error = Error;

    fn try_from(r: FieldRepr) -> Result<Self> {
        let basis = MonomialBasis::new(r.dim + r.input_dim, r.degree)?;
        if r.monomial_order.len() != basis.len() {
            return Err(Error::Parse(format!(
                "monomial_order has {} entries, expected {}",
                r.monomial_order.len(),
                basis.len()
            )));
        }
        if r.coefficients.len() != r.dim {
            return Err(Error::Parse(format!(
                "coefficients has {} rows, expected {}",
                r.coefficients.len(),
                r.dim
            )));
        }
        // Columns may be listed in any order; map each through the canonical basis.
        let mut table = RealMatrix::zeros(r.dim, basis.len());
        let mut seen = vec![false; basis.len()];
        for (c, s) in r.monomial_order.iter().enumerate() {
            let k = basis
                .position(&MultiIndex::new(s.clone()))
                .ok_or_else(|| Error::Parse(format!("monomial {s:?} not in the degree-{} basis", r.degree)))?;
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::Parse(format!("monomial {s:?} listed twice")));
            }
            for (j, row) in r.coefficients.iter().enumerate() {
                if row.len() != basis.len() {
                    return Err(Error::Parse(format!(
                        "coefficient row {j} has {} entries, expected {}",
                        row.len(),
                        basis.len()
                    )));
                }
                table[(j, k)] = row[c];
            }
        }
        PolynomialVectorField::new(r.dim, r.input_dim, r.degree, table)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationConfig {
    /// Degree of the probe monomials.
    pub m1: u32,
    /// Degree bound of the vector field.
    pub mf: u32,
    /// Relative singular-value cutoff; `None` uses `eps * max(rows, cols)`.
    pub rcond: Option<f64>,
    /// Fit the diffusion coefficient `sigma^2 / 2` as an extra unknown.
    pub estimate_diffusion: bool,
    /// Number of input channels expected in the dataset.
    pub input_dim: Option<usize>,
    /// Scale every variable by its maximum magnitude before lifting.
    pub rescale: bool,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        IdentificationConfig {
            m1: 1,
            mf: 3,
            rcond: None,
            estimate_diffusion: false,
            input_dim: None,
            rescale: false,
        }
    }
}

impl IdentificationConfig {
    pub fn m2(&self) -> u32 {
        self.m1 + self.mf - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.m1 < 1 || self.mf < 1 {
            return Err(Error::Config(format!(
                "degrees must satisfy m1 >= 1 and m_F >= 1, got m1={}, m_F={}",
                self.m1, self.mf
            )));
        }
        if let Some(r) = self.rcond {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::Config(format!("rcond must be a nonnegative number, got {r}")));
            }
        }
        Ok(())
    }
}

/// Leading `N2 x N1` block of the data generator.
pub fn trim_generator(
    l_bar_data: &RealMatrix,
    basis_m2: &MonomialBasis,
    basis_m1: &MonomialBasis,
) -> Result<RealMatrix> {
    let (n1, n2) = (basis_m1.len(), basis_m2.len());
    if basis_m1.dim() != basis_m2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "bases over {} and {} variables",
            basis_m1.dim(),
            basis_m2.dim()
        )));
    }
    if n1 > n2 {
        return Err(Error::Config(format!(
            "N1 = {n1} exceeds N2 = {n2}: probe degree m1 must not exceed m2"
        )));
    }
    if l_bar_data.nrows() < n2 || l_bar_data.ncols() < n2 {
        return Err(Error::DimensionMismatch(format!(
            "generator is {}x{}, need at least {n2}x{n2}",
            l_bar_data.nrows(),
            l_bar_data.ncols()
        )));
    }
    Ok(l_bar_data.view((0, 0), (n2, n1)).clone_owned())
}

/// Least-squares coefficients of the trimmed generator.
#[derive(Debug, Clone)]
pub struct CoefficientSolution {
    /// `n x N_F` table over the generator system's variables.
    pub w: RealMatrix,
    /// Diffusion coefficient `c = sigma^2 / 2` when fitted and identifiable.
    pub diffusion: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub residual: f64,
    pub rank: usize,
    pub n_unknowns: usize,
    pub dropped_rows: usize,
    pub warnings: Vec<String>,
}

pub fn solve_coefficients(
    l_hat: &RealMatrix,
    gen: &GeneratorSystem,
    include_diffusion: bool,
    rcond: Option<f64>,
) -> Result<CoefficientSolution> {
    let (n2, n1) = (gen.basis_m2().len(), gen.basis_m1().len());
    if l_hat.shape() != (n2, n1) {
        return Err(Error::DimensionMismatch(format!(
            "trimmed generator is {}x{}, expected {n2}x{n1}",
            l_hat.nrows(),
            l_hat.ncols()
        )));
    }
    let design = assemble_design(gen, include_diffusion);
    let rcond = rcond.unwrap_or_else(|| default_rcond(design.kept_rows.len(), design.n_unknowns()));
    let sol = design.solve(&vec(l_hat), rcond)?;

    let n = gen.n();
    let n_f = gen.n_f();
    let w = RealMatrix::from_fn(n, n_f, |j, k| sol.coefficients[j * n_f + k]);
    let (diffusion, sigma_hat) = if include_diffusion && design.diffusion_identifiable {
        let c = sol.coefficients[n * n_f];
        (Some(c), Some((2.0 * c.max(0.0)).sqrt()))
    } else {
        (None, None)
    };

    let mut warnings = Vec::new();
    if include_diffusion && !design.diffusion_identifiable {
        warnings.push(format!(
            "diffusion coefficient not identifiable with m1 = {} (the Laplacian vanishes on the probe monomials)",
            gen.m1()
        ));
    }
    let identifiable = n * n_f + usize::from(design.diffusion_identifiable);
    if sol.rank < identifiable {
        let msg = format!(
            "rank-deficient design: rank {} for {} unknowns; minimum-norm solution returned",
            sol.rank, identifiable
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(CoefficientSolution {
        w,
        diffusion,
        sigma_hat,
        residual: sol.residual,
        rank: sol.rank,
        n_unknowns: design.n_unknowns(),
        dropped_rows: design.dropped_rows.len(),
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct IdentificationResult {
    pub field: PolynomialVectorField,
    pub sigma_proc_hat: Option<f64>,
    /// `||design * w - vec(L_hat)||_2` over the effective rows.
    pub residual: f64,
    pub koopman: KoopmanEstimate,
    pub dropped_rows: usize,
    pub design_rank: usize,
    pub warnings: Vec<String>,
}

/// Serializable summary of an [`IdentificationResult`].
#[derive(Debug, Clone, Serialize)]
pub struct ResultReport {
    pub dim: usize,
    pub input_dim: usize,
    pub degree: u32,
    pub monomial_order: Vec<Vec<u32>>,
    pub monomial_labels: Vec<String>,
    pub coefficients: Vec<Vec<f64>>,
    pub sigma_proc_hat: Option<f64>,
    pub diagnostics: ReportDiagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportDiagnostics {
    pub residual: f64,
    pub dropped_rows: usize,
    pub design_rank: usize,
    pub koopman: KoopmanDiagnostics,
    pub spectrum: SpectrumSummary,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub min_real_eigenvalue: Option<f64>,
    pub max_abs_imag_log: f64,
    pub aliasing_suspected: bool,
}

impl From<&SpectrumReport> for SpectrumSummary {
    fn from(s: &SpectrumReport) -> Self {
        SpectrumSummary {
            min_real_eigenvalue: s.min_real_eigenvalue,
            max_abs_imag_log: s.max_abs_imag_log,
            aliasing_suspected: s.aliasing_suspected(),
        }
    }
}

impl IdentificationResult {
    pub fn report(&self) -> ResultReport {
        let repr = FieldRepr::from(self.field.clone());
        let names = variable_names(self.field.dim(), self.field.input_dim());
        ResultReport {
            dim: repr.dim,
            input_dim: repr.input_dim,
            degree: repr.degree,
            monomial_labels: self
                .field
                .basis()
                .indices()
                .iter()
                .map(|s| monomial_label(s, &names))
                .collect(),
            monomial_order: repr.monomial_order,
            coefficients: repr.coefficients,
            sigma_proc_hat: self.sigma_proc_hat,
            diagnostics: ReportDiagnostics {
                residual: self.residual,
                dropped_rows: self.dropped_rows,
                design_rank: self.design_rank,
                koopman: self.koopman.diagnostics.clone(),
                spectrum: SpectrumSummary::from(&self.koopman.spectrum),
                warnings: self.warnings.clone(),
            },
        }
    }
}

/// `x1..xn, u1..up`.
pub fn variable_names(dim: usize, input_dim: usize) -> Vec<String> {
    (1..=dim)
        .map(|i| format!("x{i}"))
        .chain((1..=input_dim).map(|i| format!("u{i}")))
        .collect()
}

/// Monomial as text, e.g. `x1^2*u1`; the constant is `1`.
pub fn monomial_label(s: &MultiIndex, names: &[String]) -> String {
    let parts: Vec<String> = s
        .exponents()
        .iter()
        .zip(names)
        .filter(|(&e, _)| e > 0)
        .map(|(&e, name)| if e == 1 { name.clone() } else { format!("{name}^{e}") })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

/// Per-variable maximum magnitude over all augmented points, 1 where that is zero.
fn scale_factors(dataset: &SnapshotDataset) -> Vec<f64> {
    let mut d = vec![0.0f64; dataset.effective_dim()];
    for k in 0..dataset.len() {
        let (x, y) = dataset.augmented_pair(k);
        for (i, (a, b)) in x.iter().zip(&y).enumerate() {
            d[i] = d[i].max(a.abs()).max(b.abs());
        }
    }
    d.into_iter().map(|v| if v > 0.0 { v } else { 1.0 }).collect()
}

/// Full pipeline: lift, estimate the generator, trim and solve.
pub fn identify(dataset: &SnapshotDataset, config: &IdentificationConfig) -> Result<IdentificationResult> {
    config.validate()?;
    let p = dataset.input_dim();
    if let Some(expected) = config.input_dim {
        if expected != p {
            return Err(Error::DimensionMismatch(format!(
                "configuration expects {expected} inputs, dataset has {p}"
            )));
        }
    }
    let n = dataset.dim();
    let nv = n + p;

    let scales = config.rescale.then(|| scale_factors(dataset));
    let scaled;
    let data = match &scales {
        Some(d) => {
            scaled = dataset.map_points(|v| v.iter().zip(d).map(|(a, s)| a / s).collect());
            &scaled
        }
        None => dataset,
    };

    let gen = GeneratorSystem::new(nv, config.m1, config.mf).map_err(Error::at(Stage::Basis))?;
    let koopman_rcond = config
        .rcond
        .unwrap_or_else(|| default_rcond(data.len(), gen.basis_m2().len()));
    let koopman = edmd::estimate_generator(data, gen.basis_m2(), koopman_rcond)?;
    let l_hat = trim_generator(&koopman.l_bar_data, gen.basis_m2(), gen.basis_m1())
        .map_err(Error::at(Stage::Trim))?;
    let sol = solve_coefficients(&l_hat, &gen, config.estimate_diffusion, config.rcond)
        .map_err(Error::at(Stage::Solve))?;

    let mut w = sol.w.rows(0, n).clone_owned();
    let mut sigma_proc_hat = sol.sigma_hat;
    if let Some(d) = &scales {
        // z = x / d: w_z[j,k] = w_x[j,k] * prod_i d_i^{s_i} / d_j.
        for (k, s) in gen.basis_mf().indices().iter().enumerate() {
            let prod: f64 = s.exponents().iter().zip(d).map(|(&e, di)| di.powi(e as i32)).product();
            for j in 0..n {
                w[(j, k)] *= d[j] / prod;
            }
        }
        if sigma_proc_hat.is_some() && d.windows(2).any(|p| p[0] != p[1]) {
            sigma_proc_hat = None;
        } else if let Some(s) = sigma_proc_hat.as_mut() {
            *s *= d[0];
        }
    }

    let mut warnings = koopman.diagnostics.warnings.clone();
    warnings.extend(sol.warnings);
    let field = PolynomialVectorField::new(n, p, config.mf, w).map_err(Error::at(Stage::Solve))?;
    Ok(IdentificationResult {
        field,
        sigma_proc_hat,
        residual: sol.residual,
        koopman,
        dropped_rows: sol.dropped_rows,
        design_rank: sol.rank,
        warnings,
    })
}
