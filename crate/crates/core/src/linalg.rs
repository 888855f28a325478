//! Dense kernels: SVD pseudoinverse and least squares, matrix exponential,
//! principal matrix logarithm, vectorization.

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type RealMatrix = DMatrix<f64>;
type ComplexMatrix = DMatrix<Complex64>;

/// Eigenvalues within this distance of the closed negative real axis are treated as on it.
pub const BRANCH_CUT_TOL: f64 = 1e-10;

/// Log-eigenvalue imaginary parts above this fraction of pi trigger a sampling warning.
pub const ALIASING_FRACTION: f64 = 0.9;

/// `eps * max(rows, cols)`, the default relative singular-value cutoff.
pub fn default_rcond(rows: usize, cols: usize) -> f64 {
    f64::EPSILON * rows.max(cols).max(1) as f64
}

fn check_finite(a: &RealMatrix, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Thin SVD `A = U diag(s) V^T` with singular values in nonincreasing order.
pub(crate) struct ThinSvd {
    u: RealMatrix,
    s: Vec<f64>,
    v: RealMatrix,
}

impl ThinSvd {
    pub(crate) fn new(a: &RealMatrix) -> Result<Self> {
        let fa = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
        let svd = fa.thin_svd().map_err(|_| Error::SvdFailed {
            rows: a.nrows(),
            cols: a.ncols(),
        })?;
        let (fu, fv) = (svd.U(), svd.V());
        let u = RealMatrix::from_fn(fu.nrows(), fu.ncols(), |i, j| fu[(i, j)]);
        let v = RealMatrix::from_fn(fv.nrows(), fv.ncols(), |i, j| fv[(i, j)]);
        let s = svd.S().column_vector().iter().copied().collect();
        Ok(ThinSvd { u, s, v })
    }

    pub(crate) fn singular_values(&self) -> &[f64] {
        &self.s
    }

    pub(crate) fn sigma_max(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }

    pub(crate) fn rank(&self, tol: f64) -> usize {
        self.s.iter().filter(|&&s| s > tol).count()
    }

    /// `V diag(1/s) U^T B`, singular values `<= tol` dropped.
    pub(crate) fn solve(&self, b: &RealMatrix, tol: f64) -> RealMatrix {
        let r = self.rank(tol);
        let mut ut_b = self.u.columns(0, r).transpose() * b;
        for (i, mut row) in ut_b.row_iter_mut().enumerate() {
            row /= self.s[i];
        }
        self.v.columns(0, r) * ut_b
    }

    pub(crate) fn pseudoinverse(&self, tol: f64) -> RealMatrix {
        let r = self.rank(tol);
        let mut vt = self.v.columns(0, r).clone_owned();
        for (i, mut col) in vt.column_iter_mut().enumerate() {
            col /= self.s[i];
        }
        vt * self.u.columns(0, r).transpose()
    }
}

/// Moore-Penrose pseudoinverse. Singular values `<= rcond * sigma_max` are zeroed.
pub fn pseudoinverse(a: &RealMatrix, rcond: f64) -> Result<RealMatrix> {
    check_finite(a, "pseudoinverse input")?;
    if a.is_empty() {
        return Ok(RealMatrix::zeros(a.ncols(), a.nrows()));
    }
    let svd = ThinSvd::new(a)?;
    let tol = rcond.max(0.0) * svd.sigma_max();
    Ok(svd.pseudoinverse(tol))
}

/// Minimum-norm least-squares solution together with the numerical rank of `A`.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub solution: RealMatrix,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Minimum-norm solution of `min ||A X - B||_F`.
pub fn lstsq(a: &RealMatrix, b: &RealMatrix, rcond: f64) -> Result<RealMatrix> {
    lstsq_detailed(a, b, rcond).map(|s| s.solution)
}

pub fn lstsq_detailed(a: &RealMatrix, b: &RealMatrix, rcond: f64) -> Result<LstsqSolution> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "lstsq: A has {} rows, B has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    check_finite(a, "lstsq matrix")?;
    check_finite(b, "lstsq right-hand side")?;
    if a.is_empty() {
        return Ok(LstsqSolution {
            solution: RealMatrix::zeros(a.ncols(), b.ncols()),
            rank: 0,
            singular_values: Vec::new(),
        });
    }
    let svd = ThinSvd::new(a)?;
    let tol = rcond.max(0.0) * svd.sigma_max();
    Ok(LstsqSolution {
        solution: svd.solve(b, tol),
        rank: svd.rank(tol),
        singular_values: svd.singular_values().to_vec(),
    })
}

/// Column-stacked vectorization.
pub fn vec(a: &RealMatrix) -> Vec<f64> {
    // nalgebra storage is column-major.
    a.as_slice().to_vec()
}

fn norm1(a: &RealMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with diagonal Padé approximants
/// of degree 3, 5, 7, 9 or 13 (Higham 2005 parameter choices).
pub fn expm(a: &RealMatrix) -> Result<RealMatrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a, "expm input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(a.clone());
    }
    const THETA: [(usize, f64); 4] = [
        (3, 1.495585217958292e-2),
        (5, 2.53939833006323e-1),
        (7, 9.504178996162932e-1),
        (9, 2.097847961257068e0),
    ];
    const THETA_13: f64 = 5.371920351148152;

    let nrm = norm1(a);
    for &(m, theta) in &THETA {
        if nrm <= theta {
            return pade_low(a, m);
        }
    }
    let s = if nrm > THETA_13 {
        (nrm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[
            17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
        ],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        _ => unreachable!("unsupported Padé degree {m}"),
    }
}

fn pade_low(a: &RealMatrix, m: usize) -> Result<RealMatrix> {
    let b = pade_coefficients(m);
    let n = a.nrows();
    let ident = RealMatrix::identity(n, n);
    let a2 = a * a;
    // Even powers I, A^2, A^4, ...
    let mut powers = vec![ident.clone(), a2.clone()];
    while powers.len() <= m / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u = RealMatrix::zeros(n, n);
    let mut v = RealMatrix::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        if 2 * k < m {
            u += p * b[2 * k + 1];
        }
        v += p * b[2 * k];
    }
    let u = a * u;
    solve_pade(&u, &v)
}

fn pade13(a: &RealMatrix) -> Result<RealMatrix> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    let ident = RealMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]);
    let u = a * (u_inner + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &ident * B[1]);
    let v_inner = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]);
    let v = v_inner + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &ident * B[0];
    solve_pade(&u, &v)
}

fn solve_pade(u: &RealMatrix, v: &RealMatrix) -> Result<RealMatrix> {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or(Error::SingularMatrix(0.0))
}

/// Spectral diagnostics of a matrix whose logarithm was requested.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    /// Eigenvalues as `(re, im)` pairs, in Schur order.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Smallest eigenvalue among those with negligible imaginary part.
    pub min_real_eigenvalue: Option<f64>,
    /// Largest `|Im log(lambda)|`, i.e. the largest `|arg lambda|`.
    pub max_abs_imag_log: f64,
}

impl SpectrumReport {
    fn from_eigenvalues(eigs: &[Complex64]) -> Self {
        let min_real_eigenvalue = eigs
            .iter()
            .filter(|z| z.im.abs() <= BRANCH_CUT_TOL)
            .map(|z| z.re)
            .reduce(f64::min);
        let max_abs_imag_log = eigs.iter().map(|z| z.arg().abs()).fold(0.0, f64::max);
        SpectrumReport {
            eigenvalues: eigs.iter().map(|z| (z.re, z.im)).collect(),
            min_real_eigenvalue,
            max_abs_imag_log,
        }
    }

    /// True when some log-eigenvalue is close enough to the `|Im| = pi` strip edge
    /// that the sampling period is likely too long.
    pub fn aliasing_suspected(&self) -> bool {
        self.max_abs_imag_log > ALIASING_FRACTION * PI
    }
}

/// Eigenvalues and the spectral report of a real square matrix.
pub fn spectrum(a: &RealMatrix) -> Result<SpectrumReport> {
    let (_, t) = complex_schur(a)?;
    let eigs: Vec<Complex64> = t.diagonal().iter().copied().collect();
    Ok(SpectrumReport::from_eigenvalues(&eigs))
}

/// Principal matrix logarithm of a real matrix.
///
/// Complex Schur form, then inverse scaling and squaring: repeated triangular square roots until
/// `||T - I||_1 <= 0.25`, followed by a diagonal Padé approximant of
/// `log(I + X)` evaluated as Gauss-Legendre quadrature of
/// `int_0^1 X (I + tX)^{-1} dt`.
pub fn logm_principal(a: &RealMatrix) -> Result<(RealMatrix, SpectrumReport)> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "logm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a, "logm input")?;
    let n = a.nrows();
    let (q, t) = complex_schur(a)?;
    let eigs: Vec<Complex64> = t.diagonal().iter().copied().collect();
    let report = SpectrumReport::from_eigenvalues(&eigs);
    if n == 0 {
        return Ok((a.clone(), report));
    }

    let scale = a.norm().max(f64::MIN_POSITIVE);
    for z in &eigs {
        if z.norm() <= f64::EPSILON * scale || z.norm() == 0.0 {
            return Err(Error::SingularMatrix(z.norm()));
        }
    }
    for z in &eigs {
        if z.re < 0.0 && z.im.abs() <= BRANCH_CUT_TOL {
            return Err(Error::NegativeRealEigenvalue { re: z.re, im: z.im });
        }
    }
    if report.aliasing_suspected() {
        warn!(
            "log-eigenvalue with |Im| = {:.3} exceeds {:.1}*pi; the sampling period may be too long",
            report.max_abs_imag_log, ALIASING_FRACTION
        );
    }

    let log_t = logm_upper_triangular(&t)?;
    let full = &q * log_t * q.adjoint();
    let real = full.map(|z| z.re);
    Ok((real, report))
}

/// Complex Schur decomposition `A = Q T Q^*` with `T` upper triangular.
///
/// Householder reduction to Hessenberg form followed by implicit single-shift
/// QR with Wilkinson shifts and periodic exceptional shifts.
fn complex_schur(a: &RealMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((ComplexMatrix::zeros(0, 0), ComplexMatrix::zeros(0, 0)));
    }
    let hess = nalgebra::linalg::Hessenberg::new(a.clone());
    let (p, h) = hess.unpack();
    let mut z = p.map(|v| Complex64::new(v, 0.0));
    let mut h = h.map(|v| Complex64::new(v, 0.0));
    for j in 0..n {
        for i in (j + 2)..n {
            h[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    hessenberg_qr(&mut h, &mut z)?;
    Ok((z, h))
}

fn cabs1(z: Complex64) -> f64 {
    z.re.abs() + z.im.abs()
}

// Rotation [c s; -conj(s) c] mapping (f, g) to (r, 0), with c real.
fn givens(f: Complex64, g: Complex64) -> (f64, Complex64) {
    let (fa, ga) = (f.norm(), g.norm());
    if ga == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if fa == 0.0 {
        return (0.0, g.conj() / ga);
    }
    let r = fa.hypot(ga);
    (fa / r, (f / fa) * g.conj() / r)
}

// Apply the rotation to rows (k, k+1) over columns `cols`, and its adjoint to
// columns (k, k+1) of `h` over rows `rows` and of `z` over all rows.
fn apply_rotation(
    h: &mut ComplexMatrix,
    z: &mut ComplexMatrix,
    k: usize,
    c: f64,
    s: Complex64,
    cols: std::ops::Range<usize>,
    rows: std::ops::Range<usize>,
) {
    for j in cols {
        let (a, b) = (h[(k, j)], h[(k + 1, j)]);
        h[(k, j)] = a * c + s * b;
        h[(k + 1, j)] = -s.conj() * a + b * c;
    }
    for i in rows {
        let (a, b) = (h[(i, k)], h[(i, k + 1)]);
        h[(i, k)] = a * c + s.conj() * b;
        h[(i, k + 1)] = -s * a + b * c;
    }
    for i in 0..z.nrows() {
        let (a, b) = (z[(i, k)], z[(i, k + 1)]);
        z[(i, k)] = a * c + s.conj() * b;
        z[(i, k + 1)] = -s * a + b * c;
    }
}

// Reduce upper Hessenberg `h` to upper triangular form in place, accumulating
// the unitary transformations into `z`.
fn hessenberg_qr(h: &mut ComplexMatrix, z: &mut ComplexMatrix) -> Result<()> {
    let n = h.nrows();
    let zero = Complex64::new(0.0, 0.0);
    let ulp = f64::EPSILON;
    let safmin = f64::MIN_POSITIVE;
    let smlnum = safmin * (n as f64 / ulp);
    let itmax = 30 * n.max(10);
    let mut i = n - 1;
    while i > 0 {
        let mut converged = false;
        for its in 0..=itmax {
            // Look for a negligible subdiagonal entry.
            let mut l = 0;
            for k in (1..=i).rev() {
                let sub = cabs1(h[(k, k - 1)]);
                if sub <= smlnum {
                    l = k;
                    break;
                }
                let mut tst = cabs1(h[(k - 1, k - 1)]) + cabs1(h[(k, k)]);
                if tst == 0.0 {
                    if k >= 2 {
                        tst += h[(k - 1, k - 2)].re.abs();
                    }
                    if k < i {
                        tst += h[(k + 1, k)].re.abs();
                    }
                }
                if h[(k, k - 1)].re.abs() <= ulp * tst {
                    // Ahues and Tisseur deflation criterion.
                    let ab = sub.max(cabs1(h[(k - 1, k)]));
                    let ba = sub.min(cabs1(h[(k - 1, k)]));
                    let d = h[(k - 1, k - 1)] - h[(k, k)];
                    let aa = cabs1(h[(k, k)]).max(cabs1(d));
                    let bb = cabs1(h[(k, k)]).min(cabs1(d));
                    let s = aa + ab;
                    if ba * (ab / s) <= smlnum.max(ulp * (bb * (aa / s))) {
                        l = k;
                        break;
                    }
                }
            }
            if l > 0 {
                h[(l, l - 1)] = zero;
            }
            if l >= i {
                converged = true;
                break;
            }
            if its == itmax {
                break;
            }

            let shift = if its == 10 {
                h[(l + 1, l)].re.abs() * 0.75 + h[(l, l)]
            } else if its == 20 {
                h[(i, i - 1)].re.abs() * 0.75 + h[(i, i)]
            } else {
                let mut t = h[(i, i)];
                let u = h[(i - 1, i)].sqrt() * h[(i, i - 1)].sqrt();
                let s = cabs1(u);
                if s != 0.0 {
                    let x = (h[(i - 1, i - 1)] - t) * 0.5;
                    let sx = cabs1(x);
                    let s = s.max(sx);
                    let mut y = ((x / s).powu(2) + (u / s).powu(2)).sqrt() * s;
                    if sx > 0.0 {
                        let xs = x / sx;
                        if xs.re * y.re + xs.im * y.im < 0.0 {
                            y = -y;
                        }
                    }
                    t -= u * (u / (x + y));
                }
                t
            };

            // Implicit single-shift sweep over the active block l..=i.
            let (c, s) = givens(h[(l, l)] - shift, h[(l + 1, l)]);
            apply_rotation(h, z, l, c, s, l..n, 0..(l + 2).min(i) + 1);
            for k in (l + 1)..i {
                let (c, s) = givens(h[(k, k - 1)], h[(k + 1, k - 1)]);
                apply_rotation(h, z, k, c, s, (k - 1)..n, 0..(k + 2).min(i) + 1);
                h[(k + 1, k - 1)] = zero;
            }
        }
        if !converged {
            return Err(Error::SchurFailed(n));
        }
        i -= 1;
    }
    Ok(())
}


const LOG_PADE_DEGREE: usize = 8;
const LOG_PADE_THETA: f64 = 0.25;
const MAX_SQRTS: usize = 64;

fn logm_upper_triangular(t: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = t.nrows();
    let mut r = t.clone();
    let mut s = 0u32;
    loop {
        let dist = triangular_norm1_minus_identity(&r);
        if dist <= LOG_PADE_THETA {
            break;
        }
        if s as usize >= MAX_SQRTS {
            return Err(Error::Config(format!(
                "matrix logarithm did not reach the Padé region after {MAX_SQRTS} square roots"
            )));
        }
        r = sqrtm_upper_triangular(&r);
        s += 1;
    }
    let mut x = r;
    for i in 0..n {
        x[(i, i)] -= Complex64::new(1.0, 0.0);
    }
    let (nodes, weights) = gauss_legendre_unit(LOG_PADE_DEGREE);
    let mut out = ComplexMatrix::zeros(n, n);
    for (&node, &weight) in nodes.iter().zip(&weights) {
        // (I + node X)^{-1} X, both upper triangular.
        let mut m = &x * Complex64::new(node, 0.0);
        for i in 0..n {
            m[(i, i)] += Complex64::new(1.0, 0.0);
        }
        let y = solve_upper_triangular(&m, &x);
        out += y * Complex64::new(weight, 0.0);
    }
    out *= Complex64::new(2f64.powi(s as i32), 0.0);
    // Diagonal of log(T) is known exactly.
    for i in 0..n {
        out[(i, i)] = t[(i, i)].ln();
    }
    Ok(out)
}

fn triangular_norm1_minus_identity(r: &ComplexMatrix) -> f64 {
    let n = r.nrows();
    (0..n)
        .map(|j| {
            (0..=j)
                .map(|i| {
                    let v = r[(i, j)];
                    if i == j {
                        (v - Complex64::new(1.0, 0.0)).norm()
                    } else {
                        v.norm()
                    }
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Principal square root of an upper triangular matrix (Björck-Hammarling recurrence).
fn sqrtm_upper_triangular(t: &ComplexMatrix) -> ComplexMatrix {
    let n = t.nrows();
    let mut r = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        r[(j, j)] = t[(j, j)].sqrt();
        for i in (0..j).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for k in (i + 1)..j {
                s += r[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = (t[(i, j)] - s) / (r[(i, i)] + r[(j, j)]);
        }
    }
    r
}

/// Solves `M Y = X` for upper triangular `M` and upper triangular `X`.
fn solve_upper_triangular(m: &ComplexMatrix, x: &ComplexMatrix) -> ComplexMatrix {
    let n = m.nrows();
    let mut y = ComplexMatrix::zeros(n, n);
    for c in 0..n {
        for i in (0..=c).rev() {
            let mut acc = x[(i, c)];
            for k in (i + 1)..=c {
                acc -= m[(i, k)] * y[(k, c)];
            }
            y[(i, c)] = acc / m[(i, i)];
        }
    }
    y
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(m, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(0.5 * (x + 1.0));
        weights.push(0.5 * w);
    }
    (nodes, weights)
}

// P_m(x) and P_m'(x) by the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
