//! Independent references: polynomial algebra on exponent maps, a separate
//! graded-lex enumeration, and a Taylor-series matrix exponential.

use std::collections::BTreeMap;

use koopid_core::RealMatrix;

/// Sparse polynomial with integer coefficients.
pub type Poly = BTreeMap<Vec<u32>, i64>;

/// All exponent tuples of total degree `<= m`, by degree, then larger
/// leading exponents first.
pub fn graded_lex(n: usize, m: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(n, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, m, &mut Vec::new(), &mut out);
    let deg = |s: &Vec<u32>| s.iter().sum::<u32>();
    out.sort_by(|a, b| deg(a).cmp(&deg(b)).then(b.cmp(a)));
    out
}

pub fn monomial(s: &[u32]) -> Poly {
    BTreeMap::from([(s.to_vec(), 1)])
}

pub fn mul(p: &Poly, q: &Poly) -> Poly {
    let mut out = Poly::new();
    for (a, ca) in p {
        for (b, cb) in q {
            let s: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            *out.entry(s).or_insert(0) += ca * cb;
        }
    }
    out.retain(|_, c| *c != 0);
    out
}

pub fn diff(p: &Poly, j: usize) -> Poly {
    let mut out = Poly::new();
    for (s, c) in p {
        if s[j] > 0 {
            let mut t = s.clone();
            t[j] -= 1;
            *out.entry(t).or_insert(0) += c * s[j] as i64;
        }
    }
    out.retain(|_, c| *c != 0);
    out
}

fn coordinates(p: &Poly, order: &[Vec<u32>]) -> Vec<i64> {
    let mut v = vec![0; order.len()];
    for (s, c) in p {
        let i = order.iter().position(|t| t == s).expect("product lies in the target basis");
        v[i] = *c;
    }
    v
}

/// Integer matrix of `p_k d/dx_j` from the degree-`m1` to the degree-`m2` monomials.
pub fn generator_block(n: usize, m1: u32, mf: u32, j: usize, k: usize) -> Vec<Vec<i64>> {
    let m2 = m1 + mf - 1;
    let b1 = graded_lex(n, m1);
    let b2 = graded_lex(n, m2);
    let pk = monomial(&graded_lex(n, mf)[k]);
    let cols: Vec<Vec<i64>> = b1.iter().map(|s| coordinates(&mul(&pk, &diff(&monomial(s), j)), &b2)).collect();
    (0..b2.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

/// Integer matrix of the Laplacian between the same bases.
pub fn laplacian(n: usize, m1: u32, mf: u32) -> Vec<Vec<i64>> {
    let m2 = m1 + mf - 1;
    let b1 = graded_lex(n, m1);
    let b2 = graded_lex(n, m2);
    let cols: Vec<Vec<i64>> = b1
        .iter()
        .map(|s| {
            let p = monomial(s);
            let mut lap = Poly::new();
            for j in 0..n {
                for (t, c) in diff(&diff(&p, j), j) {
                    *lap.entry(t).or_insert(0) += c;
                }
            }
            lap.retain(|_, c| *c != 0);
            coordinates(&lap, &b2)
        })
        .collect();
    (0..b2.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

/// Exact equality of a float matrix with an integer table.
pub fn equals_exactly(m: &RealMatrix, oracle: &[Vec<i64>]) -> bool {
    m.nrows() == oracle.len()
        && oracle.iter().enumerate().all(|(i, row)| {
            row.len() == m.ncols() && row.iter().enumerate().all(|(l, &v)| m[(i, l)] == v as f64)
        })
}

/// Taylor series with scaling and squaring.
pub fn expm_taylor(a: &RealMatrix) -> RealMatrix {
    let s = a.norm().max(1.0).log2().ceil() as i32 + 3;
    let scaled = a / 2f64.powi(s);
    let n = a.nrows();
    let mut term = RealMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Flow of `x' = A x + b` over time `t`: returns `(Phi, c)` with `x(t) = Phi x0 + c`.
pub fn affine_flow(a: &RealMatrix, b: &[f64], t: f64) -> (RealMatrix, Vec<f64>) {
    let n = a.nrows();
    let mut aug = RealMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = a[(i, j)] * t;
        }
        aug[(i, n)] = b[i] * t;
    }
    let e = expm_taylor(&aug);
    let phi = e.view((0, 0), (n, n)).into_owned();
    let c = (0..n).map(|i| e[(i, n)]).collect();
    (phi, c)
}
