//! Ordered monomial bases over `n` variables.
//!
//! Monomials of total degree `<= m` are kept in graded lexicographic order:
//! ascending total degree, and within one degree the exponent tuples are
//! sorted with `s_1` most significant, larger exponents first. For `n = 2,
//! m = 2` this gives `1, x1, x2, x1^2, x1 x2, x2^2`.
//!
//! Because every lower-degree basis is a prefix of a higher-degree one, the
//! rows/columns of a matrix expressed in the degree-`m` basis that belong to
//! the degree-`m' <= m` monomials form a leading block.
//!
//! Public positions are 1-based (`k = 1` is the constant monomial).
//! [`MonomialBasis::position`] is the 0-based variant used for storage.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Exponent tuple `(s_1, ..., s_n)` of the monomial `x_1^{s_1} ... x_n^{s_n}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zeros(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// The unit multi-index `e_j` (0-based `j`).
    pub fn unit(n: usize, j: usize) -> Self {
        let mut s = vec![0; n];
        s[j] = 1;
        MultiIndex(s)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    /// Component-wise sum. Panics if the lengths differ.
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        assert_eq!(self.len(), other.len());
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self - e_j`, or `None` when `s_j = 0`.
    pub fn lowered(&self, j: usize) -> Option<MultiIndex> {
        let sj = self.0[j].checked_sub(1)?;
        let mut s = self.0.clone();
        s[j] = sj;
        Some(MultiIndex(s))
    }

    /// Evaluate `prod_i x_i^{s_i}` by repeated multiplication (`0^0 = 1`).
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .fold(1.0, |acc, (&s, &xi)| (0..s).fold(acc, |a, _| a * xi))
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(|&s| s == 0) {
            return f.write_str("1");
        }
        let mut first = true;
        for (i, &s) in self.0.iter().enumerate() {
            if s == 0 {
                continue;
            }
            if !first {
                f.write_str("*")?;
            }
            first = false;
            write!(f, "x{}", i + 1)?;
            if s > 1 {
                write!(f, "^{s}")?;
            }
        }
        Ok(())
    }
}

/// Number of monomials of total degree `<= m` in `n` variables, `(n+m)! / (n! m!)`.
pub fn basis_size(n: usize, m: usize) -> Result<usize> {
    // C(n+i, i) = C(n+i-1, i-1) * (n+i) / i, exact at every step.
    let mut acc: u128 = 1;
    for i in 1..=m as u128 {
        acc = acc
            .checked_mul(n as u128 + i)
            .ok_or(Error::Overflow { n, m })?
            / i;
    }
    usize::try_from(acc).map_err(|_| Error::Overflow { n, m })
}

/// Ordered basis of monomials of total degree `<= max_degree` in `dim` variables.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    dim: usize,
    max_degree: u32,
    indices: Vec<MultiIndex>,
    reverse: HashMap<MultiIndex, usize>,
}

impl PartialEq for MonomialBasis {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.max_degree == other.max_degree
    }
}

impl MonomialBasis {
    pub fn new(dim: usize, max_degree: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("basis dimension must be at least 1".into()));
        }
        let size = basis_size(dim, max_degree as usize)?;
        let mut indices = Vec::with_capacity(size);
        let mut buf = vec![0u32; dim];
        for d in 0..=max_degree {
            push_compositions(&mut buf, 0, d, &mut indices);
        }
        debug_assert_eq!(indices.len(), size);
        let reverse = indices
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k))
            .collect();
        Ok(MonomialBasis {
            dim,
            max_degree,
            indices,
            reverse,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Multi-index at 1-based position `k` (the index function `Psi(k)`).
    pub fn multi_index_at(&self, k: usize) -> Option<&MultiIndex> {
        k.checked_sub(1).and_then(|i| self.indices.get(i))
    }

    /// 1-based position of `s` (the inverse index function).
    pub fn index_of(&self, s: &MultiIndex) -> Result<usize> {
        self.check_len(s)?;
        self.position(s).map(|k| k + 1).ok_or_else(|| Error::OutOfBasis {
            exponents: s.exponents().to_vec(),
            degree: s.degree(),
            max_degree: self.max_degree,
        })
    }

    /// 0-based position of `s`, `None` if it is not in the basis.
    pub fn position(&self, s: &MultiIndex) -> Option<usize> {
        self.reverse.get(s).copied()
    }

    /// Number of leading monomials with total degree `<= degree`.
    pub fn prefix_len(&self, degree: u32) -> usize {
        self.indices.partition_point(|s| s.degree() <= degree)
    }

    /// Evaluate every basis monomial at `x`.
    pub fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.lift_into(x, &mut out)?;
        Ok(out)
    }

    pub fn lift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "point has {} components, basis has {} variables",
                x.len(),
                self.dim
            )));
        }
        if out.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "output buffer has {} slots, basis has {} monomials",
                out.len(),
                self.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lifted point"));
        }
        for (o, s) in out.iter_mut().zip(&self.indices) {
            *o = s.eval(x);
        }
        Ok(())
    }

    fn check_len(&self, s: &MultiIndex) -> Result<()> {
        if s.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "multi-index has length {}, basis has {} variables",
                s.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

// Compositions of `remaining` into buf[pos..], s_pos descending.
fn push_compositions(buf: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining;
        out.push(MultiIndex(buf.to_vec()));
        return;
    }
    for s in (0..=remaining).rev() {
        buf[pos] = s;
        push_compositions(buf, pos + 1, remaining - s, out);
    }
    buf[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Brute-force count of exponent tuples with sum <= m.
    fn enumerate_count(n: usize, m: u32) -> usize {
        fn rec(n: usize, budget: u32) -> usize {
            if n == 0 {
                return 1;
            }
            (0..=budget).map(|s| rec(n - 1, budget - s)).sum()
        }
        rec(n, m)
    }

    fn idx(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn basis_size_examples() {
        assert_eq!(basis_size(2, 3).unwrap(), 10);
        assert_eq!(basis_size(1, 0).unwrap(), 1);
        assert_eq!(enumerate_count(3, 3), 20);
        assert_eq!(basis_size(3, 3).unwrap(), 20);
        assert_eq!(basis_size(12, 3).unwrap(), 455);
    }

    #[test]
    fn basis_size_overflow_is_an_error() {
        assert!(matches!(
            basis_size(usize::MAX / 2, 40),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn basis_size_matches_enumeration() {
        for n in 1..=5 {
            for m in 0..=5u32 {
                let b = MonomialBasis::new(n, m).unwrap();
                assert_eq!(b.len(), basis_size(n, m as usize).unwrap());
                assert_eq!(b.len(), enumerate_count(n, m));
            }
        }
    }

    #[test]
    fn graded_lex_order() {
        let b = MonomialBasis::new(2, 2).unwrap();
        let expected: Vec<MultiIndex> = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
            .iter()
            .map(|s| idx(s))
            .collect();
        assert_eq!(b.indices(), &expected[..]);

        let b = MonomialBasis::new(1, 3).unwrap();
        let expected: Vec<MultiIndex> = (0..=3).map(|s| idx(&[s])).collect();
        assert_eq!(b.indices(), &expected[..]);

        let b = MonomialBasis::new(2, 0).unwrap();
        assert_eq!(b.indices(), &[idx(&[0, 0])]);
    }

    #[test]
    fn index_of_examples() {
        let b = MonomialBasis::new(2, 2).unwrap();
        assert_eq!(b.index_of(&idx(&[1, 1])).unwrap(), 5);
        assert_eq!(b.index_of(&idx(&[0, 0])).unwrap(), 1);
        assert!(matches!(
            b.index_of(&idx(&[3, 0])),
            Err(Error::OutOfBasis { degree: 3, .. })
        ));
        assert!(matches!(
            b.index_of(&idx(&[1])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn bijection_over_whole_basis() {
        for n in 1..=4 {
            for m in 0..=4 {
                let b = MonomialBasis::new(n, m).unwrap();
                for k in 1..=b.len() {
                    let s = b.multi_index_at(k).unwrap();
                    assert_eq!(b.index_of(s).unwrap(), k);
                }
                assert!(b.multi_index_at(0).is_none());
                assert!(b.multi_index_at(b.len() + 1).is_none());
            }
        }
    }

    #[test]
    fn lower_degree_basis_is_prefix() {
        let big = MonomialBasis::new(3, 4).unwrap();
        for m in 0..=4 {
            let small = MonomialBasis::new(3, m).unwrap();
            assert_eq!(big.prefix_len(m), small.len());
            assert_eq!(&big.indices()[..small.len()], small.indices());
        }
    }

    #[test]
    fn lift_examples() {
        let b = MonomialBasis::new(2, 2).unwrap();
        assert_eq!(b.lift(&[0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.lift(&[2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        let b = MonomialBasis::new(1, 3).unwrap();
        assert_eq!(b.lift(&[-1.0]).unwrap(), vec![1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn lift_rejects_non_finite() {
        let b = MonomialBasis::new(2, 2).unwrap();
        assert!(matches!(
            b.lift(&[f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(b.lift(&[1.0]).is_err());
    }

    #[test]
    fn display_monomials() {
        assert_eq!(idx(&[0, 0]).to_string(), "1");
        assert_eq!(idx(&[2, 1]).to_string(), "x1^2*x2");
    }

    proptest! {
        #[test]
        fn lift_norm_at_least_one(x in prop::collection::vec(-10.0f64..10.0, 3)) {
            let b = MonomialBasis::new(3, 3).unwrap();
            let p = b.lift(&x).unwrap();
            prop_assert_eq!(p[0], 1.0);
            prop_assert!(p.iter().map(|v| v * v).sum::<f64>() >= 1.0);
        }

        #[test]
        fn lift_is_multiplicative(x in prop::collection::vec(-2.0f64..2.0, 3)) {
            let b = MonomialBasis::new(3, 4).unwrap();
            let p = b.lift(&x).unwrap();
            for (k, sk) in b.indices().iter().enumerate() {
                for (l, sl) in b.indices().iter().enumerate() {
                    if let Some(i) = b.position(&sk.add(sl)) {
                        let prod = p[k] * p[l];
                        prop_assert!((p[i] - prod).abs() <= 1e-12 * prod.abs().max(1e-300));
                    }
                }
            }
        }
    }
}
