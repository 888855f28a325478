//! Projected generator building blocks.
//!
//! For `j = 1..n` and a monomial `p_k` of degree `<= m_F`, the operator
//! `p_k d/dx_j` maps the degree-`m1` monomials into the degree-`m2` span
//! (`m2 = m1 + m_F - 1`). Its matrix has entry `psi_j(l)` at row `i` when
//! `Psi(i) = Psi(k) + Psi(l) - e_j`, and zeros elsewhere. The Laplacian
//! matrix is built the same way from `d^2/dx_j^2`.
//!
//! Every column of every block has at most one nonzero, so blocks are stored
//! as coordinate lists; [`SparseBlock::to_dense`] gives the `N2 x N1` matrix.

use serde::Serialize;

use crate::basis::{MonomialBasis, MultiIndex};
use crate::error::{Error, Result};
use crate::linalg::{RealMatrix, ThinSvd};

/// Coordinate-list matrix, 0-based `(row, col, value)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBlock {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseBlock {
    pub fn to_dense(&self) -> RealMatrix {
        let mut m = RealMatrix::zeros(self.rows, self.cols);
        for &(i, l, v) in &self.entries {
            m[(i, l)] += v;
        }
        m
    }

    /// Nonzeros as positions into the column-stacked vectorization.
    pub fn vec_entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(move |&(i, l, v)| (l * self.rows + i, v))
    }
}

fn check_nested(basis_m1: &MonomialBasis, basis_m2: &MonomialBasis) -> Result<()> {
    if basis_m1.dim() != basis_m2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "bases over {} and {} variables",
            basis_m1.dim(),
            basis_m2.dim()
        )));
    }
    Ok(())
}

// Block entries for 0-based (j, k); Psi(k) is read from basis_m2.
fn block_entries(
    j: usize,
    shift: &MultiIndex,
    basis_m1: &MonomialBasis,
    basis_m2: &MonomialBasis,
) -> Result<Vec<(usize, usize, f64)>> {
    let mut entries = Vec::new();
    for (l, sl) in basis_m1.indices().iter().enumerate() {
        let Some(lowered) = sl.lowered(j) else {
            continue;
        };
        let target = shift.add(&lowered);
        let i = basis_m2.index_of(&target)? - 1;
        entries.push((i, l, sl.get(j) as f64));
    }
    Ok(entries)
}

/// Matrix of `p_k d/dx_j` from the degree-`m1` basis to the degree-`m2` basis.
/// `j` and `k` are 1-based; `k` indexes the graded order shared by all bases.
pub fn generator_block(
    j: usize,
    k: usize,
    basis_m1: &MonomialBasis,
    basis_m2: &MonomialBasis,
) -> Result<RealMatrix> {
    check_nested(basis_m1, basis_m2)?;
    let n = basis_m1.dim();
    if j == 0 || j > n {
        return Err(Error::Config(format!("variable index j={j} outside 1..={n}")));
    }
    let sk = basis_m2
        .multi_index_at(k)
        .ok_or_else(|| Error::Config(format!("monomial index k={k} outside 1..={}", basis_m2.len())))?;
    let entries = block_entries(j - 1, sk, basis_m1, basis_m2)?;
    Ok(SparseBlock {
        rows: basis_m2.len(),
        cols: basis_m1.len(),
        entries,
    }
    .to_dense())
}

fn laplacian_entries(basis_m1: &MonomialBasis, basis_m2: &MonomialBasis) -> Vec<(usize, usize, f64)> {
    let mut entries = Vec::new();
    for (l, sl) in basis_m1.indices().iter().enumerate() {
        for j in 0..sl.len() {
            let s = sl.get(j);
            if s < 2 {
                continue;
            }
            let mut t = sl.exponents().to_vec();
            t[j] -= 2;
            if let Some(i) = basis_m2.position(&MultiIndex::new(t)) {
                entries.push((i, l, (s * (s - 1)) as f64));
            }
        }
    }
    entries
}

/// Matrix of the Laplacian `sum_j d^2/dx_j^2` from the degree-`m1` to the degree-`m2` basis.
pub fn laplacian_matrix(basis_m1: &MonomialBasis, basis_m2: &MonomialBasis) -> Result<RealMatrix> {
    check_nested(basis_m1, basis_m2)?;
    Ok(SparseBlock {
        rows: basis_m2.len(),
        cols: basis_m1.len(),
        entries: laplacian_entries(basis_m1, basis_m2),
    }
    .to_dense())
}

/// All generator blocks for given `(n, m1, m_F)` plus the diffusion matrix.
#[derive(Debug, Clone)]
pub struct GeneratorSystem {
    n: usize,
    m1: u32,
    m2: u32,
    mf: u32,
    basis_m1: MonomialBasis,
    basis_m2: MonomialBasis,
    basis_mf: MonomialBasis,
    blocks: Vec<SparseBlock>,
    diffusion: SparseBlock,
}

impl GeneratorSystem {
    pub fn new(n: usize, m1: u32, mf: u32) -> Result<Self> {
        if m1 < 1 || mf < 1 {
            return Err(Error::Config(format!(
                "degrees must satisfy m1 >= 1 and m_F >= 1, got m1={m1}, m_F={mf}"
            )));
        }
        let m2 = m1 + mf - 1;
        let basis_m1 = MonomialBasis::new(n, m1)?;
        let basis_m2 = MonomialBasis::new(n, m2)?;
        let basis_mf = MonomialBasis::new(n, mf)?;
        let (rows, cols) = (basis_m2.len(), basis_m1.len());
        let mut blocks = Vec::with_capacity(n * basis_mf.len());
        for j in 0..n {
            for sk in basis_mf.indices() {
                blocks.push(SparseBlock {
                    rows,
                    cols,
                    entries: block_entries(j, sk, &basis_m1, &basis_m2)?,
                });
            }
        }
        let diffusion = SparseBlock {
            rows,
            cols,
            entries: laplacian_entries(&basis_m1, &basis_m2),
        };
        Ok(GeneratorSystem {
            n,
            m1,
            m2,
            mf,
            basis_m1,
            basis_m2,
            basis_mf,
            blocks,
            diffusion,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m1(&self) -> u32 {
        self.m1
    }
    pub fn m2(&self) -> u32 {
        self.m2
    }
    pub fn mf(&self) -> u32 {
        self.mf
    }
    pub fn basis_m1(&self) -> &MonomialBasis {
        &self.basis_m1
    }
    pub fn basis_m2(&self) -> &MonomialBasis {
        &self.basis_m2
    }
    pub fn basis_mf(&self) -> &MonomialBasis {
        &self.basis_mf
    }
    pub fn n_f(&self) -> usize {
        self.basis_mf.len()
    }

    /// Block for 0-based `(j, k)`.
    pub fn block(&self, j: usize, k: usize) -> &SparseBlock {
        &self.blocks[j * self.n_f() + k]
    }

    pub fn diffusion(&self) -> &SparseBlock {
        &self.diffusion
    }

    /// `sum_{j,k} w[j,k] L^j_k` for an `n x N_F` coefficient table.
    pub fn compose(&self, w: &RealMatrix) -> RealMatrix {
        let mut out = RealMatrix::zeros(self.basis_m2.len(), self.basis_m1.len());
        for j in 0..self.n {
            for k in 0..self.n_f() {
                let c = w[(j, k)];
                if c == 0.0 {
                    continue;
                }
                for &(i, l, v) in &self.block(j, k).entries {
                    out[(i, l)] += c * v;
                }
            }
        }
        out
    }
}

/// Design of the vectorized generator equation, with all-zero rows removed.
#[derive(Debug, Clone)]
pub struct Design {
    /// Length of the full vectorization, `N2 * N1`.
    pub full_rows: usize,
    /// Sparse columns over full-row positions, in `(j, k)` order then optional diffusion.
    pub columns: Vec<Vec<(usize, f64)>>,
    /// Full-row positions kept, ascending.
    pub kept_rows: Vec<usize>,
    /// Full-row positions dropped because every column is zero there.
    pub dropped_rows: Vec<usize>,
    pub has_diffusion: bool,
    /// False when the diffusion column vanishes (e.g. `m1 = 1`).
    pub diffusion_identifiable: bool,
}

impl Design {
    pub fn n_unknowns(&self) -> usize {
        self.columns.len()
    }

    /// Dense matrix restricted to the kept rows.
    pub fn dense(&self) -> RealMatrix {
        let mut row_map = vec![usize::MAX; self.full_rows];
        for (r, &full) in self.kept_rows.iter().enumerate() {
            row_map[full] = r;
        }
        let mut m = RealMatrix::zeros(self.kept_rows.len(), self.columns.len());
        for (c, col) in self.columns.iter().enumerate() {
            for &(full, v) in col {
                m[(row_map[full], c)] += v;
            }
        }
        m
    }

    /// Restrict a full-length vector to the kept rows.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.kept_rows.iter().map(|&r| full[r]).collect()
    }

    /// Minimum-norm least-squares solution of `design * w = rhs` (rhs over full rows).
    ///
    /// Columns that share no row are decoupled, so the problem is solved per
    /// connected component. Singular values `<= rcond * sigma_max` (global max)
    /// are discarded, which reproduces the pseudoinverse of the whole design.
    pub fn solve(&self, rhs_full: &[f64], rcond: f64) -> Result<DesignSolution> {
        if rhs_full.len() != self.full_rows {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} entries, design has {} rows",
                rhs_full.len(),
                self.full_rows
            )));
        }
        let ncols = self.columns.len();
        let mut parent: Vec<usize> = (0..ncols).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut owner = vec![usize::MAX; self.full_rows];
        for (c, col) in self.columns.iter().enumerate() {
            for &(r, _) in col {
                if owner[r] == usize::MAX {
                    owner[r] = c;
                } else {
                    let (a, b) = (find(&mut parent, owner[r]), find(&mut parent, c));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_of = vec![usize::MAX; ncols];
        for c in 0..ncols {
            let root = find(&mut parent, c);
            if group_of[root] == usize::MAX {
                group_of[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[group_of[root]].push(c);
        }

        struct Component {
            cols: Vec<usize>,
            rows: Vec<usize>,
            svd: Option<ThinSvd>,
        }
        let mut comps = Vec::with_capacity(groups.len());
        let mut sigma_max: f64 = 0.0;
        for cols in groups {
            let mut rows: Vec<usize> = cols
                .iter()
                .flat_map(|&c| self.columns[c].iter().map(|&(r, _)| r))
                .collect();
            rows.sort_unstable();
            rows.dedup();
            let svd = if rows.is_empty() {
                None
            } else {
                let mut a = RealMatrix::zeros(rows.len(), cols.len());
                for (ci, &c) in cols.iter().enumerate() {
                    for &(r, v) in &self.columns[c] {
                        let ri = rows.binary_search(&r).expect("row collected above");
                        a[(ri, ci)] += v;
                    }
                }
                let svd = ThinSvd::new(&a)?;
                sigma_max = sigma_max.max(svd.sigma_max());
                Some(svd)
            };
            comps.push(Component { cols, rows, svd });
        }

        let tol = rcond.max(0.0) * sigma_max;
        let mut coef = vec![0.0; ncols];
        let mut rank = 0;
        let mut residual_sq = 0.0;
        for comp in &comps {
            let Some(svd) = &comp.svd else { continue };
            let b = RealMatrix::from_iterator(comp.rows.len(), 1, comp.rows.iter().map(|&r| rhs_full[r]));
            rank += svd.rank(tol);
            let x = svd.solve(&b, tol);
            let mut fitted = vec![0.0; comp.rows.len()];
            for (ci, &c) in comp.cols.iter().enumerate() {
                coef[c] = x[(ci, 0)];
                for &(r, v) in &self.columns[c] {
                    let ri = comp.rows.binary_search(&r).expect("row in component");
                    fitted[ri] += v * x[(ci, 0)];
                }
            }
            residual_sq += fitted
                .iter()
                .zip(b.iter())
                .map(|(f, b)| (f - b).powi(2))
                .sum::<f64>();
        }
        Ok(DesignSolution {
            coefficients: coef,
            residual: residual_sq.sqrt(),
            rank,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignSolution {
    pub coefficients: Vec<f64>,
    /// `||design * w - rhs||_2` over the kept rows.
    pub residual: f64,
    pub rank: usize,
}

/// Columns `vec(L^j_k)` in `(1,1), (1,2), ..., (n, N_F)` order, plus `vec(D)`
/// when `include_diffusion`. All-zero rows are dropped and recorded.
pub fn assemble_design(gen: &GeneratorSystem, include_diffusion: bool) -> Design {
    let full_rows = gen.basis_m2.len() * gen.basis_m1.len();
    let mut columns: Vec<Vec<(usize, f64)>> = gen
        .blocks
        .iter()
        .map(|b| b.vec_entries().filter(|&(_, v)| v != 0.0).collect())
        .collect();
    let mut diffusion_identifiable = false;
    if include_diffusion {
        let col: Vec<(usize, f64)> = gen
            .diffusion
            .vec_entries()
            .filter(|&(_, v)| v != 0.0)
            .collect();
        diffusion_identifiable = !col.is_empty();
        columns.push(col);
    }
    let mut used = vec![false; full_rows];
    for col in &columns {
        for &(r, _) in col {
            used[r] = true;
        }
    }
    let (kept_rows, dropped_rows): (Vec<usize>, Vec<usize>) =
        (0..full_rows).partition(|&r| used[r]);
    Design {
        full_rows,
        columns,
        kept_rows,
        dropped_rows,
        has_diffusion: include_diffusion,
        diffusion_identifiable,
    }
}
