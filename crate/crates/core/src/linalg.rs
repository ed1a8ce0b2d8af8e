//! Banded difference operators and the lower-triangular reparameterization
//! matrices built from them.
//!
//! All banded matrices here store their entries diagonal-major: `bands[d][i]`
//! is the entry on the `d`-th diagonal of row `i`, so products and triangular
//! solves are single passes over contiguous memory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported difference order (k + 1).
pub const MAX_ORDER: usize = 4;

fn check_grid(grid: &[f64]) -> Result<()> {
    for (i, w) in grid.windows(2).enumerate() {
        if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
            return Err(Error::InvalidGrid { index: i + 1 });
        }
    }
    if grid.len() == 1 && !grid[0].is_finite() {
        return Err(Error::InvalidGrid { index: 0 });
    }
    Ok(())
}

/// Scale factors `k / (x_{i+k} - x_i)` for `i = 0..n-k`.
fn spacing_scales(grid: &[f64], k: usize) -> Vec<f64> {
    (0..grid.len() - k)
        .map(|i| k as f64 / (grid[i + k] - grid[i]))
        .collect()
}

/// The (n - order) x n adjusted difference operator on an arbitrary grid.
///
/// Row `i` has `order + 1` nonzeros in columns `i..=i + order`; `bands[d][i]`
/// holds the entry in column `i + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffOperator {
    order: usize,
    grid: Vec<f64>,
    bands: Vec<Vec<f64>>,
}

impl DiffOperator {
    /// Builds `D(x, order)` through the recursion
    /// `D(x,j+1) = D(1) · diag(j / (x_{i+j} - x_i)) · D(x,j)`.
    pub fn new(grid: &[f64], order: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::InvalidConfig(format!(
                "difference order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        let n = grid.len();
        if n < order + 1 {
            return Err(Error::OrderTooHigh {
                order,
                n,
                needed: order + 1,
            });
        }
        check_grid(grid)?;

        let mut bands = vec![vec![-1.0; n - 1], vec![1.0; n - 1]];
        for j in 1..order {
            let scale = spacing_scales(grid, j);
            let rows = n - j - 1;
            let mut next = vec![vec![0.0; rows]; j + 2];
            for i in 0..rows {
                for (d, band) in next.iter_mut().enumerate() {
                    let mut v = 0.0;
                    if d >= 1 {
                        v += scale[i + 1] * bands[d - 1][i + 1];
                    }
                    if d <= j {
                        v -= scale[i] * bands[d][i];
                    }
                    band[i] = v;
                }
            }
            bands = next;
        }
        Ok(Self {
            order,
            grid: grid.to_vec(),
            bands,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.grid.len() - self.order
    }

    pub fn cols(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Entry in row `i`, column `i + d`.
    #[inline]
    pub fn entry(&self, i: usize, d: usize) -> f64 {
        self.bands[d][i]
    }

    /// Nonzeros of row `i` (columns `i..=i + order`).
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..=self.order).map(|d| self.bands[d][i]).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.cols() {
            return Err(Error::DimMismatch {
                expected: self.cols(),
                got: v.len(),
            });
        }
        let rows = self.rows();
        out[..rows].fill(0.0);
        for (d, band) in self.bands.iter().enumerate() {
            for (o, (b, x)) in out[..rows].iter_mut().zip(band.iter().zip(&v[d..])) {
                *o += b * x;
            }
        }
        Ok(())
    }

    /// `Dᵀ u`, accumulated into `out` (length n).
    pub fn apply_transpose_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        if u.len() != self.rows() {
            return Err(Error::DimMismatch {
                expected: self.rows(),
                got: u.len(),
            });
        }
        out[..self.cols()].fill(0.0);
        for (d, band) in self.bands.iter().enumerate() {
            for (o, (b, x)) in out[d..].iter_mut().zip(band.iter().zip(u)) {
                *o += b * x;
            }
        }
        Ok(())
    }

    pub fn l1_of(&self, v: &[f64]) -> Result<f64> {
        Ok(self.apply(v)?.iter().map(|x| x.abs()).sum())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.cols()]; self.rows()];
        for (i, row) in m.iter_mut().enumerate() {
            for d in 0..=self.order {
                row[i + d] = self.bands[d][i];
            }
        }
        m
    }
}

/// Which reparameterization the change of variables `θ = T β` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// First k+1 identity rows stacked on `D(x, k+1)`; the constraint becomes
    /// an ℓ1 ball on θ[k+1..].
    T1,
    /// First k identity rows stacked on `diag(k / (x_{i+k} - x_i)) D(x, k)`;
    /// the constraint becomes a total-variation ball on θ[k..].
    T2,
}

/// Square lower-triangular banded matrix `T` with `bands[d][i] = T[i][i - d]`.
#[derive(Debug, Clone)]
pub struct ReparamMatrix {
    scheme: Scheme,
    k: usize,
    bands: Vec<Vec<f64>>,
    pseudo: Option<PseudoSolve>,
}

impl ReparamMatrix {
    pub fn new(grid: &[f64], k: usize, scheme: Scheme) -> Result<Self> {
        let n = grid.len();
        let (head, op) = match scheme {
            Scheme::T1 => {
                if n < k + 2 {
                    return Err(Error::OrderTooHigh {
                        order: k + 1,
                        n,
                        needed: k + 2,
                    });
                }
                (k + 1, DiffOperator::new(grid, k + 1)?)
            }
            Scheme::T2 => {
                if k == 0 {
                    return Err(Error::InvalidConfig("scheme T2 needs order k >= 1".into()));
                }
                if n < k + 2 {
                    return Err(Error::OrderTooHigh {
                        order: k + 1,
                        n,
                        needed: k + 2,
                    });
                }
                let mut op = DiffOperator::new(grid, k)?;
                let scale = spacing_scales(grid, k);
                for band in op.bands.iter_mut() {
                    for (b, s) in band.iter_mut().zip(&scale) {
                        *b *= s;
                    }
                }
                (k, op)
            }
        };
        let width = op.order();
        let mut bands = vec![vec![0.0; n]; width + 1];
        for i in 0..head {
            bands[0][i] = 1.0;
        }
        for r in 0..op.rows() {
            let i = r + head;
            for d in 0..=width {
                bands[d][i] = op.bands[width - d][r];
            }
        }
        let pseudo = match scheme {
            Scheme::T1 => None,
            Scheme::T2 => Some(PseudoSolve::new(n - k)),
        };
        Ok(Self {
            scheme,
            k,
            bands,
            pseudo,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.bands[0].len()
    }

    /// Number of nonzero diagonals.
    pub fn bandwidth(&self) -> usize {
        self.bands.len()
    }

    /// First index of θ that the epigraph constraint reads.
    pub fn constrained_start(&self) -> usize {
        match self.scheme {
            Scheme::T1 => self.k + 1,
            Scheme::T2 => self.k,
        }
    }

    /// Cached `[D(1) D(1)ᵀ]⁻¹ D(1)` for the T2 bisection bound.
    pub fn pseudosolve(&self) -> Option<&PseudoSolve> {
        self.pseudo.as_ref()
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::DimMismatch {
                expected: self.n(),
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let n = self.n();
        let mut out = vec![0.0; n];
        for (d, band) in self.bands.iter().enumerate() {
            for i in d..n {
                out[i] += band[i] * v[i - d];
            }
        }
        Ok(out)
    }

    /// Solves `T β = θ` by banded forward substitution.
    pub fn forward_solve(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut beta = theta.to_vec();
        self.forward_solve_in_place(&mut beta)?;
        Ok(beta)
    }

    pub fn forward_solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check(x)?;
        let diag = &self.bands[0];
        for i in 0..x.len() {
            let mut acc = x[i];
            for d in 1..self.bands.len().min(i + 1) {
                acc -= self.bands[d][i] * x[i - d];
            }
            let p = diag[i];
            if p == 0.0 || !p.is_finite() {
                return Err(Error::SingularMatrix { row: i });
            }
            x[i] = acc / p;
        }
        Ok(())
    }

    /// Solves `Tᵀ w = v` by banded back substitution.
    pub fn transpose_solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut w = v.to_vec();
        self.transpose_solve_in_place(&mut w)?;
        Ok(w)
    }

    pub fn transpose_solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check(x)?;
        let n = x.len();
        let diag = &self.bands[0];
        for j in (0..n).rev() {
            let mut acc = x[j];
            for d in 1..self.bands.len() {
                if j + d < n {
                    acc -= self.bands[d][j + d] * x[j + d];
                }
            }
            let p = diag[j];
            if p == 0.0 || !p.is_finite() {
                return Err(Error::SingularMatrix { row: j });
            }
            x[j] = acc / p;
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut m = vec![vec![0.0; n]; n];
        for (d, band) in self.bands.iter().enumerate() {
            for i in d..n {
                m[i][i - d] = band[i];
            }
        }
        m
    }
}

/// `[D(1) D(1)ᵀ]⁻¹ D(1)` for a slice of length `len`, held as an LDLᵀ
/// factorization of the tridiagonal Gram matrix (diagonal 2, off-diagonal -1)
/// so that application costs O(len).
#[derive(Debug, Clone)]
pub struct PseudoSolve {
    len: usize,
    // LDLᵀ of the (len-1)-sized Gram matrix: unit sub-diagonal of L and D.
    sub: Vec<f64>,
    diag: Vec<f64>,
}

impl PseudoSolve {
    pub fn new(len: usize) -> Self {
        let m = len.saturating_sub(1);
        let mut diag = vec![0.0; m];
        let mut sub = vec![0.0; m.saturating_sub(1)];
        for i in 0..m {
            diag[i] = if i == 0 {
                2.0
            } else {
                2.0 - sub[i - 1] * sub[i - 1] * diag[i - 1]
            };
            if i + 1 < m {
                sub[i] = -1.0 / diag[i];
            }
        }
        Self { len, sub, diag }
    }

    /// Length of the input slice.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len.saturating_sub(1)];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.len {
            return Err(Error::DimMismatch {
                expected: self.len,
                got: v.len(),
            });
        }
        let m = self.diag.len();
        for i in 0..m {
            out[i] = v[i + 1] - v[i];
        }
        // L z = b
        for i in 1..m {
            out[i] -= self.sub[i - 1] * out[i - 1];
        }
        for i in 0..m {
            out[i] /= self.diag[i];
        }
        // Lᵀ x = z
        for i in (0..m.saturating_sub(1)).rev() {
            out[i] -= self.sub[i] * out[i + 1];
        }
        Ok(())
    }

    /// `‖[D Dᵀ]⁻¹ D v‖_∞`: the smallest fused-lasso parameter whose solution is
    /// constant.
    pub fn lambda_max(&self, v: &[f64], scratch: &mut Vec<f64>) -> Result<f64> {
        scratch.resize(self.len.saturating_sub(1), 0.0);
        self.apply_into(v, scratch)?;
        Ok(scratch.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
    }

    /// Dense (len-1) x len matrix, column by column.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let m = self.len.saturating_sub(1);
        let mut dense = vec![vec![0.0; self.len]; m];
        let mut e = vec![0.0; self.len];
        for j in 0..self.len {
            e.fill(0.0);
            e[j] = 1.0;
            let col = self.apply(&e).expect("length matches");
            for i in 0..m {
                dense[i][j] = col[i];
            }
        }
        dense
    }
}

/// Symmetric positive-definite banded matrix with half-bandwidth `p`, stored
/// as its lower band row by row, and its Cholesky factor.
#[derive(Debug, Clone)]
pub struct SymBand {
    n: usize,
    p: usize,
    // row i, entry (i, i - d) at i * (p + 1) + d
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            data: vec![0.0; n * (p + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds `v` to entry (i, j); requires `j <= i <= j + p`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i - j <= self.p);
        self.data[i * (self.p + 1) + (i - j)] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.p {
            0.0
        } else {
            self.data[i * (self.p + 1) + (i - j)]
        }
    }

    /// In-place Cholesky `A = L Lᵀ`.
    pub fn cholesky(self) -> Result<BandCholesky> {
        self.factorize(None)
    }

    /// Cholesky of a positive semidefinite matrix that skips every row whose
    /// pivot falls below `rel_tol` times its diagonal, i.e. rows linearly
    /// dependent on earlier ones. Solves then return 0 in those coordinates,
    /// which is a valid solution whenever the right-hand side is consistent.
    pub fn cholesky_dropping(self, rel_tol: f64) -> BandCholesky {
        self.factorize(Some(rel_tol))
            .expect("dropping factorization never fails")
    }

    fn factorize(mut self, drop_tol: Option<f64>) -> Result<BandCholesky> {
        let w = self.p + 1;
        let mut dropped = vec![false; if drop_tol.is_some() { self.n } else { 0 }];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.p);
            let diag = self.data[i * w];
            for j in lo..=i {
                if j < i && drop_tol.is_some() && dropped[j] {
                    self.data[i * w + (i - j)] = 0.0;
                    continue;
                }
                let mut sum = self.data[i * w + (i - j)];
                let klo = lo.max(j.saturating_sub(self.p));
                for k in klo..j {
                    sum -= self.data[i * w + (i - k)] * self.data[j * w + (j - k)];
                }
                if i == j {
                    if let Some(tol) = drop_tol {
                        if !(sum > tol * diag) || !sum.is_finite() {
                            dropped[i] = true;
                            for k in lo..i {
                                self.data[i * w + (i - k)] = 0.0;
                            }
                            self.data[i * w] = 1.0;
                            continue;
                        }
                    } else if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::SingularMatrix { row: i });
                    }
                    self.data[i * w] = sum.sqrt();
                } else {
                    self.data[i * w + (i - j)] = sum / self.data[j * w];
                }
            }
        }
        Ok(BandCholesky { inner: self, dropped })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    inner: SymBand,
    dropped: Vec<bool>,
}

impl BandCholesky {
    /// Rows skipped by [`SymBand::cholesky_dropping`].
    pub fn is_dropped(&self, i: usize) -> bool {
        self.dropped.get(i).copied().unwrap_or(false)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let SymBand { n, p, ref data } = self.inner;
        let w = p + 1;
        for i in 0..n {
            if self.is_dropped(i) {
                b[i] = 0.0;
                continue;
            }
            let mut acc = b[i];
            for k in i.saturating_sub(p)..i {
                acc -= data[i * w + (i - k)] * b[k];
            }
            b[i] = acc / data[i * w];
        }
        for i in (0..n).rev() {
            if self.is_dropped(i) {
                b[i] = 0.0;
                continue;
            }
            let mut acc = b[i];
            for k in (i + 1)..n.min(i + p + 1) {
                acc -= data[k * w + (k - i)] * b[k];
            }
            b[i] = acc / data[i * w];
        }
    }
}
