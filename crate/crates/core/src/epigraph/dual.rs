//! Dual projected Newton for the shape-restricted set.
//!
//! With `τ ≥ 0` the multiplier of the ℓ1 constraint, the projection of `β`
//! solves `min ½‖η − β‖² + τ‖Dη‖₁` over `Cη ≥ b`, whose dual is the box QP
//!
//! ```text
//! min ½‖β − Mᵀy‖² − cᵀy,   |y_i| ≤ τν_i on D rows,   y_j ≥ 0 on C rows,
//! ```
//!
//! with `M` the unit-normalised rows (`D_i/ν_i` and `−C_j/ν_j`) and
//! `η = β − Mᵀy`. The box QP is solved by projected Newton on the free rows.
//! The outer loop finds the root of `f(τ) = ‖Dη(τ)‖₁ − α − τ`, which is
//! strictly decreasing and affine on each face, by Newton steps kept inside
//! a bracket. Everything is warm-started from the previous call, and the
//! banded factorisation is reused while the free set is unchanged.

use super::Row;
use crate::linalg::{BandCholesky, SymBand};

const MAX_INNER: usize = 200;
const MAX_OUTER: usize = 100;
const PIVOT_DROP: f64 = 1e-10;
const EPS_BINDING: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    L1,
    Ineq,
    /// An ℓ1 row merged with a homogeneous inequality on the same row;
    /// `+1` when the inequality lifts the upper bound, `−1` the lower.
    Merged(f64),
}

#[derive(Debug, Clone)]
pub(super) struct DualNewton {
    rows: Vec<Row>,
    kind: Vec<Kind>,
    nu: Vec<f64>,
    c: Vec<f64>,
    has_l1: bool,
    y: Vec<f64>,
    tau: f64,
    /// `dy/dτ` on the last face.
    dy: Vec<f64>,
    free: Vec<bool>,
    chol: Option<(Vec<usize>, BandCholesky)>,
    eta: Vec<f64>,
    eta_trial: Vec<f64>,
    g: Vec<f64>,
    d: Vec<f64>,
    y_trial: Vec<f64>,
    pub steps: usize,
}

impl DualNewton {
    pub(super) fn new(n: usize, d_rows: &[Row], c_rows: &[Row], b: &[f64]) -> Self {
        let mut all: Vec<(Row, Kind, f64, f64)> = Vec::with_capacity(d_rows.len() + c_rows.len());
        for r in d_rows {
            let nu = r.norm_sq().sqrt();
            all.push((scaled(r, 1.0 / nu), Kind::L1, nu, 0.0));
        }
        for (r, &bj) in c_rows.iter().zip(b) {
            let nu = r.norm_sq().sqrt();
            all.push((scaled(r, -1.0 / nu), Kind::Ineq, nu, bj / nu));
        }
        all.sort_by_key(|x| x.0.start);
        // A homogeneous inequality on an ℓ1 row makes the two dual variables
        // enter only through their sum, so they are merged into one.
        let mut merged: Vec<(Row, Kind, f64, f64)> = Vec::with_capacity(all.len());
        for x in all {
            if x.1 == Kind::Ineq && x.3 == 0.0 {
                let hit = merged
                    .iter_mut()
                    .rev()
                    .take_while(|p| p.0.start == x.0.start)
                    .find_map(|p| {
                        let s = same_direction(&p.0, &x.0)?;
                        (p.1 == Kind::L1).then_some((p, s))
                    });
                if let Some((p, s)) = hit {
                    p.1 = Kind::Merged(s);
                    continue;
                }
            }
            merged.push(x);
        }
        let all = merged;
        let m = all.len();
        Self {
            rows: all.iter().map(|x| x.0).collect(),
            kind: all.iter().map(|x| x.1).collect(),
            nu: all.iter().map(|x| x.2).collect(),
            c: all.iter().map(|x| x.3).collect(),
            has_l1: !d_rows.is_empty(),
            y: vec![0.0; m],
            tau: 0.0,
            dy: vec![0.0; m],
            free: Vec::new(),
            chol: None,
            eta: vec![0.0; n],
            eta_trial: vec![0.0; n],
            g: vec![0.0; m],
            d: vec![0.0; m],
            y_trial: vec![0.0; m],
            steps: 0,
        }
    }

    pub(super) fn reset(&mut self) {
        self.y.fill(0.0);
        self.tau = 0.0;
    }

    #[inline]
    fn bounds(&self, r: usize, tau: f64) -> (f64, f64) {
        match self.kind[r] {
            Kind::L1 => (-tau * self.nu[r], tau * self.nu[r]),
            Kind::Ineq => (0.0, f64::INFINITY),
            Kind::Merged(s) if s > 0.0 => (-tau * self.nu[r], f64::INFINITY),
            Kind::Merged(_) => (f64::NEG_INFINITY, tau * self.nu[r]),
        }
    }

    fn is_l1(&self, r: usize) -> bool {
        matches!(self.kind[r], Kind::L1 | Kind::Merged(_))
    }

    fn primal(rows: &[Row], beta: &[f64], y: &[f64], eta: &mut [f64]) {
        eta.copy_from_slice(beta);
        for (r, &v) in rows.iter().zip(y) {
            if v != 0.0 {
                r.axpy(-v, eta);
            }
        }
    }

    fn l1(&self, eta: &[f64]) -> f64 {
        (0..self.rows.len())
            .filter(|&r| self.is_l1(r))
            .map(|r| self.nu[r] * self.rows[r].dot(eta).abs())
            .sum()
    }

    /// Refactors `M_F M_Fᵀ` unless the cached factor already covers `self.free`.
    fn factor(&mut self) {
        let idx: Vec<usize> = (0..self.rows.len()).filter(|&r| self.free[r]).collect();
        if let Some((cached, _)) = &self.chol {
            if *cached == idx {
                return;
            }
        }
        let nf = idx.len();
        let mut bw = 0;
        for a in 0..nf {
            let end = self.rows[idx[a]].end();
            let mut q = a + 1;
            while q < nf && self.rows[idx[q]].start <= end {
                q += 1;
            }
            bw = bw.max(q - 1 - a);
        }
        let mut h = SymBand::zeros(nf, bw);
        for a in 0..nf {
            let ra = &self.rows[idx[a]];
            h.add(a, a, ra.norm_sq());
            for q in a + 1..(a + bw + 1).min(nf) {
                let v = ra.dot_row(&self.rows[idx[q]]);
                if v != 0.0 {
                    h.add(q, a, v);
                }
            }
        }
        self.chol = Some((idx, h.cholesky_dropping(PIVOT_DROP)));
    }

    /// Solves `M_F M_Fᵀ z = rhs` on the free rows, in place over the free entries of `v`.
    fn solve_free(&self, v: &mut [f64]) {
        let (idx, chol) = self.chol.as_ref().expect("factored");
        let mut z: Vec<f64> = idx.iter().map(|&r| v[r]).collect();
        chol.solve_in_place(&mut z);
        for (&r, zi) in idx.iter().zip(z) {
            v[r] = zi;
        }
    }

    /// Box QP at fixed `τ`; leaves `η` in `self.eta`. Returns false on stall.
    fn inner(&mut self, beta: &[f64], tau: f64, tol: f64) -> bool {
        let m = self.rows.len();
        for r in 0..m {
            let (lo, hi) = self.bounds(r, tau);
            self.y[r] = self.y[r].clamp(lo, hi);
        }
        self.free.resize(m, true);
        for _ in 0..MAX_INNER {
            Self::primal(&self.rows, beta, &self.y, &mut self.eta);
            let mut pg: f64 = 0.0;
            let mut pg_sq = 0.0;
            for r in 0..m {
                let g = -self.rows[r].dot(&self.eta) - self.c[r];
                self.g[r] = g;
                let (lo, hi) = self.bounds(r, tau);
                let p = (self.y[r] - (self.y[r] - g).clamp(lo, hi)).abs();
                pg = pg.max(p);
                pg_sq += p * p;
            }
            // Rows within `eps` of a bound they are pushed against are held
            // there, which keeps the Newton step from bending on the box.
            let eps = pg_sq.sqrt().min(EPS_BINDING);
            for r in 0..m {
                let (lo, hi) = self.bounds(r, tau);
                let g = self.g[r];
                self.free[r] = !((self.y[r] <= lo + eps && g > 0.0) || (self.y[r] >= hi - eps && g < 0.0));
            }
            if pg <= tol {
                return true;
            }
            self.steps += 1;
            self.factor();
            for r in 0..m {
                self.d[r] = if self.free[r] { -self.g[r] } else { 0.0 };
            }
            let mut d = std::mem::take(&mut self.d);
            self.solve_free(&mut d);
            // Held rows step onto the bound they are pushed against.
            for r in 0..m {
                if !self.free[r] {
                    let (lo, hi) = self.bounds(r, tau);
                    d[r] = if self.g[r] > 0.0 {
                        lo - self.y[r]
                    } else {
                        hi - self.y[r]
                    };
                }
            }
            self.d = d;
            if !self.line_search(tau, false) && !self.line_search(tau, true) {
                return false;
            }
        }
        false
    }

    /// Armijo search along the projected arc of `self.d`, or of `−g` when
    /// `gradient` is set. The decrease `gᵀΔ + ½‖MᵀΔ‖²` is formed directly so
    /// it stays accurate when the steps are tiny.
    fn line_search(&mut self, tau: f64, gradient: bool) -> bool {
        let m = self.rows.len();
        let mut s = 1.0;
        for _ in 0..60 {
            let mut pred = 0.0;
            self.eta_trial.fill(0.0);
            for r in 0..m {
                let step = if gradient { -self.g[r] } else { self.d[r] };
                let (lo, hi) = self.bounds(r, tau);
                let v = (self.y[r] + s * step).clamp(lo, hi);
                self.y_trial[r] = v;
                let delta = v - self.y[r];
                if delta != 0.0 {
                    pred += self.g[r] * delta;
                    self.rows[r].axpy(delta, &mut self.eta_trial);
                }
            }
            if pred < 0.0 {
                let curv = 0.5 * self.eta_trial.iter().map(|x| x * x).sum::<f64>();
                if pred + curv <= 1e-4 * pred {
                    std::mem::swap(&mut self.y, &mut self.y_trial);
                    return true;
                }
            } else if !gradient {
                return false;
            }
            s *= 0.5;
        }
        false
    }

    /// Slope of `f` on the current face, `−1 − ‖(I − P_F) w‖²`; also fills `dy`.
    fn slope(&mut self) -> f64 {
        let n = self.eta.len();
        let m = self.rows.len();
        let mut w = vec![0.0; n];
        for r in 0..m {
            self.dy[r] = 0.0;
            if self.is_l1(r) && !self.free[r] {
                let s = if self.g[r] != 0.0 {
                    -self.g[r].signum()
                } else {
                    self.y[r].signum()
                };
                self.dy[r] = self.nu[r] * s;
                self.rows[r].axpy(self.nu[r] * s, &mut w);
            }
        }
        self.factor();
        let mut z: Vec<f64> = (0..m)
            .map(|r| if self.free[r] { self.rows[r].dot(&w) } else { 0.0 })
            .collect();
        self.solve_free(&mut z);
        for r in 0..m {
            if self.free[r] {
                self.dy[r] = -z[r];
                if z[r] != 0.0 {
                    self.rows[r].axpy(-z[r], &mut w);
                }
            }
        }
        -1.0 - w.iter().map(|x| x * x).sum::<f64>()
    }

    /// Projects `(beta, alpha)`; returns the projected `t`, or `None` when the
    /// iteration stalls. Without ℓ1 rows `alpha` passes through.
    pub(super) fn project(&mut self, beta: &[f64], alpha: f64, out: &mut [f64]) -> Option<f64> {
        let scale = beta.iter().fold(alpha.abs(), |m, x| m.max(x.abs())).max(1.0);
        let tol = 1e-12 * scale;
        if !self.has_l1 {
            if !self.inner(beta, 0.0, tol) {
                return None;
            }
            out.copy_from_slice(&self.eta);
            return Some(alpha);
        }
        let tol_f = 1e-10 * scale;
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        let mut zero_checked = false;
        let mut tau = self.tau.max(0.0);
        for _ in 0..MAX_OUTER {
            if !self.inner(beta, tau, tol) {
                return None;
            }
            let f = self.l1(&self.eta) - alpha - tau;
            if tau == 0.0 {
                zero_checked = true;
                if f <= tol_f {
                    return Some(self.finish(alpha, 0.0, out));
                }
            }
            if f.abs() <= tol_f {
                return Some(self.finish(alpha, tau, out));
            }
            if f > 0.0 {
                lo = lo.max(tau);
            } else {
                hi = hi.min(tau);
            }
            let mut next = tau - f / self.slope();
            if next <= lo {
                next = if !zero_checked && lo == 0.0 {
                    0.0
                } else {
                    0.5 * (lo + hi)
                };
            } else if next >= hi {
                next = 0.5 * (lo + hi);
            }
            if !next.is_finite() {
                return None;
            }
            for (y, dy) in self.y.iter_mut().zip(&self.dy) {
                *y += (next - tau) * dy;
            }
            if hi.is_finite() && hi - lo <= 1e-15 * hi.max(1.0) {
                return Some(self.finish(alpha, tau, out));
            }
            tau = next;
        }
        None
    }

    fn finish(&mut self, alpha: f64, tau: f64, out: &mut [f64]) -> f64 {
        self.tau = tau;
        out.copy_from_slice(&self.eta);
        (alpha + tau).max(self.l1(&self.eta))
    }
}

/// `Some(±1)` when `b = ±a` for unit rows `a`, `b` on the same support.
fn same_direction(a: &Row, b: &Row) -> Option<f64> {
    if a.start != b.start || a.len != b.len {
        return None;
    }
    let close = |s: f64| (0..a.len).all(|i| (a.c[i] - s * b.c[i]).abs() <= 1e-12);
    if close(1.0) {
        Some(1.0)
    } else if close(-1.0) {
        Some(-1.0)
    } else {
        None
    }
}

fn scaled(r: &Row, s: f64) -> Row {
    let mut out = *r;
    for v in &mut out.c[..out.len] {
        *v *= s;
    }
    out
}
