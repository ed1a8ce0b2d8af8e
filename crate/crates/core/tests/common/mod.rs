//! Dense reference solvers shared by the integration tests. Everything here is
//! deliberately written against plain dense matrices and exhaustive
//! enumeration so it shares no code path with the banded library routines.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proxtrend::epigraph::{Curvature, Monotone, ShapeSpec};
use rand::Rng;

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_grid<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut x = rng.random_range(-1.0..1.0);
    (0..n)
        .map(|_| {
            x += rng.random_range(0.3..1.5);
            x
        })
        .collect()
}

/// Dense `D(x, order)` from the defining recursion.
pub fn dense_diff(grid: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = grid.len();
    let mut d: Vec<Vec<f64>> = (0..n - 1)
        .map(|i| {
            let mut r = vec![0.0; n];
            r[i] = -1.0;
            r[i + 1] = 1.0;
            r
        })
        .collect();
    for k in 1..order {
        let rows = n - k;
        let scaled: Vec<Vec<f64>> = (0..rows)
            .map(|i| {
                let s = k as f64 / (grid[i + k] - grid[i]);
                d[i].iter().map(|v| v * s).collect()
            })
            .collect();
        d = (0..rows - 1)
            .map(|i| scaled[i + 1].iter().zip(&scaled[i]).map(|(a, b)| a - b).collect())
            .collect();
    }
    d
}

/// Lawson–Hanson non-negative least squares: `min ‖E w − f‖, w ≥ 0`.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let m = e.ncols();
    let mut w = DVector::<f64>::zeros(m);
    let mut passive = vec![false; m];
    let tol = 1e-12 * e.abs().max().max(1.0) * f.abs().max().max(1.0) * m as f64;
    for _outer in 0..(10 * m + 20) {
        let grad = e.transpose() * (f - e * &w);
        let cand = (0..m)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| grad[a].partial_cmp(&grad[b]).unwrap());
        match cand {
            Some(j) if grad[j] > tol => passive[j] = true,
            _ => break,
        }
        loop {
            let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
            let sub = DMatrix::from_fn(e.nrows(), idx.len(), |r, c| e[(r, idx[c])]);
            let sol = sub.clone().svd(true, true).solve(f, 1e-14).expect("svd solve");
            let mut z = DVector::<f64>::zeros(m);
            for (c, &j) in idx.iter().enumerate() {
                z[j] = sol[c];
            }
            if idx.iter().all(|&j| z[j] > 0.0) {
                w = z;
                break;
            }
            let mut step = f64::INFINITY;
            for &j in &idx {
                if z[j] <= 0.0 {
                    step = step.min(w[j] / (w[j] - z[j]));
                }
            }
            w += (z - &w) * step;
            for &j in &idx {
                if w[j] <= 1e-15 {
                    w[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    w
}

/// Euclidean projection of `z0` onto `{x : G x ≥ h}` through the
/// least-distance-programming reduction to NNLS.
pub fn project_polyhedron(g: &[Vec<f64>], h: &[f64], z0: &[f64]) -> Vec<f64> {
    let p = z0.len();
    let m = g.len();
    let f: Vec<f64> = (0..m).map(|i| h[i] - dot(&g[i], z0)).collect();
    if f.iter().all(|&v| v <= 0.0) {
        return z0.to_vec();
    }
    let e = DMatrix::from_fn(p + 1, m, |r, c| if r < p { g[c][r] } else { f[c] });
    let mut rhs = DVector::<f64>::zeros(p + 1);
    rhs[p] = 1.0;
    let w = nnls(&e, &rhs);
    let r = &e * &w - &rhs;
    assert!(r.norm() > 1e-12, "polyhedron is empty");
    (0..p).map(|j| z0[j] - r[j] / r[p]).collect()
}

fn sign_vectors(m: usize) -> Vec<Vec<f64>> {
    (0..1usize << m)
        .map(|mask| (0..m).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect())
        .collect()
}

/// `{(θ, a) : ‖M θ‖₁ ≤ a}` written as `2^rows` half-spaces `−sᵀMθ + a ≥ 0`.
pub fn l1_composite_rows(m: &[Vec<f64>], p: usize) -> Vec<Vec<f64>> {
    sign_vectors(m.len())
        .into_iter()
        .map(|s| {
            let mut row = vec![0.0; p + 1];
            for (si, mi) in s.iter().zip(m) {
                for j in 0..p {
                    row[j] -= si * mi[j];
                }
            }
            row[p] = 1.0;
            row
        })
        .collect()
}

pub fn identity(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| {
            let mut r = vec![0.0; p];
            r[i] = 1.0;
            r
        })
        .collect()
}

pub fn oracle_epi_l1(theta: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let p = theta.len();
    let rows = l1_composite_rows(&identity(p), p);
    let h = vec![0.0; rows.len()];
    split(project_polyhedron(&rows, &h, &concat(theta, alpha)))
}

pub fn oracle_epi_tv(theta: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let p = theta.len();
    let grid: Vec<f64> = (0..p).map(|i| i as f64).collect();
    let rows = l1_composite_rows(&dense_diff(&grid, 1), p);
    let h = vec![0.0; rows.len()];
    split(project_polyhedron(&rows, &h, &concat(theta, alpha)))
}

/// Half-space description of `{‖D(x,order) η‖₁ ≤ t} ∩ shape` in `(η, t)`.
pub fn shape_set_rows(grid: &[f64], order: usize, shape: &ShapeSpec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = grid.len();
    let mut rows = l1_composite_rows(&dense_diff(grid, order), n);
    let mut h = vec![0.0; rows.len()];
    let mut push = |op: Vec<Vec<f64>>, sign: f64, rows: &mut Vec<Vec<f64>>| {
        for r in op {
            let mut row: Vec<f64> = r.iter().map(|v| sign * v).collect();
            row.push(0.0);
            rows.push(row);
            h.push(0.0);
        }
    };
    match shape.monotone {
        Monotone::Increasing => push(dense_diff(grid, 1), 1.0, &mut rows),
        Monotone::Decreasing => push(dense_diff(grid, 1), -1.0, &mut rows),
        Monotone::None => {}
    }
    match shape.curvature {
        Curvature::Convex => push(dense_diff(grid, 2), 1.0, &mut rows),
        Curvature::Concave => push(dense_diff(grid, 2), -1.0, &mut rows),
        Curvature::None => {}
    }
    if let Some(b) = &shape.bounds {
        for i in 0..n {
            if b.lower[i].is_finite() {
                let mut row = vec![0.0; n + 1];
                row[i] = 1.0;
                rows.push(row);
                h.push(b.lower[i]);
            }
            if b.upper[i].is_finite() {
                let mut row = vec![0.0; n + 1];
                row[i] = -1.0;
                rows.push(row);
                h.push(-b.upper[i]);
            }
        }
    }
    (rows, h)
}

pub fn oracle_shape(beta: &[f64], alpha: f64, grid: &[f64], order: usize, shape: &ShapeSpec) -> (Vec<f64>, f64) {
    let (rows, h) = shape_set_rows(grid, order, shape);
    split(project_polyhedron(&rows, &h, &concat(beta, alpha)))
}

pub fn concat(v: &[f64], a: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    out.push(a);
    out
}

pub fn split(mut v: Vec<f64>) -> (Vec<f64>, f64) {
    let a = v.pop().unwrap();
    (v, a)
}

/// Largest violation of `G x ≥ h`.
pub fn violation(rows: &[Vec<f64>], h: &[f64], x: &[f64]) -> f64 {
    rows.iter().zip(h).map(|(r, hi)| hi - dot(r, x)).fold(0.0, f64::max)
}

fn fused_objective(y: &[f64], eta: &[f64], lam: f64) -> f64 {
    0.5 * y.iter().zip(eta).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        + lam * eta.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>()
}

/// Fused lasso by enumerating every sign pattern of `D(1)η` in {−1, 0, +1},
/// solving the face-restricted quadratic exactly and keeping the best
/// sign-consistent candidate.
pub fn oracle_fused_lasso(y: &[f64], lam: f64) -> Vec<f64> {
    let n = y.len();
    if n == 1 {
        return y.to_vec();
    }
    let m = n - 1;
    let grid: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let d = dense_diff(&grid, 1);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let total = 3usize.pow(m as u32);
    for code in 0..total {
        let mut c = code;
        let s: Vec<i32> = (0..m)
            .map(|_| {
                let v = (c % 3) as i32 - 1;
                c /= 3;
                v
            })
            .collect();
        // v = y − λ Dᵀ s, then project onto null(D_Z).
        let mut v = y.to_vec();
        for (i, &si) in s.iter().enumerate() {
            if si != 0 {
                for j in 0..n {
                    v[j] -= lam * si as f64 * d[i][j];
                }
            }
        }
        let zero: Vec<usize> = (0..m).filter(|&i| s[i] == 0).collect();
        let eta = if zero.is_empty() {
            v
        } else {
            let dz = DMatrix::from_fn(zero.len(), n, |r, c| d[zero[r]][c]);
            let vv = DVector::from_vec(v.clone());
            let gram = &dz * dz.transpose();
            let rhs = &dz * &vv;
            let mu = gram.lu().solve(&rhs).expect("full-rank rows");
            (vv - dz.transpose() * mu).iter().copied().collect()
        };
        let consistent = (0..m).all(|i| {
            let diff = eta[i + 1] - eta[i];
            match s[i] {
                0 => true,
                1 => diff >= -1e-12,
                _ => diff <= 1e-12,
            }
        });
        if consistent {
            let f = fused_objective(y, &eta, lam);
            if best.as_ref().is_none_or(|b| f < b.0) {
                best = Some((f, eta));
            }
        }
    }
    best.expect("some pattern is optimal").1
}

// ---------------------------------------------------------------------------
// Density helpers
// ---------------------------------------------------------------------------

use proxtrend::data::TrendData;
use proxtrend::posterior::{Model, ModelSpec, Posterior};
use proxtrend::sampler::LogDensity;

pub fn dense_l1_diff(grid: &[f64], order: usize, beta: &[f64]) -> f64 {
    dense_diff(grid, order).iter().map(|r| dot(r, beta).abs()).sum()
}

/// Central differences with step `1e-6·max(1, |q_i|)`.
pub fn fd_grad(post: &mut Posterior, q: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; q.len()];
    let mut scratch = vec![0.0; q.len()];
    let mut x = q.to_vec();
    for i in 0..q.len() {
        let h = 1e-6 * q[i].abs().max(1.0);
        x[i] = q[i] + h;
        let up = post.eval_into(&x, &mut scratch).unwrap();
        x[i] = q[i] - h;
        let down = post.eval_into(&x, &mut scratch).unwrap();
        x[i] = q[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖, 1)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    dist(a, b) / dot(a, a).sqrt().max(1.0)
}

/// Log density of the original model written out from its definition, for
/// states on the constraint set.
pub fn original_log_density(data: &TrendData, spec: &ModelSpec, beta: &[f64], ls: f64, la: f64) -> f64 {
    let q: f64 = (0..data.n())
        .map(|i| data.weights[i] as f64 * (data.ybar[i] - beta[i]).powi(2))
        .sum();
    let a = data.m as f64 / 2.0 + spec.s;
    let alpha = la.exp();
    let prior = match spec.model {
        Model::Pbtf => la - ((data.n() - spec.k) as f64 + spec.s2) * (1.0 + alpha).ln(),
        Model::Pbsrtf => la - spec.mu * alpha,
    };
    -a * ls - (q + data.sse + 2.0 * spec.r) / (2.0 * ls.exp()) + prior
}

/// Zero-mean Gaussian with dense precision matrix.
#[derive(Clone)]
pub struct Gaussian {
    pub prec: Vec<Vec<f64>>,
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.prec.len()
    }

    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> proxtrend::Result<f64> {
        let mut v = 0.0;
        for i in 0..q.len() {
            grad[i] = -dot(&self.prec[i], q);
            v += 0.5 * q[i] * grad[i];
        }
        Ok(v)
    }
}

/// `exp(-2(x²-1)²)`: two modes at ±1 separated by a barrier of 2 nats.
#[derive(Clone)]
pub struct DoubleWell;

impl LogDensity for DoubleWell {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> proxtrend::Result<f64> {
        let x = q[0];
        grad[0] = -8.0 * x * (x * x - 1.0);
        Ok(-2.0 * (x * x - 1.0).powi(2))
    }
}

pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
    let h = (b - a) / steps as f64;
    (0..=steps)
        .map(|i| {
            let w = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * f(a + h * i as f64)
        })
        .sum::<f64>()
        * h
        / 3.0
}

/// Quadrature CDF of [`DoubleWell`] on [-4, 4].
pub fn double_well_cdf(x: f64) -> f64 {
    let f = |t: f64| (-2.0 * (t * t - 1.0).powi(2)).exp();
    simpson(f, -4.0, x.clamp(-4.0, 4.0), 20_000) / simpson(f, -4.0, 4.0, 20_000)
}

/// KS distance between sorted draws and a continuous CDF, checked at every
/// `stride`-th order statistic on both sides of the jump.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64, stride: usize) -> f64 {
    let n = sorted.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate().step_by(stride) {
        let f = cdf(x);
        ks = ks.max((f - i as f64 / n).abs()).max((f - (i + 1) as f64 / n).abs());
    }
    ks
}
