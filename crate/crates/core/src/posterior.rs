//! Surrogate log posteriors and their gradients in the
//! `(primary, log σ², log α)` parameterization.
//!
//! PBTF samples `θ = T β` so that the composite ℓ1 constraint becomes a plain
//! ℓ1 ball (T1) or 1-D TV ball (T2) on a slice of θ. PBSRTF samples β
//! directly and projects onto the shape-restricted set.

use serde::{Deserialize, Serialize};

use crate::data::TrendData;
use crate::epigraph::{project_epi_into, EpiWork, Penalty, ShapeProjector, ShapeSpec};
use crate::error::{Error, Result};
use crate::linalg::{DiffOperator, ReparamMatrix, Scheme};
use crate::sampler::LogDensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Pbtf,
    Pbsrtf,
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pbtf" => Ok(Model::Pbtf),
            "pbsrtf" => Ok(Model::Pbsrtf),
            _ => Err(Error::InvalidConfig(format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reparam {
    T1,
    T2,
    None,
}

/// Largest n each order can be fitted at without thinning.
pub fn order_limit(k: usize) -> Option<usize> {
    match k {
        1 => Some(1000),
        2 => Some(200),
        _ => None,
    }
}

/// Reparameterization for order `k` on `n` locations: T1 for k=1 up to 200
/// points, T2 for k=1 up to 1000 and for k=2 up to 200.
pub fn choose_reparam(k: usize, n: usize) -> Result<Reparam> {
    let limit =
        order_limit(k).ok_or_else(|| Error::InvalidConfig(format!("order k={k} is not supported; use k=1 or k=2")))?;
    if n > limit {
        return Err(Error::ThinningRequired { order: k, n, limit });
    }
    Ok(if k == 1 && n <= 200 { Reparam::T1 } else { Reparam::T2 })
}

/// Hyperparameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub k: usize,
    pub model: Model,
    pub reparam: Reparam,
    /// Moreau–Yosida parameter.
    pub lambda: f64,
    /// Inverse-Gamma shape and rate for σ².
    pub s: f64,
    pub r: f64,
    /// Second beta-prime shape (PBTF).
    pub s2: f64,
    /// Gamma rate (PBSRTF).
    pub mu: f64,
    pub shape: Option<ShapeSpec>,
}

pub const DEFAULT_SIGMA_SHAPE: f64 = 1e-3;
pub const DEFAULT_SIGMA_RATE: f64 = 1e-3;
pub const DEFAULT_MU: f64 = 3.0;

pub fn default_lambda_pbtf(data: &TrendData) -> f64 {
    let n = data.n() as f64;
    (1e-4 * data.var_y()).min(1.0 / (n * n))
}

pub fn default_lambda_pbsrtf(data: &TrendData) -> f64 {
    1e-4 * data.var_y()
}

impl ModelSpec {
    /// PBTF with the default λ, s2 = √n and the reparameterization rule.
    pub fn pbtf(data: &TrendData, k: usize) -> Result<Self> {
        let n = data.n();
        Ok(Self {
            k,
            model: Model::Pbtf,
            reparam: choose_reparam(k, n)?,
            lambda: default_lambda_pbtf(data),
            s: DEFAULT_SIGMA_SHAPE,
            r: DEFAULT_SIGMA_RATE,
            s2: (n as f64).sqrt(),
            mu: DEFAULT_MU,
            shape: None,
        })
    }

    /// PBSRTF with the default λ and μ. `data` is expected to be on the
    /// sampling scale already (see [`crate::pipeline`]).
    pub fn pbsrtf(data: &TrendData, k: usize, shape: ShapeSpec) -> Result<Self> {
        if order_limit(k).is_none() {
            return Err(Error::InvalidConfig(format!(
                "order k={k} is not supported; use k=1 or k=2"
            )));
        }
        Ok(Self {
            k,
            model: Model::Pbsrtf,
            reparam: Reparam::None,
            lambda: default_lambda_pbsrtf(data),
            s: DEFAULT_SIGMA_SHAPE,
            r: DEFAULT_SIGMA_RATE,
            s2: (data.n() as f64).sqrt(),
            mu: DEFAULT_MU,
            shape: Some(shape),
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if order_limit(self.k).is_none() {
            return Err(Error::InvalidConfig(format!("order k={} is not supported", self.k)));
        }
        if n < self.k + 2 {
            return Err(Error::OrderTooHigh {
                order: self.k + 1,
                n,
                needed: self.k + 2,
            });
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidLambda(self.lambda));
        }
        for (name, v) in [("s", self.s), ("r", self.r)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        match self.model {
            Model::Pbtf => {
                if self.reparam == Reparam::None {
                    return Err(Error::InvalidConfig("PBTF needs reparameterization T1 or T2".into()));
                }
                if !(self.s2 > 0.0) || !self.s2.is_finite() {
                    return Err(Error::InvalidConfig(format!("s2 must be positive, got {}", self.s2)));
                }
            }
            Model::Pbsrtf => {
                if self.shape.is_none() {
                    return Err(Error::InvalidConfig("PBSRTF needs a shape restriction".into()));
                }
                if !(self.mu > 0.0) || !self.mu.is_finite() {
                    return Err(Error::InvalidConfig(format!("mu must be positive, got {}", self.mu)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    /// θ for PBTF, β for PBSRTF.
    pub primary: Vec<f64>,
    pub log_sigma2: f64,
    pub log_alpha: f64,
}

impl ParamState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.primary.clone();
        v.push(self.log_sigma2);
        v.push(self.log_alpha);
        v
    }

    pub fn from_slice(q: &[f64]) -> Self {
        let n = q.len() - 2;
        Self {
            primary: q[..n].to_vec(),
            log_sigma2: q[n],
            log_alpha: q[n + 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDensityGrad {
    pub value: f64,
    pub grad_primary: Vec<f64>,
    pub grad_log_sigma2: f64,
    pub grad_log_alpha: f64,
}

enum Geometry {
    Pbtf {
        t: ReparamMatrix,
        start: usize,
        work: EpiWork,
    },
    Pbsrtf {
        projector: ShapeProjector,
    },
}

/// Reusable density evaluator. Holds the reparameterization or the
/// warm-started projector, so one instance should serve one chain.
pub struct Posterior {
    spec: ModelSpec,
    grid: Vec<f64>,
    ybar: Vec<f64>,
    w: Vec<f64>,
    sse: f64,
    m: f64,
    geometry: Geometry,
    beta: Vec<f64>,
    fit: Vec<f64>,
    proj: Vec<f64>,
}

impl Clone for Posterior {
    fn clone(&self) -> Self {
        let geometry = match &self.geometry {
            Geometry::Pbtf { t, start, .. } => Geometry::Pbtf {
                t: t.clone(),
                start: *start,
                work: EpiWork::default(),
            },
            Geometry::Pbsrtf { projector } => Geometry::Pbsrtf {
                projector: projector.clone(),
            },
        };
        Self {
            spec: self.spec.clone(),
            grid: self.grid.clone(),
            ybar: self.ybar.clone(),
            w: self.w.clone(),
            sse: self.sse,
            m: self.m,
            geometry,
            beta: self.beta.clone(),
            fit: self.fit.clone(),
            proj: self.proj.clone(),
        }
    }
}

/// Pieces of the density that do not depend on the constraint.
struct Common {
    value: f64,
    grad_log_sigma2: f64,
    inv_sigma2: f64,
}

impl Posterior {
    pub fn new(data: &TrendData, spec: &ModelSpec) -> Result<Self> {
        data.validate()?;
        let n = data.n();
        spec.validate(n)?;
        let geometry = match spec.model {
            Model::Pbtf => {
                let scheme = match spec.reparam {
                    Reparam::T1 => Scheme::T1,
                    Reparam::T2 => Scheme::T2,
                    Reparam::None => unreachable!("validated"),
                };
                let t = ReparamMatrix::new(&data.grid, spec.k, scheme)?;
                let start = t.constrained_start();
                Geometry::Pbtf {
                    t,
                    start,
                    work: EpiWork::default(),
                }
            }
            Model::Pbsrtf => {
                let op = DiffOperator::new(&data.grid, spec.k + 1)?;
                let shape = spec.shape.as_ref().expect("validated");
                Geometry::Pbsrtf {
                    projector: ShapeProjector::new(&op, shape)?,
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            grid: data.grid.clone(),
            ybar: data.ybar.clone(),
            w: data.weights.iter().map(|&w| w as f64).collect(),
            sse: data.sse,
            m: data.m as f64,
            geometry,
            beta: vec![0.0; n],
            fit: vec![0.0; n],
            proj: vec![0.0; n],
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    /// Maps a primary vector to β (identity for PBSRTF).
    pub fn to_beta(&self, primary: &[f64]) -> Result<Vec<f64>> {
        match &self.geometry {
            Geometry::Pbtf { t, .. } => t.forward_solve(primary),
            Geometry::Pbsrtf { .. } => Ok(primary.to_vec()),
        }
    }

    pub fn to_beta_in_place(&self, primary: &mut [f64]) -> Result<()> {
        match &self.geometry {
            Geometry::Pbtf { t, .. } => t.forward_solve_in_place(primary),
            Geometry::Pbsrtf { .. } => Ok(()),
        }
    }

    /// Likelihood and σ² prior; leaves `W(ȳ − β)` in `self.fit`.
    fn common(&mut self, log_sigma2: f64) -> Common {
        let mut q = 0.0;
        for i in 0..self.beta.len() {
            let r = self.ybar[i] - self.beta[i];
            q += self.w[i] * r * r;
            self.fit[i] = self.w[i] * r;
        }
        let a = self.m / 2.0 + self.spec.s;
        let inv = (-log_sigma2).exp();
        let data_term = (q + self.sse + 2.0 * self.spec.r) * 0.5 * inv;
        Common {
            value: -a * log_sigma2 - data_term,
            grad_log_sigma2: -a + data_term,
            inv_sigma2: inv,
        }
    }

    /// Value and gradient at the flat state `q = [primary, log σ², log α]`.
    pub fn eval_into(&mut self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        let n = self.n();
        if q.len() != n + 2 || grad.len() != n + 2 {
            return Err(Error::DimMismatch {
                expected: n + 2,
                got: q.len().min(grad.len()),
            });
        }
        let non_finite = |value: f64| Error::NonFiniteDensity {
            value,
            state: q.to_vec(),
        };
        if q.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(f64::NAN));
        }
        let (log_sigma2, log_alpha) = (q[n], q[n + 1]);
        let alpha = log_alpha.exp();
        let lambda = self.spec.lambda;

        self.beta.copy_from_slice(&q[..n]);
        self.refresh_beta()?;
        let common = self.common(log_sigma2);

        let (dist_sq, alpha_gap, prior, grad_prior) = match &mut self.geometry {
            Geometry::Pbtf { t, start, work } => {
                // grad_θ of the data term: T⁻ᵀ W (ȳ − β) / σ².
                grad[..n].copy_from_slice(&self.fit);
                t.transpose_solve_in_place(&mut grad[..n])?;
                for g in &mut grad[..n] {
                    *g *= common.inv_sigma2;
                }
                let slice = &q[*start..n];
                let out = &mut self.proj[..n - *start];
                let penalty = match t.pseudosolve() {
                    Some(ps) => Penalty::Tv(ps),
                    None => Penalty::L1,
                };
                let res = project_epi_into(slice, alpha, penalty, out, work).map_err(|e| attach_state(e, q))?;
                let mut d2 = 0.0;
                for (j, (&th, &p)) in slice.iter().zip(out.iter()).enumerate() {
                    let diff = th - p;
                    d2 += diff * diff;
                    grad[*start + j] -= diff / lambda;
                }
                let c = (n - self.spec.k) as f64 + self.spec.s2;
                let prior = log_alpha - c * alpha.ln_1p();
                let grad_prior = 1.0 - c * alpha / (1.0 + alpha);
                (d2, alpha - res.alpha, prior, grad_prior)
            }
            Geometry::Pbsrtf { projector } => {
                for i in 0..n {
                    grad[i] = self.fit[i] * common.inv_sigma2;
                }
                let (a_proj, _) = projector
                    .project_into(&q[..n], alpha, &mut self.proj)
                    .map_err(|e| attach_state(e, q))?;
                let mut d2 = 0.0;
                for i in 0..n {
                    let diff = q[i] - self.proj[i];
                    d2 += diff * diff;
                    grad[i] -= diff / lambda;
                }
                let prior = log_alpha - self.spec.mu * alpha;
                let grad_prior = 1.0 - self.spec.mu * alpha;
                (d2, alpha - a_proj, prior, grad_prior)
            }
        };
        let dist_sq = dist_sq + alpha_gap * alpha_gap;
        let value = common.value - dist_sq / (2.0 * lambda) + prior;
        grad[n] = common.grad_log_sigma2;
        grad[n + 1] = -(alpha / lambda) * alpha_gap + grad_prior;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(value));
        }
        Ok(value)
    }

    fn refresh_beta(&mut self) -> Result<()> {
        match &self.geometry {
            Geometry::Pbtf { t, .. } => t.forward_solve_in_place(&mut self.beta),
            Geometry::Pbsrtf { .. } => Ok(()),
        }
    }

    pub fn eval(&mut self, state: &ParamState) -> Result<LogDensityGrad> {
        let q = state.to_vec();
        let mut grad = vec![0.0; q.len()];
        let value = self.eval_into(&q, &mut grad)?;
        let n = self.n();
        Ok(LogDensityGrad {
            value,
            grad_primary: grad[..n].to_vec(),
            grad_log_sigma2: grad[n],
            grad_log_alpha: grad[n + 1],
        })
    }

    /// Squared distance from the state to the constraint set, the quantity the
    /// envelope penalizes.
    pub fn distance_sq(&mut self, state: &ParamState) -> Result<f64> {
        let n = self.n();
        let alpha = state.log_alpha.exp();
        match &mut self.geometry {
            Geometry::Pbtf { t, start, work } => {
                let slice = &state.primary[*start..];
                let out = &mut self.proj[..n - *start];
                let penalty = match t.pseudosolve() {
                    Some(ps) => Penalty::Tv(ps),
                    None => Penalty::L1,
                };
                let res = project_epi_into(slice, alpha, penalty, out, work)?;
                Ok(slice.iter().zip(out.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                    + (alpha - res.alpha).powi(2))
            }
            Geometry::Pbsrtf { projector } => {
                let p = projector.project(&state.primary, alpha)?;
                Ok(p.distance_sq)
            }
        }
    }

    /// Unnormalized log density of the original, non-smooth model: the
    /// surrogate with the envelope replaced by the set indicator. Returns −∞
    /// outside the set.
    pub fn log_density_exact(&mut self, state: &ParamState) -> Result<f64> {
        let d2 = self.distance_sq(state)?;
        let scale = 1.0 + state.primary.iter().map(|v| v * v).sum::<f64>() + state.log_alpha.exp().powi(2);
        // Projection of a point on the set returns it up to rounding.
        if d2 > 1e-24 * scale {
            return Ok(f64::NEG_INFINITY);
        }
        let v = self.eval(state)?.value;
        Ok(v)
    }
}

fn attach_state(e: Error, q: &[f64]) -> Error {
    match e {
        Error::NonFiniteDensity { value, .. } => Error::NonFiniteDensity {
            value,
            state: q.to_vec(),
        },
        other => other,
    }
}

impl LogDensity for Posterior {
    fn dim(&self) -> usize {
        self.n() + 2
    }

    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.eval_into(q, grad)
    }
}

fn check_model(spec: &ModelSpec, want: Model) -> Result<()> {
    if spec.model != want {
        return Err(Error::InvalidConfig(format!(
            "expected a {want:?} model spec, got {:?}",
            spec.model
        )));
    }
    Ok(())
}

pub fn logpdf_grad_pbtf(state: &ParamState, data: &TrendData, spec: &ModelSpec) -> Result<LogDensityGrad> {
    check_model(spec, Model::Pbtf)?;
    Posterior::new(data, spec)?.eval(state)
}

pub fn logpdf_grad_pbsrtf(state: &ParamState, data: &TrendData, spec: &ModelSpec) -> Result<LogDensityGrad> {
    check_model(spec, Model::Pbsrtf)?;
    Posterior::new(data, spec)?.eval(state)
}

/// Weighted least-squares fit of a degree-`k` polynomial, evaluated on the
/// grid. It lies in the null space of `D(x, k+1)`.
pub fn polynomial_fit(data: &TrendData, k: usize) -> Vec<f64> {
    let n = data.n();
    let p = (k + 1).min(n);
    let (lo, hi) = (data.grid[0], data.grid[n - 1]);
    let mid = 0.5 * (lo + hi);
    let half = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    let basis = |x: f64| -> Vec<f64> {
        let u = (x - mid) / half;
        (0..p).map(|j| u.powi(j as i32)).collect()
    };
    // Normal equations; p ≤ 3 and the basis is scaled to [-1, 1].
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..n {
        let b = basis(data.grid[i]);
        let w = data.weights[i] as f64;
        for r in 0..p {
            for c in 0..p {
                a[r][c] += w * b[r] * b[c];
            }
            a[r][p] += w * b[r] * data.ybar[i];
        }
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap_or(col);
        a.swap(col, piv);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for r in 0..p {
            if r != col {
                let f = a[r][col] / d;
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..p)
        .map(|j| if a[j][j].abs() < 1e-300 { 0.0 } else { a[j][p] / a[j][j] })
        .collect();
    data.grid
        .iter()
        .map(|&x| basis(x).iter().zip(&coef).map(|(b, c)| b * c).sum())
        .collect()
}

/// Residual variance of `beta` including replicate spread, never below
/// `1e-6·Var(y)`.
pub fn residual_variance(data: &TrendData, beta: &[f64]) -> f64 {
    let rss: f64 = (0..data.n())
        .map(|i| data.weights[i] as f64 * (data.ybar[i] - beta[i]).powi(2))
        .sum();
    let v = ((rss + data.sse) / data.m as f64).max(1e-6 * data.var_y());
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

/// Least-squares start: β₀ is the degree-k polynomial fit (projected onto
/// the shape cone for PBSRTF when needed), σ²₀ its residual variance and α₀
/// one above ‖D(x,k+1)β₀‖₁.
///
/// Starting at the interpolating fit ȳ instead puts the chain on a spurious
/// local maximum where σ² collapses toward zero.
pub fn initialize(data: &TrendData, spec: &ModelSpec) -> Result<ParamState> {
    data.validate()?;
    spec.validate(data.n())?;
    let mut beta = polynomial_fit(data, spec.k);
    if let (Model::Pbsrtf, Some(shape)) = (spec.model, &spec.shape) {
        let mut cone = ShapeProjector::shape_only(&data.grid, shape)?;
        if !cone.is_feasible(&beta, 0.0, 0.0) {
            beta = cone.project(&beta, 0.0)?.point;
        }
    }
    let op = DiffOperator::new(&data.grid, spec.k + 1)?;
    let alpha = op.l1_of(&beta)? + 1.0;
    let sigma2 = residual_variance(data, &beta);
    let primary = match spec.model {
        Model::Pbtf => {
            let scheme = if spec.reparam == Reparam::T2 {
                Scheme::T2
            } else {
                Scheme::T1
            };
            ReparamMatrix::new(&data.grid, spec.k, scheme)?.apply(&beta)?
        }
        Model::Pbsrtf => beta,
    };
    Ok(ParamState {
        primary,
        log_sigma2: sigma2.ln(),
        log_alpha: alpha.ln(),
    })
}
