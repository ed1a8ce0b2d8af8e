//! Euclidean projections onto epigraph sets.
//!
//! * `E1 = {(θ, a) : ‖θ‖₁ ≤ a}` and `E2 = {(θ, a) : ‖D(1)θ‖₁ ≤ a}` are handled
//!   by a safeguarded bisection on `F(λ) = g(prox_g^λ(θ)) − λ − α`.
//! * The shape-restricted set `S = {(η, t) : ‖Dη‖₁ ≤ t, Cη ≥ b}` is handled by
//!   [`ShapeProjector`]: a projected Newton method on the dual box QP, nested
//!   in a root search on the ℓ1 multiplier. An ADMM solver whose iterates are
//!   polished on the identified active face and accepted only with a duality
//!   certificate backs it up.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, DiffOperator, PseudoSolve, SymBand};
use crate::prox::{fused_lasso_into, soft_threshold_into, total_variation, FusedLassoWork};

mod dual;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpigraphKind {
    L1,
    TV1D,
    ShapeRestricted,
}

/// Which set a posterior projects onto and which slice of the primary vector
/// the constraint reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpigraphSpec {
    pub kind: EpigraphKind,
    pub active_slice: Range<usize>,
    pub shape: Option<ShapeSpec>,
}

impl EpigraphSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.active_slice.is_empty() || self.active_slice.end > n {
            return Err(Error::InvalidConfig(format!(
                "active slice {:?} does not fit a vector of length {n}",
                self.active_slice
            )));
        }
        if self.kind == EpigraphKind::ShapeRestricted && self.shape.is_none() {
            return Err(Error::InvalidConfig("shape-restricted set needs a shape".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotone {
    #[default]
    None,
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    #[default]
    None,
    Convex,
    Concave,
}

/// Per-coordinate bounds on β; infinite entries are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(default)]
    pub monotone: Monotone,
    #[serde(default)]
    pub curvature: Curvature,
    #[serde(default)]
    pub bounds: Option<Bounds>,
}

impl ShapeSpec {
    pub fn new(monotone: Monotone, curvature: Curvature) -> Self {
        Self {
            monotone,
            curvature,
            bounds: None,
        }
    }

    /// Parses `inc`, `dec`, `convex`, `concave` and the hyphenated pairs such
    /// as `inc-convex`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut spec = Self::default();
        for part in s.split('-') {
            match part.trim().to_ascii_lowercase().as_str() {
                "inc" | "increasing" if spec.monotone == Monotone::None => spec.monotone = Monotone::Increasing,
                "dec" | "decreasing" if spec.monotone == Monotone::None => spec.monotone = Monotone::Decreasing,
                "convex" if spec.curvature == Curvature::None => spec.curvature = Curvature::Convex,
                "concave" if spec.curvature == Curvature::None => spec.curvature = Curvature::Concave,
                _ => return Err(Error::InvalidConfig(format!("unknown shape restriction `{s}`"))),
            }
        }
        Ok(spec)
    }

    pub fn label(&self) -> String {
        let m = match self.monotone {
            Monotone::None => None,
            Monotone::Increasing => Some("inc"),
            Monotone::Decreasing => Some("dec"),
        };
        let c = match self.curvature {
            Curvature::None => None,
            Curvature::Convex => Some("convex"),
            Curvature::Concave => Some("concave"),
        };
        match (m, c) {
            (Some(m), Some(c)) => format!("{m}-{c}"),
            (Some(m), None) => m.to_string(),
            (None, Some(c)) => c.to_string(),
            (None, None) => "none".to_string(),
        }
    }

    pub fn is_unrestricted(&self) -> bool {
        self.monotone == Monotone::None && self.curvature == Curvature::None && self.bounds.is_none()
    }

    /// Linear inequality rows `C β ≥ b` encoding the restriction on `grid`.
    fn constraint_rows(&self, grid: &[f64]) -> Result<(Vec<Row>, Vec<f64>)> {
        let n = grid.len();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let sign = match self.monotone {
            Monotone::None => 0.0,
            Monotone::Increasing => 1.0,
            Monotone::Decreasing => -1.0,
        };
        if sign != 0.0 && n >= 2 {
            let op = DiffOperator::new(grid, 1)?;
            for r in rows_of(&op, sign) {
                rows.push(r);
                rhs.push(0.0);
            }
        }
        let sign = match self.curvature {
            Curvature::None => 0.0,
            Curvature::Convex => 1.0,
            Curvature::Concave => -1.0,
        };
        if sign != 0.0 && n >= 3 {
            let op = DiffOperator::new(grid, 2)?;
            for r in rows_of(&op, sign) {
                rows.push(r);
                rhs.push(0.0);
            }
        }
        if let Some(b) = &self.bounds {
            if b.lower.len() != n || b.upper.len() != n {
                return Err(Error::DimMismatch {
                    expected: n,
                    got: b.lower.len().min(b.upper.len()),
                });
            }
            for i in 0..n {
                if b.lower[i].is_finite() {
                    rows.push(Row::single(i, 1.0));
                    rhs.push(b.lower[i]);
                }
                if b.upper[i].is_finite() {
                    rows.push(Row::single(i, -1.0));
                    rhs.push(-b.upper[i]);
                }
            }
        }
        Ok((rows, rhs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub point: Vec<f64>,
    pub alpha: f64,
    pub distance_sq: f64,
    pub iterations: usize,
}

// ---------------------------------------------------------------------------
// ℓ1 and TV epigraphs
// ---------------------------------------------------------------------------

/// Reusable buffers for the bisection projections.
#[derive(Debug, Clone, Default)]
pub struct EpiWork {
    fl: FusedLassoWork,
    scratch: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum Penalty<'a> {
    L1,
    Tv(&'a PseudoSolve),
}

impl Penalty<'_> {
    fn value(&self, v: &[f64]) -> f64 {
        match self {
            Penalty::L1 => v.iter().map(|x| x.abs()).sum(),
            Penalty::Tv(_) => total_variation(v),
        }
    }

    /// Writes prox_g^λ(θ) into `out`, returns g(out).
    fn prox_into(&self, theta: &[f64], lambda: f64, out: &mut [f64], work: &mut EpiWork) -> f64 {
        match self {
            Penalty::L1 => soft_threshold_into(theta, lambda, out),
            Penalty::Tv(_) => {
                fused_lasso_into(theta, lambda, out, &mut work.fl);
                total_variation(out)
            }
        }
    }

    fn lambda_max(&self, theta: &[f64], work: &mut EpiWork) -> Result<f64> {
        match self {
            Penalty::L1 => Ok(theta.iter().fold(0.0_f64, |m, x| m.max(x.abs()))),
            Penalty::Tv(ps) => ps.lambda_max(theta, &mut work.scratch),
        }
    }

    /// prox at any λ ≥ λ_max: 0 for ℓ1, the mean for TV.
    fn saturated(&self, theta: &[f64], out: &mut [f64]) {
        match self {
            Penalty::L1 => out.fill(0.0),
            Penalty::Tv(_) => {
                let mean = theta.iter().sum::<f64>() / theta.len().max(1) as f64;
                out.fill(mean);
            }
        }
    }
}

/// Outcome of an in-place epigraph projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpiOutcome {
    pub alpha: f64,
    /// Root λ* of F, zero when the input was already feasible.
    pub lambda: f64,
    pub iterations: usize,
}

/// Projects `(theta, alpha)` onto the epigraph of `penalty`, writing the point
/// into `out`.
pub fn project_epi_into(
    theta: &[f64],
    alpha: f64,
    penalty: Penalty<'_>,
    out: &mut [f64],
    work: &mut EpiWork,
) -> Result<EpiOutcome> {
    if let Penalty::Tv(ps) = penalty {
        if ps.len() != theta.len() {
            return Err(Error::DimMismatch {
                expected: ps.len(),
                got: theta.len(),
            });
        }
    }
    if out.len() != theta.len() {
        return Err(Error::DimMismatch {
            expected: theta.len(),
            got: out.len(),
        });
    }
    if !alpha.is_finite() || theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteDensity {
            value: f64::NAN,
            state: theta.iter().copied().chain([alpha]).collect(),
        });
    }
    let g0 = penalty.value(theta);
    if g0 <= alpha {
        out.copy_from_slice(theta);
        return Ok(EpiOutcome {
            alpha,
            lambda: 0.0,
            iterations: 0,
        });
    }
    let lambda_max = penalty.lambda_max(theta, work)?;
    let f_hi = -lambda_max - alpha;
    if f_hi >= 0.0 {
        // The root lies on the saturated branch F(λ) = −λ − α.
        penalty.saturated(theta, out);
        return Ok(EpiOutcome {
            alpha: 0.0,
            lambda: -alpha,
            iterations: 0,
        });
    }
    let f_lo = g0 - alpha;
    if !(f_lo > 0.0) {
        return Err(Error::BracketError { f_lo, f_hi });
    }

    let scale = lambda_max.max(1.0);
    let xtol = 1e-10 * scale;
    let ftol = 1e-10 * scale;
    let (mut lo, mut hi, mut flo, mut fhi) = (0.0, lambda_max, f_lo, f_hi);
    let mut iterations = 0;
    let mut secant = true;
    let mut best = (f64::INFINITY, 0.0);
    while hi - lo > xtol && iterations < 200 {
        iterations += 1;
        let mut cand = lo + flo * (hi - lo) / (flo - fhi);
        if !secant || !(cand > lo && cand < hi) {
            cand = 0.5 * (lo + hi);
        }
        secant = !secant;
        let f = penalty.prox_into(theta, cand, out, work) - cand - alpha;
        if f.abs() < best.0 {
            best = (f.abs(), cand);
        }
        if f.abs() <= ftol {
            lo = cand;
            hi = cand;
            break;
        }
        if f > 0.0 {
            lo = cand;
            flo = f;
        } else {
            hi = cand;
            fhi = f;
        }
    }
    let lambda = if lo == hi {
        lo
    } else {
        let interp = lo + flo * (hi - lo) / (flo - fhi);
        if interp.is_finite() && interp >= lo && interp <= hi {
            interp
        } else {
            best.1
        }
    };
    penalty.prox_into(theta, lambda, out, work);
    Ok(EpiOutcome {
        alpha: alpha + lambda,
        lambda,
        iterations,
    })
}

fn finish(theta: &[f64], alpha: f64, point: Vec<f64>, outcome: EpiOutcome) -> Projection {
    let distance_sq =
        theta.iter().zip(&point).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + (alpha - outcome.alpha).powi(2);
    Projection {
        point,
        alpha: outcome.alpha,
        distance_sq,
        iterations: outcome.iterations,
    }
}

/// Projection onto `{(θ, a) : ‖θ‖₁ ≤ a}`.
pub fn project_epi_l1(theta: &[f64], alpha: f64) -> Result<Projection> {
    let mut point = vec![0.0; theta.len()];
    let outcome = project_epi_into(theta, alpha, Penalty::L1, &mut point, &mut EpiWork::default())?;
    Ok(finish(theta, alpha, point, outcome))
}

/// Projection onto `{(θ, a) : ‖D(1)θ‖₁ ≤ a}`.
pub fn project_epi_tv(theta: &[f64], alpha: f64, pseudo: &PseudoSolve) -> Result<Projection> {
    let mut point = vec![0.0; theta.len()];
    let outcome = project_epi_into(theta, alpha, Penalty::Tv(pseudo), &mut point, &mut EpiWork::default())?;
    Ok(finish(theta, alpha, point, outcome))
}

// ---------------------------------------------------------------------------
// Shape-restricted set
// ---------------------------------------------------------------------------

/// A sparse row with at most five contiguous nonzeros.
#[derive(Debug, Clone, Copy)]
struct Row {
    start: usize,
    len: usize,
    c: [f64; 5],
}

impl Row {
    fn single(i: usize, v: f64) -> Self {
        let mut c = [0.0; 5];
        c[0] = v;
        Row { start: i, len: 1, c }
    }

    #[inline]
    fn end(&self) -> usize {
        self.start + self.len - 1
    }

    #[inline]
    fn dot(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..self.len {
            s += self.c[a] * v[self.start + a];
        }
        s
    }

    #[inline]
    fn axpy(&self, scale: f64, out: &mut [f64]) {
        for a in 0..self.len {
            out[self.start + a] += scale * self.c[a];
        }
    }

    fn abs_dot(&self, v: &[f64]) -> f64 {
        (0..self.len).map(|a| (self.c[a] * v[self.start + a]).abs()).sum()
    }

    fn norm_sq(&self) -> f64 {
        self.c[..self.len].iter().map(|x| x * x).sum()
    }

    fn dot_row(&self, other: &Row) -> f64 {
        let lo = self.start.max(other.start);
        let hi = self.end().min(other.end());
        let mut s = 0.0;
        if lo <= hi {
            for j in lo..=hi {
                s += self.c[j - self.start] * other.c[j - other.start];
            }
        }
        s
    }
}

fn rows_of(op: &DiffOperator, sign: f64) -> Vec<Row> {
    let width = op.order() + 1;
    (0..op.rows())
        .map(|i| {
            let mut c = [0.0; 5];
            for (d, v) in c.iter_mut().enumerate().take(width) {
                *v = sign * op.entry(i, d);
            }
            Row {
                start: i,
                len: width,
                c,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tag {
    Zero(usize),
    Ineq(usize),
}

#[derive(Debug, Clone, Default)]
struct ActiveSet {
    l1_active: bool,
    /// sign of (Dη)_i on the face; 0 marks a fused (zero) row.
    signs: Vec<f64>,
    ineq: Vec<usize>,
}

const RELAX: f64 = 1.6;
const MAX_ITERS: usize = 20_000;
const BLOCK: usize = 25;
/// Relative pivot below which a face constraint counts as linearly dependent.
const DEPENDENT_PIVOT: f64 = 1e-9;
/// Largest dimension for which the dense QR face solve is attempted.
const QR_FACE_LIMIT: usize = 600;
/// Relative residual norm below which a face row counts as dependent in the QR solve.
const QR_DEPENDENT: f64 = 1e-10;
/// Relative ADMM residual below which the raw iterate is offered for certification.
const ADMM_CERTIFY: f64 = 1e-10;

/// Which primal point and multipliers a certification attempt starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Certify {
    /// Face solution with its own multipliers.
    Face,
    /// Face solution, also trying the ADMM duals.
    FaceAdmmDual,
    /// Raw ADMM iterate with the ADMM duals.
    AdmmIterate,
}

/// Projection onto `S` with warm-started state, meant to live in one chain.
#[derive(Debug, Clone)]
pub struct ShapeProjector {
    n: usize,
    d_rows: Vec<Row>,
    c_rows: Vec<Row>,
    b: Vec<f64>,
    l1: bool,
    c_d: f64,
    s_c: Vec<f64>,
    rho: f64,
    chol: Option<BandCholesky>,
    half_bw: usize,
    // ADMM state in scaled constraint space
    z_w: Vec<f64>,
    u_w: Vec<f64>,
    z_tau: f64,
    u_tau: f64,
    z_c: Vec<f64>,
    u_c: Vec<f64>,
    eta: Vec<f64>,
    t: f64,
    last_identity: bool,
    active: Option<ActiveSet>,
    epi: EpiWork,
    // scratch
    rhs: Vec<f64>,
    dw: Vec<f64>,
    v_w: Vec<f64>,
    pub total_admm_iterations: usize,
    pub calls: usize,
    pub polish_hits: usize,
    /// Inequality rows the last rejected polish violated.
    violated: Vec<usize>,
    dual: dual::DualNewton,
    pub fallbacks: usize,
}

impl ShapeProjector {
    /// Projector onto `{‖D η‖₁ ≤ t} ∩ shape`, with `D = diff_op`.
    pub fn new(diff_op: &DiffOperator, shape: &ShapeSpec) -> Result<Self> {
        let (c_rows, b) = shape.constraint_rows(diff_op.grid())?;
        Ok(Self::from_parts(diff_op.cols(), rows_of(diff_op, 1.0), c_rows, b, true))
    }

    /// Projector onto the shape cone `{C η ≥ b}` alone; `alpha` passes through.
    pub fn shape_only(grid: &[f64], shape: &ShapeSpec) -> Result<Self> {
        let (c_rows, b) = shape.constraint_rows(grid)?;
        Ok(Self::from_parts(grid.len(), Vec::new(), c_rows, b, false))
    }

    fn from_parts(n: usize, d_rows: Vec<Row>, c_rows: Vec<Row>, b: Vec<f64>, l1: bool) -> Self {
        let c_d = d_rows.iter().map(|r| r.norm_sq().sqrt()).fold(0.0_f64, f64::max);
        let c_d = if c_d > 0.0 { 1.0 / c_d } else { 1.0 };
        let s_c: Vec<f64> = c_rows.iter().map(|r| 1.0 / r.norm_sq().sqrt()).collect();
        let half_bw = d_rows.iter().chain(&c_rows).map(|r| r.len - 1).max().unwrap_or(0);
        let m_d = d_rows.len();
        let m_c = c_rows.len();
        let dual = dual::DualNewton::new(n, &d_rows, &c_rows, &b);
        Self {
            n,
            d_rows,
            c_rows,
            b,
            l1,
            c_d,
            s_c,
            rho: 1.0,
            chol: None,
            half_bw,
            z_w: vec![0.0; m_d],
            u_w: vec![0.0; m_d],
            z_tau: 0.0,
            u_tau: 0.0,
            z_c: vec![0.0; m_c],
            u_c: vec![0.0; m_c],
            eta: vec![0.0; n],
            t: 0.0,
            last_identity: true,
            active: None,
            epi: EpiWork::default(),
            rhs: vec![0.0; n],
            dw: vec![0.0; m_d],
            v_w: vec![0.0; m_d],
            total_admm_iterations: 0,
            calls: 0,
            polish_hits: 0,
            violated: Vec::new(),
            dual,
            fallbacks: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Forgets the warm start.
    pub fn reset(&mut self) {
        self.z_w.fill(0.0);
        self.u_w.fill(0.0);
        self.z_c.fill(0.0);
        self.u_c.fill(0.0);
        self.z_tau = 0.0;
        self.u_tau = 0.0;
        self.active = None;
        self.last_identity = true;
        self.dual.reset();
    }

    fn l1_value(&self, eta: &[f64]) -> f64 {
        self.d_rows.iter().map(|r| r.dot(eta).abs()).sum()
    }

    fn min_slack(&self, eta: &[f64]) -> f64 {
        self.c_rows
            .iter()
            .zip(&self.b)
            .map(|(r, b)| r.dot(eta) - b)
            .fold(f64::INFINITY, f64::min)
    }

    /// True when `(eta, t)` lies in the set up to `tol`.
    pub fn is_feasible(&self, eta: &[f64], t: f64, tol: f64) -> bool {
        (!self.l1 || self.l1_value(eta) <= t + tol) && self.min_slack(eta) >= -tol
    }

    pub fn project(&mut self, beta: &[f64], alpha: f64) -> Result<Projection> {
        let mut point = vec![0.0; self.n];
        let (a, iterations) = self.project_into(beta, alpha, &mut point)?;
        let distance_sq = beta.iter().zip(&point).map(|(x, y)| (x - y).powi(2)).sum::<f64>() + (alpha - a).powi(2);
        Ok(Projection {
            point,
            alpha: a,
            distance_sq,
            iterations,
        })
    }

    /// Writes the projected point into `out`; returns (projected alpha, ADMM iterations).
    pub fn project_into(&mut self, beta: &[f64], alpha: f64, out: &mut [f64]) -> Result<(f64, usize)> {
        if beta.len() != self.n {
            return Err(Error::DimMismatch {
                expected: self.n,
                got: beta.len(),
            });
        }
        if !alpha.is_finite() || beta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteDensity {
                value: f64::NAN,
                state: beta.iter().copied().chain([alpha]).collect(),
            });
        }
        self.calls += 1;
        let t0 = if self.l1 { alpha } else { 0.0 };
        if self.is_feasible(beta, t0, 0.0) {
            out.copy_from_slice(beta);
            return Ok((alpha, 0));
        }
        let steps = self.dual.steps;
        // Dual projected Newton first; ADMM with face polishing as the fallback.
        if let Some(t) = self.dual.project(beta, t0, out) {
            return Ok((if self.l1 { t } else { alpha }, self.dual.steps - steps));
        }
        self.fallbacks += 1;
        self.dual.reset();

        let z0_norm = beta.iter().map(|x| x * x).sum::<f64>() + t0 * t0;
        let scale = z0_norm.sqrt().max(1.0);
        // Certified distance to the exact projection.
        let tol = 1e-9 * scale;

        if let Some(active) = self.active.take() {
            let mut active = active;
            if let Some(t) = self.polish(beta, t0, &mut active, tol, Certify::Face, out) {
                self.polish_hits += 1;
                self.active = Some(active);
                return Ok((if self.l1 { t } else { alpha }, 0));
            }
        }

        if self.chol.is_none() {
            self.factor()?;
        }
        let mut iterations = 0;
        let (mut prim, mut dual) = (f64::INFINITY, f64::INFINITY);
        while iterations < MAX_ITERS {
            let (p, d) = self.admm_block(beta, t0, BLOCK)?;
            prim = p;
            dual = d;
            iterations += BLOCK;
            let active = self.active_set();
            let mut active = active;
            let mut found = self.polish(beta, t0, &mut active, tol, Certify::FaceAdmmDual, out);
            if found.is_none() && prim.max(dual) < ADMM_CERTIFY {
                found = self.polish_and_certify(beta, t0, &active, tol, Certify::AdmmIterate, false, out);
            }
            if let Some(t) = found {
                self.active = Some(active);
                self.total_admm_iterations += iterations;
                return Ok((if self.l1 { t } else { alpha }, iterations));
            }
        }
        self.total_admm_iterations += iterations;
        Err(Error::ConvergenceError {
            iterations,
            primal: prim,
            dual,
        })
    }

    fn factor(&mut self) -> Result<()> {
        let mut m = SymBand::zeros(self.n, self.half_bw);
        for i in 0..self.n {
            m.add(i, i, 1.0);
        }
        let add_rows = |m: &mut SymBand, rows: &[Row], w: &dyn Fn(usize) -> f64| {
            for (idx, r) in rows.iter().enumerate() {
                let s = w(idx);
                for a in 0..r.len {
                    for bb in 0..=a {
                        m.add(r.start + a, r.start + bb, s * r.c[a] * r.c[bb]);
                    }
                }
            }
        };
        let rho = self.rho;
        let cd2 = self.c_d * self.c_d;
        add_rows(&mut m, &self.d_rows, &|_| rho * cd2);
        let s_c = self.s_c.clone();
        add_rows(&mut m, &self.c_rows, &|j| rho * s_c[j] * s_c[j]);
        self.chol = Some(m.cholesky()?);
        Ok(())
    }

    /// Runs `iters` over-relaxed ADMM steps; returns relative (primal, dual) residuals.
    fn admm_block(&mut self, beta: &[f64], t0: f64, iters: usize) -> Result<(f64, f64)> {
        let rho = self.rho;
        let c_d = self.c_d;
        let mut prim = 0.0;
        let mut dual = 0.0;
        let mut ax_norm = 0.0_f64;
        let mut z_norm = 0.0_f64;
        for it in 0..iters {
            let last = it + 1 == iters;
            // x-update
            self.rhs.copy_from_slice(beta);
            for (i, r) in self.d_rows.iter().enumerate() {
                r.axpy(rho * c_d * (self.z_w[i] - self.u_w[i]), &mut self.rhs);
            }
            for (j, r) in self.c_rows.iter().enumerate() {
                r.axpy(rho * self.s_c[j] * (self.z_c[j] - self.u_c[j]), &mut self.rhs);
            }
            self.chol
                .as_ref()
                .expect("factored before iterating")
                .solve_in_place(&mut self.rhs);
            self.eta.copy_from_slice(&self.rhs);
            if self.l1 {
                self.t = (t0 + rho * c_d * (self.z_tau - self.u_tau)) / (1.0 + rho * c_d * c_d);
            }

            // z-update on the relaxed point
            if self.l1 {
                for (i, r) in self.d_rows.iter().enumerate() {
                    let ax = c_d * r.dot(&self.eta);
                    if last {
                        ax_norm = ax_norm.max(ax.abs());
                        prim = f64::max(prim, (ax - self.z_w[i]).abs());
                    }
                    let xh = RELAX * ax + (1.0 - RELAX) * self.z_w[i];
                    self.dw[i] = xh;
                    self.v_w[i] = xh + self.u_w[i];
                }
                let ax_t = c_d * self.t;
                if last {
                    ax_norm = ax_norm.max(ax_t.abs());
                    prim = f64::max(prim, (ax_t - self.z_tau).abs());
                }
                let xh_t = RELAX * ax_t + (1.0 - RELAX) * self.z_tau;
                let vt = xh_t + self.u_tau;
                let z_prev_tau = self.z_tau;
                let mut z_new = std::mem::take(&mut self.z_w);
                let prev = if last { Some(z_new.clone()) } else { None };
                let outcome = project_epi_into(&self.v_w, vt, Penalty::L1, &mut z_new, &mut self.epi)?;
                self.z_w = z_new;
                self.z_tau = outcome.alpha;
                self.last_identity = outcome.lambda == 0.0;
                for i in 0..self.z_w.len() {
                    self.u_w[i] += self.dw[i] - self.z_w[i];
                }
                self.u_tau += xh_t - self.z_tau;
                if let Some(prev) = prev {
                    for i in 0..self.z_w.len() {
                        z_norm = z_norm.max(self.z_w[i].abs());
                        dual = f64::max(dual, rho * c_d * (self.z_w[i] - prev[i]).abs());
                    }
                    z_norm = z_norm.max(self.z_tau.abs());
                    dual = f64::max(dual, rho * c_d * (self.z_tau - z_prev_tau).abs());
                }
            }
            for (j, r) in self.c_rows.iter().enumerate() {
                let ax = self.s_c[j] * r.dot(&self.eta);
                if last {
                    ax_norm = ax_norm.max(ax.abs());
                    prim = f64::max(prim, (ax - self.z_c[j]).abs());
                }
                let xh = RELAX * ax + (1.0 - RELAX) * self.z_c[j];
                let lb = self.s_c[j] * self.b[j];
                let zn = (xh + self.u_c[j]).max(lb);
                if last {
                    z_norm = z_norm.max(zn.abs());
                    dual = f64::max(dual, rho * self.s_c[j] * (zn - self.z_c[j]).abs());
                }
                self.u_c[j] += xh - zn;
                self.z_c[j] = zn;
            }
        }

        // Residual balancing.
        let prim_rel = prim / ax_norm.max(z_norm).max(1e-12);
        let x_norm = beta
            .iter()
            .zip(&self.eta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max)
            .max(1e-12);
        let dual_rel = dual / x_norm;
        if prim_rel > 0.0 && dual_rel > 0.0 {
            let ratio = (prim_rel / dual_rel).sqrt();
            if !(0.2..=5.0).contains(&ratio) {
                let new_rho = (self.rho * ratio).clamp(1e-6, 1e6);
                let f = self.rho / new_rho;
                for u in self.u_w.iter_mut().chain(self.u_c.iter_mut()) {
                    *u *= f;
                }
                self.u_tau *= f;
                self.rho = new_rho;
                self.factor()?;
            }
        }
        Ok((prim_rel, dual_rel))
    }

    fn active_set(&self) -> ActiveSet {
        let l1_active = self.l1 && !self.last_identity;
        let signs = if l1_active {
            self.z_w
                .iter()
                .map(|&z| if z == 0.0 { 0.0 } else { z.signum() })
                .collect()
        } else {
            Vec::new()
        };
        let ineq = (0..self.c_rows.len())
            .filter(|&j| self.z_c[j] <= self.s_c[j] * self.b[j])
            .collect();
        ActiveSet { l1_active, signs, ineq }
    }

    /// Polishes on `active`, growing the face by any inequality rows the
    /// polished point violates.
    fn polish(
        &mut self,
        beta: &[f64],
        t0: f64,
        active: &mut ActiveSet,
        tol: f64,
        mode: Certify,
        out: &mut [f64],
    ) -> Option<f64> {
        for _ in 0..4 {
            self.violated.clear();
            if let Some(t) = self.polish_and_certify(beta, t0, active, tol, mode, false, out) {
                return Some(t);
            }
            if mode != Certify::AdmmIterate && self.n <= QR_FACE_LIMIT {
                self.violated.clear();
                if let Some(t) = self.polish_and_certify(beta, t0, active, tol, mode, true, out) {
                    return Some(t);
                }
            }
            if self.violated.is_empty() {
                return None;
            }
            active.ineq.extend_from_slice(&self.violated);
            active.ineq.sort_unstable();
            active.ineq.dedup();
        }
        None
    }

    /// Solves the projection restricted to the face `active` and accepts it
    /// only if a dual certificate bounds its error by `tol`. Returns `t`.
    fn polish_and_certify(
        &mut self,
        beta: &[f64],
        t0: f64,
        active: &ActiveSet,
        tol: f64,
        mode: Certify,
        qr: bool,
        out: &mut [f64],
    ) -> Option<f64> {
        let n = self.n;
        // Sparse equality rows, ordered by first column.
        let mut rows: Vec<(Row, f64, Tag)> = Vec::new();
        if active.l1_active {
            for (i, &s) in active.signs.iter().enumerate() {
                if s == 0.0 {
                    rows.push((self.d_rows[i], 0.0, Tag::Zero(i)));
                }
            }
        }
        for &j in &active.ineq {
            rows.push((self.c_rows[j], self.b[j], Tag::Ineq(j)));
        }
        rows.sort_by_key(|r| r.0.start);
        let nb = rows.len();

        // Optional dense row: s_Nᵀ D_N η − t = 0.
        let dense: Option<Vec<f64>> = if active.l1_active {
            let mut g = vec![0.0; n];
            for (i, &s) in active.signs.iter().enumerate() {
                if s != 0.0 {
                    self.d_rows[i].axpy(s, &mut g);
                }
            }
            Some(g)
        } else {
            None
        };

        let mut eta = beta.to_vec();
        let mut t = t0;
        let mut mu = vec![0.0; nb];
        let mut mu_g = 0.0;

        if mode == Certify::AdmmIterate {
            eta.copy_from_slice(&self.eta);
            if self.l1 {
                t = self.t;
            }
        } else if qr {
            (eta, t, mu, mu_g) = face_solve_qr(&rows, dense.as_deref(), beta, t0)?;
        } else if nb > 0 || dense.is_some() {
            let mut bw = 0;
            for r in 0..nb {
                let end = rows[r].0.end();
                let mut q = r + 1;
                while q < nb && rows[q].0.start <= end {
                    q += 1;
                }
                bw = bw.max(q - 1 - r);
            }
            let mut gram = SymBand::zeros(nb, bw);
            for r in 0..nb {
                let d = rows[r].0.norm_sq();
                gram.add(r, r, d);
                for q in r + 1..(r + bw + 1).min(nb) {
                    let v = rows[r].0.dot_row(&rows[q].0);
                    if v != 0.0 {
                        gram.add(q, r, v);
                    }
                }
            }
            let g_norm_sq = dense.as_ref().map(|g| g.iter().map(|x| x * x).sum::<f64>() + 1.0);
            let gram_plain = gram.clone();
            let chol = if nb > 0 {
                Some(gram.cholesky_dropping(DEPENDENT_PIVOT))
            } else {
                None
            };
            let solve_b = |v: &mut [f64]| {
                if let Some(c) = &chol {
                    c.solve_in_place(v);
                }
            };
            // Bordered system pieces; a dense row dependent on the sparse ones
            // is dropped like any other.
            let (coup, coup_solved, schur) = match (&dense, g_norm_sq) {
                (Some(g), Some(gn)) => {
                    let coup: Vec<f64> = rows.iter().map(|r| r.0.dot(g)).collect();
                    let mut cs = coup.clone();
                    solve_b(&mut cs);
                    let sc = gn - coup.iter().zip(&cs).map(|(a, b)| a * b).sum::<f64>();
                    if !sc.is_finite() {
                        return None;
                    }
                    (coup, cs, if sc > DEPENDENT_PIVOT * gn { sc } else { f64::INFINITY })
                }
                _ => (Vec::new(), Vec::new(), 1.0),
            };
            // Right-hand side h − G z0.
            let rhs_b: Vec<f64> = rows.iter().map(|(r, h, _)| h - r.dot(beta)).collect();
            let rhs_g = dense
                .as_ref()
                .map(|g| -(g.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() - t0))
                .unwrap_or(0.0);
            let rhs_scale = rhs_b.iter().fold(rhs_g.abs(), |m, x| m.max(x.abs())).max(1e-300);
            let mut res_b = rhs_b.clone();
            let mut res_g = rhs_g;
            for _ in 0..40 {
                let mut d_b = res_b.clone();
                solve_b(&mut d_b);
                let d_g = if dense.is_some() {
                    let dg = (res_g - coup.iter().zip(&d_b).map(|(a, b)| a * b).sum::<f64>()) / schur;
                    for (x, c) in d_b.iter_mut().zip(&coup_solved) {
                        *x -= c * dg;
                    }
                    dg
                } else {
                    0.0
                };
                for (m, d) in mu.iter_mut().zip(&d_b) {
                    *m += d;
                }
                mu_g += d_g;
                let mut gmu = vec![0.0; nb];
                for r in 0..nb {
                    gmu[r] += gram_plain.get(r, r) * mu[r];
                    for q in r + 1..(r + bw + 1).min(nb) {
                        let v = gram_plain.get(q, r);
                        if v != 0.0 {
                            gmu[r] += v * mu[q];
                            gmu[q] += v * mu[r];
                        }
                    }
                }
                let mut worst = 0.0_f64;
                for r in 0..nb {
                    let c = if dense.is_some() { coup[r] * mu_g } else { 0.0 };
                    res_b[r] = rhs_b[r] - gmu[r] - c;
                    worst = worst.max(res_b[r].abs());
                }
                if let Some(gn) = g_norm_sq {
                    res_g = rhs_g - coup.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() - gn * mu_g;
                    worst = worst.max(res_g.abs());
                }
                if worst <= 1e-15 * rhs_scale {
                    break;
                }
            }
            for ((r, _, _), m) in rows.iter().zip(&mu) {
                r.axpy(*m, &mut eta);
            }
            if let Some(g) = &dense {
                for (e, gi) in eta.iter_mut().zip(g) {
                    *e += mu_g * gi;
                }
                t = t0 - mu_g;
            }
        }

        if eta.iter().any(|x| !x.is_finite()) || !t.is_finite() {
            return None;
        }
        // Zero rows are only dependent up to rounding, so their summed
        // residuals can leave the ℓ1 constraint a hair short; the
        // certificate below charges this shift to the stationarity residual.
        if self.l1 {
            t = t.max(self.l1_value(&eta));
        }
        let feas_tol = 1e-10 * (1.0 + eta.iter().fold(t.abs(), |m, x| m.max(x.abs())));
        if !self.is_feasible(&eta, t, feas_tol) {
            self.violated.clear();
            for (j, r) in self.c_rows.iter().enumerate() {
                if r.dot(&eta) - self.b[j] < -feas_tol {
                    self.violated.push(j);
                }
            }
            return None;
        }

        // Dual multipliers in y ∈ (ℓ∞-epigraph) × R₊ with x = z0 + Aᵀy.
        let m_d = self.d_rows.len();
        let mut y_tau = if active.l1_active { (-mu_g).max(0.0) } else { 0.0 };
        let mut y_w = vec![0.0; m_d];
        if active.l1_active {
            for (i, &s) in active.signs.iter().enumerate() {
                if s != 0.0 {
                    y_w[i] = -y_tau * s;
                }
            }
        }
        let mut y_c = vec![0.0; self.c_rows.len()];
        for ((_, _, tag), m) in rows.iter().zip(&mu) {
            match *tag {
                Tag::Zero(i) => y_w[i] += m,
                Tag::Ineq(j) => y_c[j] += m,
            }
        }
        for &(_, _, tag) in &rows {
            match tag {
                Tag::Zero(i) => y_w[i] = y_w[i].clamp(-y_tau, y_tau),
                Tag::Ineq(j) => y_c[j] = y_c[j].max(0.0),
            }
        }
        let residual = |y_tau: f64, y_w: &[f64], y_c: &[f64]| {
            // Stationarity residual R = x_p − z0 − Aᵀy.
            let mut res: Vec<f64> = eta.iter().zip(beta).map(|(a, b)| a - b).collect();
            for (i, r) in self.d_rows.iter().enumerate() {
                if y_w[i] != 0.0 {
                    r.axpy(-y_w[i], &mut res);
                }
            }
            for (j, r) in self.c_rows.iter().enumerate() {
                if y_c[j] != 0.0 {
                    r.axpy(-y_c[j], &mut res);
                }
            }
            let res_t = if self.l1 { t - t0 - y_tau } else { 0.0 };
            let sq = res.iter().map(|x| x * x).sum::<f64>() + res_t * res_t;
            (res, res_t, sq)
        };
        let (mut res, mut res_t, mut res_sq) = residual(y_tau, &y_w, &y_c);

        // On degenerate faces the recovered multipliers can be far from any
        // sign-feasible choice. The ADMM duals always lie in the dual cone.
        if mode != Certify::Face && res_sq > 0.25 * tol * tol {
            let scale = -self.rho;
            let a_tau = if self.l1 {
                (scale * self.c_d * self.u_tau).max(0.0)
            } else {
                0.0
            };
            let a_w: Vec<f64> = self
                .u_w
                .iter()
                .map(|u| (scale * self.c_d * u).clamp(-a_tau, a_tau))
                .collect();
            let a_c: Vec<f64> = self
                .u_c
                .iter()
                .zip(&self.s_c)
                .map(|(u, sc)| (scale * sc * u).max(0.0))
                .collect();
            let alt = residual(a_tau, &a_w, &a_c);
            if alt.2 < res_sq {
                (res, res_t, res_sq) = alt;
                y_tau = a_tau;
                y_w = a_w;
                y_c = a_c;
            }
        }

        // Bounded coordinate descent on the free multipliers when clipping or
        // duplicate rows left a residual.
        let sweeps = if n <= QR_FACE_LIMIT { 200 } else { 5000 };
        if res_sq > 0.25 * tol * tol {
            for _ in 0..sweeps {
                let before = res_sq;
                for &(row, _, tag) in &rows {
                    let nsq = row.norm_sq();
                    let step = row.dot(&res) / nsq;
                    let (cur, lo, hi) = match tag {
                        Tag::Zero(i) => (y_w[i], -y_tau, y_tau),
                        Tag::Ineq(j) => (y_c[j], 0.0, f64::INFINITY),
                    };
                    let new = (cur + step).clamp(lo, hi);
                    let delta = new - cur;
                    if delta != 0.0 {
                        row.axpy(-delta, &mut res);
                        match tag {
                            Tag::Zero(i) => y_w[i] = new,
                            Tag::Ineq(j) => y_c[j] = new,
                        }
                    }
                }
                res_sq = res.iter().map(|x| x * x).sum::<f64>() + res_t * res_t;
                if res_sq <= 0.25 * tol * tol || res_sq > (1.0 - 1e-9) * before {
                    break;
                }
            }
        }
        // Exact bounded least squares for the multipliers on degenerate faces,
        // with y_τ pinned by stationarity in t.
        if res_sq > 0.25 * tol * tol && n <= QR_FACE_LIMIT && !rows.is_empty() {
            if active.l1_active {
                y_tau = (t - t0).max(0.0);
                for (i, &s) in active.signs.iter().enumerate() {
                    if s != 0.0 {
                        y_w[i] = -y_tau * s;
                    }
                }
            }
            let mut y: Vec<f64> = Vec::with_capacity(rows.len());
            let mut lo = Vec::with_capacity(rows.len());
            let mut hi = Vec::with_capacity(rows.len());
            let mut cols = Vec::with_capacity(rows.len());
            for &(row, _, tag) in &rows {
                let mut c = vec![0.0; n];
                row.axpy(1.0, &mut c);
                cols.push(c);
                match tag {
                    Tag::Zero(i) => {
                        y.push(y_w[i]);
                        y_w[i] = 0.0;
                        lo.push(-y_tau);
                        hi.push(y_tau);
                    }
                    Tag::Ineq(j) => {
                        y.push(y_c[j]);
                        y_c[j] = 0.0;
                        lo.push(0.0);
                        hi.push(f64::INFINITY);
                    }
                }
            }
            let (base, _, _) = residual(y_tau, &y_w, &y_c);
            bvls(&cols, &base, &lo, &hi, &mut y);
            for (&(_, _, tag), v) in rows.iter().zip(y) {
                match tag {
                    Tag::Zero(i) => y_w[i] = v,
                    Tag::Ineq(j) => y_c[j] = v,
                }
            }
            res_sq = residual(y_tau, &y_w, &y_c).2;
        }

        // Complementarity gap yᵀ(A x_p − b). On the polished face every term
        // vanishes analytically, so it is compared against its own rounding
        // scale rather than folded into the distance bound.
        let mut gap = 0.0;
        let mut gap_scale = 0.0;
        if self.l1 {
            gap += y_tau * t;
            gap_scale += (y_tau * t).abs();
            for (i, r) in self.d_rows.iter().enumerate() {
                if y_w[i] != 0.0 {
                    gap += y_w[i] * r.dot(&eta);
                    gap_scale += y_w[i].abs() * r.abs_dot(&eta);
                }
            }
        }
        for (j, r) in self.c_rows.iter().enumerate() {
            if y_c[j] != 0.0 {
                gap += y_c[j] * (r.dot(&eta) - self.b[j]);
                gap_scale += y_c[j].abs() * (r.abs_dot(&eta) + self.b[j].abs());
            }
        }
        let complementary = gap.abs() <= 1e-12 * gap_scale + tol * tol;
        let bound = res_sq.sqrt();
        if complementary && bound <= tol {
            out.copy_from_slice(&eta);
            Some(t)
        } else {
            None
        }
    }
}

/// Householder QR of a set of dense columns that skips every column whose
/// part orthogonal to the earlier kept columns is below `dep_tol` of its norm.
struct DenseQr {
    reflectors: Vec<Vec<f64>>,
    /// Column `i` of R (length `i + 1`), one per kept column.
    r_cols: Vec<Vec<f64>>,
    kept: Vec<usize>,
}

impl DenseQr {
    fn new(cols: &[Vec<f64>], dep_tol: f64) -> Self {
        let dim = cols.first().map_or(0, Vec::len);
        let mut qr = DenseQr {
            reflectors: Vec::new(),
            r_cols: Vec::new(),
            kept: Vec::new(),
        };
        for (j, col) in cols.iter().enumerate() {
            let k = qr.reflectors.len();
            if k >= dim {
                break;
            }
            let norm0 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm0 == 0.0 {
                continue;
            }
            let mut c = col.clone();
            qr.apply_qt(&mut c);
            let tail = c[k..].iter().map(|x| x * x).sum::<f64>().sqrt();
            if tail <= dep_tol * norm0 {
                continue;
            }
            let diag = if c[k] > 0.0 { -tail } else { tail };
            let mut v = c[k..].to_vec();
            v[0] -= diag;
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(vn > 0.0) {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= vn);
            c.truncate(k);
            c.push(diag);
            qr.reflectors.push(v);
            qr.r_cols.push(c);
            qr.kept.push(j);
        }
        qr
    }

    fn rank(&self) -> usize {
        self.kept.len()
    }

    fn reflect(v: &[f64], x: &mut [f64]) {
        let d: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi -= 2.0 * d * vi;
        }
    }

    fn apply_qt(&self, x: &mut [f64]) {
        for (k, v) in self.reflectors.iter().enumerate() {
            Self::reflect(v, &mut x[k..]);
        }
    }

    fn apply_q(&self, x: &mut [f64]) {
        for (k, v) in self.reflectors.iter().enumerate().rev() {
            Self::reflect(v, &mut x[k..]);
        }
    }

    /// Solves `R z = w` in place.
    fn solve_r(&self, w: &mut [f64]) {
        for i in (0..self.rank()).rev() {
            let mut acc = w[i];
            for q in i + 1..self.rank() {
                acc -= self.r_cols[q][i] * w[q];
            }
            w[i] = acc / self.r_cols[i][i];
        }
    }

    /// Solves `Rᵀ w = b` in place.
    fn solve_rt(&self, b: &mut [f64]) {
        for i in 0..self.rank() {
            let mut acc = b[i];
            for q in 0..i {
                acc -= self.r_cols[i][q] * b[q];
            }
            b[i] = acc / self.r_cols[i][i];
        }
    }

    /// Least-squares coefficients of `b` on the kept columns.
    fn least_squares(&self, b: &[f64]) -> Vec<f64> {
        let mut qb = b.to_vec();
        self.apply_qt(&mut qb);
        qb.truncate(self.rank());
        self.solve_r(&mut qb);
        qb
    }
}

/// Nearest point to `(beta, t0)` on `{G x = h}`, with `G` the sparse face rows
/// plus the optional dense row `gᵀη − t = 0`. Rows dependent on earlier ones
/// are skipped. Returns `(eta, t, mu, mu_g)`.
fn face_solve_qr(
    rows: &[(Row, f64, Tag)],
    dense: Option<&[f64]>,
    beta: &[f64],
    t0: f64,
) -> Option<(Vec<f64>, f64, Vec<f64>, f64)> {
    let n = beta.len();
    let mut cols: Vec<Vec<f64>> = rows
        .iter()
        .map(|(r, _, _)| {
            let mut c = vec![0.0; n + 1];
            r.axpy(1.0, &mut c[..n]);
            c
        })
        .collect();
    let mut h: Vec<f64> = rows.iter().map(|r| r.1).collect();
    if let Some(g) = dense {
        let mut c = g.to_vec();
        c.push(-1.0);
        cols.push(c);
        h.push(0.0);
    }
    let mut z0 = beta.to_vec();
    z0.push(t0);
    let qr = DenseQr::new(&cols, QR_DEPENDENT);
    // x = z0 + Q [w; 0] with Rᵀ w = h_S − A_Sᵀ z0; multipliers R⁻¹ w.
    let mut w: Vec<f64> = qr
        .kept
        .iter()
        .map(|&j| h[j] - cols[j].iter().zip(&z0).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    qr.solve_rt(&mut w);
    let mut x = vec![0.0; n + 1];
    x[..w.len()].copy_from_slice(&w);
    qr.apply_q(&mut x);
    qr.solve_r(&mut w);
    let mut mu = vec![0.0; rows.len()];
    let mut mu_g = 0.0;
    for (&j, &v) in qr.kept.iter().zip(&w) {
        if j < rows.len() {
            mu[j] = v;
        } else {
            mu_g = v;
        }
    }
    let eta: Vec<f64> = (0..n).map(|i| z0[i] + x[i]).collect();
    let t = z0[n] + x[n];
    if eta.iter().chain([&t]).any(|v| !v.is_finite()) {
        return None;
    }
    Some((eta, t, mu, mu_g))
}

/// Bounded-variable least squares `min ‖A y − b‖, lo ≤ y ≤ hi` by an active-set
/// method in the style of Lawson and Hanson, started from `y` (clamped).
fn bvls(cols: &[Vec<f64>], b: &[f64], lo: &[f64], hi: &[f64], y: &mut [f64]) {
    let m = cols.len();
    for j in 0..m {
        y[j] = y[j].clamp(lo[j], hi[j]);
    }
    let residual = |y: &[f64]| {
        let mut r = b.to_vec();
        for (c, &yj) in cols.iter().zip(y) {
            if yj != 0.0 {
                for (ri, ci) in r.iter_mut().zip(c) {
                    *ri -= yj * ci;
                }
            }
        }
        r
    };
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let mut free = vec![false; m];
    // Variables strictly inside their bounds start free.
    for j in 0..m {
        free[j] = y[j] > lo[j] && y[j] < hi[j];
    }
    for _outer in 0..(3 * m + 10) {
        // Inner loop: least squares on the free set, stepping back to the box.
        for _inner in 0..(m + 5) {
            let idx: Vec<usize> = (0..m).filter(|&j| free[j]).collect();
            if idx.is_empty() {
                break;
            }
            let mut target = b.to_vec();
            for j in (0..m).filter(|&j| !free[j] && y[j] != 0.0) {
                for (ti, ci) in target.iter_mut().zip(&cols[j]) {
                    *ti -= y[j] * ci;
                }
            }
            let sub: Vec<Vec<f64>> = idx.iter().map(|&j| cols[j].clone()).collect();
            let qr = DenseQr::new(&sub, QR_DEPENDENT);
            let coef = qr.least_squares(&target);
            let mut z = vec![0.0; idx.len()];
            for (&k, &v) in qr.kept.iter().zip(&coef) {
                z[k] = v;
            }
            let mut step = 1.0_f64;
            for (k, &j) in idx.iter().enumerate() {
                if z[k] < lo[j] {
                    step = step.min((y[j] - lo[j]) / (y[j] - z[k]));
                } else if z[k] > hi[j] {
                    step = step.min((hi[j] - y[j]) / (z[k] - y[j]));
                }
            }
            let step = step.clamp(0.0, 1.0);
            for (k, &j) in idx.iter().enumerate() {
                y[j] += step * (z[k] - y[j]);
                // Dependent columns carry no information on this set.
                if !qr.kept.contains(&k) {
                    y[j] = y[j].clamp(lo[j], hi[j]);
                }
            }
            if step >= 1.0 {
                break;
            }
            for &j in &idx {
                let span = (hi[j] - lo[j]).min(1.0 + y[j].abs());
                if y[j] <= lo[j] + 1e-14 * span {
                    y[j] = lo[j];
                    free[j] = false;
                } else if y[j] >= hi[j] - 1e-14 * span {
                    y[j] = hi[j];
                    free[j] = false;
                }
            }
        }
        // Outer loop: release the bound variable with the most useful gradient.
        let r = residual(y);
        let mut best = (0.0, usize::MAX);
        for j in (0..m).filter(|&j| !free[j]) {
            let w: f64 = cols[j].iter().zip(&r).map(|(a, b)| a * b).sum();
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            let useful = if y[j] <= lo[j] {
                w
            } else if y[j] >= hi[j] {
                -w
            } else {
                w.abs()
            };
            if useful > 1e-13 * scale * norm && useful > best.0 {
                best = (useful, j);
            }
        }
        if best.1 == usize::MAX {
            return;
        }
        free[best.1] = true;
    }
}

/// One-shot projection of `(beta, alpha)` onto `S` for the given operator and shape.
pub fn project_shape_restricted(
    beta: &[f64],
    alpha: f64,
    diff_op: &DiffOperator,
    shape: &ShapeSpec,
) -> Result<Projection> {
    ShapeProjector::new(diff_op, shape)?.project(beta, alpha)
}

/// Projection of `beta` onto the shape cone alone.
pub fn project_shape_cone(beta: &[f64], grid: &[f64], shape: &ShapeSpec) -> Result<Vec<f64>> {
    Ok(ShapeProjector::shape_only(grid, shape)?.project(beta, 0.0)?.point)
}
