//! No-U-turn Hamiltonian Monte Carlo with multinomial trajectory sampling,
//! dual-averaging step size and windowed diagonal metric adaptation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::TrendData;
use crate::error::{Error, Result};
use crate::posterior::{initialize, ModelSpec, Posterior};

/// A differentiable log density. `&mut self` lets implementations keep
/// warm-start caches; each chain works on its own clone.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// Returns the log density and writes its gradient into `grad`.
    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_warmup: usize,
    pub n_draws: usize,
    pub n_chains: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_warmup: 1000,
            n_draws: 3000,
            n_chains: 4,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_warmup == 0 || self.n_draws == 0 || self.n_chains == 0 || self.max_tree_depth == 0 {
            return Err(Error::InvalidConfig(
                "warmup, draws, chains and tree depth must all be positive".into(),
            ));
        }
        if !(self.target_accept > 0.5 && self.target_accept < 0.99) {
            return Err(Error::InvalidConfig(format!(
                "target_accept must lie in (0.5, 0.99), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}

/// One chain's post-warmup output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub chain: usize,
    /// `n_draws × dim` draws in the sampled space.
    pub draws: Vec<Vec<f64>>,
    /// `n_draws × n` draws of β; empty for generic targets.
    pub draws_beta: Vec<Vec<f64>>,
    pub accept_stats: Vec<f64>,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub tree_depths: Vec<usize>,
    /// `H(selected) − H(start)` per transition.
    pub energy_errors: Vec<f64>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    /// Per-coordinate R̂ and bulk ESS over all chains, filled by [`sample`].
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    /// Wall-clock seconds of the whole sampling call.
    pub wall_seconds: f64,
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    logp: f64,
}

const MAX_DELTA_H: f64 = 1000.0;

struct Chain<T> {
    target: T,
    rng: ChaCha8Rng,
    eps: f64,
    inv_metric: Vec<f64>,
    max_depth: usize,
}

#[derive(Default)]
struct Transition {
    accept_stat: f64,
    divergent: bool,
    depth: usize,
    energy_error: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl<T: LogDensity> Chain<T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..p.len() {
            out[i] = self.inv_metric[i] * p[i];
        }
    }

    fn draw_momentum(&mut self, z: &mut Point) {
        for i in 0..z.p.len() {
            let e: f64 = self.rng.sample(StandardNormal);
            z.p[i] = e / self.inv_metric[i].sqrt();
        }
    }

    /// One leapfrog step. Non-finite densities leave `logp = −∞`; other
    /// errors propagate.
    fn leapfrog(&mut self, z: &mut Point, eps: f64) -> Result<()> {
        for i in 0..z.q.len() {
            z.p[i] += 0.5 * eps * z.g[i];
            z.q[i] += eps * self.inv_metric[i] * z.p[i];
        }
        match self.target.log_density_grad(&z.q, &mut z.g) {
            Ok(v) => z.logp = v,
            Err(Error::NonFiniteDensity { .. }) => {
                z.logp = f64::NEG_INFINITY;
                return Ok(());
            }
            Err(e) => return Err(e),
        }
        for i in 0..z.q.len() {
            z.p[i] += 0.5 * eps * z.g[i];
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_sharp_beg: &mut [f64],
        p_sharp_end: &mut [f64],
        rho: &mut [f64],
        p_beg: &mut [f64],
        p_end: &mut [f64],
        h0: f64,
        sign: f64,
        n_leapfrog: &mut usize,
        log_sum_weight: &mut f64,
        sum_metro: &mut f64,
        divergent: &mut bool,
    ) -> Result<bool> {
        if depth == 0 {
            self.leapfrog(z, sign * self.eps)?;
            *n_leapfrog += 1;
            let h = if z.logp.is_finite() {
                self.hamiltonian(z)
            } else {
                f64::INFINITY
            };
            if h - h0 > MAX_DELTA_H || !h.is_finite() {
                *divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            *sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            self.p_sharp(&z.p, p_sharp_beg);
            p_sharp_end.copy_from_slice(p_sharp_beg);
            for i in 0..rho.len() {
                rho[i] += z.p[i];
            }
            p_beg.copy_from_slice(&z.p);
            p_end.copy_from_slice(&z.p);
            return Ok(!*divergent);
        }
        let dim = rho.len();
        let mut rho_left = vec![0.0; dim];
        let mut p_sharp_end_left = vec![0.0; dim];
        let mut p_end_left = vec![0.0; dim];
        let mut lsw_left = f64::NEG_INFINITY;
        let valid_left = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_end_left,
            &mut rho_left,
            p_beg,
            &mut p_end_left,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_left,
            sum_metro,
            divergent,
        )?;
        if !valid_left {
            return Ok(false);
        }
        let mut z_propose_right = z.clone();
        let mut rho_right = vec![0.0; dim];
        let mut p_sharp_beg_right = vec![0.0; dim];
        let mut p_beg_right = vec![0.0; dim];
        let mut lsw_right = f64::NEG_INFINITY;
        let valid_right = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_right,
            &mut p_sharp_beg_right,
            p_sharp_end,
            &mut rho_right,
            &mut p_beg_right,
            p_end,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_right,
            sum_metro,
            divergent,
        )?;
        if !valid_right {
            return Ok(false);
        }
        let lsw_subtree = log_sum_exp(lsw_left, lsw_right);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_right > lsw_subtree || self.rng.random::<f64>() < (lsw_right - lsw_subtree).exp() {
            std::mem::swap(z_propose, &mut z_propose_right);
        }
        let mut rho_subtree = vec![0.0; dim];
        for i in 0..dim {
            rho_subtree[i] = rho_left[i] + rho_right[i];
            rho[i] += rho_subtree[i];
        }
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let ext: Vec<f64> = (0..dim).map(|i| rho_left[i] + p_beg_right[i]).collect();
        persist &= criterion(p_sharp_beg, &p_sharp_beg_right, &ext);
        let ext: Vec<f64> = (0..dim).map(|i| rho_right[i] + p_end_left[i]).collect();
        persist &= criterion(&p_sharp_end_left, p_sharp_end, &ext);
        Ok(persist)
    }

    fn transition(&mut self, z0: &mut Point) -> Result<Transition> {
        let dim = z0.q.len();
        self.draw_momentum(z0);
        let h0 = self.hamiltonian(z0);
        let mut z_fwd = z0.clone();
        let mut z_bck = z0.clone();
        let mut z_sample = z0.clone();
        let mut z_propose = z0.clone();

        let mut p_sharp = vec![0.0; dim];
        self.p_sharp(&z0.p, &mut p_sharp);
        let mut p_sharp_fwd_fwd = p_sharp.clone();
        let mut p_sharp_fwd_bck = p_sharp.clone();
        let mut p_sharp_bck_fwd = p_sharp.clone();
        let mut p_sharp_bck_bck = p_sharp;
        let mut p_fwd_fwd = z0.p.clone();
        let mut p_fwd_bck = z0.p.clone();
        let mut p_bck_fwd = z0.p.clone();
        let mut p_bck_bck = z0.p.clone();
        let mut rho = z0.p.clone();

        let mut log_sum_weight = 0.0;
        let mut n_leapfrog = 0;
        let mut sum_metro = 0.0;
        let mut divergent = false;
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if self.rng.random::<f64>() > 0.5 {
                rho_bck.copy_from_slice(&rho);
                p_bck_fwd.copy_from_slice(&p_fwd_bck);
                p_sharp_bck_fwd.copy_from_slice(&p_sharp_fwd_bck);
                let mut z = z_fwd.clone();
                let v = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                    &mut divergent,
                )?;
                z_fwd = z;
                v
            } else {
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.copy_from_slice(&p_bck_fwd);
                p_sharp_fwd_bck.copy_from_slice(&p_sharp_bck_fwd);
                let mut z = z_bck.clone();
                let v = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                    &mut divergent,
                )?;
                z_bck = z;
                v
            };
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight || self.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            for i in 0..dim {
                rho[i] = rho_bck[i] + rho_fwd[i];
            }
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let ext: Vec<f64> = (0..dim).map(|i| rho_bck[i] + p_fwd_bck[i]).collect();
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &ext);
            let ext: Vec<f64> = (0..dim).map(|i| rho_fwd[i] + p_bck_fwd[i]).collect();
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &ext);
            if !persist {
                break;
            }
        }
        let energy_error = self.hamiltonian(&z_sample) - h0;
        *z0 = z_sample;
        Ok(Transition {
            accept_stat: if n_leapfrog > 0 {
                sum_metro / n_leapfrog as f64
            } else {
                0.0
            },
            divergent,
            depth,
            energy_error,
        })
    }

    /// Doubles or halves ε until one leapfrog step crosses acceptance 0.8.
    fn init_stepsize(&mut self, z: &Point) -> Result<()> {
        let mut direction = 0.0;
        for _ in 0..100 {
            let mut w = z.clone();
            self.draw_momentum(&mut w);
            let h0 = self.hamiltonian(&w);
            self.leapfrog(&mut w, self.eps)?;
            let h = if w.logp.is_finite() {
                self.hamiltonian(&w)
            } else {
                f64::INFINITY
            };
            let delta = h0 - h;
            let up = delta > 0.8f64.ln();
            if direction == 0.0 {
                direction = if up { 1.0 } else { -1.0 };
            } else if (direction > 0.0) != up {
                break;
            }
            self.eps = if direction > 0.0 {
                2.0 * self.eps
            } else {
                0.5 * self.eps
            };
            if self.eps > 1e7 || self.eps < 1e-300 {
                return Err(Error::SamplingFailed {
                    last_state: z.q.clone(),
                });
            }
        }
        Ok(())
    }
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, delta: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            s_bar: 0.0,
            x_bar: 0.0,
            counter: 0.0,
            delta,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }
}

/// Windowed schedule: initial buffer, doubling metric windows, final buffer.
struct Windows {
    n_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

impl Windows {
    fn new(n_warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if n_warmup < 20 {
            // Step size only.
            return Self {
                n_warmup,
                init_buffer: n_warmup,
                term_buffer: 0,
                window_size: 0,
                next_window: usize::MAX,
                counter: 0,
            };
        }
        if init + base + term > n_warmup {
            init = (0.15 * n_warmup as f64) as usize;
            term = (0.1 * n_warmup as f64) as usize;
            base = n_warmup - init - term;
        }
        Self {
            n_warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            next_window: init + base - 1,
            counter: 0,
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer && self.counter < self.n_warmup - self.term_buffer
    }

    fn at_window_end(&self) -> bool {
        self.counter == self.next_window && self.counter != self.n_warmup
    }

    fn advance(&mut self) {
        let last = self.n_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.n_warmup - self.term_buffer {
            self.next_window = last;
        }
    }
}

#[derive(Default)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn add(&mut self, q: &[f64]) {
        if self.mean.is_empty() {
            self.mean = vec![0.0; q.len()];
            self.m2 = vec![0.0; q.len()];
        }
        self.n += 1.0;
        for i in 0..q.len() {
            let d = q[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (q[i] - self.mean[i]);
        }
    }

    /// Sample variance shrunk toward 1e-3.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m2| {
                let var = m2 / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

fn run_chain<T: LogDensity>(mut target: T, init: &[f64], config: &SamplerConfig, chain: usize) -> Result<ChainResult> {
    let dim = init.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64 + 1);
    let mut g = vec![0.0; dim];
    let logp = target.log_density_grad(init, &mut g)?;
    let mut z = Point {
        q: init.to_vec(),
        p: vec![0.0; dim],
        g,
        logp,
    };
    let mut c = Chain {
        target,
        rng,
        eps: 1.0,
        inv_metric: vec![1.0; dim],
        max_depth: config.max_tree_depth,
    };
    c.init_stepsize(&z)?;
    let mut da = DualAveraging::new(c.eps, config.target_accept);
    let mut windows = Windows::new(config.n_warmup);
    let mut welford = Welford::default();
    let mut warmup_divergences = 0;

    for _ in 0..config.n_warmup {
        let t = c.transition(&mut z)?;
        if t.divergent {
            warmup_divergences += 1;
        }
        c.eps = da.update(t.accept_stat);
        if windows.in_window() {
            welford.add(&z.q);
        }
        if windows.at_window_end() {
            windows.advance();
            c.inv_metric = welford.regularized();
            welford = Welford::default();
            c.eps = c.eps.max(1e-10);
            c.init_stepsize(&z)?;
            da = DualAveraging::new(c.eps, config.target_accept);
        }
        windows.counter += 1;
    }
    if warmup_divergences == config.n_warmup {
        return Err(Error::SamplingFailed { last_state: z.q });
    }
    c.eps = da.x_bar.exp();

    let mut out = ChainResult {
        chain,
        draws: Vec::with_capacity(config.n_draws),
        draws_beta: Vec::new(),
        accept_stats: Vec::with_capacity(config.n_draws),
        divergences: 0,
        warmup_divergences,
        tree_depths: Vec::with_capacity(config.n_draws),
        energy_errors: Vec::with_capacity(config.n_draws),
        step_size: c.eps,
        inv_metric: c.inv_metric.clone(),
        rhat: Vec::new(),
        ess: Vec::new(),
        wall_seconds: 0.0,
    };
    for _ in 0..config.n_draws {
        let t = c.transition(&mut z)?;
        out.draws.push(z.q.clone());
        out.accept_stats.push(t.accept_stat);
        out.tree_depths.push(t.depth);
        out.energy_errors.push(t.energy_error);
        if t.divergent {
            out.divergences += 1;
        }
    }
    Ok(out)
}

/// Worker pool size from `PROXTREND_THREADS`; 0 or unset means rayon's default.
fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var("PROXTREND_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

/// Runs `config.n_chains` chains of NUTS on `target` from `init`.
pub fn sample_target<T: LogDensity + Clone + Send + Sync>(
    target: &T,
    init: &[f64],
    config: &SamplerConfig,
) -> Result<Vec<ChainResult>> {
    config.validate()?;
    if init.len() != target.dim() {
        return Err(Error::DimMismatch {
            expected: target.dim(),
            got: init.len(),
        });
    }
    let start = Instant::now();
    let pool = thread_pool()?;
    let results: Vec<Result<ChainResult>> = pool.install(|| {
        (0..config.n_chains)
            .into_par_iter()
            .map(|chain| run_chain(target.clone(), init, config, chain))
            .collect()
    });
    let wall = start.elapsed().as_secs_f64();
    let mut chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    for c in &mut chains {
        c.wall_seconds = wall;
    }
    Ok(chains)
}

/// Samples the surrogate posterior of `spec` on `data`, maps the draws to β
/// and attaches per-coordinate R̂ and ESS of `[β, log σ², log α]`.
pub fn sample(spec: &ModelSpec, data: &TrendData, config: &SamplerConfig) -> Result<Vec<ChainResult>> {
    let posterior = Posterior::new(data, spec)?;
    let init = initialize(data, spec)?.to_vec();
    let mut chains = sample_target(&posterior, &init, config)?;
    let n = data.n();
    for c in &mut chains {
        c.draws_beta = c
            .draws
            .iter()
            .map(|row| posterior.to_beta(&row[..n]))
            .collect::<Result<_>>()?;
    }
    if chains.len() >= 2 {
        let report = diagnostics(&chains)?;
        for c in &mut chains {
            c.rhat = report.rhat.clone();
            c.ess = report.ess_bulk.clone();
        }
    }
    Ok(chains)
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

pub const RHAT_THRESHOLD: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub ess_tail: Vec<f64>,
    /// Coordinates with R̂ above 1.05.
    pub flagged: Vec<usize>,
    pub max_rhat: f64,
    pub min_ess_bulk: f64,
    pub divergences: usize,
    pub n_chains: usize,
    pub n_draws: usize,
}

impl DiagnosticsReport {
    /// Fraction of coordinates with R̂ below 1.05.
    pub fn fraction_converged(&self) -> f64 {
        let ok = self.rhat.iter().filter(|r| **r < RHAT_THRESHOLD).count();
        ok as f64 / self.rhat.len().max(1) as f64
    }
}

/// Diagnostics over `[β, log σ², log α]` when β draws are present, otherwise
/// over the raw draws.
pub fn diagnostics(chains: &[ChainResult]) -> Result<DiagnosticsReport> {
    if chains.len() < 2 {
        return Err(Error::InsufficientChains { got: chains.len() });
    }
    let per_chain: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|c| {
            if c.draws_beta.is_empty() {
                c.draws.clone()
            } else {
                c.draws
                    .iter()
                    .zip(&c.draws_beta)
                    .map(|(raw, beta)| {
                        let mut row = beta.clone();
                        row.extend_from_slice(&raw[raw.len() - 2..]);
                        row
                    })
                    .collect()
            }
        })
        .collect();
    let mut report = diagnostics_of(&per_chain)?;
    report.divergences = chains.iter().map(|c| c.divergences).sum();
    Ok(report)
}

/// Diagnostics of `chains[c][draw][coordinate]`.
pub fn diagnostics_of(chains: &[Vec<Vec<f64>>]) -> Result<DiagnosticsReport> {
    if chains.len() < 2 {
        return Err(Error::InsufficientChains { got: chains.len() });
    }
    let n_draws = chains[0].len();
    if n_draws < 4 || chains.iter().any(|c| c.len() != n_draws) {
        return Err(Error::EmptyChains);
    }
    let dim = chains[0][0].len();
    let mut rhat = Vec::with_capacity(dim);
    let mut ess_b = Vec::with_capacity(dim);
    let mut ess_t = Vec::with_capacity(dim);
    for j in 0..dim {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|r| r[j]).collect()).collect();
        rhat.push(rank_rhat(&cols));
        ess_b.push(ess_bulk(&cols));
        ess_t.push(ess_tail(&cols));
    }
    let flagged = (0..dim).filter(|&j| !(rhat[j] <= RHAT_THRESHOLD)).collect();
    Ok(DiagnosticsReport {
        max_rhat: rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_ess_bulk: ess_b.iter().copied().fold(f64::INFINITY, f64::min),
        rhat,
        ess_bulk: ess_b,
        ess_tail: ess_t,
        flagged,
        divergences: 0,
        n_chains: chains.len(),
        n_draws,
    })
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()])
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Classic R̂ of already-split chains.
fn rhat_of(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b_over_n = sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Split-R̂ on the raw values.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    rhat_of(&split(chains))
}

/// Pooled ranks mapped through the normal quantile function, with average
/// ranks for ties.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut idx: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().enumerate().map(move |(i, &v)| (v, ci, i)))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let s = total as f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for e in &idx[i..=j] {
            out[e.1][e.2] = z;
        }
        i = j + 1;
    }
    out
}

fn fold(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let med = crate::stats::quantile_sorted(&all, 0.5);
    chains
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect()
}

/// Rank-normalized split-R̂: the larger of the bulk and folded-tail values.
pub fn rank_rhat(chains: &[Vec<f64>]) -> f64 {
    let bulk = rhat_of(&split(&rank_normalize(chains)));
    let tail = rhat_of(&split(&rank_normalize(&fold(chains))));
    bulk.max(tail)
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
pub fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |c: usize, lag: usize| -> f64 {
        let x = &chains[c];
        let mu = means[c];
        (0..n - lag).map(|i| (x[i] - mu) * (x[i + lag] - mu)).sum::<f64>() / nf
    };
    let acov0: Vec<f64> = (0..m).map(|c| acov(c, 0)).collect();
    let mean_var = mean(&acov0.iter().map(|a| a * nf / (nf - 1.0)).collect::<Vec<_>>());
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |lag: usize| -> f64 {
        let a = (0..m).map(|c| acov(c, lag)).sum::<f64>() / m as f64;
        1.0 - (mean_var - a) / var_plus
    };
    let mut rho_hat = vec![0.0; n + 1];
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[0] = even;
    rho_hat[1] = odd;
    let mut s = 1;
    while s + 4 < n && even + odd > 0.0 {
        even = rho(s + 1);
        odd = rho(s + 2);
        if even + odd >= 0.0 {
            rho_hat[s + 1] = even;
            rho_hat[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 {
        rho_hat[max_s + 1] = even;
    }
    let mut t = 1;
    while t + 3 <= max_s {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1];
    total / tau.max(1.0 / total.log10())
}

/// Bulk ESS: rank-normalized, on split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    ess_raw(&split(&rank_normalize(chains)))
}

/// Tail ESS: the smaller ESS of the 5% and 95% exceedance indicators.
pub fn ess_tail(chains: &[Vec<f64>]) -> f64 {
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let lo = crate::stats::quantile_sorted(&all, 0.05);
    let hi = crate::stats::quantile_sorted(&all, 0.95);
    let ind = |thr: f64| -> Vec<Vec<f64>> {
        split(chains)
            .iter()
            .map(|c| c.iter().map(|&x| if x <= thr { 1.0 } else { 0.0 }).collect())
            .collect()
    };
    ess_raw(&ind(lo)).min(ess_raw(&ind(hi)))
}

/// Monte Carlo standard error of the mean.
pub fn mcse_mean(chains: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    (sample_var(&all) / ess_raw(&split(chains))).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
            for i in 0..q.len() {
                grad[i] = -q[i];
            }
            Ok(-0.5 * dot(q, q))
        }
    }

    fn iid(seed: u64, chains: usize, n: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains)
            .map(|c| {
                (0..n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) + shift * c as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = SamplerConfig {
            target_accept: 0.995,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            n_chains: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn window_schedule_matches_standard_layout() {
        let mut w = Windows::new(1000);
        let mut ends = Vec::new();
        for i in 0..1000 {
            if w.at_window_end() {
                ends.push(i);
                w.advance();
            }
            w.counter += 1;
        }
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn rhat_of_duplicated_chains_is_one() {
        let a = iid(3, 1, 1000, 0.0).remove(0);
        let r = rank_rhat(&[a.clone(), a.clone(), a.clone(), a]);
        assert!((r - 1.0).abs() <= 1.0 / 500.0, "{r}");
    }

    #[test]
    fn rhat_detects_offset_chains() {
        let c = iid(4, 2, 1000, 10.0);
        assert!(rank_rhat(&c) > 1.05);
        assert!(split_rhat(&c) > 1.05);
    }

    #[test]
    fn ess_of_iid_draws_is_near_draw_count() {
        let c = iid(5, 4, 1000, 0.0);
        let e = ess_bulk(&c);
        assert!((e / 4000.0 - 1.0).abs() < 0.2, "{e}");
    }

    #[test]
    fn single_chain_is_rejected() {
        let c = vec![iid(6, 1, 100, 0.0)
            .remove(0)
            .into_iter()
            .map(|x| vec![x])
            .collect::<Vec<_>>()];
        assert_eq!(diagnostics_of(&c), Err(Error::InsufficientChains { got: 1 }));
    }

    #[test]
    fn reproducible_draws() {
        let cfg = SamplerConfig {
            n_warmup: 100,
            n_draws: 100,
            n_chains: 2,
            seed: 9,
            ..Default::default()
        };
        let a = sample_target(&StdNormal(3), &[0.5, 0.5, 0.5], &cfg).unwrap();
        let b = sample_target(&StdNormal(3), &[0.5, 0.5, 0.5], &cfg).unwrap();
        assert_eq!(a[0].draws, b[0].draws);
        assert_ne!(a[0].draws, a[1].draws);
    }
}
