//! End-to-end fitting: default resolution, optional thinning, the PBSRTF
//! rescaling round trip, sampling and summaries.

use serde::{Deserialize, Serialize};

use crate::data::{interpolate_back, thin, GridKind, SimulationConfig, ThinningResult, Trend, TrendData};
use crate::epigraph::ShapeSpec;
use crate::error::{Error, Result};
use crate::posterior::{choose_reparam, Model, ModelSpec, Reparam};
use crate::sampler::{diagnostics, sample, ChainResult, DiagnosticsReport, SamplerConfig};
use crate::stats::{evaluate, summarize, FitSummary, Metrics};

/// User-facing fit request; `None` hyperparameters take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub model: Model,
    pub k: usize,
    pub shape: Option<ShapeSpec>,
    /// For PBSRTF this is on the rescaled [0, 10] data.
    pub lambda: Option<f64>,
    pub s2: Option<f64>,
    pub mu: Option<f64>,
    pub thin: Option<usize>,
    pub sampler: SamplerConfig,
}

impl FitOptions {
    pub fn pbtf(k: usize) -> Self {
        Self {
            model: Model::Pbtf,
            k,
            shape: None,
            lambda: None,
            s2: None,
            mu: None,
            thin: None,
            sampler: SamplerConfig::default(),
        }
    }

    pub fn pbsrtf(k: usize, shape: ShapeSpec) -> Self {
        Self {
            model: Model::Pbsrtf,
            shape: Some(shape),
            ..Self::pbtf(k)
        }
    }
}

/// Affine map to the sampling scale: `x' = (x − x_min)/x_scale`,
/// `y' = (y − y_min)/y_scale`, so both span [0, 10].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub x_min: f64,
    pub x_scale: f64,
    pub y_min: f64,
    pub y_scale: f64,
}

impl Rescale {
    pub fn to_unit_range(data: &TrendData) -> Self {
        let span = |lo: f64, hi: f64| if hi > lo { (hi - lo) / 10.0 } else { 1.0 };
        let x_min = data.grid[0];
        let x_max = data.grid[data.n() - 1];
        let (y_min, y_max) = match &data.raw {
            Some(raw) => raw
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1))),
            None => data
                .ybar
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y))),
        };
        Self {
            x_min,
            x_scale: span(x_min, x_max),
            y_min,
            y_scale: span(y_min, y_max),
        }
    }

    pub fn apply(&self, data: &TrendData) -> TrendData {
        let fx = |x: f64| (x - self.x_min) / self.x_scale;
        let fy = |y: f64| (y - self.y_min) / self.y_scale;
        TrendData {
            grid: data.grid.iter().map(|&x| fx(x)).collect(),
            ybar: data.ybar.iter().map(|&y| fy(y)).collect(),
            weights: data.weights.clone(),
            sse: data.sse / (self.y_scale * self.y_scale),
            m: data.m,
            raw: data
                .raw
                .as_ref()
                .map(|r| r.iter().map(|&(x, y)| (fx(x), fy(y))).collect()),
        }
    }

    pub fn beta_back(&self, v: f64) -> f64 {
        self.y_min + self.y_scale * v
    }

    /// Maps one draw `[β', log σ'², log α']` back to original units. α
    /// measures `‖D(x,k+1)β‖₁`, which scales as `y_scale / x_scale^k`.
    pub fn draw_back(&self, row: &mut [f64], k: usize) {
        let n = row.len() - 2;
        for v in &mut row[..n] {
            *v = self.beta_back(*v);
        }
        row[n] += 2.0 * self.y_scale.ln();
        row[n + 1] += self.y_scale.ln() - k as f64 * self.x_scale.ln();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    /// Hyperparameters as used by the sampler (sampling scale for PBSRTF).
    pub spec: ModelSpec,
    pub rescale: Option<Rescale>,
    pub thinning: Option<ThinningResult>,
    /// Grid the model was fitted on (the merged grid when thinned).
    pub grid: Vec<f64>,
    /// Draws in original units.
    pub chains: Vec<ChainResult>,
    /// Summary on `grid`.
    pub summary: FitSummary,
    pub diagnostics: Option<DiagnosticsReport>,
}

impl FitOutput {
    /// Summary at the locations of the unthinned data. Thinned fits are
    /// linearly interpolated between merged locations.
    pub fn summary_at_original(&self, original_grid: &[f64]) -> FitSummary {
        match &self.thinning {
            None => self.summary.clone(),
            Some(_) => FitSummary {
                median: interpolate_back(&self.grid, &self.summary.median, original_grid),
                q025: interpolate_back(&self.grid, &self.summary.q025, original_grid),
                q975: interpolate_back(&self.grid, &self.summary.q975, original_grid),
                ..self.summary.clone()
            },
        }
    }
}

/// Resolves defaults for `opts` on `data` (already thinned and rescaled).
pub fn resolve_spec(data: &TrendData, opts: &FitOptions) -> Result<ModelSpec> {
    let mut spec = match opts.model {
        Model::Pbtf => ModelSpec::pbtf(data, opts.k)?,
        Model::Pbsrtf => {
            let shape = opts
                .shape
                .clone()
                .ok_or_else(|| Error::InvalidConfig("PBSRTF needs --shape".into()))?;
            ModelSpec::pbsrtf(data, opts.k, shape)?
        }
    };
    if let Some(l) = opts.lambda {
        spec.lambda = l;
    }
    if let Some(s2) = opts.s2 {
        spec.s2 = s2;
    }
    if let Some(mu) = opts.mu {
        spec.mu = mu;
    }
    spec.validate(data.n())?;
    Ok(spec)
}

/// Checks the reparameterization rule before any work is done.
pub fn check_fit_size(data: &TrendData, opts: &FitOptions) -> Result<()> {
    let n = match opts.thin {
        Some(b) if b < data.n() => b,
        _ => data.n(),
    };
    if opts.model == Model::Pbtf {
        choose_reparam(opts.k, n)?;
    }
    Ok(())
}

pub fn fit(data: &TrendData, opts: &FitOptions) -> Result<FitOutput> {
    data.validate()?;
    opts.sampler.validate()?;
    check_fit_size(data, opts)?;
    let thinning = match opts.thin {
        Some(bins) => Some(thin(data, bins)?),
        None => None,
    };
    let fitted = thinning.as_ref().map_or(data, |t| &t.data).clone();
    let fitted = &fitted;
    let rescale = (opts.model == Model::Pbsrtf).then(|| Rescale::to_unit_range(fitted));
    let sampling_data = match &rescale {
        Some(r) => r.apply(fitted),
        None => fitted.clone(),
    };
    let spec = resolve_spec(&sampling_data, opts)?;
    debug_assert!(spec.model == Model::Pbsrtf || spec.reparam != Reparam::None);
    let mut chains = sample(&spec, &sampling_data, &opts.sampler)?;
    if let Some(r) = &rescale {
        for c in &mut chains {
            for row in &mut c.draws {
                r.draw_back(row, spec.k);
            }
            for row in &mut c.draws_beta {
                for v in row.iter_mut() {
                    *v = r.beta_back(*v);
                }
            }
        }
    }
    let summary = summarize(&chains)?;
    let diagnostics = if chains.len() >= 2 {
        Some(diagnostics(&chains)?)
    } else {
        None
    };
    Ok(FitOutput {
        spec,
        rescale,
        thinning,
        grid: fitted.grid.clone(),
        chains,
        summary,
        diagnostics,
    })
}

/// Replicated simulation study for one trend and noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub trend: Trend,
    pub sigma: f64,
    pub n: usize,
    pub grid: GridKind,
    pub replicates: usize,
    /// Replicate r uses data and sampler seed `first_seed + r`.
    pub first_seed: u64,
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub trend: Trend,
    pub model: Model,
    pub k: usize,
    pub sigma: f64,
    pub replicates: usize,
    pub mad_mean: f64,
    pub mad_sd: f64,
    pub mciw: f64,
    pub cp: f64,
    pub tcpu_mean: f64,
    pub per_replicate: Vec<Metrics>,
}

/// Fits one simulated replicate and scores it against the truth at the
/// original locations.
pub fn run_replicate(cfg: &BenchConfig, seed: u64) -> Result<(Metrics, f64)> {
    let sim = SimulationConfig {
        trend: cfg.trend,
        sigma: cfg.sigma,
        n: cfg.n,
        grid: cfg.grid,
        seed,
    };
    let (data, truth) = sim.run()?;
    let mut opts = cfg.fit.clone();
    opts.sampler.seed = seed;
    let out = fit(&data, &opts)?;
    let summary = out.summary_at_original(&data.grid);
    Ok((evaluate(&summary, &truth)?, summary.tcpu_seconds))
}

pub fn bench(cfg: &BenchConfig) -> Result<BenchRow> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidConfig("at least one replicate is needed".into()));
    }
    let mut per = Vec::with_capacity(cfg.replicates);
    let mut tcpu = 0.0;
    for r in 0..cfg.replicates {
        let (m, t) = run_replicate(cfg, cfg.first_seed + r as u64)?;
        per.push(m);
        tcpu += t;
    }
    let rf = cfg.replicates as f64;
    let mad_mean = per.iter().map(|m| m.mad).sum::<f64>() / rf;
    let mad_sd = if cfg.replicates > 1 {
        (per.iter().map(|m| (m.mad - mad_mean).powi(2)).sum::<f64>() / (rf - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(BenchRow {
        trend: cfg.trend,
        model: cfg.fit.model,
        k: cfg.fit.k,
        sigma: cfg.sigma,
        replicates: cfg.replicates,
        mad_mean,
        mad_sd,
        mciw: per.iter().map(|m| m.mciw).sum::<f64>() / rf,
        cp: per.iter().map(|m| m.cp).sum::<f64>() / rf,
        tcpu_mean: tcpu / rf,
        per_replicate: per,
    })
}
