//! Observations on a grid: replicate aggregation, thinning, synthetic trends
//! and noise simulation.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-location sufficient statistics of a data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendData {
    pub grid: Vec<f64>,
    pub ybar: Vec<f64>,
    pub weights: Vec<usize>,
    /// Within-location sum of squares.
    pub sse: f64,
    pub m: usize,
    /// Original `(x, y)` pairs, kept so the data can be re-thinned.
    pub raw: Option<Vec<(f64, f64)>>,
}

impl TrendData {
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    /// Sample variance of all m observations.
    pub fn var_y(&self) -> f64 {
        if self.m < 2 {
            return 0.0;
        }
        let mf = self.m as f64;
        let mean = self.weighted_mean();
        let between: f64 = self
            .ybar
            .iter()
            .zip(&self.weights)
            .map(|(y, &w)| w as f64 * (y - mean).powi(2))
            .sum();
        (between + self.sse) / (mf - 1.0)
    }

    pub fn weighted_mean(&self) -> f64 {
        self.ybar
            .iter()
            .zip(&self.weights)
            .map(|(y, &w)| w as f64 * y)
            .sum::<f64>()
            / self.m as f64
    }

    /// Expands the statistics back into points. Uses `raw` when present;
    /// otherwise repeats `ybar` at each location, which loses the
    /// within-location spread.
    pub fn flatten(&self) -> Vec<(f64, f64)> {
        if let Some(raw) = &self.raw {
            return raw.clone();
        }
        let mut out = Vec::with_capacity(self.m);
        for i in 0..self.n() {
            for _ in 0..self.weights[i] {
                out.push((self.grid[i], self.ybar[i]));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        for v in [self.ybar.len(), self.weights.len()] {
            if v != n {
                return Err(Error::DimMismatch { expected: n, got: v });
            }
        }
        for i in 0..n {
            if !self.grid[i].is_finite() || (i > 0 && self.grid[i] <= self.grid[i - 1]) {
                return Err(Error::InvalidGrid { index: i });
            }
        }
        if self.weights.contains(&0) || self.weights.iter().sum::<usize>() != self.m {
            return Err(Error::InvalidConfig("weights must be positive and sum to m".into()));
        }
        if self.ybar.iter().any(|y| !y.is_finite()) || !(self.sse >= 0.0) {
            return Err(Error::InvalidConfig("observations must be finite".into()));
        }
        Ok(())
    }
}

/// Groups exactly-equal x values and returns the canonical sorted statistics.
pub fn aggregate(points: &[(f64, f64)]) -> Result<TrendData> {
    if points.is_empty() {
        return Err(Error::EmptyData);
    }
    if let Some(i) = points.iter().position(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidGrid { index: i });
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut grid = Vec::new();
    let mut ybar = Vec::new();
    let mut weights = Vec::new();
    let mut sse = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let x = sorted[start].0;
        let mut end = start;
        while end < sorted.len() && sorted[end].0 == x {
            end += 1;
        }
        let group = &sorted[start..end];
        let mean = group.iter().map(|p| p.1).sum::<f64>() / group.len() as f64;
        sse += group.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>();
        grid.push(x);
        ybar.push(mean);
        weights.push(group.len());
        start = end;
    }
    Ok(TrendData {
        grid,
        ybar,
        weights,
        sse,
        m: sorted.len(),
        raw: Some(sorted),
    })
}

/// Reads a two-column `x,y` CSV, with or without a header row.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::Parse(format!("line {}: expected two columns", line + 1)));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => out.push((x, y)),
            _ if line == 0 => continue,
            _ => {
                return Err(Error::Parse(format!(
                    "line {}: cannot parse `{}`,`{}` as numbers",
                    line + 1,
                    &rec[0],
                    &rec[1]
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(out)
}

pub fn load_csv(path: &Path) -> Result<TrendData> {
    let file = std::fs::File::open(path)?;
    aggregate(&read_csv(file)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinningResult {
    pub data: TrendData,
    pub interval_width: f64,
    /// `mapping[i]` is the merged index of original location `i`.
    pub mapping: Vec<usize>,
}

/// Merges locations that share one of `n_bins` equal-width intervals over the
/// grid range. Bins are left-closed, right-open, except the last.
pub fn thin(data: &TrendData, n_bins: usize) -> Result<ThinningResult> {
    if n_bins < 2 {
        return Err(Error::InvalidConfig(format!(
            "thinning needs at least 2 bins, got {n_bins}"
        )));
    }
    data.validate()?;
    let n = data.n();
    let lo = data.grid[0];
    let hi = data.grid[n - 1];
    let width = (hi - lo) / n_bins as f64;
    if n_bins >= n {
        return Ok(ThinningResult {
            data: data.clone(),
            interval_width: width,
            mapping: (0..n).collect(),
        });
    }
    let bin_of = |x: f64| (((x - lo) / width).floor() as usize).min(n_bins - 1);

    let mut grid = Vec::new();
    let mut ybar = Vec::new();
    let mut weights = Vec::new();
    let mut mapping = vec![0; n];
    let mut sse = data.sse;
    let mut i = 0;
    while i < n {
        let b = bin_of(data.grid[i]);
        let mut j = i;
        while j < n && bin_of(data.grid[j]) == b {
            j += 1;
        }
        let w: usize = data.weights[i..j].iter().sum();
        let wf = w as f64;
        let x = (i..j).map(|q| data.weights[q] as f64 * data.grid[q]).sum::<f64>() / wf;
        let y = (i..j).map(|q| data.weights[q] as f64 * data.ybar[q]).sum::<f64>() / wf;
        sse += (i..j)
            .map(|q| data.weights[q] as f64 * (data.ybar[q] - y).powi(2))
            .sum::<f64>();
        for slot in &mut mapping[i..j] {
            *slot = grid.len();
        }
        grid.push(x);
        ybar.push(y);
        weights.push(w);
        i = j;
    }
    let raw = data.raw.as_ref().map(|pts| {
        pts.iter()
            .map(|&(x, y)| {
                let idx = data.grid.partition_point(|g| *g < x);
                (grid[mapping[idx.min(n - 1)]], y)
            })
            .collect()
    });
    Ok(ThinningResult {
        data: TrendData {
            grid,
            ybar,
            weights,
            sse,
            m: data.m,
            raw,
        },
        interval_width: width,
        mapping,
    })
}

/// Linear interpolation of per-merged-location values back to the original
/// locations; values beyond the merged range are held constant.
pub fn interpolate_back(merged_grid: &[f64], values: &[f64], original_grid: &[f64]) -> Vec<f64> {
    original_grid
        .iter()
        .map(|&x| {
            let j = merged_grid.partition_point(|g| *g <= x);
            if j == 0 {
                values[0]
            } else if j >= merged_grid.len() {
                values[merged_grid.len() - 1]
            } else {
                let (x0, x1) = (merged_grid[j - 1], merged_grid[j]);
                let t = (x - x0) / (x1 - x0);
                values[j - 1] + t * (values[j] - values[j - 1])
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    PiecewiseLinear,
    SmoothTrend,
    Sinusoid,
    PiecewiseQuadCubic,
    IncSinusoid,
    ConvexLinear,
    TruncatedCubic,
    Logarithm,
}

impl Trend {
    pub const ALL: [Trend; 8] = [
        Trend::PiecewiseLinear,
        Trend::SmoothTrend,
        Trend::Sinusoid,
        Trend::PiecewiseQuadCubic,
        Trend::IncSinusoid,
        Trend::ConvexLinear,
        Trend::TruncatedCubic,
        Trend::Logarithm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Trend::PiecewiseLinear => "piecewise_linear",
            Trend::SmoothTrend => "smooth_trend",
            Trend::Sinusoid => "sinusoid",
            Trend::PiecewiseQuadCubic => "piecewise_quad_cubic",
            Trend::IncSinusoid => "inc_sinusoid",
            Trend::ConvexLinear => "convex_linear",
            Trend::TruncatedCubic => "truncated_cubic",
            Trend::Logarithm => "logarithm",
        }
    }

    /// Natural domain of the trend: [0, 100] for the first four, [0, 10] for
    /// the shape-restricted ones.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Trend::PiecewiseLinear | Trend::SmoothTrend | Trend::Sinusoid | Trend::PiecewiseQuadCubic => (0.0, 100.0),
            _ => (0.0, 10.0),
        }
    }

    /// Evenly spaced grid: {1, …, n} on the 0–100 domain, `linspace(0, 10, n)`
    /// on the 0–10 domain.
    pub fn unit_grid(&self, n: usize) -> Vec<f64> {
        match self.domain() {
            (_, hi) if hi > 10.0 => (1..=n).map(|i| i as f64).collect(),
            (lo, hi) => {
                if n == 1 {
                    return vec![lo];
                }
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        }
    }
}

impl FromStr for Trend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Trend::ALL
            .into_iter()
            .find(|t| t.name() == key)
            .ok_or_else(|| Error::UnknownTrend(s.to_string()))
    }
}

/// Default knots of the piecewise-linear trend.
pub const PIECEWISE_LINEAR_KNOTS: [(f64, f64); 4] = [(0.0, 0.0), (35.0, 35.0), (70.0, 0.0), (100.0, 15.0)];

/// One realisation of a squared-exponential GP (length-scale 12, s.d. 9) at
/// x = 1, …, 100.
const SMOOTH_TREND: [f64; 100] = [
    1.131572, 1.028743, 0.975831, 0.974663, 1.023580, //
    1.118399, 1.253523, 1.422579, 1.618472, 1.834083, //
    2.062653, 2.297765, 2.531442, 2.756329, 2.962509, //
    3.138814, 3.271714, 3.345651, 3.343693, 3.248447, //
    3.042603, 2.712097, 2.245396, 1.637445, 0.889805, //
    0.011633, -0.979835, -2.059609, -3.195895, -4.351658, //
    -5.487621, -6.563547, -7.541905, -8.389574, -9.080605, //
    -9.597223, -9.931507, -10.084644, -10.066609, -9.894600, //
    -9.592649, -9.186351, -8.703236, -8.169042, -7.605999, //
    -7.031362, -6.455285, -5.881166, -5.305142, -4.716717, //
    -4.100012, -3.435651, -2.701505, -1.875585, -0.938782, //
    0.125068, 1.325641, 2.665815, 4.139403, 5.732042, //
    7.420189, 9.171584, 10.948151, 12.704635, 14.393591, //
    15.965684, 17.374167, 18.576043, 19.535323, 20.223816, //
    20.625111, 20.733527, 20.555548, 20.108406, 19.421247, //
    18.529944, 17.478147, 16.313523, 15.084525, 13.839841, //
    12.623678, 11.475416, 10.427686, 9.504766, 8.722425, //
    8.088478, 7.602118, 7.255950, 7.035505, 6.923312, //
    6.897237, 6.935423, 7.014745, 7.114247, 7.215833, //
    7.305203, 7.372051, 7.410624, 7.419112, 7.399187,
];

/// Piecewise-linear interpolation through `knots`, extended flat outside.
pub fn piecewise_linear(knots: &[(f64, f64)], x: f64) -> f64 {
    let j = knots.partition_point(|k| k.0 <= x);
    if j == 0 {
        knots[0].1
    } else if j >= knots.len() {
        knots[knots.len() - 1].1
    } else {
        let (a, b) = (knots[j - 1], knots[j]);
        a.1 + (x - a.0) * (b.1 - a.1) / (b.0 - a.0)
    }
}

fn quad_cubic_raw(x: f64) -> f64 {
    if x <= 40.0 {
        -(x - 20.0).powi(3)
    } else if x <= 50.0 {
        60.0 * (x - 50.0).powi(2) - 14000.0
    } else if x <= 70.0 {
        20.0 * (x - 50.0).powi(2) - 14000.0
    } else {
        (x - 110.0).powi(3) / 6.0 + 14000.0 / 3.0
    }
}

/// Affine map fixed by evaluating on {1..100} and rescaling to s.d. 9; the
/// mean is left alone.
fn quad_cubic_scale() -> f64 {
    let v: Vec<f64> = (1..=100).map(|i| quad_cubic_raw(i as f64)).collect();
    let mean = v.iter().sum::<f64>() / 100.0;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    9.0 / sd
}

pub fn generate_trend(trend: Trend, grid: &[f64]) -> Vec<f64> {
    match trend {
        Trend::PiecewiseLinear => grid
            .iter()
            .map(|&x| piecewise_linear(&PIECEWISE_LINEAR_KNOTS, x))
            .collect(),
        Trend::SmoothTrend => {
            let knots: Vec<(f64, f64)> = SMOOTH_TREND
                .iter()
                .enumerate()
                .map(|(i, &v)| ((i + 1) as f64, v))
                .collect();
            grid.iter().map(|&x| piecewise_linear(&knots, x)).collect()
        }
        Trend::Sinusoid => grid
            .iter()
            .map(|&x| 13.0 * (4.0 * std::f64::consts::PI * x / 100.0).sin())
            .collect(),
        Trend::PiecewiseQuadCubic => {
            let s = quad_cubic_scale();
            grid.iter().map(|&x| s * quad_cubic_raw(x)).collect()
        }
        Trend::IncSinusoid => grid.iter().map(|&x| x + x.sin()).collect(),
        Trend::ConvexLinear => grid
            .iter()
            .map(|&x| {
                if x <= 2.0 {
                    10.0 - 5.0 * x
                } else if x <= 8.0 {
                    0.0
                } else {
                    5.0 * x - 40.0
                }
            })
            .collect(),
        Trend::TruncatedCubic => grid
            .iter()
            .map(|&x| if x <= 5.0 { 0.0 } else { (x - 5.0).powi(3) / 10.0 })
            .collect(),
        Trend::Logarithm => grid.iter().map(|&x| 5.0 * x.ln_1p()).collect(),
    }
}

/// `y_i = trend_i + N(0, σ²)`, one observation per location.
pub fn simulate(grid: &[f64], trend: &[f64], sigma: f64, seed: u64) -> Result<TrendData> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "noise level must be positive, got {sigma}"
        )));
    }
    if grid.len() != trend.len() {
        return Err(Error::DimMismatch {
            expected: grid.len(),
            got: trend.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<(f64, f64)> = grid
        .iter()
        .zip(trend)
        .map(|(&x, &f)| {
            let e: f64 = rng.sample(StandardNormal);
            (x, f + sigma * e)
        })
        .collect();
    aggregate(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Unit,
    UniformRandom,
}

/// JSON configuration of a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub trend: Trend,
    pub sigma: f64,
    pub n: usize,
    #[serde(default)]
    pub grid: GridKind,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn grid(&self) -> Vec<f64> {
        match self.grid {
            GridKind::Unit => self.trend.unit_grid(self.n),
            GridKind::UniformRandom => {
                let (lo, hi) = self.trend.domain();
                // Separate stream from the noise so both are reproducible.
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(1);
                let mut g: Vec<f64> = (0..self.n).map(|_| rng.random_range(lo..hi)).collect();
                g.sort_by(f64::total_cmp);
                g
            }
        }
    }

    /// Returns the data and the true trend at its grid locations.
    pub fn run(&self) -> Result<(TrendData, Vec<f64>)> {
        if self.n == 0 {
            return Err(Error::EmptyData);
        }
        let grid = self.grid();
        let truth = generate_trend(self.trend, &grid);
        let data = simulate(&grid, &truth, self.sigma, self.seed)?;
        let truth = generate_trend(self.trend, &data.grid);
        Ok((data, truth))
    }
}
