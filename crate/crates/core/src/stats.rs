//! Posterior summaries and the MAD / CP / MCIW evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::ChainResult;

/// Quantile of sorted data by linear interpolation between order
/// statistics: position `p·(N−1)` in zero-based indexing.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyChains);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, p))
}

/// `(median, q025, q975)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

impl Interval {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyChains);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            median: quantile_sorted(&v, 0.5),
            q025: quantile_sorted(&v, 0.025),
            q975: quantile_sorted(&v, 0.975),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub median: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
    pub sigma_summary: Interval,
    pub alpha_summary: Interval,
    pub tcpu_seconds: f64,
}

/// Pools β draws over chains and takes per-coordinate quantiles; σ and α are
/// read from the last two sampled coordinates.
pub fn summarize(chains: &[ChainResult]) -> Result<FitSummary> {
    let rows: Vec<(&Vec<f64>, &Vec<f64>)> = chains
        .iter()
        .flat_map(|c| {
            let beta = if c.draws_beta.is_empty() {
                &c.draws
            } else {
                &c.draws_beta
            };
            beta.iter().zip(&c.draws)
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyChains);
    }
    let n = rows[0].0.len();
    let mut median = Vec::with_capacity(n);
    let mut q025 = Vec::with_capacity(n);
    let mut q975 = Vec::with_capacity(n);
    let mut col = vec![0.0; rows.len()];
    for j in 0..n {
        for (slot, (beta, _)) in col.iter_mut().zip(&rows) {
            *slot = beta[j];
        }
        let iv = Interval::of(&col)?;
        median.push(iv.median);
        q025.push(iv.q025);
        q975.push(iv.q975);
    }
    let d = rows[0].1.len();
    let sigma: Vec<f64> = rows.iter().map(|(_, raw)| (0.5 * raw[d - 2]).exp()).collect();
    let alpha: Vec<f64> = rows.iter().map(|(_, raw)| raw[d - 1].exp()).collect();
    Ok(FitSummary {
        median,
        q025,
        q975,
        sigma_summary: Interval::of(&sigma)?,
        alpha_summary: Interval::of(&alpha)?,
        tcpu_seconds: chains.iter().map(|c| c.wall_seconds).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mad: f64,
    pub cp: f64,
    pub mciw: f64,
}

/// Mean absolute deviation of the median, coverage of the 95% intervals and
/// mean interval width against `truth`.
pub fn evaluate(summary: &FitSummary, truth: &[f64]) -> Result<Metrics> {
    let n = summary.median.len();
    if truth.len() != n || summary.q025.len() != n || summary.q975.len() != n {
        return Err(Error::DimMismatch {
            expected: n,
            got: truth.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyChains);
    }
    let nf = n as f64;
    let mut mad = 0.0;
    let mut covered = 0usize;
    let mut width = 0.0;
    for i in 0..n {
        mad += (summary.median[i] - truth[i]).abs();
        if summary.q025[i] <= truth[i] && truth[i] <= summary.q975[i] {
            covered += 1;
        }
        width += summary.q975[i] - summary.q025[i];
    }
    Ok(Metrics {
        mad: mad / nf,
        cp: covered as f64 / nf,
        mciw: width / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(median: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> FitSummary {
        let iv = Interval {
            median: 0.0,
            q025: 0.0,
            q975: 0.0,
        };
        FitSummary {
            median,
            q025: lo,
            q975: hi,
            sigma_summary: iv,
            alpha_summary: iv,
            tcpu_seconds: 0.0,
        }
    }

    #[test]
    fn median_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.5).unwrap(), 50.5);
        assert_eq!(quantile(&[7.0; 5], 0.025).unwrap(), 7.0);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn hand_built_metrics() {
        let s = flat(vec![1.0, 2.0, 3.0], vec![0.0; 3], vec![2.0; 3]);
        let m = evaluate(&s, &[0.0, 2.0, 5.0]).unwrap();
        // |1-0| + |2-2| + |3-5| = 3 over 3 points.
        assert_eq!(m.mad, 1.0);
        assert!((m.cp - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.mciw, 2.0);
        assert!(evaluate(&s, &[0.0]).is_err());
    }

    #[test]
    fn perfect_fit_and_total_miss() {
        let t = vec![1.0, -2.0, 3.5];
        let s = flat(t.clone(), t.clone(), t.clone());
        assert_eq!(
            evaluate(&s, &t).unwrap(),
            Metrics {
                mad: 0.0,
                cp: 1.0,
                mciw: 0.0
            }
        );
        let off: Vec<f64> = t.iter().map(|x| x + 1.0).collect();
        assert_eq!(evaluate(&s, &off).unwrap().cp, 0.0);
    }
}
