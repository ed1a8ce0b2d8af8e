mod common;

use common::{double_well_cdf, ks_distance, DoubleWell, Gaussian};
use proxtrend::data::{generate_trend, simulate, Trend};
use proxtrend::posterior::{initialize, ModelSpec};
use proxtrend::sampler::{diagnostics_of, mcse_mean, sample, sample_target, LogDensity, SamplerConfig};
use proxtrend::{Error, Result};

/// Finite only at the origin, so every trajectory diverges.
#[derive(Clone)]
struct Spike;

impl LogDensity for Spike {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_grad(&mut self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        if q.iter().any(|v| *v != 0.0) {
            return Err(Error::NonFiniteDensity {
                value: f64::NAN,
                state: q.to_vec(),
            });
        }
        grad.fill(0.0);
        Ok(0.0)
    }
}

fn coord(chains: &[proxtrend::sampler::ChainResult], j: usize) -> Vec<Vec<f64>> {
    chains.iter().map(|c| c.draws.iter().map(|d| d[j]).collect()).collect()
}

fn config(draws: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        n_warmup: 1000,
        n_draws: draws,
        n_chains: 4,
        seed,
        ..SamplerConfig::default()
    }
}

#[test]
fn standard_normal_is_recovered() {
    let d = 5;
    let prec: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| f64::from(i == j)).collect()).collect();
    let chains = sample_target(&Gaussian { prec }, &[0.5; 5], &config(2000, 3)).unwrap();
    let all: Vec<&Vec<f64>> = chains.iter().flat_map(|c| &c.draws).collect();
    let n = all.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| all.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    for j in 0..d {
        let se = mcse_mean(&coord(&chains, j));
        assert!(mean[j].abs() < 3.0 * se, "coord {j}: mean {} mcse {se}", mean[j]);
        for l in 0..d {
            let cov = all.iter().map(|r| (r[j] - mean[j]) * (r[l] - mean[l])).sum::<f64>() / (n - 1.0);
            let want = f64::from(j == l);
            assert!((cov - want).abs() < 0.1, "cov[{j}][{l}] = {cov}");
        }
    }
    let mut dh: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.energy_errors.iter().map(|e| e.abs()))
        .collect();
    dh.sort_by(f64::total_cmp);
    assert!(dh[dh.len() / 2] < 0.2, "median |ΔH| {}", dh[dh.len() / 2]);
}

#[test]
fn correlated_gaussian_converges() {
    // Covariance [[4, 1.8], [1.8, 1]] (ρ = 0.9).
    let det = 4.0 - 1.8 * 1.8;
    let prec = vec![vec![1.0 / det, -1.8 / det], vec![-1.8 / det, 4.0 / det]];
    let chains = sample_target(&Gaussian { prec }, &[1.0, -1.0], &config(2000, 9)).unwrap();
    let report = diagnostics_of(&chains.iter().map(|c| c.draws.clone()).collect::<Vec<_>>()).unwrap();
    assert!(report.max_rhat < 1.02, "R̂ {}", report.max_rhat);
    for j in 0..2 {
        let c = coord(&chains, j);
        let m = c.iter().flatten().sum::<f64>() / 8000.0;
        assert!(m.abs() < 3.0 * mcse_mean(&c));
    }
}

#[test]
fn double_well_matches_quadrature_cdf() {
    let chains = sample_target(&DoubleWell, &[0.3], &config(12_500, 5)).unwrap();
    let mut xs: Vec<f64> = chains.iter().flat_map(|c| c.draws.iter().map(|d| d[0])).collect();
    assert_eq!(xs.len(), 50_000);
    xs.sort_by(f64::total_cmp);
    let ks = ks_distance(&xs, double_well_cdf, 25);
    assert!(ks < 0.02, "KS {ks}");
}

#[test]
fn all_divergent_warmup_fails_cleanly() {
    let cfg = SamplerConfig {
        n_warmup: 20,
        n_draws: 10,
        n_chains: 2,
        ..SamplerConfig::default()
    };
    match sample_target(&Spike, &[0.0, 0.0], &cfg) {
        Err(Error::SamplingFailed { .. }) => {}
        other => panic!("expected SamplingFailed, got {:?}", other.map(|c| c.len())),
    }
}

#[test]
fn pbtf_draws_are_reproducible_and_mapped_to_beta() {
    let grid = Trend::PiecewiseLinear.unit_grid(30);
    let truth = generate_trend(Trend::PiecewiseLinear, &grid);
    let data = simulate(&grid, &truth, 3.0, 4).unwrap();
    let spec = ModelSpec::pbtf(&data, 1).unwrap();
    assert!(initialize(&data, &spec).is_ok());
    let cfg = SamplerConfig {
        n_warmup: 100,
        n_draws: 50,
        n_chains: 2,
        seed: 77,
        ..SamplerConfig::default()
    };
    let a = sample(&spec, &data, &cfg).unwrap();
    let b = sample(&spec, &data, &cfg).unwrap();
    for (ca, cb) in a.iter().zip(&b) {
        assert_eq!(ca.draws, cb.draws);
        assert_eq!(ca.draws_beta, cb.draws_beta);
    }
    let t = proxtrend::linalg::ReparamMatrix::new(&data.grid, 1, proxtrend::linalg::Scheme::T1).unwrap();
    for (row, beta) in a[0].draws.iter().zip(&a[0].draws_beta) {
        assert_eq!(&t.forward_solve(&row[..30]).unwrap(), beta);
    }
    let c = sample(&spec, &data, &SamplerConfig { seed: 78, ..cfg }).unwrap();
    assert_ne!(a[0].draws, c[0].draws);
    assert_eq!(a[0].rhat.len(), 32);
}
