//! Proximal maps of the ℓ1 norm and the 1-D total-variation seminorm, and the
//! Moreau–Yosida envelope built on top of them.
//!
//! The prox parameter `lambda` follows the convention
//! `prox_g^λ(z) = argmin_η g(η) + ‖z − η‖² / (2λ)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub point: Vec<f64>,
    /// Value of g at `point`.
    pub objective: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

pub fn soft_threshold(beta: &[f64], lambda: f64) -> Result<ProxResult> {
    check_lambda(lambda)?;
    let mut point = vec![0.0; beta.len()];
    let objective = soft_threshold_into(beta, lambda, &mut point);
    Ok(ProxResult { point, objective })
}

/// Writes `sgn(b)(|b| − λ)₊` into `out` and returns its ℓ1 norm. Ties map to 0.
pub fn soft_threshold_into(beta: &[f64], lambda: f64, out: &mut [f64]) -> f64 {
    let mut l1 = 0.0;
    for (o, &b) in out.iter_mut().zip(beta) {
        let a = b.abs() - lambda;
        *o = if a > 0.0 { a.copysign(b) } else { 0.0 };
        l1 += o.abs();
    }
    l1
}

/// `‖D(1) v‖₁`.
pub fn total_variation(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Scratch buffers for the fused-lasso dynamic program, reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct FusedLassoWork {
    x: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    tm: Vec<f64>,
    tp: Vec<f64>,
}

pub fn fused_lasso(beta: &[f64], lambda: f64) -> Result<ProxResult> {
    check_lambda(lambda)?;
    let mut point = vec![0.0; beta.len()];
    let mut work = FusedLassoWork::default();
    fused_lasso_into(beta, lambda, &mut point, &mut work);
    let objective = total_variation(&point);
    Ok(ProxResult { point, objective })
}

/// Exact minimizer of `½‖y − η‖² + λ‖D(1)η‖₁` in O(n).
///
/// Forward pass: the derivative of the partial value function is piecewise
/// linear, stored as breakpoints `x` with slope/intercept increments `a`, `b`
/// in a deque grown outward from the middle of a 2n buffer. `tm[k]`, `tp[k]`
/// are the clamping thresholds used by the backward pass.
pub fn fused_lasso_into(y: &[f64], lambda: f64, out: &mut [f64], work: &mut FusedLassoWork) {
    let n = y.len();
    if n == 0 {
        return;
    }
    if n == 1 {
        out[0] = y[0];
        return;
    }
    let lam = lambda;
    work.x.resize(2 * n, 0.0);
    work.a.resize(2 * n, 0.0);
    work.b.resize(2 * n, 0.0);
    work.tm.resize(n - 1, 0.0);
    work.tp.resize(n - 1, 0.0);
    let FusedLassoWork { x, a, b, tm, tp } = work;

    tm[0] = -lam + y[0];
    tp[0] = lam + y[0];
    let mut l = n - 1;
    let mut r = n;
    x[l] = tm[0];
    x[r] = tp[0];
    a[l] = 1.0;
    b[l] = -y[0] + lam;
    a[r] = -1.0;
    b[r] = y[0] + lam;
    let mut afirst = 1.0;
    let mut bfirst = -lam - y[1];
    let mut alast = -1.0;
    let mut blast = -lam + y[1];

    for k in 1..n - 1 {
        let mut alo = afirst;
        let mut blo = bfirst;
        let mut lo = l;
        while lo <= r {
            if alo * x[lo] + blo > -lam {
                break;
            }
            alo += a[lo];
            blo += b[lo];
            lo += 1;
        }
        let mut ahi = alast;
        let mut bhi = blast;
        let mut hi = r as isize;
        while hi >= lo as isize {
            let h = hi as usize;
            if -ahi * x[h] - bhi < lam {
                break;
            }
            ahi += a[h];
            bhi += b[h];
            hi -= 1;
        }
        tm[k] = (-lam - blo) / alo;
        l = lo - 1;
        x[l] = tm[k];
        tp[k] = (lam + bhi) / (-ahi);
        r = (hi + 1) as usize;
        x[r] = tp[k];
        a[l] = alo;
        b[l] = blo + lam;
        a[r] = ahi;
        b[r] = bhi + lam;
        afirst = 1.0;
        bfirst = -lam - y[k + 1];
        alast = -1.0;
        blast = -lam + y[k + 1];
    }

    let mut alo = afirst;
    let mut blo = bfirst;
    let mut lo = l;
    while lo <= r {
        if alo * x[lo] + blo > 0.0 {
            break;
        }
        alo += a[lo];
        blo += b[lo];
        lo += 1;
    }
    out[n - 1] = -blo / alo;
    for k in (0..n - 1).rev() {
        out[k] = if out[k + 1] > tp[k] {
            tp[k]
        } else if out[k + 1] < tm[k] {
            tm[k]
        } else {
            out[k + 1]
        };
    }
}

/// Moreau–Yosida envelope of g at `z` and its gradient, from g's prox.
///
/// Returns `(g(p) + ‖z − p‖²/(2λ), (z − p)/λ)` with `p = prox_g^λ(z)`.
pub fn envelope_value_grad<F>(prox: F, z: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64], f64) -> Result<ProxResult>,
{
    check_lambda(lambda)?;
    let p = prox(z, lambda)?;
    if p.point.len() != z.len() {
        return Err(Error::DimMismatch {
            expected: z.len(),
            got: p.point.len(),
        });
    }
    let mut dist_sq = 0.0;
    let grad: Vec<f64> = z
        .iter()
        .zip(&p.point)
        .map(|(zi, pi)| {
            let d = zi - pi;
            dist_sq += d * d;
            d / lambda
        })
        .collect();
    Ok((p.objective + dist_sq / (2.0 * lambda), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fl_objective(y: &[f64], eta: &[f64], lam: f64) -> f64 {
        0.5 * y.iter().zip(eta).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + lam * total_variation(eta)
    }

    #[test]
    fn soft_threshold_examples() {
        let r = soft_threshold(&[2.0, -0.5, 0.0], 1.0).unwrap();
        assert_eq!(r.point, vec![1.0, 0.0, 0.0]);
        assert_eq!(r.objective, 1.0);
        let b = [3.0, -1.5, 0.25];
        let r = soft_threshold(&b, 3.0).unwrap();
        assert_eq!(r.point, vec![0.0; 3]);
        let r = soft_threshold(&b, 1e-300).unwrap();
        assert_eq!(r.point, b.to_vec());
        assert_eq!(soft_threshold(&b, 0.0), Err(Error::InvalidLambda(0.0)));
        assert!(fused_lasso(&b, -1.0).is_err());
    }

    #[test]
    fn fused_lasso_closed_forms() {
        let r = fused_lasso(&[0.0, 4.0], 1.0).unwrap();
        assert_eq!(r.point, vec![1.0, 3.0]);
        assert_eq!(r.objective, 2.0);
        let r = fused_lasso(&[0.0, 4.0], 5.0).unwrap();
        assert_eq!(r.point, vec![2.0, 2.0]);
        let c = [1.5; 6];
        for lam in [0.01, 1.0, 100.0] {
            assert_eq!(fused_lasso(&c, lam).unwrap().point, c.to_vec());
        }
        assert_eq!(fused_lasso(&[7.0], 3.0).unwrap().point, vec![7.0]);
    }

    #[test]
    fn fused_lasso_kkt_and_local_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut work = FusedLassoWork::default();
        for _ in 0..300 {
            let n = rng.random_range(2..40);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let lam = [0.01, 0.3, 1.0, 4.0][rng.random_range(0..4)];
            let mut eta = vec![0.0; n];
            fused_lasso_into(&y, lam, &mut eta, &mut work);
            // Cumulative residual u_i = −λ z_i with z ∈ ∂‖Dη‖₁.
            let mut u = 0.0;
            for i in 0..n - 1 {
                u += y[i] - eta[i];
                assert!(u.abs() <= lam + 1e-9, "|u|={} > {lam}", u.abs());
                let d = eta[i + 1] - eta[i];
                if d.abs() > 1e-9 {
                    assert!((u + lam * d.signum()).abs() < 1e-8, "u={u} d={d}");
                }
            }
            u += y[n - 1] - eta[n - 1];
            assert!(u.abs() < 1e-9, "sum residual {u}");
            let f0 = fl_objective(&y, &eta, lam);
            for _ in 0..5 {
                let pert: Vec<f64> = eta.iter().map(|e| e + rng.random_range(-1e-3..1e-3)).collect();
                assert!(fl_objective(&y, &pert, lam) >= f0 - 1e-12);
            }
        }
    }

    #[test]
    fn prox_maps_are_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.random_range(1..20);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lam = rng.random_range(0.05..2.0);
            let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            for prox in [soft_threshold, fused_lasso] {
                let pa = prox(&a, lam).unwrap().point;
                let pb = prox(&b, lam).unwrap().point;
                assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-12);
            }
        }
    }

    #[test]
    fn envelope_of_indicator_inside_is_zero() {
        let project_ball = |z: &[f64], _lam: f64| -> Result<ProxResult> {
            let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            let s = if norm > 1.0 { 1.0 / norm } else { 1.0 };
            Ok(ProxResult {
                point: z.iter().map(|x| x * s).collect(),
                objective: 0.0,
            })
        };
        let (v, g) = envelope_value_grad(project_ball, &[0.3, -0.4], 0.1).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let z = [2.0, 1.0];
        let (v1, _) = envelope_value_grad(project_ball, &z, 1e-1).unwrap();
        let (v2, _) = envelope_value_grad(project_ball, &z, 1e-2).unwrap();
        assert!(v2 >= v1);
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for prox in [soft_threshold, fused_lasso] {
            for _ in 0..20 {
                let n = 6;
                let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let lam = 0.5;
                let (_, g) = envelope_value_grad(prox, &z, lam).unwrap();
                for i in 0..n {
                    let h = 1e-6;
                    let mut zp = z.clone();
                    zp[i] += h;
                    let mut zm = z.clone();
                    zm[i] -= h;
                    let fd = (envelope_value_grad(prox, &zp, lam).unwrap().0
                        - envelope_value_grad(prox, &zm, lam).unwrap().0)
                        / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn envelope_gradient_is_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lam = rng.random_range(0.1..2.0);
            let (_, ga) = envelope_value_grad(fused_lasso, &a, lam).unwrap();
            let (_, gb) = envelope_value_grad(fused_lasso, &b, lam).unwrap();
            let dg = ga.iter().zip(&gb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let dz = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(dg <= dz / lam + 1e-9);
        }
    }
}
