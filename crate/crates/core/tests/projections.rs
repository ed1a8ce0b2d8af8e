mod common;

use common::*;
use proptest::prelude::*;
use proxtrend::epigraph::*;
use proxtrend::linalg::{DiffOperator, PseudoSolve};
use proxtrend::prox::{fused_lasso, soft_threshold, total_variation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPES: [&str; 8] = [
    "inc",
    "dec",
    "convex",
    "concave",
    "inc-convex",
    "inc-concave",
    "dec-convex",
    "dec-concave",
];

#[test]
fn fused_lasso_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..150 {
        let n = rng.random_range(1..=8);
        let y = random_vec(&mut rng, n, -5.0, 5.0);
        for lam in [0.1, 1.0, 10.0] {
            let got = fused_lasso(&y, lam).unwrap().point;
            let want = oracle_fused_lasso(&y, lam);
            assert!(dist(&got, &want) <= 1e-6, "y={y:?} lam={lam}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn soft_threshold_matches_closed_form_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let y = random_vec(&mut rng, 10, -3.0, 3.0);
        let lam = rng.random_range(0.01..3.0);
        let got = soft_threshold(&y, lam).unwrap().point;
        for (g, v) in got.iter().zip(&y) {
            let want = v.signum() * (v.abs() - lam).max(0.0);
            assert_eq!(*g, if want == 0.0 { 0.0 } else { want });
        }
    }
}

#[test]
fn epi_l1_and_tv_match_polyhedral_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..150 {
        let p = rng.random_range(1..=6);
        let theta = random_vec(&mut rng, p, -4.0, 4.0);
        let alpha = rng.random_range(-4.0..2.0);
        let got = project_epi_l1(&theta, alpha).unwrap();
        let (pt, a) = oracle_epi_l1(&theta, alpha);
        assert!(dist(&concat(&got.point, got.alpha), &concat(&pt, a)) <= 1e-5);
        let ps = PseudoSolve::new(p);
        let got = project_epi_tv(&theta, alpha, &ps).unwrap();
        let (pt, a) = oracle_epi_tv(&theta, alpha);
        assert!(
            dist(&concat(&got.point, got.alpha), &concat(&pt, a)) <= 1e-5,
            "{theta:?} {alpha}: {got:?} vs {pt:?} {a}"
        );
    }
}

#[test]
fn shape_projection_matches_polyhedral_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for trial in 0..240 {
        let order = 1 + trial % 3;
        let n = rng.random_range(order + 1..=6).max(3);
        let grid = random_grid(&mut rng, n);
        let shape = ShapeSpec::parse(SHAPES[trial % 8]).unwrap();
        let beta = random_vec(&mut rng, n, -3.0, 3.0);
        let alpha = rng.random_range(-1.0..3.0);
        let op = DiffOperator::new(&grid, order).unwrap();
        let got = project_shape_restricted(&beta, alpha, &op, &shape).unwrap();
        let (pt, a) = oracle_shape(&beta, alpha, &grid, order, &shape);
        let err = dist(&concat(&got.point, got.alpha), &concat(&pt, a));
        assert!(err <= 1e-5, "trial {trial} order {order} {}: err {err}", shape.label());
        let (rows, h) = shape_set_rows(&grid, order, &shape);
        assert!(violation(&rows, &h, &concat(&got.point, got.alpha)) <= 1e-8);
    }
}

#[test]
fn shape_projection_with_bounds_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for trial in 0..60 {
        let n = 5;
        let grid = random_grid(&mut rng, n);
        let mut shape = ShapeSpec::parse(SHAPES[trial % 8]).unwrap();
        shape.bounds = Some(Bounds {
            lower: vec![-1.0, f64::NEG_INFINITY, -1.0, f64::NEG_INFINITY, -2.0],
            upper: vec![2.0, 2.0, f64::INFINITY, 1.5, 2.0],
        });
        let beta = random_vec(&mut rng, n, -3.0, 3.0);
        let alpha = rng.random_range(0.0..3.0);
        let op = DiffOperator::new(&grid, 2).unwrap();
        let got = project_shape_restricted(&beta, alpha, &op, &shape).unwrap();
        let (pt, a) = oracle_shape(&beta, alpha, &grid, 2, &shape);
        let err = dist(&concat(&got.point, got.alpha), &concat(&pt, a));
        assert!(err <= 1e-5, "trial {trial}: err {err}");
    }
}

#[test]
fn larger_shape_problems_satisfy_variational_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for (trial, shape_name) in SHAPES.iter().enumerate() {
        let n = 60;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 * 10.0 / (n - 1) as f64).collect();
        let shape = ShapeSpec::parse(shape_name).unwrap();
        let order = 1 + trial % 2;
        let op = DiffOperator::new(&grid, order + 1).unwrap();
        let beta: Vec<f64> = grid
            .iter()
            .map(|x| (x - 5.0).powi(2) / 3.0 + rng.random_range(-1.0..1.0))
            .collect();
        let alpha = rng.random_range(0.5..5.0);
        let mut proj = ShapeProjector::new(&op, &shape).unwrap();
        let p = proj.project(&beta, alpha).unwrap();
        assert!(proj.is_feasible(&p.point, p.alpha, 1e-8));
        let z = concat(&beta, alpha);
        let pz = concat(&p.point, p.alpha);
        let r: Vec<f64> = z.iter().zip(&pz).map(|(a, b)| a - b).collect();
        let rn = dot(&r, &r).sqrt();
        // Feasible comparison points: projections of random points.
        for _ in 0..20 {
            let q: Vec<f64> = beta.iter().map(|b| b + rng.random_range(-3.0..3.0)).collect();
            let s = proj.project(&q, alpha + rng.random_range(-1.0..4.0)).unwrap();
            let sv = concat(&s.point, s.alpha + rng.random_range(0.0..1.0));
            let vi = dot(&r, &sv.iter().zip(&pz).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(vi <= 1e-6 * rn.max(1.0), "{shape_name}: vi {vi}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projections_are_idempotent_and_nonexpansive(
        a in proptest::collection::vec(-4.0f64..4.0, 5),
        b in proptest::collection::vec(-4.0f64..4.0, 5),
        alpha_a in -2.0f64..3.0,
        alpha_b in -2.0f64..3.0,
        shape_idx in 0usize..8,
    ) {
        let grid = [0.0, 1.0, 2.5, 3.0, 4.5];
        let op = DiffOperator::new(&grid, 2).unwrap();
        let shape = ShapeSpec::parse(SHAPES[shape_idx]).unwrap();
        let ps = PseudoSolve::new(5);
        type Proj = Box<dyn Fn(&[f64], f64) -> Projection>;
        let projs: Vec<Proj> = vec![
            Box::new(|v: &[f64], t: f64| project_epi_l1(v, t).unwrap()),
            Box::new(move |v: &[f64], t: f64| project_epi_tv(v, t, &ps).unwrap()),
            Box::new(move |v: &[f64], t: f64| project_shape_restricted(v, t, &op, &shape).unwrap()),
        ];
        for proj in &projs {
            let pa = proj(&a, alpha_a);
            let pb = proj(&b, alpha_b);
            let ppa = proj(&pa.point, pa.alpha);
            prop_assert!(dist(&concat(&ppa.point, ppa.alpha), &concat(&pa.point, pa.alpha)) <= 1e-7);
            let d_in = dist(&concat(&a, alpha_a), &concat(&b, alpha_b));
            let d_out = dist(&concat(&pa.point, pa.alpha), &concat(&pb.point, pb.alpha));
            prop_assert!(d_out <= d_in + 1e-9);
            let zn = concat(&a, alpha_a);
            let pn = concat(&pa.point, pa.alpha);
            prop_assert!((dist(&zn, &pn).powi(2) - pa.distance_sq).abs() <= 1e-8 * pa.distance_sq.max(1.0));
        }
    }

    #[test]
    fn bisection_bracket_holds(theta in proptest::collection::vec(-5.0f64..5.0, 1..12), alpha in -3.0f64..3.0) {
        let l1: f64 = theta.iter().map(|x| x.abs()).sum();
        let lmax = theta.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if l1 > alpha && lmax > 0.0 {
            // F(0) > 0 and F(λ_max) = −λ_max − α.
            prop_assert!(l1 - alpha > 0.0);
            let p = project_epi_l1(&theta, alpha).unwrap();
            let lam = p.alpha - alpha;
            prop_assert!(lam >= 0.0);
            prop_assert!(lam <= lmax + 1e-12 || alpha <= -lmax);
        }
        let ps = PseudoSolve::new(theta.len());
        let p = project_epi_tv(&theta, alpha, &ps).unwrap();
        prop_assert!(total_variation(&p.point) <= p.alpha + 1e-9);
    }
}
