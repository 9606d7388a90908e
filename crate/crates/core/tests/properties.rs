use belstable_core::sde::{euler_path, variational_path};
use belstable_core::spde::ConvolutionScheme;
use belstable_core::stable::{sample_subordinator_path, uniform_grid};
use belstable_core::timechange::{invert, ito_integral_time_changed, smooth};
use belstable_core::{
    CadlagIncreasingPath, DiffusionMatrix, DriftModel, KnotRule, RandomStream, StableParams,
    VectorPath,
};
use proptest::prelude::*;

fn step_path(jumps: &[(f64, f64)], horizon: f64) -> CadlagIncreasingPath {
    let mut pts: Vec<(f64, f64)> = jumps.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut times = vec![0.0];
    let mut values = vec![0.0];
    let mut level = 0.0;
    for (t, j) in pts {
        if t > *times.last().unwrap() + 1e-6 {
            level += j;
            times.push(t);
            values.push(level);
        }
    }
    CadlagIncreasingPath::new(times, values, KnotRule::PiecewiseConstant, horizon).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn subordinator_paths_start_at_zero_and_increase(alpha in 0.05f64..1.95, steps in 1usize..200, seed: u64) {
        let p = StableParams::new(alpha).unwrap();
        let path = sample_subordinator_path(p, &uniform_grid(2.0, steps), RandomStream::new(seed, 0)).unwrap();
        prop_assert_eq!(path.values()[0], 0.0);
        prop_assert!(path.values().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn smoothing_dominates_and_grows_at_rate_eps(
        jumps in prop::collection::vec((0.01f64..3.0, 0.0f64..5.0), 0..8),
        eps in 0.001f64..0.9,
        t1 in 0.0f64..3.0,
        dt in 0.0f64..1.0,
    ) {
        let ell = step_path(&jumps, 3.0);
        let s = smooth(&ell, eps).unwrap();
        let t2 = t1 + dt;
        prop_assert!(s.value(t1) >= ell.value(t1) - 1e-12);
        prop_assert!(s.value(t2) - s.value(t1) >= eps * dt * (1.0 - 1e-9) - 1e-12);
    }

    #[test]
    fn inverse_round_trips(
        jumps in prop::collection::vec((0.01f64..3.0, 0.0f64..5.0), 0..8),
        eps in 0.001f64..0.9,
        t in 0.0f64..3.0,
    ) {
        let ell = step_path(&jumps, 3.0);
        let s = smooth(&ell, eps).unwrap();
        let inv = invert(&s);
        prop_assert!((inv.value(s.value(t)).unwrap() - t).abs() < 1e-10);
        let u = s.value(t);
        prop_assert!((s.value(inv.value(u).unwrap()) - u).abs() < 1e-10 * (1.0 + u));
    }

    #[test]
    fn derivative_flow_is_linear_in_direction(
        h1 in prop::array::uniform2(-2.0f64..2.0),
        h2 in prop::array::uniform2(-2.0f64..2.0),
        c in -3.0f64..3.0,
        seed: u64,
    ) {
        let drift = DriftModel::arctan(2, 1.5, 0.3).unwrap();
        let diff = DiffusionMatrix::identity(2).unwrap();
        let grid = uniform_grid(1.0, 50);
        let clock = sample_subordinator_path(StableParams::new(1.3).unwrap(), &grid, RandomStream::new(seed, 0)).unwrap();
        let w = belstable_core::stable::sample_brownian_at_subordinated_times(&clock, 2, RandomStream::new(seed, 1)).unwrap();
        let x = euler_path(&drift, &diff, &[0.2, -0.4], &grid, &w).unwrap();
        let a = variational_path(&drift, &grid, &x, &h1).unwrap();
        let b = variational_path(&drift, &grid, &x, &h2).unwrap();
        let mix = [h1[0] + c * h2[0], h1[1] + c * h2[1]];
        let m = variational_path(&drift, &grid, &x, &mix).unwrap();
        for i in 0..grid.len() {
            for k in 0..2 {
                let want = a.at(i)[k] + c * b.at(i)[k];
                prop_assert!((m.at(i)[k] - want).abs() < 1e-10 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn derivative_flow_obeys_gronwall(theta in 0.0f64..3.0, seed: u64, steps in 1usize..300) {
        let drift = DriftModel::arctan(3, theta, 0.0).unwrap();
        let diff = DiffusionMatrix::identity(3).unwrap();
        let t = 2.0;
        let grid = uniform_grid(t, steps);
        let clock = sample_subordinator_path(StableParams::new(0.9).unwrap(), &grid, RandomStream::new(seed, 0)).unwrap();
        let w = belstable_core::stable::sample_brownian_at_subordinated_times(&clock, 3, RandomStream::new(seed, 1)).unwrap();
        let x = euler_path(&drift, &diff, &[1.0, 0.0, -1.0], &grid, &w).unwrap();
        let h = [0.6, 0.0, 0.8];
        let dx = variational_path(&drift, &grid, &x, &h).unwrap();
        let bound = (drift.grad_bound() * t).exp();
        for row in dx.rows() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn integral_is_linear_in_integrand(vals in prop::collection::vec(-5.0f64..5.0, 2..40), c in -2.0f64..2.0, seed: u64) {
        let n = vals.len();
        let ell: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let w = belstable_core::stable::sample_brownian_at_times(&ell, 1, RandomStream::new(seed, 0)).unwrap();
        let a = VectorPath::from_flat(1, vals.clone());
        let b = VectorPath::from_flat(1, vals.iter().map(|v| c * v).collect());
        let ia = ito_integral_time_changed(&a, &ell, &w).unwrap();
        let ib = ito_integral_time_changed(&b, &ell, &w).unwrap();
        prop_assert!((ib - c * ia).abs() < 1e-10 * (1.0 + ia.abs()));
    }

    #[test]
    fn scheme_factors_are_contractions(lambda in 1e-3f64..1e6, dt in 1e-6f64..1.0) {
        for s in [ConvolutionScheme::LeftPoint, ConvolutionScheme::RightPoint, ConvolutionScheme::ExponentialMatched] {
            let (d, g) = s.factors(lambda, dt);
            prop_assert!((0.0..1.0).contains(&d));
            prop_assert!((0.0..=1.0).contains(&g));
        }
    }
}
