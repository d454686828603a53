use proptest::prelude::*;

use robustmd::datagen::{corrupt, generate, CorruptionMode, SynthConfig};
use robustmd::estimators::{coordinatewise_mom, select_kth, trimmed_mean};
use robustmd::geometry::{BallConstraint, Geometry};
use robustmd::model::GradientSamples;
use robustmd::solvers::schedule::{amda_radii, ammd_radii};
use robustmd::Param;

fn geometry() -> impl Strategy<Value = Geometry> {
    prop_oneof![
        (3usize..12).prop_map(|d| Geometry::vanilla(d).unwrap()),
        (3usize..8, 1usize..4).prop_map(|(r, c)| Geometry::group(r, c).unwrap()),
        (2usize..5, 0usize..3).prop_map(|(q, extra)| Geometry::low_rank(q + extra, q).unwrap()),
    ]
}

fn param_for(g: &Geometry) -> impl Strategy<Value = Param> {
    let (p, q) = g.shape();
    prop::collection::vec(-10.0f64..10.0, p * q).prop_map(move |v| Param::from_vec(p, q, v))
}

fn geometry_and_params(count: usize) -> impl Strategy<Value = (Geometry, Vec<Param>)> {
    geometry().prop_flat_map(move |g| {
        let params = prop::collection::vec(param_for(&g), count);
        (Just(g), params)
    })
}

proptest! {
    #[test]
    fn trimmed_mean_stays_within_first_half_quantiles(
        values in prop::collection::vec(-1e6f64..1e6, 2..80),
        alpha in 0.0f64..0.49,
    ) {
        let half = values.len() / 2;
        let mut first = values[..half].to_vec();
        first.sort_by(f64::total_cmp);
        let tm = trimmed_mean(&values, alpha).unwrap();
        prop_assert!(tm >= first[0] - 1e-9 * first[0].abs().max(1.0));
        prop_assert!(tm <= first[half - 1] + 1e-9 * first[half - 1].abs().max(1.0));
    }

    #[test]
    fn trimmed_mean_ignores_order_within_halves(
        values in prop::collection::vec(-100.0f64..100.0, 4..60),
        alpha in 0.0f64..0.49,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let half = values.len() / 2;
        let mut shuffled = values.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        shuffled[..half].shuffle(&mut rng);
        let tm = trimmed_mean(&values, alpha).unwrap();
        let again = trimmed_mean(&shuffled, alpha).unwrap();
        prop_assert!((tm - again).abs() <= 1e-12 * tm.abs().max(1.0));
    }

    #[test]
    fn select_kth_splits_the_sample(values in prop::collection::vec(-50i32..50, 1..100), pick in any::<prop::sample::Index>()) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let k = pick.index(values.len()) + 1;
        let v = select_kth(&values, k).unwrap();
        prop_assert!(values.iter().filter(|&&x| x <= v).count() >= k);
        prop_assert!(values.iter().filter(|&&x| x >= v).count() >= values.len() - k + 1);
    }

    #[test]
    fn single_block_mom_is_the_mean(data in prop::collection::vec(-100.0f64..100.0, 12)) {
        let samples = GradientSamples::new(nalgebra::DMatrix::from_vec(4, 3, data), (3, 1)).unwrap();
        let mom = coordinatewise_mom(&samples, 1, 0).unwrap();
        let mean = samples.mean().unwrap();
        prop_assert!((mom - mean).amax() <= 1e-12);
    }

    #[test]
    fn sparsify_is_an_idempotent_projection((g, params) in geometry_and_params(1), s in 1usize..4) {
        let theta = &params[0];
        let s = s.min(g.capacity());
        let sparse = g.sparsify(theta, s).unwrap();
        prop_assert!(g.sparsity(&sparse).unwrap() <= s);
        let twice = g.sparsify(&sparse, s).unwrap();
        prop_assert!((&twice - &sparse).amax() <= 1e-9 * theta.amax().max(1.0));
        prop_assert!((theta - &sparse).norm() <= theta.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn prox_stays_in_the_ball((g, params) in geometry_and_params(2), radius in 0.01f64..20.0) {
        let ball = BallConstraint::new(params[1].clone(), radius).unwrap();
        let theta = g.prox_ball(&params[0], &ball).unwrap();
        prop_assert!(g.norm(&(&theta - &params[1])).unwrap() <= radius * (1.0 + 1e-9));
    }

    #[test]
    fn norms_are_dual((g, params) in geometry_and_params(2)) {
        let (a, b) = (&params[0], &params[1]);
        let bound = g.norm(a).unwrap() * g.dual_norm(b).unwrap();
        prop_assert!(a.dot(b).abs() <= bound * (1.0 + 1e-12) + 1e-12);
        prop_assert!(g.dual_norm(a).unwrap() <= g.norm(a).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn dgf_is_nonnegative_and_even((g, params) in geometry_and_params(1)) {
        let (v, grad) = g.dgf_value_grad(&params[0]).unwrap();
        let (w, neg) = g.dgf_value_grad(&-&params[0]).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!((v - w).abs() <= 1e-12 * v.max(1.0));
        prop_assert!((grad + neg).amax() <= 1e-9 * v.max(1.0));
    }

    #[test]
    fn radii_move_monotonically_to_the_limit(r0 in 0.01f64..1e3, limit in 0.01f64..1e3, tau in 0.01f64..0.99) {
        let md = ammd_radii(r0, limit, 40);
        for w in md.windows(2) {
            prop_assert!((w[1] - limit).abs() <= (w[0] - limit).abs());
        }
        let da = amda_radii(r0, tau, limit, 40);
        for w in da.windows(2) {
            prop_assert!(w[1] >= 0.5 * (w[0] + limit) && w[1] >= tau * w[0]);
        }
    }

    #[test]
    fn corruption_touches_only_the_chosen_rows(eta in 0.0f64..0.4, seed in any::<u64>()) {
        let cfg = SynthConfig { n: 60, d: 8, s: 2, ..SynthConfig::default() };
        let clean = generate(&cfg, seed).unwrap();
        let dirty = corrupt(&clean, eta, CorruptionMode::default(), seed ^ 1).unwrap();
        prop_assert_eq!(dirty.outliers.len(), (eta * 60.0).floor() as usize);
        for i in (0..60).filter(|i| !dirty.outliers.contains(i)) {
            prop_assert_eq!(dirty.x.row(i), clean.x.row(i));
            prop_assert_eq!(dirty.y[i], clean.y[i]);
        }
    }
}
