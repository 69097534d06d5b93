//! Property tests for the numerical invariants the engine leans on.

use forecache_core::{
    finite_difference, newton_predict, rel_l1_error, FeatureVec, ModuleCache, SampleHistory,
};
use forecache_core::{predict_rfe, predict_taylor};
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1e3f64..1e3, len)
}

proptest! {
    /// The relative error is exactly the brute-force ratio of elementwise
    /// sums; the numerator depends only on the difference.
    #[test]
    fn rel_l1_error_matches_brute_force(
        a in finite_vec(24),
        p in finite_vec(24),
    ) {
        let actual = FeatureVec::from_flat(a.clone()).unwrap();
        let predicted = FeatureVec::from_flat(p.clone()).unwrap();
        let denom: f64 = a.iter().map(|v| v.abs()).sum();
        prop_assume!(denom > 0.0);
        let num: f64 = a.iter().zip(&p).map(|(x, y)| (x - y).abs()).sum();
        let got = rel_l1_error(&actual, &predicted).unwrap();
        let want = num / denom;
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }

    /// Normalization lands on the unit sphere and stays there.
    #[test]
    fn normalization_is_idempotent(v in finite_vec(16)) {
        let vec = FeatureVec::from_flat(v).unwrap();
        prop_assume!(vec.l2_norm() > 1e-9);
        let once = vec.normalized_l2();
        let twice = once.normalized_l2();
        prop_assert!((once.l2_norm() - 1.0).abs() <= 1e-12);
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    /// A first-order difference is the plain subtraction of the two newest
    /// samples, exactly.
    #[test]
    fn first_order_difference_is_pairwise_subtraction(
        newer in finite_vec(8),
        older in finite_vec(8),
        stride in 1i64..20,
    ) {
        let mut history = SampleHistory::new(3);
        history.push(40 + stride, FeatureVec::from_flat(older.clone()).unwrap());
        history.push(40, FeatureVec::from_flat(newer.clone()).unwrap());
        let diff = finite_difference(&history, 1).unwrap();
        for ((d, a), b) in diff.data().iter().zip(&newer).zip(&older) {
            prop_assert_eq!(*d, a - b);
        }
    }

    /// The extrapolator reconstructs per-element polynomials through its
    /// sample count, on arbitrary decreasing timesteps.
    #[test]
    fn newton_reconstructs_polynomials(
        coeffs in proptest::collection::vec(proptest::collection::vec(-2f64..2.0, 4), 3),
        gaps in proptest::collection::vec(1i64..6, 3),
        query_offset in 1i64..30,
    ) {
        let degree = 3usize;
        let eval = |t: i64| -> Vec<f64> {
            coeffs
                .iter()
                .map(|c| {
                    let x = t as f64 / 25.0;
                    c.iter().rev().fold(0.0, |acc, k| acc * x + k)
                })
                .collect()
        };
        let mut ts = vec![60i64];
        for g in &gaps {
            ts.push(ts.last().unwrap() - g);
        }
        let mut history = SampleHistory::new(degree + 1);
        for &t in &ts {
            history.push(t, FeatureVec::from_flat(eval(t)).unwrap());
        }
        let target = ts.last().unwrap() - query_offset;
        let got = newton_predict(&history, target).unwrap();
        let want = eval(target);
        for (g, w) in got.data().iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0), "{} vs {}", g, w);
        }
    }

    /// The relational forecast keeps the polynomial forecast's direction and
    /// pins its magnitude to the scaled input change.
    #[test]
    fn relational_forecast_direction_and_magnitude(
        in_a in finite_vec(6),
        in_b in finite_vec(6),
        out_a in finite_vec(6),
        out_b in finite_vec(6),
        current in finite_vec(6),
        stride in 1i64..8,
        k in 1i64..8,
    ) {
        let mut cache = ModuleCache::new(0, 2);
        cache
            .on_full_compute(
                30 + stride,
                FeatureVec::from_flat(in_a).unwrap(),
                FeatureVec::from_flat(out_a).unwrap(),
            )
            .unwrap();
        cache
            .on_full_compute(
                30,
                FeatureVec::from_flat(in_b).unwrap(),
                FeatureVec::from_flat(out_b).unwrap(),
            )
            .unwrap();
        prop_assume!(cache.s_ratio().is_some());
        let current = FeatureVec::from_flat(current).unwrap();
        let target = 30 - k;

        let taylor = predict_taylor(&cache, target, 1).unwrap();
        let relational = predict_rfe(&cache, &current, target, 1).unwrap();
        let latest_out = cache.out_history().latest().unwrap().value.clone();

        let d_rel = relational.sub(&latest_out).unwrap();
        let d_tay = taylor.sub(&latest_out).unwrap();
        prop_assume!(d_tay.l2_norm() > 1e-9);

        let latest_in = cache.in_history().latest().unwrap().value.clone();
        let want_mag = cache.s_ratio().unwrap() * current.sub(&latest_in).unwrap().l2_norm();
        prop_assert!((d_rel.l2_norm() - want_mag).abs() <= 1e-9 * want_mag.max(1.0));

        if d_rel.l2_norm() > 1e-9 {
            let cos = d_rel
                .data()
                .iter()
                .zip(d_tay.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / (d_rel.l2_norm() * d_tay.l2_norm());
            prop_assert!((cos - 1.0).abs() <= 1e-9, "cosine {}", cos);
        }
    }
}
