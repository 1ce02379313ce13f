//! Property tests for the structural invariants of the bounds.

use proptest::prelude::*;

use steinbound_core::categorical::Categorical;
use steinbound_core::concentration::{es_radius_logy, es_radius_scale_free};
use steinbound_core::opl::{posterior_bias, posterior_proxy, posterior_value, FinitePolicyClass};
use steinbound_core::pac_bayes::{
    gen_bound, kl_categorical, pb_radius_logy, pb_radius_scale_free, LossRange, LossTable,
};
use steinbound_core::wis::LoggedData;
use steinbound_core::wis::{wis_estimate, ProxyMode};

fn simplex(len: usize) -> impl Strategy<Value = Categorical> {
    prop::collection::vec(1e-3f64..1.0, len).prop_map(|raw| Categorical::normalized(&raw).unwrap())
}

proptest! {
    #[test]
    fn logy_radius_dominates_sqrt_term(
        v in 0.0f64..50.0,
        x in 2.0f64..20.0,
        y in 1e-6f64..10.0,
    ) {
        // The logarithmic factor is at least 1.
        let radius = es_radius_logy(v, x, y).unwrap();
        let floor = (2.0 * (v + y) * x).sqrt();
        prop_assert!(radius >= floor * (1.0 - 1e-12));
    }

    #[test]
    fn logy_radius_monotone(
        v in 0.0f64..50.0,
        dv in 0.0f64..10.0,
        x in 2.0f64..20.0,
        dx in 0.0f64..5.0,
        y in 1e-6f64..10.0,
    ) {
        let base = es_radius_logy(v, x, y).unwrap();
        prop_assert!(es_radius_logy(v + dv, x, y).unwrap() >= base * (1.0 - 1e-12));
        prop_assert!(es_radius_logy(v, x + dx, y).unwrap() >= base * (1.0 - 1e-12));
    }

    #[test]
    fn scale_free_radius_monotone(
        v in 0.0f64..50.0,
        dv in 0.0f64..10.0,
        vm in 0.0f64..50.0,
        dvm in 0.0f64..10.0,
        x in 0.0f64..20.0,
        dx in 0.0f64..5.0,
    ) {
        let base = es_radius_scale_free(v, vm, x).unwrap();
        prop_assert!(es_radius_scale_free(v + dv, vm, x).unwrap() >= base * (1.0 - 1e-12));
        prop_assert!(es_radius_scale_free(v, vm + dvm, x).unwrap() >= base * (1.0 - 1e-12));
        prop_assert!(es_radius_scale_free(v, vm, x + dx).unwrap() >= base * (1.0 - 1e-12));
    }

    #[test]
    fn kl_nonnegative_and_zero_only_at_equality(
        p in simplex(4),
        q in simplex(4),
    ) {
        let kl = kl_categorical(&p, &q).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert_eq!(kl_categorical(&p, &p).unwrap(), 0.0);
        let gap: f64 = p
            .weights()
            .iter()
            .zip(q.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap > 1e-6 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn pac_bayes_logy_equals_fixed_function_radius_at_zero_kl(
        v in 0.0f64..100.0,
        x in 2.0f64..30.0,
        y in 1e-8f64..10.0,
    ) {
        let lhs = pb_radius_logy(v, 0.0, x, y).unwrap();
        let rhs = es_radius_logy(v, x, y).unwrap();
        prop_assert_eq!(lhs.to_bits(), rhs.to_bits());
    }

    #[test]
    fn pac_bayes_radii_monotone_in_kl_and_proxy(
        v in 0.0f64..20.0,
        dv in 0.0f64..5.0,
        kl in 0.0f64..5.0,
        dkl in 0.0f64..5.0,
        x in 2.0f64..10.0,
        y in 1e-4f64..5.0,
    ) {
        let base = pb_radius_logy(v, kl, x, y).unwrap();
        prop_assert!(pb_radius_logy(v + dv, kl, x, y).unwrap() >= base * (1.0 - 1e-12));
        prop_assert!(pb_radius_logy(v, kl + dkl, x, y).unwrap() >= base * (1.0 - 1e-12));

        let base = pb_radius_scale_free(v, v, kl, x).unwrap();
        prop_assert!(pb_radius_scale_free(v + dv, v, kl, x).unwrap() >= base * (1.0 - 1e-12));
        prop_assert!(pb_radius_scale_free(v, v + dv, kl, x).unwrap() >= base * (1.0 - 1e-12));
        prop_assert!(pb_radius_scale_free(v, v, kl + dkl, x).unwrap() >= base * (1.0 - 1e-12));
    }

    #[test]
    fn gen_bound_point_mass_reduces_to_fixed_function_bound(
        raw_losses in prop::collection::vec(prop::collection::vec(0.0f64..3.0, 3), 2..8),
        oracle in prop::collection::vec(0.0f64..4.0, 3),
        j in 0usize..3,
        x in 2.0f64..10.0,
        y in 1e-4f64..5.0,
    ) {
        let table = LossTable::new(&raw_losses, LossRange::Unbounded).unwrap();
        let point = Categorical::point_mass(3, j);
        let report = gen_bound(&table, |k| oracle[k], &point, &point, x, y).unwrap();
        prop_assert_eq!(report.kl, Some(0.0));
        let n = raw_losses.len() as f64;
        let proxy: f64 = raw_losses
            .iter()
            .map(|row| row[j] * row[j] + oracle[j])
            .sum::<f64>() / (n * n);
        let fixed = es_radius_logy(proxy, x, y).unwrap();
        prop_assert_eq!(report.value.to_bits(), fixed.to_bits());
    }

    #[test]
    fn remove_one_identity(
        weights in prop::collection::vec(1e-3f64..5.0, 2..10),
        raw_rewards in prop::collection::vec(0.0f64..1.0, 10),
    ) {
        // f(S) - f_k(S \ k) = W_k (R_k - f_k(S \ k)) / sum_j W_j.
        let n = weights.len();
        let rewards = &raw_rewards[..n];
        let full = wis_estimate(&weights, rewards).unwrap();
        let total: f64 = weights.iter().sum();
        for k in 0..n {
            let mut w_rest = weights.clone();
            let mut r_rest = rewards.to_vec();
            w_rest.remove(k);
            r_rest.remove(k);
            let rest = wis_estimate(&w_rest, &r_rest).unwrap();
            let lhs = full - rest;
            let rhs = weights[k] * (rewards[k] - rest) / total;
            prop_assert!((lhs - rhs).abs() <= 1e-12, "k={k}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn normalized_weights_sum_to_one_with_small_square_sum(
        weights in prop::collection::vec(0.0f64..5.0, 1..12),
    ) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 0.0);
        let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let sum: f64 = normalized.iter().sum();
        let sum_sq: f64 = normalized.iter().map(|w| w * w).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(sum_sq <= 1.0 + 1e-12);
    }

    #[test]
    fn wis_estimate_invariant_to_weight_rescaling(
        weights in prop::collection::vec(1e-3f64..5.0, 1..10),
        raw_rewards in prop::collection::vec(0.0f64..1.0, 10),
        scale in 1e-3f64..1e3,
    ) {
        let n = weights.len();
        let rewards = &raw_rewards[..n];
        let base = wis_estimate(&weights, rewards).unwrap();
        // A convex combination of the rewards stays within their range.
        prop_assert!((0.0..=1.0).contains(&base));
        let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let rescaled = wis_estimate(&scaled, rewards).unwrap();
        prop_assert!((base - rescaled).abs() <= 1e-12);
    }
}

fn toy_instance() -> (LoggedData, FinitePolicyClass, Categorical) {
    let actions: Vec<usize> = (0..40).map(|i| (i * 13) % 2).collect();
    let rewards: Vec<f64> = (0..40).map(|i| ((i * 7) % 10) as f64 / 10.0).collect();
    let data = LoggedData::new(actions, rewards, 2).unwrap();
    let class = FinitePolicyClass::new(vec![
        Categorical::new(vec![0.5, 0.5]).unwrap(),
        Categorical::new(vec![0.7, 0.3]).unwrap(),
        Categorical::new(vec![0.35, 0.65]).unwrap(),
    ])
    .unwrap();
    let behavior = Categorical::uniform(2);
    (data, class, behavior)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_functionals_are_affine(
        p in simplex(3),
        q in simplex(3),
        alpha in 0.0f64..1.0,
    ) {
        let (data, class, behavior) = toy_instance();
        let mixed = Categorical::new(
            p.weights()
                .iter()
                .zip(q.weights())
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect(),
        )
        .unwrap();

        let value = |c: &Categorical| posterior_value(&data, &class, c, &behavior).unwrap();
        prop_assert!(
            (value(&mixed) - (alpha * value(&p) + (1.0 - alpha) * value(&q))).abs() <= 1e-10
        );

        // n large enough that no ratio reaches the min{1, .} cap, so the
        // bias itself is its affine inner expectation.
        let bias = |c: &Categorical| posterior_bias(&class, c, &behavior, 4000, 2.0).unwrap();
        prop_assert!(bias(&p) < 1.0 && bias(&q) < 1.0);
        prop_assert!(
            (bias(&mixed) - (alpha * bias(&p) + (1.0 - alpha) * bias(&q))).abs() <= 1e-10
        );

        let proxy = |c: &Categorical| {
            posterior_proxy(&data, &class, c, &behavior, 2.0, ProxyMode::Global, 0).unwrap()
        };
        prop_assert!(
            (proxy(&mixed) - (alpha * proxy(&p) + (1.0 - alpha) * proxy(&q))).abs() <= 1e-10
        );
    }

    #[test]
    fn opl_bound_stays_in_unit_interval(
        posterior in simplex(3),
        x in 2.0f64..9.0,
        y in 1e-3f64..2.0,
    ) {
        let (data, class, behavior) = toy_instance();
        let prior = Categorical::uniform(3);
        let report = steinbound_core::opl::opl_lower_bound(
            &data,
            &class,
            &posterior,
            &prior,
            &behavior,
            x,
            y,
            ProxyMode::Global,
            0,
        )
        .unwrap();
        prop_assert!((0.0..=1.0).contains(&report.value));
    }
}
