mod common;

use genbench::eval::{auc, pareto_indices, pearson, welch_t_test, ParetoPoint};
use genbench::train::compute_gae;
use proptest::prelude::*;

#[test]
fn metrics_match_reference_implementations() {
    common::metric_oracles(200, 1).assert();
}

#[test]
fn welch_p_value_in_far_tail() {
    // t ≈ 40 with few samples: p is tiny but must stay positive and accurate
    let a = [10.0, 10.1, 9.9, 10.05, 9.95];
    let b = [0.0, 0.1, -0.1, 0.05, -0.05];
    let r = welch_t_test(&a, &b).unwrap();
    assert!(r.p_value > 0.0 && r.p_value < 1e-6, "{r:?}");
    assert!(r.significant);
}

proptest! {
    #[test]
    fn gae_with_zero_lambda_is_one_step_td(
        rewards in prop::collection::vec(-10.0f64..10.0, 1..30),
        seed_values in prop::collection::vec(-10.0f64..10.0, 31),
        gamma in 0.5f64..1.0,
    ) {
        let values = &seed_values[..=rewards.len()];
        let (adv, _) = compute_gae(&rewards, values, false, gamma, 0.0).unwrap();
        for t in 0..rewards.len() {
            let td = rewards[t] + gamma * values[t + 1] - values[t];
            prop_assert!((adv[t] - td).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_bounded_symmetric_and_affine_invariant(
        pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        a in 0.1f64..10.0,
        b in -50.0f64..50.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if let Ok(r) = pearson(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - pearson(&y, &x).unwrap()).abs() < 1e-12);
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((r - pearson(&xs, &y).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn pareto_front_is_exactly_the_undominated_points(
        pts in prop::collection::vec((0i32..8, 0i32..8), 1..30),
    ) {
        let pts: Vec<ParetoPoint<f64>> = pts.iter().map(|&(x, y)| ParetoPoint::new(x as f64, y as f64)).collect();
        let front = pareto_indices(&pts).unwrap();
        prop_assert!(!front.is_empty());
        for i in 0..pts.len() {
            let dominated = pts.iter().any(|q| q.dominates(&pts[i]));
            prop_assert_eq!(front.contains(&i), !dominated);
        }
    }

    #[test]
    fn auc_is_linear_in_the_curve(
        curve in prop::collection::vec(-1000.0f64..1000.0, 1..10),
        k in -3.0f64..3.0,
        step in 0.01f64..1.0,
    ) {
        let scaled: Vec<f64> = curve.iter().map(|v| k * v).collect();
        let lhs = auc(&scaled, step).unwrap();
        let rhs = k * auc(&curve, step).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn welch_antisymmetric(
        a in prop::collection::vec(-10.0f64..10.0, 2..20),
        b in prop::collection::vec(-10.0f64..10.0, 2..20),
    ) {
        if let (Ok(ab), Ok(ba)) = (welch_t_test(&a, &b), welch_t_test(&b, &a)) {
            prop_assert!((ab.t + ba.t).abs() < 1e-12);
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
            prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
            prop_assert!((ab.p_greater() + ba.p_greater() - 1.0).abs() < 1e-12);
        }
    }
}
