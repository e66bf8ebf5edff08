mod common;

use proptest::prelude::*;
use segan::tensor::{ParamSet, Tensor};
use segan::trainer::ema_update;

#[test]
fn iterated_update_matches_closed_form() {
    for alpha in [0.0, 0.5, 0.999, 1.0] {
        for seed in 0..3 {
            let dev = common::ema_closed_form_deviation(alpha, seed);
            assert!(dev < 1e-6, "alpha {alpha}: {dev:.3e}");
        }
    }
}

fn set(label: &str, v: &[f64]) -> ParamSet<f64> {
    let mut p = ParamSet::new(label);
    p.push("w", Tensor::from_f64(&[v.len()], v).unwrap());
    p
}

proptest! {
    // one update is affine in (teacher, student) with weights α and 1 − α
    #[test]
    fn update_is_a_convex_combination(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20),
        alpha in 0.0f64..=1.0,
    ) {
        let (t, s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mut teacher = set("t", &t);
        ema_update(&mut teacher, &set("s", &s), alpha).unwrap();
        for ((&a, &b), &got) in t.iter().zip(&s).zip(teacher.tensors()[0].data()) {
            let want = alpha * a + (1.0 - alpha) * b;
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
            prop_assert!(got >= a.min(b) - 1e-12 && got <= a.max(b) + 1e-12);
        }
    }
}

#[test]
fn frozen_teacher_is_refused() {
    let mut t = set("t", &[1.0]);
    t.freeze();
    assert!(ema_update(&mut t, &set("s", &[0.0]), 0.5).is_err());
}
