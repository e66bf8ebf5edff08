mod common;

use common::{gradient_cases, GRAD_TOL};

#[test]
fn analytic_gradients_match_central_differences() {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..20 {
        for case in gradient_cases(seed) {
            let err = case.max_error();
            match worst.iter_mut().find(|(n, _)| *n == case.name) {
                Some(w) => w.1 = w.1.max(err),
                None => worst.push((case.name, err)),
            }
        }
    }
    for (name, err) in &worst {
        eprintln!("{name:40} {err:.2e}");
    }
    for (name, err) in worst {
        assert!(err < GRAD_TOL, "{name}: relative error {err:.3e}");
    }
}

#[test]
fn network_gradients_match_off_kinks() {
    let (mut skipped, mut total) = (0, 0);
    for seed in 0..5 {
        for case in common::network_cases(seed) {
            let (err, s, t) = case.max_error_off_kinks();
            skipped += s;
            total += t;
            assert!(err < GRAD_TOL, "{} (seed {seed}): relative error {err:.3e}", case.name);
        }
    }
    // kink crossings are rare; a flood of them would hide a broken mask
    assert!(skipped * 20 < total, "{skipped} of {total} coordinates skipped");
}
