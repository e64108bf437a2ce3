mod common;

use common::{grad_check, random_case};

#[test]
fn analytic_matches_finite_differences_on_random_nets() {
    for seed in 0..20 {
        let (net, inputs, targets) = random_case(seed);
        let r = grad_check(&net, &inputs, &targets, 1e-3);
        let total = r.checked + r.skipped_kinks;
        assert!(r.skipped_kinks * 10 < total, "seed {seed}: too many kink skips {r:?}");
        assert!(r.max_rel_error < 1e-3, "seed {seed}: {r:?}");
    }
}

#[test]
fn frozen_first_conv_still_checks() {
    let (mut net, inputs, targets) = random_case(99);
    net.set_trainable(0, false);
    let r = grad_check(&net, &inputs, &targets, 1e-3);
    assert!(r.max_rel_error < 1e-3, "{r:?}");
}
