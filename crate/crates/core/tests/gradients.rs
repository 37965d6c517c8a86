use eigenpatch::selfcheck::{attack_gradient_error, detector_gradient_error, op_gradient_errors};

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..20 {
        for (name, err) in op_gradient_errors(seed).unwrap() {
            assert!(err < 1e-4, "{name} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn attack_loss_matches_finite_differences() {
    for seed in 0..20 {
        let err = attack_gradient_error(seed).unwrap();
        assert!(err < 1e-3, "seed {seed}: {err:e}");
    }
}

#[test]
fn detector_loss_matches_finite_differences() {
    for seed in 0..5 {
        let err = detector_gradient_error(seed).unwrap();
        assert!(err < 1e-3, "seed {seed}: {err:e}");
    }
}
