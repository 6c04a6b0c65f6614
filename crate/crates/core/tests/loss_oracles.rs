mod common;

use common::*;
use organcorr::autodiff::{Tape, Tensor};
use organcorr::losses::{registration_loss, LossWeights};
use organcorr::pipeline::TrainConfig;
use proptest::prelude::*;

#[test]
fn matrix_losses_equal_dense_evaluation() {
    let [reg, geo, img] = loss_oracle_errors(40);
    assert!(reg <= 1e-12, "registration {reg:e}");
    assert!(geo <= 1e-12, "geodesic {geo:e}");
    assert!(img <= 1e-12, "imaging {img:e}");
}

#[test]
fn arap_vanishes_for_rigid_sequences() {
    for seed in 0..5 {
        let e = arap_of_rigid_sequence(seed);
        assert!(e <= 1e-9, "seed {seed}: {e:e}");
    }
}

#[test]
fn arap_matches_uniform_scale_closed_form() {
    for (seed, s) in [(0, 2.0), (1, 0.5), (2, 1.3), (3, 0.9)] {
        let (got, want) = arap_of_scaling(seed, s);
        assert!(rel_diff(got, want) <= 1e-9, "scale {s}: {got} vs {want}");
    }
}

#[test]
fn doubling_lambda_doubles_imaging_contribution() {
    let (c1, g1) = imaging_contribution(1000.0);
    let (c2, g2) = imaging_contribution(2000.0);
    assert!(rel_diff(c2, 2.0 * c1) <= 1e-12, "{c1} {c2}");
    assert_eq!(g2, 2.0 * g1);
    assert_eq!(g1, 1000.0);
}

#[test]
fn imaging_weight_defaults_to_one_thousand() {
    assert_eq!(LossWeights::default().lambda_imaging, 1000.0);
    assert_eq!(
        TrainConfig::from_toml("").unwrap().weights.lambda_imaging,
        1000.0
    );
    let c = TrainConfig::from_toml("[weights]\nlambda_imaging = 250.0\n").unwrap();
    assert_eq!(c.weights.lambda_imaging, 250.0);
    assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
}

proptest! {
    #[test]
    fn registration_is_zero_exactly_at_the_soft_target(seed in 0u64..1000) {
        let mut r = rng(seed);
        let pi = random_stochastic(&mut r, 6, 8);
        let y = random_tensor(&mut r, 8, 3, -10.0, 10.0);
        let target = pi.matmul(&y).unwrap();
        let tape = Tape::new();
        let l = registration_loss(tape.leaf(target), tape.leaf(pi), tape.constant(y)).unwrap();
        prop_assert_eq!(l.value().item(), 0.0);
    }

    #[test]
    fn registration_is_nonnegative(seed in 0u64..1000) {
        let mut r = rng(seed);
        let pi = random_stochastic(&mut r, 5, 4);
        let x = random_tensor(&mut r, 5, 3, -10.0, 10.0);
        let y = random_tensor(&mut r, 4, 3, -10.0, 10.0);
        let tape = Tape::new();
        let l = registration_loss(tape.leaf(x), tape.leaf(pi), tape.constant(y)).unwrap().value().item();
        prop_assert!(l >= 0.0);
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let tape = Tape::new();
    let r = registration_loss(
        tape.leaf(Tensor::zeros(&[3, 3])),
        tape.leaf(Tensor::zeros(&[2, 4])),
        tape.constant(Tensor::zeros(&[4, 3])),
    );
    assert!(r.is_err());
}
