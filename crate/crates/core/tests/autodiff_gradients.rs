mod common;

use common::{network_gradient_error, GRAD_TOL, OP_INSTANCES};
use organcorr::autodiff::gradcheck::{check_op, OPS};
use organcorr::pipeline::Variant;

#[test]
fn every_op_matches_central_differences() {
    for op in OPS {
        for seed in 0..OP_INSTANCES {
            let e = check_op(op, seed);
            assert!(e <= GRAD_TOL, "{op} instance {seed}: relative error {e:e}");
        }
    }
}

#[test]
fn base_network_gradient_on_thirty_vertices() {
    let e = network_gradient_error(Variant::Base, 7);
    assert!(e <= GRAD_TOL, "{e:e}");
}

#[test]
fn image_feature_network_gradient_on_thirty_vertices() {
    let e = network_gradient_error(Variant::ImageFeatures, 7);
    assert!(e <= GRAD_TOL, "{e:e}");
}

#[test]
fn imaging_loss_network_gradient_on_thirty_vertices() {
    let e = network_gradient_error(Variant::ImagingLoss, 7);
    assert!(e <= GRAD_TOL, "{e:e}");
}
