mod common;

use common::*;
use organcorr::meshkit::primitives::icosphere;
use organcorr::meshkit::{quadric_decimate, remesh_optimize};
use proptest::prelude::*;

#[test]
fn taubin_preserves_volume_where_laplacian_shrinks() {
    let (v0, vt, vl) = smoothing_volumes();
    let taubin = (vt - v0).abs() / v0;
    let laplacian = (vl - v0).abs() / v0;
    assert!(taubin <= 0.02, "taubin changed volume by {taubin}");
    assert!(
        laplacian > taubin,
        "laplacian {laplacian} vs taubin {taubin}"
    );
    assert!(vl < v0);
}

#[test]
fn decimation_of_5120_face_icosphere() {
    let sphere = icosphere(10.0, 16);
    assert_eq!(sphere.face_count(), 5120);
    let d = quadric_decimate(&sphere, 3000);
    assert!(d.reached_target);
    assert!(d.mesh.face_count() <= 3000);
    d.mesh.validate().unwrap();
    assert_eq!(d.mesh.euler_characteristic(), 2);
    let h = hausdorff(&sphere, &d.mesh);
    assert!(h < 0.02 * sphere.bounding_box_diagonal(), "Hausdorff {h}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn remeshing_reduces_edge_ratio_of_irregular_meshes(seed in 0u64..10_000) {
        let m = irregular_mesh(seed);
        let r = remesh_optimize(&m, 3);
        r.validate().unwrap();
        prop_assert!(r.edge_length_ratio() < m.edge_length_ratio());
    }
}
