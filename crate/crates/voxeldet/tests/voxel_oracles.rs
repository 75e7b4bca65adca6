//! Volume construction against brute-force per-voxel recomputation, the
//! coordinate-encoding self-test, and scalar aggregation references.

mod common;

use common::{aggregate_reference, brute_force_mask, ring_views, rng};
use rand::seq::SliceRandom;
use voxeldet::stub::FeaturePattern;
use voxeldet::voxel::{aggregate, project_view, VoxelGridSpec, VoxelVolume};

fn random_spec(seed: u64) -> VoxelGridSpec {
    let mut rng = rng(seed);
    use rand::Rng;
    let s = [0.25, 0.5, 1.0][rng.gen_range(0..3)];
    let nx = rng.gen_range(4..20) as f64;
    let ny = rng.gen_range(4..20) as f64;
    let nz = rng.gen_range(2..10) as f64;
    let x0 = rng.gen_range(-5.0f64..0.0);
    let y0 = rng.gen_range(-5.0f64..0.0);
    let z0 = rng.gen_range(-2.0f64..0.0);
    VoxelGridSpec::new(
        [x0, x0 + nx * s, y0, y0 + ny * s, z0, z0 + nz * s],
        s,
    )
    .unwrap()
}

#[test]
fn frustum_masks_match_brute_force_bit_for_bit() {
    for scene in 0..20u64 {
        let spec = random_spec(scene);
        let views = ring_views(&spec, 1 + (scene as usize % 4), 3, scene * 31 + 7,
            FeaturePattern::SeededRandom);
        for (vi, view) in views.iter().enumerate() {
            let volume = project_view(view, &spec).unwrap();
            let reference = brute_force_mask(view, &spec);
            assert_eq!(
                volume.mask, reference,
                "scene {scene} view {vi}: mask mismatch"
            );
        }
    }
}

#[test]
fn coordinate_encoding_self_test() {
    for scene in 0..10u64 {
        let spec = random_spec(100 + scene);
        let views = ring_views(&spec, 3, 4, scene, FeaturePattern::CoordinateEncoding);
        for view in &views {
            let volume = project_view(view, &spec).unwrap();
            for iz in 0..spec.nz {
                for iy in 0..spec.ny {
                    for ix in 0..spec.nx {
                        if volume.count(ix, iy, iz) == 0 {
                            continue;
                        }
                        let center = spec.voxel_center(ix, iy, iz).unwrap();
                        let (u, v, depth) = voxeldet::geometry::project_point(
                            &view.intrinsics,
                            &view.extrinsics,
                            center,
                            view.features.stride,
                        );
                        assert!(depth > 0.0);
                        let got = volume.value(ix, iy, iz);
                        assert_eq!(got[0] as f64, u.floor());
                        assert_eq!(got[1] as f64, v.floor());
                    }
                }
            }
        }
    }
}

#[test]
fn aggregation_matches_scalar_reference() {
    for scene in 0..10u64 {
        let spec = random_spec(200 + scene);
        let views = ring_views(&spec, 4, 3, scene * 13 + 1, FeaturePattern::SeededRandom);
        let volumes: Vec<VoxelVolume> = views
            .iter()
            .map(|v| project_view(v, &spec).unwrap())
            .collect();
        let agg = aggregate(&volumes).unwrap();
        let (ref_mask, ref_data) = aggregate_reference(&volumes);
        assert_eq!(agg.mask, ref_mask);
        for (i, (got, want)) in agg.data.iter().zip(&ref_data).enumerate() {
            assert!(
                (got - want).abs() < 1e-6,
                "scene {scene} value {i}: {got} vs {want}"
            );
        }
        // Zero-coverage voxels are exactly zero.
        for voxel in 0..spec.voxel_count() {
            if agg.mask[voxel] == 0 {
                for c in 0..agg.channels {
                    assert_eq!(agg.data[voxel * agg.channels + c], 0.0);
                }
            }
        }
    }
}

#[test]
fn aggregation_permutation_invariance_over_random_orders() {
    let mut order_rng = rng(4242);
    for scene in 0..10u64 {
        let spec = random_spec(300 + scene);
        let views = ring_views(&spec, 5, 2, scene * 7 + 3, FeaturePattern::SeededRandom);
        let mut volumes: Vec<VoxelVolume> = views
            .iter()
            .map(|v| project_view(v, &spec).unwrap())
            .collect();
        let base = aggregate(&volumes).unwrap();
        for _ in 0..5 {
            volumes.shuffle(&mut order_rng);
            let permuted = aggregate(&volumes).unwrap();
            assert_eq!(base.mask, permuted.mask, "scene {scene}");
            assert_eq!(base.data, permuted.data, "scene {scene}");
        }
    }
}
