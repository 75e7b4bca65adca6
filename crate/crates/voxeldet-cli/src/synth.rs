//! Deterministic synthetic scenes: posed stub-feature views on a ring around
//! the grid, annotated boxes inside it, and a matching perfect detection set.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxeldet::eval::GroundTruthObject;
use voxeldet::geometry::{Box3D, CameraExtrinsics, CameraIntrinsics};
use voxeldet::io::{DatasetConfig, SceneFile, SceneView, ViewFeatures};
use voxeldet::losses::PoseAngles;
use voxeldet::nms::Detection;
use voxeldet::stub::FeaturePattern;
use voxeldet::voxel::VoxelGridSpec;

pub struct SynthOutput {
    pub scene: SceneFile,
    pub detections: Vec<Detection>,
}

fn random_view(rng: &mut ChaCha8Rng, grid: &VoxelGridSpec, seed: u64, index: usize) -> SceneView {
    let cx = (grid.x_min + grid.x_max) * 0.5;
    let cy = (grid.y_min + grid.y_max) * 0.5;
    let cz = (grid.z_min + grid.z_max) * 0.5;
    let radius = 0.9 * (grid.x_max - grid.x_min).max(grid.y_max - grid.y_min);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let eye = [
        cx + radius * angle.cos(),
        cy + radius * angle.sin(),
        cz + rng.gen_range(-0.4..0.4) * (grid.z_max - grid.z_min),
    ];
    let target = [
        cx + rng.gen_range(-0.2..0.2) * (grid.x_max - grid.x_min),
        cy + rng.gen_range(-0.2..0.2) * (grid.y_max - grid.y_min),
        cz,
    ];
    let width = 48;
    let height = 36;
    SceneView {
        intrinsics: CameraIntrinsics::new(
            rng.gen_range(120.0..260.0),
            rng.gen_range(120.0..260.0),
            width as f64 * 2.0,
            height as f64 * 2.0,
        )
        .expect("positive focal lengths"),
        extrinsics: CameraExtrinsics::looking_at(eye, target, [0.0, 0.0, 1.0])
            .expect("ring cameras always face the grid center"),
        features: ViewFeatures::Stub {
            seed: seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            channels: 16,
            pattern: FeaturePattern::CoordinateEncoding,
            width,
            height,
            stride: 4,
        },
    }
}

fn random_object(rng: &mut ChaCha8Rng, grid: &VoxelGridSpec, rotation_free: bool, class_id: u32)
-> GroundTruthObject {
    let spans = [
        grid.x_max - grid.x_min,
        grid.y_max - grid.y_min,
        grid.z_max - grid.z_min,
    ];
    let l = rng.gen_range(0.08..0.22) * spans[0];
    let w = rng.gen_range(0.08..0.22) * spans[1];
    let h = rng.gen_range(0.15..0.4) * spans[2];
    // The circumscribed footprint radius keeps every corner inside the grid.
    let r_bev = 0.5 * (l * l + w * w).sqrt();
    let bbox = Box3D::new(
        rng.gen_range(grid.x_min + r_bev..grid.x_max - r_bev),
        rng.gen_range(grid.y_min + r_bev..grid.y_max - r_bev),
        rng.gen_range(grid.z_min + h * 0.5..grid.z_max - h * 0.5),
        w,
        h,
        l,
        if rotation_free {
            0.0
        } else {
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)
        },
    )
    .expect("synthesized extents are positive");
    GroundTruthObject {
        bbox,
        class_id,
        difficulty: None,
        ignore: false,
    }
}

/// Builds a scene plus the perfect detection set for it (scores strictly
/// descending in object order).
pub fn synth_scene(
    seed: u64,
    n_views: usize,
    n_objects: usize,
    config: &DatasetConfig,
    config_name: &str,
) -> SynthOutput {
    let grid = config.grid().expect("presets and validated configs derive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views: Vec<SceneView> = (0..n_views)
        .map(|i| random_view(&mut rng, &grid, seed, i))
        .collect();
    let objects: Vec<GroundTruthObject> = (0..n_objects)
        .map(|i| random_object(&mut rng, &grid, config.rotation_free, (i % 4) as u32))
        .collect();
    let layout = Box3D::new(
        (grid.x_min + grid.x_max) * 0.5,
        (grid.y_min + grid.y_max) * 0.5,
        (grid.z_min + grid.z_max) * 0.5,
        grid.y_max - grid.y_min,
        grid.z_max - grid.z_min,
        grid.x_max - grid.x_min,
        0.0,
    )
    .expect("grid spans are positive");
    let pose = PoseAngles {
        beta: rng.gen_range(-0.1..0.1),
        gamma: rng.gen_range(-0.1..0.1),
    };
    let detections = objects
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            Detection::new(obj.bbox, 1.0 - i as f64 * 1e-3, obj.class_id)
                .expect("synthesized scores stay in range")
        })
        .collect();
    SynthOutput {
        scene: SceneFile {
            grid: config_name.to_string(),
            views,
            objects,
            layout: Some(layout),
            pose: Some(pose),
        },
        detections,
    }
}
