//! Rotated-IoU and suppression hot paths at desk scale.

use criterion::{criterion_group, criterion_main, Criterion};
use voxeldet::geometry::{iou3d, iou_bev, Box3D};
use voxeldet::nms::{rotated_nms, Detection};

fn random_boxes(n: usize, seed: u64) -> Vec<Box3D> {
    // Small deterministic LCG; quality is irrelevant here.
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..n)
        .map(|_| {
            Box3D::new(
                next() * 8.0 - 4.0,
                next() * 8.0 - 4.0,
                next() * 2.0 - 1.0,
                0.5 + next() * 2.0,
                0.5 + next() * 2.0,
                0.5 + next() * 3.0,
                next() * std::f64::consts::TAU - std::f64::consts::PI,
            )
            .unwrap()
        })
        .collect()
}

fn bench_iou(c: &mut Criterion) {
    let boxes = random_boxes(512, 7);
    c.bench_function("iou3d/pairs-512", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for pair in boxes.chunks_exact(2) {
                acc += iou3d(&pair[0], &pair[1]);
            }
            acc
        })
    });
    c.bench_function("iou_bev/pairs-512", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for pair in boxes.chunks_exact(2) {
                acc += iou_bev(&pair[0], &pair[1]);
            }
            acc
        })
    });
}

fn bench_nms(c: &mut Criterion) {
    let dets: Vec<Detection> = random_boxes(200, 21)
        .into_iter()
        .enumerate()
        .map(|(i, bbox)| Detection::new(bbox, (i % 97) as f64 / 97.0, (i % 3) as u32).unwrap())
        .collect();
    c.bench_function("rotated_nms/200-dets", |b| {
        b.iter(|| rotated_nms(&dets, 0.25).unwrap())
    });
}

criterion_group!(benches, bench_iou, bench_nms);
criterion_main!(benches);
