//! The command implementations. Every command reads files, writes files into
//! the output directory, and returns its per-stage timings; outputs are
//! bitwise reproducible for fixed inputs and seed.

use crate::error::CliError;
use crate::manifest::Stages;
use crate::render::render_bev_svg;
use crate::synth::synth_scene;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::io::BufWriter;
use std::path::Path;
use voxeldet::codec::{
    assign_anchors, assign_fcos, direction_target, encode_outdoor, fcos_locations,
    generate_anchors, AnchorAssignment, BoxDelta7,
};
use voxeldet::eval::{
    average_precision, kitti_difficulty_filter, map_by_class, match_distance, match_iou,
    tp_errors, AngleMode, ApEntry, ApMode, GroundTruthObject, IouKind, MetricReport,
};
use voxeldet::geometry::Box3D;
use voxeldet::io::{
    self, load_scene, parse_kitti_calib, parse_kitti_label, resolve_config, DatasetConfig,
    KittiCalib,
};
use voxeldet::losses::{
    centerness_bce, dir_ce, focal_loss, grad_check, pose_loss, smooth_l1, PoseAngles,
    FOCAL_ALPHA, FOCAL_GAMMA, SMOOTH_L1_BETA,
};
use voxeldet::nms::{rotated_nms, Detection};
use voxeldet::voxel::{aggregate, project_view, CameraView, VoxelVolume};

#[derive(Debug, Clone, Copy)]
pub enum HeadKind {
    Outdoor,
    Indoor,
}

#[derive(Debug, Clone, Copy)]
pub enum EvalProtocol {
    KittiIou,
    Distance,
    IndoorMap,
}

/// On-disk detection list (`dets.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub detections: Vec<Detection>,
}

impl DetectionsFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let mut file: DetectionsFile = serde_json::from_str(&text)?;
        for (i, det) in file.detections.iter_mut().enumerate() {
            Detection::new(det.bbox, det.score, det.class_id)
                .map_err(|e| CliError::validation(format!("detection {i}: {e}")))?;
            det.validate()
                .map_err(|e| CliError::validation(format!("detection {i}: {e}")))?;
            det.bbox.theta = voxeldet::math::wrap_angle(det.bbox.theta);
        }
        Ok(file)
    }
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serialization");
    std::fs::write(out.join(name), text)?;
    Ok(())
}

fn resolve(config_name: &str) -> Result<DatasetConfig, CliError> {
    Ok(resolve_config(config_name)?)
}

// ---------------------------------------------------------------------------
// project
// ---------------------------------------------------------------------------

pub fn cmd_project(
    scene_path: &Path,
    config_override: Option<&str>,
    out: &Path,
) -> Result<Stages, CliError> {
    let mut stages = Stages::start();
    let scene = load_scene(scene_path)?;
    let config = resolve(config_override.unwrap_or(&scene.grid))?;
    let grid = config.grid()?;
    stages.mark("load");

    let views: Vec<CameraView> = scene
        .views
        .iter()
        .map(|v| {
            Ok(CameraView {
                intrinsics: v.intrinsics,
                extrinsics: v.extrinsics,
                features: v.feature_map()?,
            })
        })
        .collect::<Result<_, CliError>>()?;
    stages.mark("features");

    let volumes: Vec<VoxelVolume> = views
        .iter()
        .map(|v| project_view(v, &grid))
        .collect::<Result<_, _>>()?;
    stages.mark("project");

    let merged = aggregate(&volumes)?;
    stages.mark("aggregate");

    let file = std::fs::File::create(out.join("volume.bin"))?;
    merged.write_to(BufWriter::new(file))?;
    stages.mark("write");

    let covered = merged.mask.iter().filter(|&&m| m > 0).count();
    println!(
        "projected {} view(s) into a {}x{}x{}x{} volume; {}/{} voxels covered",
        views.len(),
        grid.nx,
        grid.ny,
        grid.nz,
        merged.channels,
        covered,
        grid.voxel_count()
    );
    Ok(stages)
}

// ---------------------------------------------------------------------------
// targets
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OutdoorPositive {
    anchor: usize,
    gt: usize,
    dir_positive: bool,
    delta: BoxDelta7,
}

#[derive(Serialize)]
struct OutdoorTargets {
    head: &'static str,
    n_anchors: usize,
    n_positive: usize,
    n_negative: usize,
    n_ignored: usize,
    positives: Vec<OutdoorPositive>,
}

#[derive(Serialize)]
struct IndoorPositive {
    location: usize,
    level: usize,
    class_id: u32,
    offsets: [f64; 6],
    theta: f64,
    centerness: f64,
}

#[derive(Serialize)]
struct IndoorTargets {
    head: &'static str,
    n_locations: usize,
    n_positive: usize,
    positives: Vec<IndoorPositive>,
}

pub fn cmd_targets(
    scene_path: &Path,
    head: HeadKind,
    config_override: Option<&str>,
    out: &Path,
) -> Result<Stages, CliError> {
    let mut stages = Stages::start();
    let scene = load_scene(scene_path)?;
    let config = resolve(config_override.unwrap_or(&scene.grid))?;
    let grid = config.grid()?;
    let mut boxes: Vec<Box3D> = scene.objects.iter().map(|o| o.bbox).collect();
    if config.rotation_free {
        for b in &mut boxes {
            b.theta = 0.0;
        }
    }
    stages.mark("load");

    match head {
        HeadKind::Outdoor => {
            let rotations: &[f64] = if config.rotation_free {
                &[0.0]
            } else {
                &[0.0, FRAC_PI_2]
            };
            let anchors = generate_anchors(&grid, config.anchor, rotations);
            let assignment = assign_anchors(
                &anchors,
                &boxes,
                config.thresholds.pos_iou,
                config.thresholds.neg_iou,
            )?;
            stages.mark("assign");
            let positives: Vec<OutdoorPositive> = assignment
                .iter()
                .enumerate()
                .filter_map(|(i, a)| match a {
                    AnchorAssignment::Positive(j) => Some(OutdoorPositive {
                        anchor: i,
                        gt: *j,
                        dir_positive: direction_target(boxes[*j].theta, anchors[i].theta),
                        delta: encode_outdoor(&boxes[*j], &anchors[i]),
                    }),
                    _ => None,
                })
                .collect();
            let n_negative = assignment
                .iter()
                .filter(|a| matches!(a, AnchorAssignment::Negative))
                .count();
            let report = OutdoorTargets {
                head: "outdoor",
                n_anchors: anchors.len(),
                n_positive: positives.len(),
                n_negative,
                n_ignored: anchors.len() - positives.len() - n_negative,
                positives,
            };
            write_json(out, "targets.json", &report)?;
            stages.mark("write");
            println!(
                "outdoor head: {} anchors, {} positive, {} negative, {} ignored",
                report.n_anchors, report.n_positive, report.n_negative, report.n_ignored
            );
        }
        HeadKind::Indoor => {
            let class_ids: Vec<u32> = scene.objects.iter().map(|o| o.class_id).collect();
            let locations = fcos_locations(&grid)?;
            let targets = assign_fcos(&boxes, &class_ids, &grid)?;
            stages.mark("assign");
            let positives: Vec<IndoorPositive> = targets
                .iter()
                .enumerate()
                .filter(|(_, t)| t.is_positive)
                .map(|(idx, t)| IndoorPositive {
                    location: idx,
                    level: locations[idx].level,
                    class_id: t.class_id,
                    offsets: t.offsets(),
                    theta: t.theta,
                    centerness: t.centerness,
                })
                .collect();
            let report = IndoorTargets {
                head: "indoor",
                n_locations: locations.len(),
                n_positive: positives.len(),
                positives,
            };
            write_json(out, "targets.json", &report)?;
            stages.mark("write");
            println!(
                "indoor head: {} locations, {} positive",
                report.n_locations, report.n_positive
            );
        }
    }
    Ok(stages)
}

// ---------------------------------------------------------------------------
// nms
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct NmsOutput {
    threshold: f64,
    kept: Vec<usize>,
    detections: Vec<Detection>,
}

pub fn cmd_nms(
    dets_path: &Path,
    threshold: Option<f64>,
    config_override: Option<&str>,
    out: &Path,
) -> Result<Stages, CliError> {
    let mut stages = Stages::start();
    let dets = DetectionsFile::load(dets_path)?;
    let threshold = match (threshold, config_override) {
        (Some(t), _) => t,
        (None, Some(name)) => resolve(name)?.thresholds.nms,
        (None, None) => {
            return Err(CliError::validation(
                "provide --threshold or --config for the suppression threshold",
            ))
        }
    };
    stages.mark("load");
    let kept = rotated_nms(&dets.detections, threshold)?;
    stages.mark("suppress");
    let output = NmsOutput {
        threshold,
        detections: kept.iter().map(|&i| dets.detections[i]).collect(),
        kept,
    };
    write_json(out, "kept.json", &output)?;
    stages.mark("write");
    println!(
        "kept {}/{} detections at IoU threshold {}",
        output.kept.len(),
        dets.detections.len(),
        threshold
    );
    Ok(stages)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn zero_offset_calib() -> KittiCalib {
    KittiCalib {
        p2: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ],
        r0_rect: voxeldet::math::IDENTITY,
        tr_velo_to_cam: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ],
    }
}

/// Ground truth from a scene JSON, or from a KITTI label `.txt` (class ids
/// assigned by sorted class name; devkit difficulty decides the ignore flag;
/// DontCare rows carry no 3D geometry and are dropped).
fn load_gts(path: &Path, calib: Option<&Path>) -> Result<Vec<GroundTruthObject>, CliError> {
    if path.extension().and_then(|e| e.to_str()) == Some("txt") {
        let calib = match calib {
            Some(p) => parse_kitti_calib(&std::fs::read_to_string(p)?)?,
            None => zero_offset_calib(),
        };
        let labels = parse_kitti_label(&std::fs::read_to_string(path)?)?;
        let mut names: Vec<String> = labels
            .iter()
            .filter(|l| !l.is_dont_care())
            .map(|l| l.class_name.clone())
            .collect();
        names.sort();
        names.dedup();
        labels
            .iter()
            .filter(|l| !l.is_dont_care())
            .map(|l| {
                let bbox = io::kitti_to_box3d(l, &calib)?;
                let difficulty = kitti_difficulty_filter(
                    l.bbox[3] - l.bbox[1],
                    l.occlusion,
                    l.truncation,
                );
                let class_id = names.iter().position(|n| *n == l.class_name).expect("name set")
                    as u32;
                Ok(GroundTruthObject {
                    bbox,
                    class_id,
                    difficulty,
                    ignore: difficulty.is_none(),
                })
            })
            .collect()
    } else {
        Ok(load_scene(path)?.objects)
    }
}

fn class_ids(gts: &[GroundTruthObject]) -> Vec<u32> {
    let mut ids: Vec<u32> = gts.iter().filter(|g| !g.ignore).map(|g| g.class_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

pub fn cmd_eval(
    dets_path: &Path,
    gts_path: &Path,
    protocol: EvalProtocol,
    threshold: Option<f64>,
    calib: Option<&Path>,
    out: &Path,
) -> Result<Stages, CliError> {
    let mut stages = Stages::start();
    let dets = DetectionsFile::load(dets_path)?.detections;
    let gts = load_gts(gts_path, calib)?;
    stages.mark("load");

    let report = match protocol {
        EvalProtocol::KittiIou => {
            let thr = threshold.unwrap_or(0.7);
            let mut entries = Vec::new();
            for class_id in class_ids(&gts) {
                let class_dets: Vec<Detection> =
                    dets.iter().filter(|d| d.class_id == class_id).copied().collect();
                let class_gts: Vec<GroundTruthObject> =
                    gts.iter().filter(|g| g.class_id == class_id).copied().collect();
                let n_gt = class_gts.iter().filter(|g| !g.ignore).count();
                for (criterion, kind) in [("iou3d", IouKind::ThreeD), ("bev", IouKind::Bev)] {
                    let matched = match_iou(&class_dets, &class_gts, thr, kind);
                    let scored = matched.scored(&class_dets);
                    for mode in [ApMode::Interp40, ApMode::AllPoints] {
                        let curve = average_precision(&scored, n_gt, mode);
                        entries.push(ApEntry {
                            class_id,
                            criterion: criterion.to_string(),
                            threshold: thr,
                            mode,
                            n_gt,
                            ap: curve.ap,
                            pr: curve.points,
                        });
                    }
                }
            }
            let map = mean_ap(&entries);
            MetricReport {
                protocol: "kitti-iou".to_string(),
                entries,
                map,
                tp_errors: None,
            }
        }
        EvalProtocol::Distance => {
            // Class-blind single-category matching by BEV center distance.
            // --threshold moves the TP-error matching distance (default 2 m).
            let n_gt = gts.iter().filter(|g| !g.ignore).count();
            let tp_threshold = threshold.unwrap_or(2.0);
            let tp_match = match_distance(&dets, &gts, tp_threshold);
            let pairs = tp_match.pairs(&dets, &gts);
            let errors = if pairs.is_empty() {
                None
            } else {
                Some(tp_errors(&pairs, AngleMode::Orientation)?)
            };
            let mut entries = Vec::new();
            for d in [0.5, 1.0, 2.0, 4.0] {
                let matched = match_distance(&dets, &gts, d);
                let curve = average_precision(&matched.scored(&dets), n_gt, ApMode::AllPoints);
                entries.push(ApEntry {
                    class_id: 0,
                    criterion: "distance".to_string(),
                    threshold: d,
                    mode: ApMode::AllPoints,
                    n_gt,
                    ap: curve.ap,
                    pr: curve.points,
                });
            }
            let map = mean_ap(&entries);
            MetricReport {
                protocol: "distance".to_string(),
                entries,
                map,
                tp_errors: errors,
            }
        }
        EvalProtocol::IndoorMap => {
            let thr = threshold.unwrap_or(0.25);
            let result = map_by_class(&dets, &gts, thr, IouKind::ThreeD);
            let entries: Vec<ApEntry> = result
                .per_class
                .iter()
                .map(|(class_id, curve)| ApEntry {
                    class_id: *class_id,
                    criterion: "iou3d".to_string(),
                    threshold: thr,
                    mode: ApMode::AllPoints,
                    n_gt: gts
                        .iter()
                        .filter(|g| g.class_id == *class_id && !g.ignore)
                        .count(),
                    ap: curve.ap,
                    pr: curve.points.clone(),
                })
                .collect();
            MetricReport {
                protocol: "indoor-map".to_string(),
                entries,
                map: result.mean,
                tp_errors: None,
            }
        }
    };
    stages.mark("evaluate");
    write_json(out, "report.json", &report)?;
    stages.mark("write");
    match &report.tp_errors {
        Some(e) => println!(
            "{}: mAP {:.4} over {} entr(ies); ATE {:.3} m, ASE {:.3}, AOE {:.3} rad",
            report.protocol,
            report.map,
            report.entries.len(),
            e.ate,
            e.ase,
            e.aoe
        ),
        None => println!(
            "{}: mAP {:.4} over {} entr(ies)",
            report.protocol,
            report.map,
            report.entries.len()
        ),
    }
    Ok(stages)
}

fn mean_ap(entries: &[ApEntry]) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    entries.iter().map(|e| e.ap).sum::<f64>() / entries.len() as f64
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GradCheckRow {
    loss: String,
    points: usize,
    max_rel_err: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct GradCheckReport {
    seed: u64,
    checks: Vec<GradCheckRow>,
}

pub fn cmd_gradcheck(seed: u64, out: &Path) -> Result<Stages, CliError> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut stages = Stages::start();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let tolerance = 1e-4;
    let mut checks: Vec<GradCheckRow> = Vec::new();

    let mut run = |loss: &str, mut worst_of: Box<dyn FnMut(&mut rand_chacha::ChaCha8Rng) -> f64>| {
        let points = 100;
        let mut max_err = 0.0f64;
        for _ in 0..points {
            max_err = max_err.max(worst_of(&mut rng));
        }
        checks.push(GradCheckRow {
            loss: loss.to_string(),
            points,
            max_rel_err: max_err,
            tolerance,
            pass: max_err < tolerance,
        });
    };

    run(
        "focal",
        Box::new(|rng| {
            let p = rng.gen_range(0.02..0.98);
            let y = rng.gen_bool(0.5);
            grad_check(
                |x| {
                    let (v, g) = focal_loss(x[0], y, FOCAL_ALPHA, FOCAL_GAMMA).unwrap();
                    (v, vec![g])
                },
                &[p],
                1e-6,
            )
        }),
    );
    run(
        "smooth_l1",
        Box::new(|rng| {
            // Sample away from the quadratic/linear transition.
            let mut pred: f64;
            let target: f64 = rng.gen_range(-2.0..2.0);
            loop {
                pred = rng.gen_range(-2.0..2.0);
                let d = (pred - target).abs();
                if (d - SMOOTH_L1_BETA).abs() > SMOOTH_L1_BETA * 0.5 {
                    break;
                }
            }
            grad_check(
                |x| {
                    let (v, g) = smooth_l1(x[0], target, SMOOTH_L1_BETA).unwrap();
                    (v, vec![g])
                },
                &[pred],
                1e-7,
            )
        }),
    );
    run(
        "dir_ce",
        Box::new(|rng| {
            let logits = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let target = usize::from(rng.gen_bool(0.5));
            grad_check(
                |x| {
                    let (v, g) = dir_ce([x[0], x[1]], target).unwrap();
                    (v, g.to_vec())
                },
                &logits,
                1e-6,
            )
        }),
    );
    run(
        "centerness_bce",
        Box::new(|rng| {
            let p = rng.gen_range(0.03..0.97);
            let t = rng.gen_range(0.0..1.0);
            grad_check(
                |x| {
                    let (v, g) = centerness_bce(x[0], t).unwrap();
                    (v, vec![g])
                },
                &[p],
                1e-6,
            )
        }),
    );
    run(
        "pose",
        Box::new(|rng| {
            use std::f64::consts::PI;
            let kink = |r: f64| ((r / PI).round() * PI - r).abs();
            loop {
                let gt = PoseAngles {
                    beta: rng.gen_range(-PI..PI),
                    gamma: rng.gen_range(-PI..PI),
                };
                let pred = [rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)];
                if kink(gt.beta - pred[0]) < 1e-3 || kink(gt.gamma - pred[1]) < 1e-3 {
                    continue;
                }
                return grad_check(
                    |x| {
                        let (v, g) = pose_loss(
                            &PoseAngles {
                                beta: x[0],
                                gamma: x[1],
                            },
                            &gt,
                        );
                        (v, g.to_vec())
                    },
                    &pred,
                    1e-6,
                );
            }
        }),
    );
    stages.mark("check");

    let report = GradCheckReport { seed, checks };
    write_json(out, "gradcheck.json", &report)?;
    stages.mark("write");
    for row in &report.checks {
        println!(
            "{:<16} {} points, max rel err {:.3e} (tol {:.0e}): {}",
            row.loss,
            row.points,
            row.max_rel_err,
            row.tolerance,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    if report.checks.iter().any(|c| !c.pass) {
        return Err(CliError::validation("gradient check failed"));
    }
    Ok(stages)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(
    seed: u64,
    views: usize,
    objects: usize,
    config_name: &str,
    out: &Path,
) -> Result<Stages, CliError> {
    let mut stages = Stages::start();
    if views == 0 {
        return Err(CliError::validation("--views must be at least 1"));
    }
    let config = resolve(config_name)?;
    let output = synth_scene(seed, views, objects, &config, config_name);
    output.scene.validate()?;
    stages.mark("generate");
    std::fs::write(out.join("scene.json"), output.scene.to_json_string())?;
    write_json(
        out,
        "dets.json",
        &DetectionsFile {
            detections: output.detections,
        },
    )?;
    stages.mark("write");
    println!(
        "synthesized scene '{}': {} view(s), {} object(s) (seed {})",
        config_name, views, objects, seed
    );
    Ok(stages)
}

// ---------------------------------------------------------------------------
// render-bev
// ---------------------------------------------------------------------------

pub fn cmd_render_bev(
    input: &Path,
    dets_overlay: Option<&Path>,
    out: &Path,
) -> Result<Stages, CliError> {
    let mut stages = Stages::start();
    let text = std::fs::read_to_string(input)?;
    let (grid, gt_boxes, mut det_boxes) =
        match serde_json::from_str::<voxeldet::io::SceneFile>(&text) {
            Ok(scene) => {
                scene.validate()?;
                let grid = resolve(&scene.grid)?.grid()?;
                let gts: Vec<Box3D> = scene.objects.iter().map(|o| o.bbox).collect();
                (Some(grid), gts, Vec::new())
            }
            Err(_) => {
                let dets: DetectionsFile = serde_json::from_str(&text).map_err(|e| {
                    CliError::validation(format!(
                        "{} is neither a scene nor a detections file: {e}",
                        input.display()
                    ))
                })?;
                let boxes: Vec<Box3D> = dets.detections.iter().map(|d| d.bbox).collect();
                (None, Vec::new(), boxes)
            }
        };
    if let Some(path) = dets_overlay {
        let dets = DetectionsFile::load(path)?;
        det_boxes.extend(dets.detections.iter().map(|d| d.bbox));
    }
    stages.mark("load");
    let svg = render_bev_svg(grid.as_ref(), &gt_boxes, &det_boxes);
    std::fs::write(out.join("bev.svg"), &svg)?;
    stages.mark("write");
    println!(
        "rendered {} annotation(s) and {} detection(s) to bev.svg",
        gt_boxes.len(),
        det_boxes.len()
    );
    Ok(stages)
}
