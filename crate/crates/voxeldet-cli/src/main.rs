//! Command-line pipelines over the detection library. Commands communicate
//! through files; every run writes a `manifest.json` that `rerun` can replay.
//!
//! Exit codes: 0 success, 2 validation error, 3 I/O error.

mod commands;
mod error;
mod manifest;
mod render;
mod synth;

use clap::{Parser, Subcommand, ValueEnum};
use commands::{EvalProtocol, HeadKind};
use error::CliError;
use manifest::{ManifestCommand, RunManifest};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "voxeldet", version, about = "Multi-view voxel projection and 3D detection numerics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Outdoor,
    Indoor,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    KittiIou,
    Distance,
    IndoorMap,
}

#[derive(Subcommand)]
enum Command {
    /// Project and aggregate a multi-view scene into a voxel volume file.
    Project {
        scene: PathBuf,
        /// Config preset name or config file path (defaults to the scene's
        /// grid reference).
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit head assignment and encoded regression targets for a scene.
    Targets {
        scene: PathBuf,
        #[arg(long)]
        head: HeadArg,
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Suppress overlapping detections on the ground plane.
    Nms {
        dets: PathBuf,
        /// BEV IoU threshold; falls back to the config's value.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against ground truth (scene JSON or KITTI labels).
    Eval {
        dets: PathBuf,
        gts: PathBuf,
        #[arg(long)]
        protocol: ProtocolArg,
        /// Matching threshold override (IoU for the IoU protocols).
        #[arg(long)]
        threshold: Option<f64>,
        /// KITTI calibration file, used when gts is a label .txt.
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference verification of the analytic loss gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic posed scene with annotations and a matching
    /// perfect detection set.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        views: usize,
        #[arg(long, default_value_t = 6)]
        objects: usize,
        #[arg(long, default_value = "scannet")]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render ground-plane footprints of a scene or detections file to SVG.
    RenderBev {
        input: PathBuf,
        /// Detections overlay on top of a scene's annotations.
        #[arg(long)]
        dets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-execute the command recorded in a run manifest.
    Rerun {
        manifest: PathBuf,
        /// Redirect outputs instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("{}", e.message());
        std::process::exit(e.exit_code());
    }
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn run(command: Command) -> Result<(), CliError> {
    let (manifest_command, out) = match command {
        Command::Project { scene, config, out } => (
            ManifestCommand::Project {
                scene: path_string(&scene),
                config,
            },
            out,
        ),
        Command::Targets {
            scene,
            head,
            config,
            out,
        } => (
            ManifestCommand::Targets {
                scene: path_string(&scene),
                head: match head {
                    HeadArg::Outdoor => "outdoor".to_string(),
                    HeadArg::Indoor => "indoor".to_string(),
                },
                config,
            },
            out,
        ),
        Command::Nms {
            dets,
            threshold,
            config,
            out,
        } => (
            ManifestCommand::Nms {
                dets: path_string(&dets),
                threshold,
                config,
            },
            out,
        ),
        Command::Eval {
            dets,
            gts,
            protocol,
            threshold,
            calib,
            out,
        } => (
            ManifestCommand::Eval {
                dets: path_string(&dets),
                gts: path_string(&gts),
                protocol: match protocol {
                    ProtocolArg::KittiIou => "kitti-iou".to_string(),
                    ProtocolArg::Distance => "distance".to_string(),
                    ProtocolArg::IndoorMap => "indoor-map".to_string(),
                },
                threshold,
                calib: calib.as_deref().map(path_string),
            },
            out,
        ),
        Command::Gradcheck { seed, out } => (ManifestCommand::Gradcheck { seed }, out),
        Command::Synth {
            seed,
            views,
            objects,
            config,
            out,
        } => (
            ManifestCommand::Synth {
                seed,
                views,
                objects,
                config,
            },
            out,
        ),
        Command::RenderBev { input, dets, out } => (
            ManifestCommand::RenderBev {
                scene: path_string(&input),
                dets: dets.as_deref().map(path_string),
            },
            out,
        ),
        Command::Rerun { manifest, out } => {
            let recorded = RunManifest::load(&manifest)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&recorded.out_dir));
            return execute(recorded.command, &out);
        }
    };
    execute(manifest_command, &out)
}

fn execute(command: ManifestCommand, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let stages = match &command {
        ManifestCommand::Project { scene, config } => {
            commands::cmd_project(Path::new(scene), config.as_deref(), out)?
        }
        ManifestCommand::Targets { scene, head, config } => {
            let head = match head.as_str() {
                "outdoor" => HeadKind::Outdoor,
                "indoor" => HeadKind::Indoor,
                other => {
                    return Err(CliError::validation(format!("unknown head '{other}'")));
                }
            };
            commands::cmd_targets(Path::new(scene), head, config.as_deref(), out)?
        }
        ManifestCommand::Nms {
            dets,
            threshold,
            config,
        } => commands::cmd_nms(Path::new(dets), *threshold, config.as_deref(), out)?,
        ManifestCommand::Eval {
            dets,
            gts,
            protocol,
            threshold,
            calib,
        } => {
            let protocol = match protocol.as_str() {
                "kitti-iou" => EvalProtocol::KittiIou,
                "distance" => EvalProtocol::Distance,
                "indoor-map" => EvalProtocol::IndoorMap,
                other => {
                    return Err(CliError::validation(format!("unknown protocol '{other}'")));
                }
            };
            commands::cmd_eval(
                Path::new(dets),
                Path::new(gts),
                protocol,
                *threshold,
                calib.as_deref().map(Path::new),
                out,
            )?
        }
        ManifestCommand::Gradcheck { seed } => commands::cmd_gradcheck(*seed, out)?,
        ManifestCommand::Synth {
            seed,
            views,
            objects,
            config,
        } => commands::cmd_synth(*seed, *views, *objects, config, out)?,
        ManifestCommand::RenderBev { scene, dets } => {
            commands::cmd_render_bev(Path::new(scene), dets.as_deref().map(Path::new), out)?
        }
    };
    RunManifest {
        command,
        out_dir: out.display().to_string(),
        timings_ms: stages.list,
    }
    .write(out)
}
