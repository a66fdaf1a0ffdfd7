use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rgbd_atlas::io::write_atomic;
use rgbd_atlas::pipeline::{
    cmd_align, cmd_eval, cmd_fuse, cmd_map, cmd_merge, cmd_synth, PipelineConfig, PipelineError, SynthOptions,
};
use rgbd_atlas::synthetic::{NoiseModel, RigKind, TrajectoryKind, TrajectoryParams};

#[derive(Parser)]
#[command(name = "rgbd-atlas", version, about = "RGB-D reconstruction of large indoor spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the effective config to this path.
    #[arg(long)]
    dump_config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Warp color into the depth camera (or depth into color with --d2c).
    Align {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the input directory; must differ from it with --d2c.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        d2c: bool,
    },
    /// Odometry, loop closure and pose-graph optimization of one session.
    Map {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Join mapped sessions; they are attached in the given order.
    Merge {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Integrate depth frames into a mesh.
    Fuse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        /// Mesh path; the fused cloud goes next to it as <stem>_cloud.ply.
        #[arg(long)]
        output: PathBuf,
        /// Integrate only the frames listed in keyframes.txt beside the trajectory.
        #[arg(long)]
        keyframes_only: bool,
        #[arg(long)]
        stride: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print reconstruction and trajectory metrics as JSON.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, requires = "traj_gt")]
        traj_est: Option<PathBuf>,
        #[arg(long, requires = "traj_est")]
        traj_gt: Option<PathBuf>,
        /// Move the reconstruction by the rigid fit of the estimated onto the
        /// ground-truth trajectory first.
        #[arg(long, requires = "traj_est")]
        align: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render a synthetic dataset with ground truth.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = TrajArg::CorridorLoop)]
        trajectory: TrajArg,
        #[arg(long, default_value_t = 300)]
        frames: usize,
        #[arg(long, value_enum, default_value_t = RigArg::Wide)]
        rig: RigArg,
        #[arg(long)]
        no_noise: bool,
        /// Noise seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 7)]
        scene_seed: u64,
        /// Fraction of the trajectory where the sequence starts.
        #[arg(long, default_value_t = 0.0)]
        arc_start: f64,
        #[arg(long, default_value_t = 1.0)]
        arc_end: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajArg {
    CorridorLoop,
    Orbit,
    TeleportGap,
}

#[derive(Clone, Copy, ValueEnum)]
enum RigArg {
    Matched,
    Wide,
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig, PipelineError> {
    let cfg = PipelineConfig::load(args.config.as_deref())?;
    if let Some(p) = &args.dump_config {
        write_atomic(p, cfg.to_json().as_bytes())?;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), PipelineError> {
    let Ok(v) = std::env::var("RGBD_ATLAS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| PipelineError::Input(format!("RGBD_ATLAS_THREADS: expected a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| PipelineError::Input(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    configure_threads()?;
    match cli.command {
        Command::Align { input, output, d2c } => {
            let out = output.unwrap_or_else(|| input.clone());
            cmd_align(&input, &out, d2c)
        }
        Command::Map { input, output, config } => {
            let cfg = load_config(&config)?;
            let map = cmd_map(&input, &output, &cfg)?;
            eprintln!(
                "{} frames, {} keyframes, {} loop edges, {} lost",
                map.poses.len(),
                map.keyframes.len(),
                map.loops.len(),
                map.lost_frames
            );
            Ok(())
        }
        Command::Merge { inputs, output, config } => {
            let cfg = load_config(&config)?;
            let r = cmd_merge(&inputs, &output, &cfg)?;
            eprintln!("{} sessions, {} cross-session loop edges", inputs.len(), r.cross_edges.len());
            Ok(())
        }
        Command::Fuse {
            input,
            trajectory,
            output,
            keyframes_only,
            stride,
            config,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.fusion.keyframes_only |= keyframes_only;
            if let Some(s) = stride {
                cfg.fusion.frame_stride = s;
            }
            cfg.validate().map_err(PipelineError::Input)?;
            let mesh = cmd_fuse(&input, &trajectory, &output, &cfg)?;
            eprintln!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
            Ok(())
        }
        Command::Eval {
            recon,
            gt,
            traj_est,
            traj_gt,
            align,
            config,
        } => {
            let cfg = load_config(&config)?;
            let trajs = traj_est.as_deref().zip(traj_gt.as_deref());
            let m = cmd_eval(&recon, &gt, trajs, align, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
            Ok(())
        }
        Command::Synth {
            output,
            trajectory,
            frames,
            rig,
            no_noise,
            seed,
            scene_seed,
            arc_start,
            arc_end,
        } => {
            let opts = SynthOptions {
                trajectory: match trajectory {
                    TrajArg::CorridorLoop => TrajectoryKind::CorridorLoop,
                    TrajArg::Orbit => TrajectoryKind::Orbit,
                    TrajArg::TeleportGap => TrajectoryKind::TeleportGap,
                },
                frames,
                params: TrajectoryParams {
                    arc_start,
                    arc_end,
                    ..TrajectoryParams::default()
                },
                noise: (!no_noise).then(|| NoiseModel {
                    seed,
                    ..NoiseModel::default()
                }),
                rig: match rig {
                    RigArg::Matched => RigKind::Matched,
                    RigArg::Wide => RigKind::Wide,
                },
                scene_seed,
                ..SynthOptions::default()
            };
            cmd_synth(Path::new(&output), &opts)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
