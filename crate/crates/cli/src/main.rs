//! Command-line interface for surfsplat: synthetic data generation, fitting,
//! rendering, relighting, compositing, evaluation, gradient verification and
//! throughput measurement.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use surfsplat::checkpoint;
use surfsplat::config::{Precision, RunConfig};
use surfsplat::dataset::{CamerasFile, Dataset, PosesFile};
use surfsplat::diff::fit::fit;
use surfsplat::diff::gradcheck::{run_gradcheck, GradCheckConfig};
use surfsplat::diff::model::{forward_splats, Avatar};
use surfsplat::error::Error as CoreError;
use surfsplat::image::{read_mask, read_png, write_png, PngDepth};
use surfsplat::lighting::ShCoefficients;
use surfsplat::mesh::PoseFrame;
use surfsplat::render::{composite_overlay, psnr, rasterize, ssim, ScreenSplat};
use surfsplat::synthetic::{constant_environment_net, make_synthetic, SyntheticKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Parser)]
#[command(name = "surfsplat", version, about = "Surface-anchored Gaussian avatars: fit, render, relight, composite")]
struct Cli {
    /// TOML run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rendering (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Rasterizer scalar for inference commands.
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    /// Output path (directory or file depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        cmd: ConfigCmd,
    },
    /// Generate a ground-truth-known synthetic dataset.
    MakeSynthetic {
        /// quad | icosphere | two-bone-cylinder
        #[arg(long)]
        kind: String,
    },
    /// Optimize an avatar against a dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Render a checkpoint under given poses and cameras.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// Apply stored per-frame pose refinements: auto (when counts
        /// match), on, or off.
        #[arg(long, default_value = "auto")]
        apply_pose_deltas: String,
    },
    /// Render with the predicted environments replaced by fixed
    /// coefficients.
    Relight {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sh: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
    },
    /// Paste rendered frames over backgrounds, masked object pixels intact.
    Composite {
        #[arg(long)]
        rendered: PathBuf,
        #[arg(long)]
        background: PathBuf,
        #[arg(long)]
        masks: PathBuf,
    },
    /// Per-frame PSNR/SSIM of a render directory against targets.
    Eval {
        #[arg(long)]
        rendered: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Finite-difference verification of the analytic gradients.
    Gradcheck {
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Rendering throughput on a checkpoint.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        frames: usize,
    },
}

#[derive(Subcommand)]
enum ConfigCmd {
    /// Write the fully commented default configuration.
    Init,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if let Some(p) = cli.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    Ok(cfg)
}

fn install_threads(cfg: &RunConfig) {
    if cfg.threads > 0 {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
}

fn require_out(cli: &Cli, what: &str) -> anyhow::Result<PathBuf> {
    cli.out
        .clone()
        .ok_or_else(|| anyhow!("--out is required for {what}"))
}

/// Render every (pose, view) pair of a pose/camera file pair to 16-bit PNGs
/// under out/<view>/<t>.png.
fn render_sequence(
    avatar: &Avatar,
    poses: &[PoseFrame],
    cameras: &CamerasFile,
    cfg: &RunConfig,
    apply_deltas: bool,
    out: &Path,
) -> anyhow::Result<()> {
    let values = avatar.gather();
    for (vi, view) in cameras.views.iter().enumerate() {
        for (t, pose) in poses.iter().enumerate() {
            let cam = view.camera_for_frame(t)?;
            let frame_idx = if apply_deltas { Some(t) } else { None };
            let (splats, _) =
                forward_splats(avatar, &values, pose, frame_idx, &cam, &cfg.render, |x| x)?;
            let img = match cfg.precision {
                Precision::F64 => rasterize(&splats, cam.width, cam.height, &cfg.render)?,
                Precision::F32 => {
                    let splats32: Vec<ScreenSplat<f32>> = splats
                        .iter()
                        .map(|s| ScreenSplat {
                            mean: [s.mean[0] as f32, s.mean[1] as f32],
                            cov: [s.cov[0] as f32, s.cov[1] as f32, s.cov[2] as f32],
                            depth: s.depth as f32,
                            color: [s.color[0] as f32, s.color[1] as f32, s.color[2] as f32],
                            opacity: s.opacity as f32,
                        })
                        .collect();
                    rasterize(&splats32, cam.width, cam.height, &cfg.render)?.to_f64()
                }
            };
            write_png(
                &img,
                &out.join(vi.to_string()).join(format!("{t:04}.png")),
                PngDepth::Sixteen,
            )?;
        }
    }
    Ok(())
}

fn load_poses(path: &Path) -> anyhow::Result<Vec<PoseFrame>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let file: PosesFile = serde_json::from_str(&text)
        .map_err(|e| CoreError::dataset("poses-parse", e.to_string()))?;
    file.frames
        .into_iter()
        .map(|p| Ok(p.normalized()?))
        .collect()
}

fn load_cameras(path: &Path) -> anyhow::Result<CamerasFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)
        .map_err(|e| CoreError::dataset("cameras-parse", e.to_string()))?)
}

/// JSON layout for `relight --sh`: coefficient-major RGB triplets in basis
/// order (index l^2 + l + m), palm then back.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ShOverrideFile {
    order: usize,
    palm: Vec<[f64; 3]>,
    back: Vec<[f64; 3]>,
}

fn png_stems(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut stems: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| {
            let p = e.ok()?.path();
            if p.extension().is_some_and(|x| x == "png") {
                Some(p.file_stem()?.to_string_lossy().into_owned())
            } else {
                None
            }
        })
        .collect();
    stems.sort();
    Ok(stems)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    install_threads(&cfg);
    match &cli.cmd {
        Cmd::Config { cmd: ConfigCmd::Init } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("surfsplat.toml"));
            std::fs::write(&out, RunConfig::template())?;
            println!("wrote {}", out.display());
        }
        Cmd::MakeSynthetic { kind } => {
            let kind = SyntheticKind::parse(kind)
                .ok_or_else(|| CoreError::Config(format!("unknown synthetic kind '{kind}'")))?;
            let out = require_out(cli, "make-synthetic")?;
            let ds = make_synthetic(kind, &out, cfg.seed)?;
            println!(
                "dataset at {}: {} poses x {} views, {} faces",
                out.display(),
                ds.n_frames(),
                ds.n_views(),
                ds.mesh.face_count()
            );
        }
        Cmd::Fit { dataset } => {
            let out = require_out(cli, "fit")?;
            let ds = Dataset::load(dataset)?;
            let outcome = fit(&ds, &cfg, &out)?;
            println!(
                "fit complete: {} steps, final loss {:.6e}, {} gaussians, checkpoint at {}",
                outcome.steps_run,
                outcome.final_loss.total,
                outcome.checkpoint.avatar.gaussians.len(),
                out.join("checkpoint.ckpt").display()
            );
        }
        Cmd::Render {
            checkpoint: ckpt_path,
            poses,
            cameras,
            apply_pose_deltas,
        } => {
            let out = require_out(cli, "render")?;
            let ck = checkpoint::load(ckpt_path)?;
            let poses = load_poses(poses)?;
            let cameras = load_cameras(cameras)?;
            let apply = match apply_pose_deltas.as_str() {
                "on" => true,
                "off" => false,
                "auto" => poses.len() == ck.avatar.pose_deltas.len(),
                other => bail!("--apply-pose-deltas must be auto|on|off, got '{other}'"),
            };
            if apply && poses.len() != ck.avatar.pose_deltas.len() {
                bail!(
                    "{} poses but {} stored refinements",
                    poses.len(),
                    ck.avatar.pose_deltas.len()
                );
            }
            render_sequence(&ck.avatar, &poses, &cameras, &cfg, apply, &out)?;
            println!(
                "rendered {} poses x {} views to {}",
                poses.len(),
                cameras.views.len(),
                out.display()
            );
        }
        Cmd::Relight {
            checkpoint: ckpt_path,
            sh,
            poses,
            cameras,
        } => {
            let out = require_out(cli, "relight")?;
            let ck = checkpoint::load(ckpt_path)?;
            let text = std::fs::read_to_string(sh)?;
            let file: ShOverrideFile = serde_json::from_str(&text)
                .map_err(|e| CoreError::Config(format!("sh override parse: {e}")))?;
            let palm = ShCoefficients::from_rgb_triplets(file.order, &file.palm)?;
            let back = ShCoefficients::from_rgb_triplets(file.order, &file.back)?;
            let mut avatar = ck.avatar;
            avatar.net = constant_environment_net(avatar.net.input_dim, &palm, &back);
            let poses = load_poses(poses)?;
            let cameras = load_cameras(cameras)?;
            render_sequence(&avatar, &poses, &cameras, &cfg, false, &out)?;
            println!(
                "relit {} poses x {} views to {}",
                poses.len(),
                cameras.views.len(),
                out.display()
            );
        }
        Cmd::Composite {
            rendered,
            background,
            masks,
        } => {
            let out = require_out(cli, "composite")?;
            std::fs::create_dir_all(&out)?;
            let stems = png_stems(rendered)?;
            if stems.is_empty() {
                bail!("no PNG frames in {}", rendered.display());
            }
            for stem in &stems {
                let r = read_png(&rendered.join(format!("{stem}.png")))?;
                let b = read_png(&background.join(format!("{stem}.png")))?;
                let mask_path = masks.join(format!("{stem}_object.png"));
                let mask = if mask_path.exists() {
                    read_mask(&mask_path)?
                } else {
                    vec![false; r.width * r.height]
                };
                let composed = composite_overlay(&r, &b, &mask)?;
                write_png(&composed, &out.join(format!("{stem}.png")), PngDepth::Eight)?;
            }
            println!("composited {} frames to {}", stems.len(), out.display());
        }
        Cmd::Eval { rendered, target } => {
            let stems = png_stems(rendered)?;
            if stems.is_empty() {
                bail!("no PNG frames in {}", rendered.display());
            }
            let mut csv = String::from("frame,psnr_db,ssim\n");
            let (mut sum_p, mut sum_s) = (0.0, 0.0);
            for stem in &stems {
                let r = read_png(&rendered.join(format!("{stem}.png")))?;
                let t = read_png(&target.join(format!("{stem}.png")))?;
                let p = psnr(&r, &t)?;
                let s = ssim(&r, &t)?;
                sum_p += p;
                sum_s += s;
                csv.push_str(&format!("{stem},{p:.6},{s:.6}\n"));
            }
            let n = stems.len() as f64;
            csv.push_str(&format!("mean,{:.6},{:.6}\n", sum_p / n, sum_s / n));
            match &cli.out {
                Some(path) => {
                    std::fs::write(path, &csv)?;
                    println!("metrics for {} frames at {}", stems.len(), path.display());
                }
                None => print!("{csv}"),
            }
        }
        Cmd::Gradcheck { scenes } => {
            let mut gc = GradCheckConfig::default();
            if let Some(s) = scenes {
                gc.scenes = *s;
            }
            gc.seed = cfg.seed;
            let report = run_gradcheck(&gc)?;
            print!("{}", report.render_text());
            if !report.passed {
                return Err(CoreError::Numeric("gradient verification failed".into()).into());
            }
        }
        Cmd::Bench {
            checkpoint: ckpt_path,
            cameras,
            view,
            frames,
        } => {
            let report = bench(ckpt_path, cameras, *view, *frames, &cfg)?;
            match &cli.out {
                Some(path) => {
                    std::fs::write(path, &report)?;
                    println!("bench report at {}", path.display());
                }
                None => print!("{report}"),
            }
        }
    }
    Ok(())
}

fn bench(
    ckpt_path: &Path,
    cameras: &Path,
    view: usize,
    frames: usize,
    cfg: &RunConfig,
) -> anyhow::Result<String> {
    if frames == 0 {
        return Ok("frames,seconds,fps,splats_per_sec\n".to_string());
    }
    let ck = checkpoint::load(ckpt_path)?;
    let cameras = load_cameras(cameras)?;
    let cam_view = cameras
        .views
        .get(view)
        .ok_or_else(|| anyhow!("view {view} out of range"))?;
    let cam = cam_view.camera_for_frame(0)?;
    let values = ck.avatar.gather();
    let nj = ck.avatar.mesh.joint_count();

    let mut total_splats = 0usize;
    let start = std::time::Instant::now();
    for f in 0..frames {
        // Slow turntable so frames differ without new inputs.
        let mut pose = PoseFrame::identity(nj);
        pose.joint_rotations[0][1] = 0.05 * f as f64;
        let (splats, _) =
            forward_splats(&ck.avatar, &values, &pose, None, &cam, &cfg.render, |x| x)?;
        total_splats += splats.len();
        match cfg.precision {
            Precision::F64 => {
                let img = rasterize(&splats, cam.width, cam.height, &cfg.render)?;
                std::hint::black_box(&img);
            }
            Precision::F32 => {
                let splats32: Vec<ScreenSplat<f32>> = splats
                    .iter()
                    .map(|s| ScreenSplat {
                        mean: [s.mean[0] as f32, s.mean[1] as f32],
                        cov: [s.cov[0] as f32, s.cov[1] as f32, s.cov[2] as f32],
                        depth: s.depth as f32,
                        color: [s.color[0] as f32, s.color[1] as f32, s.color[2] as f32],
                        opacity: s.opacity as f32,
                    })
                    .collect();
                let img = rasterize(&splats32, cam.width, cam.height, &cfg.render)?;
                std::hint::black_box(&img);
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let fps = frames as f64 / seconds;
    let sps = total_splats as f64 / seconds;
    Ok(format!(
        "frames,seconds,fps,splats_per_sec\n{frames},{seconds:.4},{fps:.3},{sps:.1}\n"
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<CoreError>()
                .map(|e| e.exit_code())
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
