use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use deskslam::evalkit::{ate_rmse, psnr, run_experiment, ssim, MetricReport};
use deskslam::frontend::{write_matches, CorrespondenceProvider, SyntheticMatcher};
use deskslam::gaussian_map::read_ply;
use deskslam::mapper::SamplingMode;
use deskslam::pipeline_io::{
    generate_synthetic, import_trajectory, tum, write_tum, Dataset, DatasetConfig, RunConfig, SyntheticScene,
    TrackingMethod,
};
use deskslam::renderer::render;
use deskslam::KeyframePolicy;

#[derive(Parser)]
#[command(name = "deskslam", version, about = "RGB-D SLAM with feature tracking and Gaussian-splat mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run SLAM on a dataset and write trajectory, map and metrics.
    Run(RunArgs),
    /// Score a saved trajectory (and optionally a map) against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic dataset in the TUM layout, with matches.
    Synth(SynthArgs),
    /// Sweep strides, trackers, refinement iterations or sampling modes into a CSV.
    Ablate(AblateArgs),
}

/// RunConfig fields settable from the command line; each overrides the
/// config file when given.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TUM-layout directory (selects the TUM loader).
    #[arg(long)]
    tum: Option<PathBuf>,
    /// Directory of match files for --tum (default <tum>/matches).
    #[arg(long)]
    matches: Option<PathBuf>,
    /// Use the built-in synthetic scene with this many frames.
    #[arg(long)]
    synthetic_frames: Option<usize>,
    /// Pixel noise of the synthetic matcher.
    #[arg(long)]
    noise_px: Option<f64>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_parser = parse_method)]
    method: Option<TrackingMethod>,
    /// Tracker render-and-compare iterations per frame.
    #[arg(long)]
    track_iters: Option<usize>,
    #[arg(long)]
    map_iters: Option<usize>,
    /// Refinement iterations after the sequence.
    #[arg(long)]
    refine_iters: Option<usize>,
    #[arg(long, value_parser = parse_sampling)]
    sampling: Option<SamplingMode>,
    #[arg(long)]
    mix_p: Option<f64>,
    /// Keyframe every k frames instead of by visibility overlap.
    #[arg(long)]
    keyframe_every: Option<usize>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Disable the ICP pose correction during densification.
    #[arg(long)]
    no_icp_correction: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<TrackingMethod, String> {
    s.parse().map_err(|e: deskslam::Error| e.to_string())
}

fn parse_sampling(s: &str) -> Result<SamplingMode, String> {
    s.parse().map_err(|e: deskslam::Error| e.to_string())
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.tum {
            cfg.dataset = DatasetConfig::Tum {
                path: path.clone(),
                matches: self.matches.clone(),
                intrinsics: None,
                max_frames: self.max_frames,
            };
        } else if let Some(n) = self.synthetic_frames {
            cfg.dataset = DatasetConfig::Synthetic {
                scene: None,
                n_frames: n,
                noise_px: self.noise_px.unwrap_or(0.0),
                dropout: 0.0,
            };
        }
        match &mut cfg.dataset {
            DatasetConfig::Synthetic { noise_px, .. } => {
                if let Some(n) = self.noise_px {
                    *noise_px = n;
                }
            }
            DatasetConfig::Tum {
                matches, max_frames, ..
            } => {
                if self.matches.is_some() {
                    matches.clone_from(&self.matches);
                }
                if self.max_frames.is_some() {
                    *max_frames = self.max_frames;
                }
            }
        }
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(cfg.stride, self.stride);
        set!(cfg.method, self.method);
        set!(cfg.tracker.refine_iters, self.track_iters);
        set!(cfg.map_iters, self.map_iters);
        set!(cfg.refine_iters, self.refine_iters);
        set!(cfg.sampling.mode, self.sampling);
        set!(cfg.sampling.mix_p, self.mix_p);
        set!(cfg.seed, self.seed);
        set!(cfg.output, self.output.clone());
        if let Some(l) = self.lambda {
            cfg.loss.lambda = l;
            cfg.tracker.loss.lambda = l;
        }
        if let Some(k) = self.keyframe_every {
            cfg.keyframes = KeyframePolicy::Sparse { k };
        } else if let Some(t) = self.iou_threshold {
            cfg.keyframes = KeyframePolicy::Dense { iou_threshold: t };
        }
        if self.no_icp_correction {
            cfg.densify.icp_correction = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory (TUM text format).
    #[arg(long)]
    trajectory: PathBuf,
    /// Ground-truth trajectory, or a TUM directory containing groundtruth.txt.
    #[arg(long)]
    ground_truth: PathBuf,
    /// Splat map to render at the estimated poses (needs a TUM directory as ground truth).
    #[arg(long)]
    map: Option<PathBuf>,
    /// Write the report here as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene description (JSON); the built-in desk scene otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    noise_px: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Frame gaps to export matches for (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    match_strides: Vec<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,10,20,40")]
    strides: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "feature,constant_velocity")]
    methods: Vec<TrackingMethod>,
    /// Tracker iteration counts to sweep (default: the configured value).
    #[arg(long, value_delimiter = ',')]
    track_iters_sweep: Vec<usize>,
    /// Sampling modes to sweep (default: the configured mode).
    #[arg(long, value_delimiter = ',', value_parser = parse_sampling)]
    sampling_sweep: Vec<SamplingMode>,
    /// CSV destination (standard output if absent).
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn print_table(r: &MetricReport) {
    let kf = r.ate_rmse_keyframes.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!("{:<26}{:>14}", "metric", "value");
    println!("{:<26}{:>14.4}", "ATE RMSE all frames [cm]", r.ate_rmse);
    println!("{:<26}{:>14}", "ATE RMSE keyframes [cm]", kf);
    println!("{:<26}{:>14.3}", "PSNR [dB]", r.psnr);
    println!("{:<26}{:>14.4}", "SSIM", r.ssim);
    println!("{:<26}{:>14.2}", "tracking [ms/frame]", r.track_ms_per_frame);
    println!("{:<26}{:>14}", "frames", r.n_frames);
    println!("{:<26}{:>14}", "keyframes", r.n_keyframes);
    println!("{:<26}{:>14}", "splats", r.n_splats);
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let dataset = Dataset::load(&cfg)?;
    let out = run_experiment(&dataset, &cfg)?;
    out.write(&cfg.output)?;
    std::fs::write(cfg.output.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    info!("wrote results to {}", cfg.output.display());
    print_table(&out.report);
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    ate_rmse_cm: f64,
    poses: usize,
    psnr_db: Option<f64>,
    ssim: Option<f64>,
    rendered_frames: usize,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let est = import_trajectory(&args.trajectory)?;
    let gt_is_dir = args.ground_truth.is_dir();
    let gt = if gt_is_dir {
        import_trajectory(args.ground_truth.join("groundtruth.txt"))?
    } else {
        import_trajectory(&args.ground_truth)?
    };
    let mut report = EvalReport {
        ate_rmse_cm: ate_rmse(&est, &gt)?,
        poses: est.len(),
        psnr_db: None,
        ssim: None,
        rendered_frames: 0,
    };
    if let Some(map_path) = &args.map {
        if !gt_is_dir {
            bail!("--map needs --ground-truth to be a TUM directory with images");
        }
        let map = read_ply(map_path)?;
        let ds = tum::load_tum(&args.ground_truth, None, 4)?;
        let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
        for f in &ds.frames {
            if let Some((_, pose)) = est.nearest(f.timestamp, deskslam::evalkit::ASSOCIATION_WINDOW) {
                let img = render(&map, pose, &f.intrinsics).color;
                p += psnr(&img, &f.color)?;
                s += ssim(&img, &f.color)?;
                n += 1;
            }
        }
        if n > 0 {
            report.psnr_db = Some(p / n as f64);
            report.ssim = Some(s / n as f64);
        }
        report.rendered_frames = n;
    }
    println!("{:<26}{:>14.4}", "ATE RMSE [cm]", report.ate_rmse_cm);
    println!("{:<26}{:>14}", "poses", report.poses);
    if let (Some(p), Some(s)) = (report.psnr_db, report.ssim) {
        println!("{:<26}{:>14.3}", "PSNR [dB]", p);
        println!("{:<26}{:>14.4}", "SSIM", s);
        println!("{:<26}{:>14}", "rendered frames", report.rendered_frames);
    }
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let scene = match &args.scene {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => SyntheticScene::desk(args.seed),
    };
    scene.validate()?;
    let scene = Arc::new(scene);
    let (frames, gt) = generate_synthetic(&scene, args.frames)?;
    write_tum(&args.output, &frames, &gt)?;
    std::fs::write(args.output.join("scene.json"), serde_json::to_string_pretty(scene.as_ref())? + "\n")?;
    let matcher = SyntheticMatcher::for_scene(scene.clone(), frames.iter().map(|f| f.id)).with_noise(
        args.noise_px,
        args.dropout,
        args.seed,
    );
    let dir = args.output.join("matches");
    std::fs::create_dir_all(&dir)?;
    let mut written = 0;
    for &s in &args.match_strides {
        if s == 0 {
            bail!("match strides must be >= 1");
        }
        for (a, b) in frames.iter().zip(frames.iter().skip(s)) {
            write_matches(dir.join(format!("matches_{}_{}.txt", a.id, b.id)), &matcher.matches(a, b)?)?;
            written += 1;
        }
    }
    println!(
        "wrote {} frames and {written} match files to {}",
        frames.len(),
        args.output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    stride: usize,
    method: String,
    ate_cm: f64,
    psnr_db: f64,
    ssim: f64,
    ms_per_frame: f64,
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let base = args.config.resolve()?;
    let track_iters = if args.track_iters_sweep.is_empty() {
        vec![base.tracker.refine_iters]
    } else {
        args.track_iters_sweep.clone()
    };
    let modes = if args.sampling_sweep.is_empty() {
        vec![base.sampling.mode]
    } else {
        args.sampling_sweep.clone()
    };
    let dataset = Dataset::load(&base)?;
    let sink: Box<dyn std::io::Write> = match &args.csv {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    for &stride in &args.strides {
        for &method in &args.methods {
            for &iters in &track_iters {
                for &mode in &modes {
                    let mut cfg = base.clone();
                    cfg.stride = stride;
                    cfg.method = method;
                    cfg.tracker.refine_iters = iters;
                    cfg.sampling.mode = mode;
                    let mut label = method.to_string();
                    if track_iters.len() > 1 {
                        label += &format!(":track_iters={iters}");
                    }
                    if modes.len() > 1 {
                        label += &format!(":sampling={mode}");
                    }
                    info!("ablation: stride {stride}, {label}");
                    let out = run_experiment(&dataset, &cfg)?;
                    csv.serialize(AblationRow {
                        stride,
                        method: label,
                        ate_cm: out.report.ate_rmse,
                        psnr_db: out.report.psnr,
                        ssim: out.report.ssim,
                        ms_per_frame: out.report.track_ms_per_frame,
                    })?;
                    csv.flush()?;
                }
            }
        }
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Ablate(a) => {
            if let Some(p) = &a.csv {
                ensure_parent(p)?;
            }
            cmd_ablate(a)
        }
    }
}
