#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use silgrad::baseline::{self, BaselineConfig};
use silgrad::corrector::{self, Corrector, CorrectorInput, LossWeights, Squash, TrainConfig, VitConfig};
use silgrad::metrics::{self, NrmseRange, PoseSeries, SeriesSource, DEFAULT_CUTOFF_HZ};
use silgrad::render::{default_sigma, PinholeCamera, SilhouetteImage};
use silgrad::scene::Scene;
use silgrad::synth::{self, Dataset, DatasetManifest, NoiseSpec, Split};
use silgrad::{Error, Result};

const DEFAULT_ASSETS: &str = "assets/psm_simplified";
const NOISY_CSV: &str = "noisy.csv";
const TRUTH_CSV: &str = "truth.csv";

#[derive(Parser)]
#[command(name = "silgrad", version, about = "Visual tool-pose correction through a differentiable silhouette renderer")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the reference chain description and meshes.
    Assets {
        #[arg(long, default_value = DEFAULT_ASSETS)]
        out: PathBuf,
    },
    /// Synthesize a dataset split.
    Gen(GenArgs),
    /// Train the corrector.
    Train(TrainArgs),
    /// Correct every frame of a dataset with a trained model.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Pose-series CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient-descent tracking baseline.
    Baseline(BaselineArgs),
    /// RMSE, NRMSE and error reduction of a prediction.
    Eval(EvalArgs),
    /// Throughput of the corrector or the baseline.
    Bench(BenchArgs),
    /// Masks of one frame before and after correction.
    RenderDebug(RenderDebugArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "train")]
    split: Split,
    /// Default: 32 for train, 2 for val, 3 for test.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Default: 30 for train, 60 otherwise.
    #[arg(long)]
    duration_s: Option<f64>,
    /// Default: 1, 2, 3 for train, val, test.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML noise specification; default noise when omitted.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Chain asset directory [env: SILGRAD_ASSETS; default: assets/psm_simplified, built-in if absent].
    #[arg(long)]
    assets: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Validation split; the training data when omitted.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Default 1000/(H·W).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    #[arg(long, default_value_t = 500.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    /// Random training frames per epoch (default: all).
    #[arg(long)]
    frames_per_epoch: Option<usize>,
    /// Evenly spaced validation frames (default: all).
    #[arg(long)]
    val_frames: Option<usize>,
    /// Output squashing: centered (2σ−1) or literal (σ).
    #[arg(long, default_value = "centered", value_parser = parse_squash)]
    squash: Squash,
    /// Directory for the model and the training log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Default 150·H·W/(480·640).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    /// Start every frame from the noisy configuration.
    #[arg(long)]
    cold: bool,
    /// Pose-series CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction pose CSV.
    #[arg(long)]
    pred: PathBuf,
    /// Uncorrected pose CSV (default: noisy.csv in the dataset).
    #[arg(long)]
    noisy: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Low-pass cutoff applied to the prediction; 0 disables it.
    #[arg(long, default_value_t = DEFAULT_CUTOFF_HZ)]
    cutoff_hz: f64,
    /// Series whose range normalizes the NRMSE: truth or noisy.
    #[arg(long, default_value = "truth")]
    nrmse_range: NrmseRange,
    /// Directory for metrics.txt and metrics.csv; stdout only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    /// Benchmark this model; the baseline when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Report file; stdout only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderDebugArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    trajectory: usize,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Correct with this model; the baseline optimizer when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_squash(s: &str) -> std::result::Result<Squash, String> {
    match s {
        "centered" => Ok(Squash::Centered),
        "literal" => Ok(Squash::Literal),
        _ => Err(format!("unknown squashing {s:?} (expected centered or literal)")),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, s: &str) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(p)?;
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Explicit flag, then `SILGRAD_ASSETS`, then the default directory; the
/// built-in chain only when the default directory does not exist.
fn load_scene(flag: Option<&Path>, camera: PinholeCamera) -> Result<Scene> {
    let chosen = flag.map(Path::to_path_buf).or_else(|| std::env::var_os("SILGRAD_ASSETS").map(PathBuf::from));
    match chosen {
        Some(dir) => Scene::load_assets(&dir, camera),
        None if Path::new(DEFAULT_ASSETS).is_dir() => Scene::load_assets(Path::new(DEFAULT_ASSETS), camera),
        None => Ok(Scene { camera, ..Scene::reference(camera.width) }),
    }
}

fn truth_and_noisy(data: &Dataset) -> Result<(Vec<PoseSeries>, Vec<PoseSeries>)> {
    let chain = &data.scene.chain;
    let truth = data.trajectories.iter().map(|t| PoseSeries::truth(chain, t)).collect::<Result<_>>()?;
    let noisy = data.trajectories.iter().map(|t| PoseSeries::noisy(chain, t)).collect::<Result<_>>()?;
    Ok((truth, noisy))
}

fn gen(a: GenArgs) -> Result<()> {
    let (n, dur) = a.split.defaults();
    let trajectories = a.trajectories.unwrap_or(n);
    let duration = a.duration_s.unwrap_or(dur);
    if !(duration > 0.0) {
        return Err(Error::Config("duration must be positive".into()));
    }
    let noise = match &a.noise {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<NoiseSpec>(&s).map_err(|e| Error::Config(e.to_string()).at(p))?
        }
        None => NoiseSpec::default(),
    };
    let scene = load_scene(a.assets.as_deref(), PinholeCamera::square(a.size))?;
    noise.validate(scene.chain.len())?;
    let seed = a.seed.unwrap_or(a.split.default_seed());
    let manifest = DatasetManifest::new(a.split, trajectories, synth::frames_for_duration(duration), seed, scene.camera, noise);
    let data = Dataset::generate(manifest, scene)?;
    synth::write_dataset(&a.out, &data.manifest, &data.scene, &data.trajectories)?;
    let (truth, noisy) = truth_and_noisy(&data)?;
    metrics::write_pose_csv(&a.out.join(TRUTH_CSV), &truth)?;
    metrics::write_pose_csv(&a.out.join(NOISY_CSV), &noisy)?;
    println!("wrote {} trajectories of {} frames to {}", trajectories, data.manifest.frames_per_trajectory, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let data = synth::read_dataset(&a.data)?;
    let val = match &a.val {
        Some(p) => synth::read_dataset(p)?,
        None => data.clone(),
    };
    let size = data.manifest.camera.width;
    if data.manifest.camera.height != size {
        return Err(Error::Config("the corrector expects square images".into()));
    }
    let base = TrainConfig::for_image(size);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        weight_decay: a.weight_decay,
        loss: LossWeights { alpha: a.alpha.unwrap_or(base.loss.alpha), beta: a.beta, gamma: a.gamma },
        seed: a.seed,
        patience: a.patience,
        frames_per_epoch: a.frames_per_epoch,
        val_frames: a.val_frames,
        squash: a.squash,
        vit: VitConfig { image_size: size, ..VitConfig::default() },
        ..base
    };
    let out = corrector::train(&data, &val, &cfg, Some(&a.out))?;
    for e in &out.log {
        match e.train {
            Some(t) => println!("epoch {:>4}  train {:.6}  val {:.6}  ({:.1}s)", e.epoch, t.total, e.val.total, e.seconds),
            None => println!("epoch {:>4}  val {:.6}", e.epoch, e.val.total),
        }
    }
    println!("best epoch {} written to {}", out.best_epoch, a.out.join(corrector::MODEL_FILE).display());
    Ok(())
}

fn infer(model: &Path, data: &Path, out: &Path) -> Result<()> {
    let c = corrector::load_weights(model)?;
    let data = synth::read_dataset(data)?;
    let sigma = default_sigma(data.manifest.camera.width);
    let series = data
        .trajectories
        .iter()
        .map(|t| {
            let est = c.correct_trajectory(&data.scene, t, sigma)?;
            PoseSeries::from_estimates(&data.scene.chain, t, &est, SeriesSource::Corrected)
        })
        .collect::<Result<Vec<_>>>()?;
    metrics::write_pose_csv(out, &series)
}

fn baseline_config(data: &Dataset, max_iter: usize, threshold: Option<f64>, step: f64) -> Result<BaselineConfig> {
    let cam = &data.manifest.camera;
    let d = BaselineConfig::for_image(cam.width, cam.height);
    let cfg = BaselineConfig { max_iterations: max_iter, threshold: threshold.unwrap_or(d.threshold), step, ..d };
    cfg.validate()?;
    Ok(cfg)
}

fn run_baseline(a: BaselineArgs) -> Result<()> {
    let data = synth::read_dataset(&a.data)?;
    let cfg = baseline_config(&data, a.max_iter, a.threshold, a.step)?;
    let results = data
        .trajectories
        .par_iter()
        .map(|t| baseline::track_trajectory(&data.scene, t, &cfg, !a.cold))
        .collect::<Result<Vec<_>>>()?;
    let series = data
        .trajectories
        .iter()
        .zip(&results)
        .map(|(t, r)| PoseSeries::from_estimates(&data.scene.chain, t, &baseline::estimates(r), SeriesSource::Baseline))
        .collect::<Result<Vec<_>>>()?;
    metrics::write_pose_csv(&a.out, &series)?;
    let all: Vec<_> = results.iter().flatten().collect();
    let converged = all.iter().filter(|r| r.converged).count();
    let iters: Vec<f64> = all.iter().map(|r| r.iterations as f64).collect();
    println!(
        "{} frames, {} under threshold {:.4}, iterations {}",
        all.len(),
        converged,
        cfg.threshold,
        metrics::MeanStd::of(&iters)
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let data = synth::read_dataset(&a.data)?;
    let lengths: Vec<usize> = data.trajectories.iter().map(|t| t.frames.len()).collect();
    let pred = metrics::series_from_rows(&metrics::read_pose_rows(&a.pred)?, &lengths, SeriesSource::Corrected)?;
    let noisy_path = a.noisy.unwrap_or_else(|| a.data.join(NOISY_CSV));
    let noisy = metrics::series_from_rows(&metrics::read_pose_rows(&noisy_path)?, &lengths, SeriesSource::Noisy)?;
    let truth = data.trajectories.iter().map(|t| PoseSeries::truth(&data.scene.chain, t)).collect::<Result<Vec<_>>>()?;
    let pred = if a.cutoff_hz > 0.0 { pred.iter().map(|s| s.lowpass(a.cutoff_hz)).collect::<Result<Vec<_>>>()? } else { pred };
    let report = metrics::evaluate(&pred, &truth, &noisy, a.nrmse_range)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = a.out {
        create_dir(&dir)?;
        write_file(&dir.join("metrics.txt"), &text)?;
        write_file(&dir.join("metrics.csv"), &report.to_csv())?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let data = synth::read_dataset(&a.data)?;
    let frames: Vec<_> = data.trajectories.iter().flat_map(|t| &t.frames).collect();
    let sigma = default_sigma(data.manifest.camera.width);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| Error::Config(e.to_string()))?;
    let report = pool.install(|| -> Result<String> {
        match &a.model {
            Some(p) => {
                let c = corrector::load_weights(p)?;
                let inputs = (0..(a.warmup + a.samples).min(frames.len()))
                    .map(|i| Corrector::prepare(&data.scene, frames[i], sigma))
                    .collect::<Result<Vec<_>>>()?;
                let r = metrics::bench(a.warmup, a.samples, true, |i| {
                    let k = i % inputs.len();
                    let f = frames[k];
                    c.infer(&CorrectorInput { observed: &f.mask, uncorrected: &inputs[k].0, theta_noisy: inputs[k].1 })?;
                    Ok(1)
                })?;
                Ok(r.to_text("corrector"))
            }
            None => {
                let cfg = baseline_config(&data, 100, None, 0.5)?;
                let mut prev: Option<[f64; corrector::CORRECTION_DIM]> = None;
                let r = metrics::bench(a.warmup, a.samples, false, |i| {
                    let k = i % frames.len();
                    let f = frames[k];
                    let mut init = corrector::parametrize(&f.base_noisy, &f.q_noisy);
                    // Warm start within a trajectory, as in tracking.
                    if let (Some(p), true) = (prev, k % data.manifest.frames_per_trajectory != 0) {
                        init[..6].copy_from_slice(&p[..6]);
                    }
                    let res = baseline::optimize_frame(&data.scene, &init, &f.mask, &f.keypoints, &f.q_noisy, &cfg)?;
                    prev = Some(res.theta);
                    Ok(res.iterations)
                })?;
                Ok(r.to_text("baseline"))
            }
        }
    })?;
    print!("{report}");
    if let Some(p) = a.out {
        write_file(&p, &report)?;
    }
    Ok(())
}

fn render_debug(a: RenderDebugArgs) -> Result<()> {
    let data = synth::read_dataset(&a.data)?;
    let traj = data
        .trajectories
        .get(a.trajectory)
        .ok_or_else(|| Error::Invalid(format!("trajectory {} out of range ({} available)", a.trajectory, data.trajectories.len())))?;
    let f = traj
        .frames
        .get(a.frame)
        .ok_or_else(|| Error::Invalid(format!("frame {} out of range ({} available)", a.frame, traj.frames.len())))?;
    let sigma = default_sigma(data.manifest.camera.width);
    let theta = match &a.model {
        Some(p) => {
            let c = corrector::load_weights(p)?;
            let (uncorrected, theta_noisy) = Corrector::prepare(&data.scene, f, sigma)?;
            c.infer(&CorrectorInput { observed: &f.mask, uncorrected: &uncorrected, theta_noisy })?
        }
        None => {
            let cfg = baseline_config(&data, 100, None, 0.5)?;
            let init = corrector::parametrize(&f.base_noisy, &f.q_noisy);
            baseline::optimize_frame(&data.scene, &init, &f.mask, &f.keypoints, &f.q_noisy, &cfg)?.theta
        }
    };
    let mut q = f.q_noisy.clone();
    q[3..7].copy_from_slice(&theta[6..]);
    let base = silgrad::kinematics::EulerPose::from_slice6(&theta[..6]).to_transform();
    let uncorrected = data.scene.render_hard(&f.base_noisy, &f.q_noisy)?;
    let corrected = data.scene.render_hard(&base, &q)?;
    create_dir(&a.out)?;
    let images: [(&str, SilhouetteImage); 4] = [
        ("a_uncorrected.pgm", uncorrected.clone()),
        ("b_truth.pgm", f.mask.clone()),
        ("c_diff_noisy.pgm", uncorrected.abs_diff(&f.mask)),
        ("d_diff_corrected.pgm", corrected.abs_diff(&f.mask)),
    ];
    for (name, img) in &images {
        img.save_pgm(&a.out.join(name))?;
    }
    println!(
        "IoU with observed mask: uncorrected {:.4}, corrected {:.4}",
        uncorrected.iou(&f.mask),
        corrected.iou(&f.mask)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global().map_err(|e| Error::Config(e.to_string()))?;
    match cli.cmd {
        Cmd::Assets { out } => {
            Scene::reference(64).save_assets(&out)?;
            println!("wrote reference chain to {}", out.display());
            Ok(())
        }
        Cmd::Gen(a) => gen(a),
        Cmd::Train(a) => train(a),
        Cmd::Infer { model, data, out } => infer(&model, &data, &out),
        Cmd::Baseline(a) => run_baseline(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Bench(a) => bench(a),
        Cmd::RenderDebug(a) => render_debug(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
