use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{
    apply_correction_diff, loss_joint, loss_keypoints, loss_render, loss_total, parametrize, render_corrected,
    save_weights, CorrectionSpace, Corrector, CorrectorInput, LossWeights, ModelWeights, Params, Squash, VitConfig,
};
use crate::diff::{Tape, Tensor, Var};
use crate::kinematics::{FIRST_VISIBLE_JOINT, VISIBLE_JOINTS};
use crate::render::default_sigma;
use crate::synth::{Dataset, Frame};
use crate::{Error, Result};

pub const MODEL_FILE: &str = "model.sgwt";
pub const LOG_FILE: &str = "train_log.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub loss: LossWeights,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Training frames drawn (without replacement) per epoch; all when `None`.
    pub frames_per_epoch: Option<usize>,
    /// Evenly spaced validation frames; all when `None`.
    pub val_frames: Option<usize>,
    pub sigma: f64,
    pub vit: VitConfig,
    pub squash: Squash,
}

impl TrainConfig {
    pub fn for_image(size: usize) -> Self {
        Self {
            epochs: 500,
            batch: 10,
            lr: 1e-4,
            weight_decay: 1e-4,
            loss: LossWeights::for_image(size, size),
            seed: 0,
            patience: 20,
            frames_per_epoch: None,
            val_frames: None,
            sigma: default_sigma(size),
            vit: VitConfig { image_size: size, ..VitConfig::default() },
            squash: Squash::Centered,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.sigma > 0.0) {
            return Err(Error::Config("learning rate and weight decay must be nonnegative, sigma positive".into()));
        }
        self.vit.validate()
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (name, w) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let n = w.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for (i, wi) in w.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i] + self.weight_decay * *wi;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *wi -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Unweighted loss terms and the weighted total, averaged over frames.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub render: f64,
    pub keypoints: f64,
    pub joint: f64,
    pub total: f64,
}

impl LossParts {
    fn mean(parts: &[LossParts]) -> Self {
        let n = parts.len().max(1) as f64;
        let mut s = LossParts::default();
        for p in parts {
            s.render += p.render;
            s.keypoints += p.keypoints;
            s.joint += p.joint;
            s.total += p.total;
        }
        LossParts { render: s.render / n, keypoints: s.keypoints / n, joint: s.joint / n, total: s.total / n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRef {
    pub trajectory: usize,
    pub frame: usize,
}

/// Training frames for one epoch: a seeded shuffle of every frame, truncated
/// to `limit`.
pub fn epoch_frames(data: &Dataset, limit: Option<usize>, seed: u64, epoch: usize) -> Vec<FrameRef> {
    let mut all: Vec<FrameRef> = data
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| (0..tr.frames.len()).map(move |f| FrameRef { trajectory: t, frame: f }))
        .collect();
    all.shuffle(&mut crate::synth::stream(seed, epoch as u64, 3));
    if let Some(n) = limit {
        all.truncate(n);
    }
    all
}

fn strided_frames(data: &Dataset, limit: Option<usize>) -> Vec<FrameRef> {
    let all: Vec<FrameRef> = data
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(t, tr)| (0..tr.frames.len()).map(move |f| FrameRef { trajectory: t, frame: f }))
        .collect();
    match limit {
        Some(n) if n < all.len() && n > 0 => (0..n).map(|i| all[i * all.len() / n]).collect(),
        _ => all,
    }
}

/// Composite loss of one frame with the parameters bound on `params`.
pub fn frame_loss<'t>(
    corrector: &Corrector,
    params: &Params<'t>,
    data: &Dataset,
    frame: &Frame,
    weights: &LossWeights,
    sigma: f64,
) -> Result<(Var<'t>, LossParts)> {
    let tape = params.vars.values().next().expect("parameters").tape();
    let uncorrected = data.scene.render_soft(&frame.base_noisy, &frame.q_noisy, sigma)?;
    let theta = parametrize(&frame.base_noisy, &frame.q_noisy);
    let input = CorrectorInput { observed: &frame.mask, uncorrected: &uncorrected, theta_noisy: theta };
    let raw = corrector.raw(tape, params, &input)?;
    let theta_hat = apply_correction_diff(&raw, &theta, &corrector.space)?;
    let (mask, kp) = render_corrected(&data.scene, &theta_hat, &frame.q_noisy, sigma)?;
    let lr = loss_render(&mask, &frame.mask)?;
    let lk = loss_keypoints(&kp, &frame.keypoints)?;
    let vis = &frame.q_true[FIRST_VISIBLE_JOINT..FIRST_VISIBLE_JOINT + VISIBLE_JOINTS];
    let lj = loss_joint(&theta_hat.slice(0, 6, 10)?, vis)?;
    let total = loss_total(weights, &lr, &lk, &lj)?;
    let parts = LossParts { render: lr.item(), keypoints: lk.item(), joint: lj.item(), total: total.item() };
    Ok((total, parts))
}

fn check_finite(parts: &LossParts, r: &FrameRef) -> Result<()> {
    if !parts.total.is_finite() {
        return Err(Error::Invalid(format!("non-finite loss at trajectory {} frame {}", r.trajectory, r.frame)));
    }
    Ok(())
}

/// Mean loss over frames without gradients.
pub fn evaluate_loss(corrector: &Corrector, data: &Dataset, frames: &[FrameRef], weights: &LossWeights, sigma: f64) -> Result<LossParts> {
    let parts = frames
        .par_iter()
        .map(|r| {
            let tape = Tape::new();
            let params = corrector.weights.bind(&tape, false);
            let (_, p) = frame_loss(corrector, &params, data, &data.trajectories[r.trajectory].frames[r.frame], weights, sigma)?;
            check_finite(&p, r)?;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossParts::mean(&parts))
}

/// Gradient of the batch-mean loss. Frames are differentiated on separate
/// tapes and reduced in batch order, independent of the thread count.
fn batch_gradient(
    corrector: &Corrector,
    data: &Dataset,
    batch: &[FrameRef],
    weights: &LossWeights,
    sigma: f64,
) -> Result<(BTreeMap<String, Tensor>, LossParts)> {
    let per = batch
        .par_iter()
        .map(|r| {
            let tape = Tape::new();
            let params = corrector.weights.bind(&tape, true);
            let (total, p) = frame_loss(corrector, &params, data, &data.trajectories[r.trajectory].frames[r.frame], weights, sigma)?;
            check_finite(&p, r)?;
            let g = tape.backward(&total)?;
            let grads: Vec<Tensor> = params.vars.values().map(|v| g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape()))).collect();
            Ok((grads, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<&String> = corrector.weights.tensors.keys().collect();
    let scale = 1.0 / batch.len() as f64;
    let mut sum: Vec<Vec<f64>> = corrector.weights.tensors.values().map(|t| vec![0.0; t.len()]).collect();
    for (grads, _) in &per {
        for (acc, g) in sum.iter_mut().zip(grads) {
            for (a, b) in acc.iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    let mut out = BTreeMap::new();
    for ((name, acc), t) in names.into_iter().zip(sum).zip(corrector.weights.tensors.values()) {
        out.insert(name.clone(), Tensor::new(t.shape(), acc.into_iter().map(|v| v * scale).collect())?);
    }
    let parts: Vec<LossParts> = per.into_iter().map(|(_, p)| p).collect();
    Ok((out, LossParts::mean(&parts)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch; `None` for the initial evaluation.
    pub train: Option<LossParts>,
    pub val: LossParts,
    pub seconds: f64,
}

fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_render,train_keypoints,train_joint,train_total,val_render,val_keypoints,val_joint,val_total,seconds\n");
    for e in log {
        let t = e.train.map_or(["nan".to_string(), "nan".into(), "nan".into(), "nan".into()], |t| {
            [t.render, t.keypoints, t.joint, t.total].map(|v| v.to_string())
        });
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{:.3}",
            e.epoch, t[0], t[1], t[2], t[3], e.val.render, e.val.keypoints, e.val.joint, e.val.total, e.seconds
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss.
    pub best: Corrector,
    /// Weights after the last epoch run.
    pub last: Corrector,
    pub best_epoch: usize,
    /// Epoch 0 is the evaluation before any update.
    pub log: Vec<EpochLog>,
}

/// Train a corrector; with `out`, the best weights and the log are written
/// there after every improving epoch.
pub fn train(train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.manifest.camera.width != cfg.vit.image_size || train_set.manifest.camera.height != cfg.vit.image_size {
        return Err(Error::Config(format!(
            "dataset renders {}x{} but the network expects {2}x{2}",
            train_set.manifest.camera.width, train_set.manifest.camera.height, cfg.vit.image_size
        )));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut space = CorrectionSpace::for_chain(&train_set.scene.chain);
    space.squash = cfg.squash;
    let mut current = Corrector { weights: ModelWeights::init(cfg.vit.clone(), cfg.seed)?, space };
    let val_frames = strided_frames(val_set, cfg.val_frames);
    let t0 = Instant::now();
    let initial = evaluate_loss(&current, val_set, &val_frames, &cfg.loss, cfg.sigma)?;
    let mut log = vec![EpochLog { epoch: 0, train: None, val: initial, seconds: t0.elapsed().as_secs_f64() }];
    let mut best = (current.clone(), 0, initial.total);
    let write = |log: &[EpochLog], best: &Corrector, improved: bool| -> Result<()> {
        if let Some(dir) = out {
            if improved {
                save_weights(&dir.join(MODEL_FILE), best)?;
            }
            let p = dir.join(LOG_FILE);
            std::fs::write(&p, log_csv(log)).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    };
    write(&log, &best.0, true)?;
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let frames = epoch_frames(train_set, cfg.frames_per_epoch, cfg.seed, epoch);
        let mut parts = Vec::new();
        for batch in frames.chunks(cfg.batch) {
            let (grads, p) = batch_gradient(&current, train_set, batch, &cfg.loss, cfg.sigma)?;
            adam.step(&mut current.weights.tensors, &grads);
            parts.push(p);
        }
        let val = evaluate_loss(&current, val_set, &val_frames, &cfg.loss, cfg.sigma)?;
        log.push(EpochLog { epoch, train: Some(LossParts::mean(&parts)), val, seconds: t0.elapsed().as_secs_f64() });
        let improved = val.total < best.2;
        if improved {
            best = (current.clone(), epoch, val.total);
        }
        write(&log, &best.0, improved)?;
        if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome { best: best.0, last: current, best_epoch: best.1, log })
}
