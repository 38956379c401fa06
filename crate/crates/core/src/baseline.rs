//! Iterative pose correction by gradient descent on the silhouette and
//! keypoint losses, warm-started along a trajectory.

use crate::corrector::{loss_keypoints, loss_render, parametrize, render_corrected, LossWeights, CORRECTION_DIM};
use crate::diff::{Tape, Tensor};
use crate::kinematics::{EulerPose, RigidTransform, FIRST_VISIBLE_JOINT, VISIBLE_JOINTS};
use crate::render::{default_sigma, Keypoint2D, SilhouetteImage};
use crate::scene::Scene;
use crate::synth::Trajectory;
use crate::{Error, Result};

/// Consecutive non-finite evaluations tolerated before giving up on a frame.
pub const MAX_FAILURES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub max_iterations: usize,
    pub threshold: f64,
    pub step: f64,
    /// Multiplies the step per coordinate; gradients mix radians and meters.
    pub step_scale: [f64; CORRECTION_DIM],
    pub loss: LossWeights,
    pub sigma: f64,
}

impl BaselineConfig {
    /// Threshold 150 at 640×480, scaled by pixel count.
    pub fn for_image(width: usize, height: usize) -> Self {
        let mut step_scale = [1e-2; CORRECTION_DIM];
        step_scale[3..6].fill(1e-3);
        Self {
            max_iterations: 100,
            threshold: 150.0 * (width * height) as f64 / (480.0 * 640.0),
            step: 0.5,
            step_scale,
            loss: LossWeights::for_image(width, height),
            sigma: default_sigma(width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max iterations must be at least 1".into()));
        }
        if !(self.threshold > 0.0) || !(self.step > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::Config("threshold, step and sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    /// Lowest-loss parameters seen.
    pub theta: [f64; CORRECTION_DIM],
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Stopped after repeated non-finite gradients.
    pub failed: bool,
}

impl FrameResult {
    pub fn base(&self) -> RigidTransform {
        EulerPose::from_slice6(&self.theta[..6]).to_transform()
    }

    pub fn joints(&self) -> [f64; VISIBLE_JOINTS] {
        self.theta[6..].try_into().unwrap()
    }
}

/// `α·L_r + β·L_k` and its gradient at `theta`.
pub fn loss_and_gradient(
    scene: &Scene,
    theta: &[f64; CORRECTION_DIM],
    mask: &SilhouetteImage,
    keypoints: &[Keypoint2D],
    q_noisy: &[f64],
    cfg: &BaselineConfig,
) -> Result<(f64, [f64; CORRECTION_DIM])> {
    let tape = Tape::new();
    let th = tape.var(Tensor::vector(theta.to_vec()));
    let (s, p) = render_corrected(scene, &th, q_noisy, cfg.sigma)?;
    let loss = loss_render(&s, mask)?.mul_scalar(cfg.loss.alpha).add(&loss_keypoints(&p, keypoints)?.mul_scalar(cfg.loss.beta))?;
    let g = tape.backward(&loss)?;
    let grad = g.get(&th).map(|t| t.data().try_into().unwrap()).unwrap_or([0.0; CORRECTION_DIM]);
    Ok((loss.item(), grad))
}

fn finite(loss: f64, g: &[f64]) -> bool {
    loss.is_finite() && g.iter().all(|v| v.is_finite())
}

/// Descend from `init` until the loss falls to the threshold or the
/// iteration cap is reached. Each loss evaluation counts as one iteration.
///
/// The gradient is rescaled so the most sensitive coordinate moves exactly
/// `step · step_scale[i]`; a step that does not lower the loss is rejected
/// and halved, an accepted one doubles back toward `step`.
pub fn optimize_frame(
    scene: &Scene,
    init: &[f64; CORRECTION_DIM],
    mask: &SilhouetteImage,
    keypoints: &[Keypoint2D],
    q_noisy: &[f64],
    cfg: &BaselineConfig,
) -> Result<FrameResult> {
    cfg.validate()?;
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("initial parameters are not finite".into()));
    }
    let chain = &scene.chain.joints[FIRST_VISIBLE_JOINT..FIRST_VISIBLE_JOINT + VISIBLE_JOINTS];
    let descend = |th: &[f64; CORRECTION_DIM], g: &[f64; CORRECTION_DIM], step: f64| {
        let h: [f64; CORRECTION_DIM] = std::array::from_fn(|i| cfg.step_scale[i] * g[i]);
        let norm = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut out: [f64; CORRECTION_DIM] = std::array::from_fn(|i| th[i] - step * cfg.step_scale[i] * h[i] / norm);
        for (v, j) in out[6..].iter_mut().zip(chain) {
            *v = v.clamp(j.lower, j.upper);
        }
        out
    };

    let (loss0, mut grad) = loss_and_gradient(scene, init, mask, keypoints, q_noisy, cfg)?;
    let mut best = FrameResult {
        theta: *init,
        loss: loss0,
        initial_loss: loss0,
        iterations: 1,
        converged: loss0 <= cfg.threshold,
        failed: !finite(loss0, &grad),
    };
    let mut step = cfg.step;
    let mut failures = 0;
    while !best.converged && !best.failed && (best.iterations as usize) < cfg.max_iterations {
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        best.iterations += 1;
        let next = descend(&best.theta, &grad, step);
        let (loss, g) = loss_and_gradient(scene, &next, mask, keypoints, q_noisy, cfg)?;
        if !finite(loss, &g) {
            failures += 1;
            step *= 0.5;
            best.failed = failures >= MAX_FAILURES;
            continue;
        }
        failures = 0;
        if loss < best.loss {
            best.theta = next;
            best.loss = loss;
            best.converged = loss <= cfg.threshold;
            grad = g;
            step = (2.0 * step).min(cfg.step);
        } else {
            step *= 0.5;
        }
    }
    Ok(best)
}

/// Per-frame results along a trajectory. Frame 0 starts from the noisy
/// parametrization; later frames start from the previous result with the
/// current noisy visible joints.
pub fn track_trajectory(scene: &Scene, traj: &Trajectory, cfg: &BaselineConfig, warm_start: bool) -> Result<Vec<FrameResult>> {
    let mut out: Vec<FrameResult> = Vec::with_capacity(traj.frames.len());
    for f in &traj.frames {
        let mut init = parametrize(&f.base_noisy, &f.q_noisy);
        if let (true, Some(prev)) = (warm_start, out.last()) {
            init[..6].copy_from_slice(&prev.theta[..6]);
        }
        out.push(optimize_frame(scene, &init, &f.mask, &f.keypoints, &f.q_noisy, cfg)?);
    }
    Ok(out)
}

/// `(base, visible joints, iterations)` per frame, as consumed by the pose
/// series.
pub fn estimates(results: &[FrameResult]) -> Vec<(RigidTransform, [f64; VISIBLE_JOINTS], u32)> {
    results.iter().map(|r| (r.base(), r.joints(), r.iterations)).collect()
}
