//! One-shot pose correction: a small vision transformer reads the observed
//! and the uncorrected silhouettes together with the noisy configuration and
//! predicts a bounded 10-D correction (base Euler angles, base translation,
//! visible joints). Training renders the corrected pose through the soft
//! rasterizer so silhouette, keypoint and joint losses all backpropagate
//! into the network.

mod train;
mod vit;
mod weights;

use serde::{Deserialize, Serialize};

pub use train::{
    epoch_frames, evaluate_loss, frame_loss, train, Adam, EpochLog, FrameRef, LossParts, TrainConfig, TrainOutcome,
    LOG_FILE, MODEL_FILE,
};
pub use vit::{forward, patchify, ModelWeights, Params, VitConfig};
pub use weights::{load_weights, read_weights, save_weights, write_weights, SGWT_MAGIC, SGWT_VERSION};

use rayon::prelude::*;

use crate::diff::{Tape, Tensor, Var};
use crate::kinematics::{
    forward_kinematics_diff, keypoints_3d_diff, transform_to_euler, DiffTransform, EulerPose, KinematicChain, RigidTransform,
    FIRST_VISIBLE_JOINT, VISIBLE_JOINTS,
};
use crate::render::{Keypoint2D, SilhouetteImage};
use crate::scene::Scene;
use crate::synth::{Frame, Trajectory};
use crate::{Error, Result};

/// Length of the correction vector: 3 Euler angles, 3 translations, 4 joints.
pub const CORRECTION_DIM: usize = 6 + VISIBLE_JOINTS;

/// How raw outputs are bounded before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Squash {
    /// `k·(2σ(r) − 1)`, zero at `r = 0`.
    #[default]
    Centered,
    /// `k·σ(r)`, strictly positive.
    Literal,
}

/// Scale factors and limits that map raw network outputs to corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSpace {
    pub k: [f64; CORRECTION_DIM],
    pub joint_lower: [f64; VISIBLE_JOINTS],
    pub joint_upper: [f64; VISIBLE_JOINTS],
    pub squash: Squash,
}

impl CorrectionSpace {
    /// 10° per Euler angle, 20 mm per axis, a quarter of each visible
    /// joint's range.
    pub fn for_chain(chain: &KinematicChain) -> Self {
        let vis = &chain.joints[FIRST_VISIBLE_JOINT..FIRST_VISIBLE_JOINT + VISIBLE_JOINTS];
        let mut k = [0.0; CORRECTION_DIM];
        k[..3].fill(10f64.to_radians());
        k[3..6].fill(0.020);
        for (i, j) in vis.iter().enumerate() {
            k[6 + i] = 0.25 * j.range();
        }
        Self {
            k,
            joint_lower: std::array::from_fn(|i| vis[i].lower),
            joint_upper: std::array::from_fn(|i| vis[i].upper),
            squash: Squash::Centered,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("scale factors must be nonnegative".into()));
        }
        Ok(())
    }

    /// `θ̃ᵢ / kᵢ`, with zero where `kᵢ = 0`.
    pub fn normalize(&self, theta: &[f64; CORRECTION_DIM]) -> [f64; CORRECTION_DIM] {
        std::array::from_fn(|i| if self.k[i] > 0.0 { theta[i] / self.k[i] } else { 0.0 })
    }

    fn squash(&self, r: f64) -> f64 {
        let s = 1.0 / (1.0 + (-r).exp());
        match self.squash {
            Squash::Centered => 2.0 * s - 1.0,
            Squash::Literal => s,
        }
    }
}

/// Noisy parametrization: Euler pose of the base followed by the visible
/// joints.
pub fn parametrize(base: &RigidTransform, q: &[f64]) -> [f64; CORRECTION_DIM] {
    let pose = transform_to_euler(base).0.to_vec6();
    let mut out = [0.0; CORRECTION_DIM];
    out[..6].copy_from_slice(&pose);
    out[6..].copy_from_slice(&q[FIRST_VISIBLE_JOINT..FIRST_VISIBLE_JOINT + VISIBLE_JOINTS]);
    out
}

/// Squash, scale and add the raw correction; visible joints are clamped to
/// their limits.
pub fn apply_correction(
    raw: &[f64; CORRECTION_DIM],
    theta: &[f64; CORRECTION_DIM],
    space: &CorrectionSpace,
) -> [f64; CORRECTION_DIM] {
    std::array::from_fn(|i| {
        let v = theta[i] + space.k[i] * space.squash(raw[i]);
        if i >= 6 {
            v.clamp(space.joint_lower[i - 6], space.joint_upper[i - 6])
        } else {
            v
        }
    })
}

/// [`apply_correction`] on a tape; `raw` has length 10.
pub fn apply_correction_diff<'t>(raw: &Var<'t>, theta: &[f64; CORRECTION_DIM], space: &CorrectionSpace) -> Result<Var<'t>> {
    let tape = raw.tape();
    let s = raw.sigmoid();
    let s = match space.squash {
        Squash::Centered => s.mul_scalar(2.0).add_scalar(-1.0),
        Squash::Literal => s,
    };
    let k = tape.constant(Tensor::vector(space.k.to_vec()));
    let th = tape.constant(Tensor::vector(theta.to_vec()));
    let v = th.add(&s.mul(&k)?)?;
    let lo: Vec<f64> = [f64::NEG_INFINITY; 6].into_iter().chain(space.joint_lower).collect();
    let hi: Vec<f64> = [f64::INFINITY; 6].into_iter().chain(space.joint_upper).collect();
    Ok(v.min(&tape.constant(Tensor::vector(hi)))?.max(&tape.constant(Tensor::vector(lo)))?)
}

/// Soft silhouette `[H, W]` and projected keypoints `[2, 6]` of a corrected
/// parametrization. The first joints come from the noisy configuration.
pub fn render_corrected<'t>(scene: &Scene, theta_hat: &Var<'t>, q_noisy: &[f64], sigma: f64) -> Result<(Var<'t>, Var<'t>)> {
    let tape = theta_hat.tape();
    if theta_hat.shape() != [CORRECTION_DIM] {
        return Err(Error::Length { expected: CORRECTION_DIM, got: theta_hat.with_value(|t| t.len()) });
    }
    if q_noisy.len() != scene.chain.len() {
        return Err(Error::Length { expected: scene.chain.len(), got: q_noisy.len() });
    }
    let base = DiffTransform::from_euler(theta_hat.slice(0, 0, 6)?)?;
    let mut q: Vec<Var<'t>> = q_noisy[..FIRST_VISIBLE_JOINT].iter().map(|&v| tape.scalar(v)).collect();
    for i in 0..VISIBLE_JOINTS {
        q.push(theta_hat.index(6 + i)?);
    }
    let links = forward_kinematics_diff(&scene.chain, &base, &q)?;
    let mask = scene.model.render_soft_diff(&links, &scene.camera, sigma)?;
    let (kp, _) = scene.camera.project_diff(&keypoints_3d_diff(&scene.chain, &links)?)?;
    Ok((mask, kp))
}

/// `Σ (Ŝ − M)²` over all pixels.
pub fn loss_render<'t>(s_hat: &Var<'t>, m_ref: &SilhouetteImage) -> Result<Var<'t>> {
    let m = s_hat.tape().constant(Tensor::new(&[m_ref.height, m_ref.width], m_ref.to_f64())?);
    Ok(s_hat.sub(&m)?.square().sum())
}

/// `Σ ‖p̂ − p‖²`; `p_hat` is `[2, K]`.
pub fn loss_keypoints<'t>(p_hat: &Var<'t>, p: &[Keypoint2D]) -> Result<Var<'t>> {
    let n = p.len();
    let data = p.iter().map(|k| k.x).chain(p.iter().map(|k| k.y)).collect();
    let target = p_hat.tape().constant(Tensor::new(&[2, n], data)?);
    Ok(p_hat.sub(&target)?.square().sum())
}

/// `Σ (θ̂ − θ)²` over the visible joints.
pub fn loss_joint<'t>(vis_hat: &Var<'t>, vis_true: &[f64]) -> Result<Var<'t>> {
    let t = vis_hat.tape().constant(Tensor::vector(vis_true.to_vec()));
    Ok(vis_hat.sub(&t)?.square().sum())
}

/// Weights of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    /// `α = 1000/(H·W)`, `β = 0.05`, `γ = 500`.
    pub fn for_image(width: usize, height: usize) -> Self {
        Self { alpha: 1000.0 / (width * height) as f64, beta: 0.05, gamma: 500.0 }
    }
}

pub fn loss_total<'t>(w: &LossWeights, render: &Var<'t>, keypoints: &Var<'t>, joint: &Var<'t>) -> Result<Var<'t>> {
    Ok(render.mul_scalar(w.alpha).add(&keypoints.mul_scalar(w.beta))?.add(&joint.mul_scalar(w.gamma))?)
}

/// Everything the network sees for one frame.
pub struct CorrectorInput<'a> {
    pub observed: &'a SilhouetteImage,
    pub uncorrected: &'a SilhouetteImage,
    pub theta_noisy: [f64; CORRECTION_DIM],
}

/// Trained network plus the mapping from its outputs to corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrector {
    pub weights: ModelWeights,
    pub space: CorrectionSpace,
}

impl Corrector {
    /// Raw 10-vector on `tape`.
    pub fn raw<'t>(&self, tape: &'t Tape, params: &Params<'t>, input: &CorrectorInput<'_>) -> Result<Var<'t>> {
        let cfg = &self.weights.config;
        if input.observed.width != cfg.image_size || input.observed.height != cfg.image_size {
            return Err(Error::Invalid(format!(
                "network expects {0}x{0} masks, got {1}x{2}",
                cfg.image_size, input.observed.width, input.observed.height
            )));
        }
        let patches = tape.constant(patchify(&[input.observed, input.uncorrected], cfg.patch_size)?);
        let theta = tape.constant(Tensor::vector(self.space.normalize(&input.theta_noisy).to_vec()));
        forward(cfg, params, &patches, &theta)
    }

    /// One forward pass and the bounded correction; no rendering.
    pub fn infer(&self, input: &CorrectorInput<'_>) -> Result<[f64; CORRECTION_DIM]> {
        let tape = Tape::new();
        let params = self.weights.bind(&tape, false);
        let raw = self.raw(&tape, &params, input)?.value();
        let raw: [f64; CORRECTION_DIM] = raw.data().try_into().map_err(|_| Error::Length { expected: CORRECTION_DIM, got: raw.len() })?;
        Ok(apply_correction(&raw, &input.theta_noisy, &self.space))
    }

    /// Network input for a recorded frame: its mask beside the soft render of
    /// the noisy configuration.
    pub fn prepare(scene: &Scene, frame: &Frame, sigma: f64) -> Result<(SilhouetteImage, [f64; CORRECTION_DIM])> {
        let uncorrected = scene.render_soft(&frame.base_noisy, &frame.q_noisy, sigma)?;
        Ok((uncorrected, parametrize(&frame.base_noisy, &frame.q_noisy)))
    }

    /// `(base, visible joints, 1)` per frame.
    pub fn correct_trajectory(
        &self,
        scene: &Scene,
        traj: &Trajectory,
        sigma: f64,
    ) -> Result<Vec<(RigidTransform, [f64; VISIBLE_JOINTS], u32)>> {
        traj.frames
            .par_iter()
            .map(|f| {
                let (uncorrected, theta_noisy) = Self::prepare(scene, f, sigma)?;
                let th = self.infer(&CorrectorInput { observed: &f.mask, uncorrected: &uncorrected, theta_noisy })?;
                let base = EulerPose::from_slice6(&th[..6]).to_transform();
                Ok((base, th[6..].try_into().unwrap(), 1))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
