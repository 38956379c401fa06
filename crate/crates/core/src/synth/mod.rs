//! Synthetic trajectories: random in-view targets joined by linear segments,
//! a once-per-trajectory base perturbation and per-frame joint noise.

mod dataset;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use dataset::{
    generate_dataset, read_dataset, read_trajectory, trajectory_dir, write_dataset, write_trajectory, Dataset,
    DatasetManifest, Split, FRAMES_FILE, MANIFEST_FILE, MASKS_FILE,
};

use crate::kinematics::{transform_to_euler, EulerPose, RigidTransform};
use crate::render::{Keypoint2D, SilhouetteImage};
use crate::scene::Scene;
use crate::{Error, Result};

pub const FRAME_RATE: f64 = 30.0;
pub const SEGMENT_STEPS: usize = 50;
pub const MAX_REJECTIONS: usize = 10_000;
/// Targets keep every keypoint this fraction away from the image border.
pub const TARGET_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Uniform half-widths of the base translation perturbation, meters.
    pub translation_halfwidth: [f64; 3],
    /// Uniform half-widths of the base Euler perturbation `[z, y, x]`, radians.
    pub euler_halfwidth: [f64; 3],
    /// Per-joint Gaussian standard deviation.
    pub joint_sigma: Vec<f64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            translation_halfwidth: [0.010; 3],
            euler_halfwidth: [5f64.to_radians(); 3],
            joint_sigma: vec![0.010, 0.010, 0.002, 0.020, 0.020, 0.020, 0.020],
        }
    }
}

impl NoiseSpec {
    pub fn zero(joints: usize) -> Self {
        Self { translation_halfwidth: [0.0; 3], euler_halfwidth: [0.0; 3], joint_sigma: vec![0.0; joints] }
    }

    pub fn validate(&self, joints: usize) -> Result<()> {
        let all = self.translation_halfwidth.iter().chain(&self.euler_halfwidth).chain(&self.joint_sigma);
        if all.clone().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("noise magnitudes must be nonnegative".into()));
        }
        if self.joint_sigma.len() != joints {
            return Err(Error::Config(format!("noise lists {} joint sigmas for {joints} joints", self.joint_sigma.len())));
        }
        Ok(())
    }

    /// Uniform perturbation of a base pose in its 6-D parametrization.
    pub fn perturb_base<R: RngExt>(&self, pose: &EulerPose, rng: &mut R) -> EulerPose {
        let mut out = *pose;
        for i in 0..3 {
            out.euler[i] += uniform(rng, self.euler_halfwidth[i]);
        }
        for i in 0..3 {
            out.translation[i] += uniform(rng, self.translation_halfwidth[i]);
        }
        out
    }

    pub fn perturb_joints<R: RngExt>(&self, q: &[f64], rng: &mut R) -> Vec<f64> {
        q.iter()
            .zip(&self.joint_sigma)
            .map(|(&v, &s)| {
                let n: f64 = StandardNormal.sample(rng);
                v + s * n
            })
            .collect()
    }
}

/// `U(-h, h)`; always consumes one draw so streams stay aligned when `h = 0`.
fn uniform<R: RngExt>(rng: &mut R, h: f64) -> f64 {
    let u: f64 = rng.random();
    h * (2.0 * u - 1.0)
}

/// Where the manipulator base sits relative to the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Nominal camera-to-base pose, base origin at the remote center of motion.
    pub nominal: EulerPose,
    /// Each trajectory draws its true base uniformly within these half-widths
    /// around the nominal pose.
    pub spread: EulerPose,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            nominal: EulerPose::new([0.0, 55f64.to_radians(), 0.0], [-0.10, 0.0, 0.06]),
            spread: EulerPose::new([5f64.to_radians(); 3], [0.01; 3]),
        }
    }
}

impl Placement {
    pub fn sample<R: RngExt>(&self, rng: &mut R) -> EulerPose {
        let mut p = self.nominal;
        for i in 0..3 {
            p.euler[i] += uniform(rng, self.spread.euler[i]);
            p.translation[i] += uniform(rng, self.spread.translation[i]);
        }
        p
    }
}

/// Uniform joint configuration within limits whose keypoints and end effector
/// land inside the image shrunk by 10% per side.
pub fn sample_target_pose<R: RngExt>(scene: &Scene, base: &RigidTransform, rng: &mut R) -> Result<Vec<f64>> {
    for _ in 0..MAX_REJECTIONS {
        let q = sample_uniform_config(scene, rng);
        if scene.in_view(base, &q, TARGET_MARGIN)? {
            return Ok(q);
        }
    }
    Err(Error::Config(format!("no in-view configuration after {MAX_REJECTIONS} samples; check camera and chain placement")))
}

fn sample_uniform_config<R: RngExt>(scene: &Scene, rng: &mut R) -> Vec<f64> {
    scene.chain.joints.iter().map(|j| j.lower + (j.upper - j.lower) * rng.random::<f64>()).collect()
}

/// Linear interpolation, endpoints included.
pub fn interpolate_segment(start: &[f64], target: &[f64], steps: usize) -> Vec<Vec<f64>> {
    assert!(steps >= 2, "a segment needs at least two steps");
    (0..steps)
        .map(|i| {
            let s = i as f64 / (steps - 1) as f64;
            start.iter().zip(target).map(|(&a, &b)| if i == steps - 1 { b } else { a + (b - a) * s }).collect()
        })
        .collect()
}

pub fn frames_for_duration(duration_s: f64) -> usize {
    (duration_s * FRAME_RATE).round() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub q_true: Vec<f64>,
    pub q_noisy: Vec<f64>,
    pub base_true: RigidTransform,
    pub base_noisy: RigidTransform,
    /// Keypoints at the true configuration, stored at single precision.
    pub keypoints: Vec<Keypoint2D>,
    /// Hard mask at the true configuration.
    pub mask: SilhouetteImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frame_rate: f64,
    pub seed: u64,
    pub index: u64,
    pub frames: Vec<Frame>,
}

impl Trajectory {
    pub fn base_noisy_pose(&self) -> EulerPose {
        transform_to_euler(&self.frames[0].base_noisy).0
    }

    pub fn base_true_pose(&self) -> EulerPose {
        transform_to_euler(&self.frames[0].base_true).0
    }
}

/// Independent stream per (seed, trajectory, purpose).
pub fn stream(seed: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index * 4 + purpose);
    rng
}

fn round_keypoint(k: Keypoint2D) -> Keypoint2D {
    Keypoint2D { x: k.x as f32 as f64, y: k.y as f32 as f64 }
}

/// True joint path: random in-view targets joined by 50-step segments (shared
/// endpoints kept once), padded by holding the last value.
pub fn sample_joint_path<R: RngExt>(scene: &Scene, base: &RigidTransform, frames: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let mut path = vec![sample_target_pose(scene, base, rng)?];
    while path.len() + SEGMENT_STEPS - 1 <= frames {
        let start = path.last().unwrap().clone();
        let mut tries = 0;
        let seg = loop {
            let target = sample_target_pose(scene, base, rng)?;
            let seg = interpolate_segment(&start, &target, SEGMENT_STEPS);
            let mut ok = true;
            for q in &seg[1..SEGMENT_STEPS - 1] {
                if !scene.in_view(base, q, 0.0)? {
                    ok = false;
                    break;
                }
            }
            if ok {
                break seg;
            }
            tries += 1;
            if tries >= MAX_REJECTIONS {
                return Err(Error::Config("could not find an in-view segment".into()));
            }
        };
        path.extend(seg.into_iter().skip(1));
    }
    while path.len() < frames {
        path.push(path.last().unwrap().clone());
    }
    path.truncate(frames);
    Ok(path)
}

/// True and noisy base poses of trajectory `index`.
pub fn sample_bases(placement: &Placement, noise: &NoiseSpec, seed: u64, index: u64) -> (EulerPose, EulerPose) {
    let mut rng = stream(seed, index, 0);
    let true_pose = placement.sample(&mut rng);
    let noisy_pose = noise.perturb_base(&true_pose, &mut rng);
    (true_pose, noisy_pose)
}

/// One trajectory; identical `(seed, index)` gives a bit-identical result.
pub fn generate_trajectory(
    scene: &Scene,
    placement: &Placement,
    noise: &NoiseSpec,
    frames: usize,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    noise.validate(scene.chain.len())?;
    if frames == 0 {
        return Err(Error::Config("trajectory needs at least one frame".into()));
    }
    let (true_pose, noisy_pose) = sample_bases(placement, noise, seed, index);
    let base_true = true_pose.to_transform();
    let base_noisy = noisy_pose.to_transform();

    let path = sample_joint_path(scene, &base_true, frames, &mut stream(seed, index, 1))?;
    let mut noise_rng = stream(seed, index, 2);
    let mut out = Vec::with_capacity(frames);
    for (i, q) in path.into_iter().enumerate() {
        let q_noisy = noise.perturb_joints(&q, &mut noise_rng);
        let keypoints = scene.keypoints_2d(&base_true, &q)?.into_iter().map(|(k, _)| round_keypoint(k)).collect();
        let mask = scene.render_hard(&base_true, &q)?;
        out.push(Frame { t: i as f64 / FRAME_RATE, q_true: q, q_noisy, base_true, base_noisy, keypoints, mask });
    }
    Ok(Trajectory { frame_rate: FRAME_RATE, seed, index, frames: out })
}

#[cfg(test)]
mod tests;
