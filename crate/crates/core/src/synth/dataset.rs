use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_trajectory, Frame, NoiseSpec, Placement, Trajectory, FRAME_RATE};
use crate::kinematics::RigidTransform;
use crate::render::{load_pgm_sequence, save_pgm_sequence, Keypoint2D, MaskKind, PinholeCamera};
use crate::scene::Scene;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Default trajectory count and duration in seconds.
    pub fn defaults(self) -> (usize, f64) {
        match self {
            Split::Train => (32, 30.0),
            Split::Val => (2, 60.0),
            Split::Test => (3, 60.0),
        }
    }

    /// Distinct default seeds keep splits disjoint.
    pub fn default_seed(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?} (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub trajectories: usize,
    pub frames_per_trajectory: usize,
    pub frame_rate: f64,
    pub seed: u64,
    /// Chain description, relative to the dataset directory.
    pub chain: String,
    pub camera: PinholeCamera,
    pub noise: NoiseSpec,
    pub placement: Placement,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const FRAMES_FILE: &str = "frames.bin";
pub const MASKS_FILE: &str = "masks.pgm";
const CHAIN_DIR: &str = "chain";
const RECORD_BYTES: usize = 8 + 7 * 8 * 2 + 12 * 8 * 2 + 12 * 4;

impl DatasetManifest {
    pub fn new(split: Split, trajectories: usize, frames: usize, seed: u64, camera: PinholeCamera, noise: NoiseSpec) -> Self {
        Self {
            split,
            trajectories,
            frames_per_trajectory: frames,
            frame_rate: FRAME_RATE,
            seed,
            chain: format!("{CHAIN_DIR}/{}", crate::scene::CHAIN_FILE),
            camera,
            noise,
            placement: Placement::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.frames_per_trajectory == 0 {
            return Err(Error::Config("trajectory and frame counts must be positive".into()));
        }
        self.camera.validate()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = toml::from_str(&s).map_err(|e| Error::At { path: path.clone(), inner: Box::new(Error::Config(e.to_string())) })?;
        m.validate().map_err(|e| e.at(&path))?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let s = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }
}

/// Generate every trajectory of a manifest; output order and content do not
/// depend on how many worker threads run.
pub fn generate_dataset(manifest: &DatasetManifest, scene: &Scene) -> Result<Vec<Trajectory>> {
    manifest.validate()?;
    (0..manifest.trajectories as u64)
        .into_par_iter()
        .map(|i| {
            generate_trajectory(scene, &manifest.placement, &manifest.noise, manifest.frames_per_trajectory, manifest.seed, i)
        })
        .collect()
}

pub fn trajectory_dir(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("traj_{index:04}"))
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::with_capacity(traj.frames.len() * RECORD_BYTES);
    for f in &traj.frames {
        if f.q_true.len() != 7 || f.q_noisy.len() != 7 || f.keypoints.len() != 6 {
            return Err(Error::Invalid("frame table holds 7 joints and 6 keypoints".into()));
        }
        put_f64s(&mut bytes, &[f.t]);
        put_f64s(&mut bytes, &f.q_true);
        put_f64s(&mut bytes, &f.q_noisy);
        put_f64s(&mut bytes, &f.base_true.to_array());
        put_f64s(&mut bytes, &f.base_noisy.to_array());
        for k in &f.keypoints {
            bytes.extend_from_slice(&(k.x as f32).to_le_bytes());
            bytes.extend_from_slice(&(k.y as f32).to_le_bytes());
        }
    }
    let fp = dir.join(FRAMES_FILE);
    std::fs::write(&fp, bytes).map_err(|e| Error::io(&fp, e))?;
    let masks: Vec<_> = traj.frames.iter().map(|f| f.mask.clone()).collect();
    save_pgm_sequence(&dir.join(MASKS_FILE), &masks)
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn f64s<const N: usize>(&mut self) -> [f64; N] {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = f64::from_le_bytes(self.b[self.pos..self.pos + 8].try_into().unwrap());
            self.pos += 8;
        }
        out
    }

    fn f32(&mut self) -> f32 {
        let v = f32::from_le_bytes(self.b[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }
}

pub fn read_trajectory(dir: &Path, frame_rate: f64, seed: u64, index: u64) -> Result<Trajectory> {
    let fp = dir.join(FRAMES_FILE);
    let bytes = std::fs::read(&fp).map_err(|e| Error::io(&fp, e))?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::At {
            path: fp,
            inner: Box::new(Error::Format(format!("size {} is not a multiple of {RECORD_BYTES}", bytes.len()))),
        });
    }
    let masks = load_pgm_sequence(&dir.join(MASKS_FILE), MaskKind::Hard)?;
    let n = bytes.len() / RECORD_BYTES;
    if masks.len() != n {
        return Err(Error::At {
            path: dir.join(MASKS_FILE),
            inner: Box::new(Error::Format(format!("{} masks for {n} frames", masks.len()))),
        });
    }
    let mut r = Reader { b: &bytes, pos: 0 };
    let mut frames = Vec::with_capacity(n);
    for mask in masks {
        let [t] = r.f64s::<1>();
        let q_true = r.f64s::<7>().to_vec();
        let q_noisy = r.f64s::<7>().to_vec();
        let base_true = RigidTransform::from_array(&r.f64s::<12>());
        let base_noisy = RigidTransform::from_array(&r.f64s::<12>());
        let keypoints = (0..6).map(|_| Keypoint2D { x: r.f32() as f64, y: r.f32() as f64 }).collect();
        frames.push(Frame { t, q_true, q_noisy, base_true, base_noisy, keypoints, mask });
    }
    Ok(Trajectory { frame_rate, seed, index, frames })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub scene: Scene,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Generate in memory without touching disk.
    pub fn generate(manifest: DatasetManifest, scene: Scene) -> Result<Self> {
        let trajectories = generate_dataset(&manifest, &scene)?;
        Ok(Self { manifest, scene, trajectories })
    }

    pub fn frame_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.frames.len()).sum()
    }
}

/// Manifest, chain assets and every trajectory under `dir`.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, scene: &Scene, trajectories: &[Trajectory]) -> Result<()> {
    manifest.validate()?;
    if trajectories.len() != manifest.trajectories {
        return Err(Error::Invalid(format!("manifest lists {} trajectories, got {}", manifest.trajectories, trajectories.len())));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let chain_path = dir.join(&manifest.chain);
    scene.save_assets(chain_path.parent().unwrap_or(dir))?;
    manifest.save(dir)?;
    for (i, t) in trajectories.iter().enumerate() {
        write_trajectory(&trajectory_dir(dir, i), t)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::load(dir)?;
    let chain_path = dir.join(&manifest.chain);
    let scene = Scene::load_assets(chain_path.parent().unwrap_or(dir), manifest.camera)?;
    let trajectories = (0..manifest.trajectories)
        .map(|i| read_trajectory(&trajectory_dir(dir, i), manifest.frame_rate, manifest.seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    for t in &trajectories {
        if t.frames.len() != manifest.frames_per_trajectory {
            return Err(Error::Format(format!(
                "{}: trajectory {} has {} frames, manifest says {}",
                dir.display(),
                t.index,
                t.frames.len(),
                manifest.frames_per_trajectory
            )));
        }
    }
    Ok(Dataset { manifest, scene, trajectories })
}
