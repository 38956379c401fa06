//! A chain, its meshes and the camera observing it.

use std::path::Path;

use crate::kinematics::{forward_kinematics, keypoints_3d, KinematicChain, RigidTransform};
use crate::render::{Keypoint2D, PinholeCamera, SilhouetteImage, ToolModel};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub chain: KinematicChain,
    pub model: ToolModel,
    pub camera: PinholeCamera,
}

pub const CHAIN_FILE: &str = "chain.toml";

impl Scene {
    pub fn reference(size: usize) -> Self {
        Self { chain: KinematicChain::reference(), model: ToolModel::reference(), camera: PinholeCamera::square(size) }
    }

    /// Chain description plus its meshes from an asset directory.
    pub fn load_assets(dir: &Path, camera: PinholeCamera) -> Result<Self> {
        let chain = KinematicChain::load(&dir.join(CHAIN_FILE))?;
        let model = ToolModel::load(dir, &chain)?;
        Ok(Self { chain, model, camera })
    }

    /// Write the chain description and every mesh it references.
    pub fn save_assets(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        self.chain.save(&dir.join(CHAIN_FILE))?;
        for part in &self.model.parts {
            if let Some(Some(name)) = self.chain.link_meshes.get(part.link) {
                part.mesh.save(&dir.join(name))?;
            }
        }
        Ok(())
    }

    pub fn links(&self, base: &RigidTransform, q: &[f64]) -> Result<Vec<RigidTransform>> {
        forward_kinematics(&self.chain, base, q)
    }

    pub fn render_hard(&self, base: &RigidTransform, q: &[f64]) -> Result<SilhouetteImage> {
        Ok(self.model.render_hard(&self.links(base, q)?, &self.camera))
    }

    pub fn render_soft(&self, base: &RigidTransform, q: &[f64], sigma: f64) -> Result<SilhouetteImage> {
        self.model.render_soft(&self.links(base, q)?, &self.camera, sigma)
    }

    /// Projected keypoints with their behind-camera flags.
    pub fn keypoints_2d(&self, base: &RigidTransform, q: &[f64]) -> Result<Vec<(Keypoint2D, bool)>> {
        Ok(keypoints_3d(&self.chain, base, q)?.iter().map(|p| self.camera.project(p)).collect())
    }

    /// End effector and all keypoints project inside the image shrunk by
    /// `margin`, with depth in the camera range, and every mesh vertex lies in
    /// front of the near plane.
    pub fn in_view(&self, base: &RigidTransform, q: &[f64], margin: f64) -> Result<bool> {
        let links = self.links(base, q)?;
        let cam = &self.camera;
        let ee = links.last().expect("chain has joints").translation;
        let mut pts = vec![ee];
        pts.extend(self.chain.keypoints.iter().map(|k| links[k.link].transform_point(&k.point)));
        for p in &pts {
            if !cam.in_depth_range(p.z) || !cam.contains(&cam.project(p).0, margin) {
                return Ok(false);
            }
        }
        Ok(self.model.world_vertices(&links).iter().all(|v| v.z > cam.near))
    }
}
