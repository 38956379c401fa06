use std::path::Path;

use nalgebra::Vector3;

use super::camera::PinholeCamera;
use super::image::{MaskKind, SilhouetteImage};
use super::mesh::{reference_tool_meshes, TriMesh};
use super::raster::{rasterize_hard, rasterize_soft, soft_occupancy};
use crate::diff::{Tensor, Var};
use crate::kinematics::{DiffTransform, KinematicChain, RigidTransform};
use crate::{Error, Result};

/// A mesh rigidly attached to one link of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshPart {
    pub link: usize,
    pub mesh: TriMesh,
}

/// All meshes of a tool with their owning links.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolModel {
    pub parts: Vec<MeshPart>,
    /// Faces re-indexed into the concatenation of all part vertices.
    faces: Vec<[usize; 3]>,
    vertex_count: usize,
}

impl ToolModel {
    pub fn new(parts: Vec<MeshPart>) -> Self {
        let mut faces = Vec::new();
        let mut off = 0;
        for p in &parts {
            faces.extend(p.mesh.faces.iter().map(|f| f.map(|i| i + off)));
            off += p.mesh.vertices.len();
        }
        Self { parts, faces, vertex_count: off }
    }

    pub fn reference() -> Self {
        Self::new(reference_tool_meshes().into_iter().map(|(link, mesh)| MeshPart { link, mesh }).collect())
    }

    /// Meshes named by `chain.link_meshes`, relative to `dir`.
    pub fn load(dir: &Path, chain: &KinematicChain) -> Result<Self> {
        let mut parts = Vec::new();
        for (link, name) in chain.link_meshes.iter().enumerate() {
            if let Some(name) = name {
                parts.push(MeshPart { link, mesh: TriMesh::load(&dir.join(name))? });
            }
        }
        if parts.is_empty() {
            return Err(Error::Config(format!("{}: chain references no meshes", dir.display())));
        }
        Ok(Self::new(parts))
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn triangle_count(&self) -> usize {
        self.faces.len()
    }

    /// All vertices in the frame the link poses are expressed in.
    pub fn world_vertices(&self, links: &[RigidTransform]) -> Vec<Vector3<f64>> {
        self.parts
            .iter()
            .flat_map(|p| p.mesh.vertices.iter().map(move |v| links[p.link].transform_point(v)))
            .collect()
    }

    pub fn world_triangles(&self, links: &[RigidTransform]) -> Vec<[Vector3<f64>; 3]> {
        let v = self.world_vertices(links);
        self.faces.iter().map(|f| f.map(|i| v[i])).collect()
    }

    pub fn render_hard(&self, links: &[RigidTransform], camera: &PinholeCamera) -> SilhouetteImage {
        rasterize_hard(&self.world_triangles(links), camera)
    }

    /// Faces with every vertex in front of the near plane.
    fn front_faces(&self, depth: impl Fn(usize) -> f64, near: f64) -> Vec<[usize; 3]> {
        self.faces.iter().copied().filter(|f| f.iter().all(|&i| depth(i) > near)).collect()
    }

    pub fn render_soft(&self, links: &[RigidTransform], camera: &PinholeCamera, sigma: f64) -> Result<SilhouetteImage> {
        let v = self.world_vertices(links);
        let n = v.len();
        let mut screen = vec![0.0; 2 * n];
        for (i, p) in v.iter().enumerate() {
            let (k, _) = camera.project(p);
            screen[i] = k.x;
            screen[n + i] = k.y;
        }
        let faces = self.front_faces(|i| v[i].z, camera.near);
        let occ = soft_occupancy(&screen, &faces, camera.width, camera.height, sigma)?;
        Ok(SilhouetteImage::from_f64(camera.width, camera.height, MaskKind::Soft, &occ))
    }

    /// Differentiable soft silhouette, shape `[height, width]`.
    pub fn render_soft_diff<'t>(
        &self,
        links: &[DiffTransform<'t>],
        camera: &PinholeCamera,
        sigma: f64,
    ) -> Result<Var<'t>> {
        let tape = links[0].rotation.tape();
        let mut blocks = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let n = p.mesh.vertices.len();
            let mut data = vec![0.0; 3 * n];
            for (i, v) in p.mesh.vertices.iter().enumerate() {
                for a in 0..3 {
                    data[a * n + i] = v[a];
                }
            }
            blocks.push(links[p.link].transform_points(&tape.constant(Tensor::new(&[3, n], data)?))?);
        }
        let pts = tape.concat(&blocks, 1)?;
        let (screen, _) = camera.project_diff(&pts)?;
        let n = self.vertex_count;
        let faces = pts.with_value(|v| self.front_faces(|i| v.data()[2 * n + i], camera.near));
        rasterize_soft(&screen, &faces, camera.width, camera.height, sigma)
    }
}
