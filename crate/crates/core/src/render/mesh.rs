use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::kinematics::geometry::*;
use crate::{Error, Result};

/// Triangle mesh in its link's local frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::Format(format!("face {i} references a missing vertex")));
            }
        }
        Ok(())
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn min_face_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).fold(f64::INFINITY, f64::min)
    }

    /// Parse `v x y z` and `f i j k` records (1-based indices). Other records
    /// and `#` comments are ignored; `f` entries may carry `/`-suffixes.
    pub fn parse(s: &str) -> Result<Self> {
        let mut m = TriMesh::default();
        for (n, line) in s.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = |what: &str| Error::Format(format!("line {}: {what}", n + 1));
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it.take(3).map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad vertex"))?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    m.vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| t.split('/').next().unwrap_or("").parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("bad face index"))?;
                    if idx.len() != 3 || idx.contains(&0) {
                        return Err(bad("face needs 3 one-based indices"));
                    }
                    m.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            writeln!(s, "v {:e} {:e} {:e}", v[0], v[1], v[2]).unwrap();
        }
        for f in &self.faces {
            writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&s).map_err(|e| e.at(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }

    fn push_quad(&mut self, a: usize, b: usize, c: usize, d: usize) {
        self.faces.push([a, b, c]);
        self.faces.push([a, c, d]);
    }

    /// Closed cylinder along z.
    pub fn cylinder(radius: f64, z0: f64, z1: f64, segments: usize) -> Self {
        let mut m = TriMesh::default();
        for z in [z0, z1] {
            for i in 0..segments {
                let a = TAU * i as f64 / segments as f64;
                m.vertices.push(Vector3::new(radius * a.cos(), radius * a.sin(), z));
            }
        }
        for i in 0..segments {
            let j = (i + 1) % segments;
            m.push_quad(i, j, segments + j, segments + i);
        }
        for i in 1..segments - 1 {
            m.faces.push([0, i + 1, i]);
            m.faces.push([segments, segments + i, segments + i + 1]);
        }
        m
    }

    /// Axis-aligned box.
    pub fn cuboid(lo: Vector3<f64>, hi: Vector3<f64>) -> Self {
        let mut m = TriMesh::default();
        for i in 0..8 {
            let pick = |bit: usize, k: usize| if i & bit != 0 { hi[k] } else { lo[k] };
            m.vertices.push(Vector3::new(pick(1, 0), pick(2, 1), pick(4, 2)));
        }
        for (a, b, c, d) in [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)] {
            m.push_quad(a, b, c, d);
        }
        m
    }

    /// Triangle in the x-z plane extruded over `y ∈ [-half, half]`.
    pub fn prism(tri: [[f64; 2]; 3], half: f64) -> Self {
        let mut m = TriMesh::default();
        for y in [-half, half] {
            for p in tri {
                m.vertices.push(Vector3::new(p[0], y, p[1]));
            }
        }
        m.faces.push([0, 1, 2]);
        m.faces.push([3, 5, 4]);
        for i in 0..3 {
            let j = (i + 1) % 3;
            m.push_quad(i, 3 + i, 3 + j, j);
        }
        m
    }
}

pub const SHAFT_SEGMENTS: usize = 16;

/// The reference tool: `(link index, mesh)` pairs for shaft, wrist and jaws.
pub fn reference_tool_meshes() -> Vec<(usize, TriMesh)> {
    let shaft = TriMesh::cylinder(SHAFT_RADIUS, -SHAFT_BACK, ROLL_TO_WRIST, SHAFT_SEGMENTS);
    let w = WRIST_HALF_WIDTH;
    let wrist = TriMesh::cuboid(Vector3::new(-w, -w, 0.0), Vector3::new(w, w, WRIST_LENGTH));
    let jaw = |s: f64| {
        TriMesh::prism([[0.0, 0.0], [s * JAW_WIDTH, 0.0], [s * JAW_TIP_OFFSET, JAW_LENGTH]], JAW_HALF_THICKNESS)
    };
    vec![(3, shaft), (4, wrist), (5, jaw(1.0)), (6, jaw(-1.0))]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_meshes_are_valid() {
        let parts = reference_tool_meshes();
        let total: usize = parts.iter().map(|(_, m)| m.faces.len()).sum();
        assert_eq!(total, 60 + 12 + 8 + 8);
        for (_, m) in &parts {
            m.validate().unwrap();
            assert!(m.min_face_area() > 1e-12);
        }
    }

    #[test]
    fn obj_round_trip() {
        let m = TriMesh::cuboid(Vector3::new(-1.0, -2.0, 0.5), Vector3::new(0.25, 1.0, 3.0));
        assert_eq!(TriMesh::parse(&m.to_obj_string()).unwrap(), m);
    }

    #[test]
    fn obj_parse_errors() {
        assert!(TriMesh::parse("v 0 0 0\nf 1 2 3\n").is_err());
        assert!(TriMesh::parse("v 0 0\n").is_err());
        assert!(TriMesh::parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").is_err());
        let m = TriMesh::parse("# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }
}
