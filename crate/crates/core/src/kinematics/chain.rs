use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::transform::{EulerPose, RigidTransform};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    /// Fixed transform from the parent link frame to this joint's frame.
    pub offset: RigidTransform,
    pub lower: f64,
    pub upper: f64,
}

impl Joint {
    /// Transform produced by this joint at value `q`.
    pub fn motion(&self, q: f64) -> RigidTransform {
        match self.kind {
            JointKind::Revolute => RigidTransform::from_axis_angle(&self.axis, q),
            JointKind::Prismatic => RigidTransform::from_translation(self.axis * q),
        }
    }

    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }
}

/// A point rigidly attached to a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointAnchor {
    pub link: usize,
    pub point: Vector3<f64>,
}

/// A serial chain of joints; link `i` is the frame after joint `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub joints: Vec<Joint>,
    /// Mesh file reference per link.
    pub link_meshes: Vec<Option<String>>,
    pub keypoints: Vec<KeypointAnchor>,
}

/// Joint values, radians for revolute joints and meters for prismatic ones.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Joint names of the reference manipulator.
pub const REFERENCE_JOINT_NAMES: [&str; 7] =
    ["Outer Yaw", "Outer Pitch", "Insertion", "Outer Roll", "Wrist Pitch", "Wrist Yaw", "End Effector"];

/// Index of the first joint visible to the camera.
pub const FIRST_VISIBLE_JOINT: usize = 3;
pub const VISIBLE_JOINTS: usize = 4;

/// Reference tool geometry, meters.
pub mod geometry {
    pub const SHAFT_RADIUS: f64 = 0.004;
    /// Shaft extent behind the Outer Roll frame.
    pub const SHAFT_BACK: f64 = 0.12;
    /// Outer Roll frame to Wrist Pitch frame along the shaft.
    pub const ROLL_TO_WRIST: f64 = 0.03;
    /// Offset of the Outer Roll frame from the insertion frame.
    pub const INSERTION_TO_ROLL: f64 = 0.03;
    pub const WRIST_LENGTH: f64 = 0.010;
    pub const WRIST_HALF_WIDTH: f64 = 0.003;
    pub const JAW_LENGTH: f64 = 0.010;
    pub const JAW_WIDTH: f64 = 0.0025;
    pub const JAW_HALF_THICKNESS: f64 = 0.0015;
    /// Lateral offset of each jaw tip from the jaw axis.
    pub const JAW_TIP_OFFSET: f64 = 0.0008;
}

impl KinematicChain {
    /// Seven-joint simplified surgical manipulator with its frame origin at
    /// the remote center of motion and the shaft along +z.
    pub fn reference() -> Self {
        use geometry::*;
        let j = |name: &str, kind, axis: [f64; 3], offset: [f64; 3], lower, upper| Joint {
            name: name.to_string(),
            kind,
            axis: Vector3::from(axis),
            offset: RigidTransform::from_translation(Vector3::from(offset)),
            lower,
            upper,
        };
        use JointKind::*;
        let joints = vec![
            j("Outer Yaw", Revolute, [0.0, 1.0, 0.0], [0.0; 3], -FRAC_PI_2, FRAC_PI_2),
            j("Outer Pitch", Revolute, [1.0, 0.0, 0.0], [0.0; 3], -FRAC_PI_2, FRAC_PI_2),
            j("Insertion", Prismatic, [0.0, 0.0, 1.0], [0.0; 3], 0.0, 0.24),
            j("Outer Roll", Revolute, [0.0, 0.0, 1.0], [0.0, 0.0, INSERTION_TO_ROLL], -PI, PI),
            j("Wrist Pitch", Revolute, [1.0, 0.0, 0.0], [0.0, 0.0, ROLL_TO_WRIST], -FRAC_PI_2, FRAC_PI_2),
            j("Wrist Yaw", Revolute, [0.0, 1.0, 0.0], [0.0, 0.0, WRIST_LENGTH], -FRAC_PI_2, FRAC_PI_2),
            j("End Effector", Revolute, [0.0, -1.0, 0.0], [0.0; 3], 0.0, 1.2),
        ];
        let link_meshes = vec![
            None,
            None,
            None,
            Some("shaft.obj".to_string()),
            Some("wrist.obj".to_string()),
            Some("jaw_fixed.obj".to_string()),
            Some("jaw_moving.obj".to_string()),
        ];
        let kp = |link, p: [f64; 3]| KeypointAnchor { link, point: Vector3::from(p) };
        let keypoints = vec![
            kp(3, [0.0, 0.0, ROLL_TO_WRIST - 0.020]),
            kp(3, [0.0; 3]),
            kp(4, [0.0; 3]),
            kp(5, [0.0; 3]),
            kp(5, [JAW_TIP_OFFSET, 0.0, JAW_LENGTH]),
            kp(6, [-JAW_TIP_OFFSET, 0.0, JAW_LENGTH]),
        ];
        Self { joints, link_meshes, keypoints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, j) in self.joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("joint {i} ({}) axis is not unit-norm", j.name)));
            }
            if !(j.lower < j.upper) {
                return Err(Error::Config(format!("joint {i} ({}) has lower >= upper", j.name)));
            }
            if !j.offset.is_valid(1e-9) {
                return Err(Error::Config(format!("joint {i} ({}) offset is not a rigid transform", j.name)));
            }
        }
        if self.link_meshes.len() != self.joints.len() {
            return Err(Error::Config("one mesh entry per link required".into()));
        }
        if let Some(k) = self.keypoints.iter().find(|k| k.link >= self.joints.len()) {
            return Err(Error::Config(format!("keypoint anchored to missing link {}", k.link)));
        }
        Ok(())
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.lower).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.upper).collect()
    }

    pub fn clamp(&self, q: &JointConfig) -> JointConfig {
        JointConfig(q.0.iter().zip(&self.joints).map(|(&v, j)| v.clamp(j.lower, j.upper)).collect())
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        q.0.iter().zip(&self.joints).all(|(&v, j)| v >= j.lower && v <= j.upper)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ChainFile = toml::from_str(s).map_err(|e| Error::Config(format!("chain description: {e}")))?;
        let chain = file.into_chain();
        chain.validate()?;
        Ok(chain)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&ChainFile::from_chain(self)).expect("chain serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| e.at(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

/// On-disk chain description.
#[derive(Debug, Serialize, Deserialize)]
struct ChainFile {
    #[serde(rename = "joint")]
    joints: Vec<JointEntry>,
    #[serde(rename = "keypoint", default)]
    keypoints: Vec<KeypointEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointEntry {
    name: String,
    kind: JointKind,
    axis: [f64; 3],
    offset: EulerPose,
    limits: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mesh: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct KeypointEntry {
    link: usize,
    point: [f64; 3],
}

impl ChainFile {
    fn from_chain(c: &KinematicChain) -> Self {
        let joints = c
            .joints
            .iter()
            .zip(&c.link_meshes)
            .map(|(j, m)| JointEntry {
                name: j.name.clone(),
                kind: j.kind,
                axis: [j.axis[0], j.axis[1], j.axis[2]],
                offset: super::transform::transform_to_euler(&j.offset).0,
                limits: [j.lower, j.upper],
                mesh: m.clone(),
            })
            .collect();
        let keypoints = c
            .keypoints
            .iter()
            .map(|k| KeypointEntry { link: k.link, point: [k.point[0], k.point[1], k.point[2]] })
            .collect();
        Self { joints, keypoints }
    }

    fn into_chain(self) -> KinematicChain {
        let mut joints = Vec::new();
        let mut link_meshes = Vec::new();
        for e in self.joints {
            joints.push(Joint {
                name: e.name,
                kind: e.kind,
                axis: Vector3::from(e.axis),
                offset: e.offset.to_transform(),
                lower: e.limits[0],
                upper: e.limits[1],
            });
            link_meshes.push(e.mesh);
        }
        let keypoints =
            self.keypoints.into_iter().map(|k| KeypointAnchor { link: k.link, point: Vector3::from(k.point) }).collect();
        KinematicChain { joints, link_meshes, keypoints }
    }
}
