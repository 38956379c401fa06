use nalgebra::{Matrix3, Vector3};

use super::chain::{JointKind, KinematicChain};
use super::transform::{compose, RigidTransform};
use crate::diff::{Tape, Tensor, Var};
use crate::{Error, Result};

fn check_len(chain: &KinematicChain, n: usize) -> Result<()> {
    if n != chain.len() {
        return Err(Error::Length { expected: chain.len(), got: n });
    }
    Ok(())
}

/// Per-link poses; the last entry is the end-effector frame.
pub fn forward_kinematics(chain: &KinematicChain, base: &RigidTransform, q: &[f64]) -> Result<Vec<RigidTransform>> {
    check_len(chain, q.len())?;
    let mut cur = *base;
    let mut out = Vec::with_capacity(q.len());
    for (j, &v) in chain.joints.iter().zip(q) {
        cur = compose(&compose(&cur, &j.offset), &j.motion(v));
        out.push(cur);
    }
    Ok(out)
}

pub fn end_effector(chain: &KinematicChain, base: &RigidTransform, q: &[f64]) -> Result<RigidTransform> {
    Ok(*forward_kinematics(chain, base, q)?.last().expect("chain has joints"))
}

/// Keypoint anchors mapped into the frame of `base`.
pub fn keypoints_3d(chain: &KinematicChain, base: &RigidTransform, q: &[f64]) -> Result<Vec<Vector3<f64>>> {
    let links = forward_kinematics(chain, base, q)?;
    Ok(chain.keypoints.iter().map(|k| links[k.link].transform_point(&k.point)).collect())
}

/// A rigid transform recorded on a tape: rotation `3×3`, translation `3×1`.
#[derive(Clone, Copy)]
pub struct DiffTransform<'t> {
    pub rotation: Var<'t>,
    pub translation: Var<'t>,
}

fn mat_tensor(m: &Matrix3<f64>) -> Tensor {
    let data = (0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)])).collect();
    Tensor::new(&[3, 3], data).expect("3x3")
}

fn col_tensor(v: &Vector3<f64>) -> Tensor {
    Tensor::new(&[3, 1], vec![v[0], v[1], v[2]]).expect("3x1")
}

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a[2], a[1], a[2], 0.0, -a[0], -a[1], a[0], 0.0)
}

/// Rotation by a rank-0 `angle` about a fixed unit `axis` (Rodrigues).
pub fn axis_rotation<'t>(tape: &'t Tape, axis: &Vector3<f64>, angle: Var<'t>) -> Result<Var<'t>> {
    let k = skew(axis);
    let eye = tape.constant(mat_tensor(&Matrix3::identity()));
    let kc = tape.constant(mat_tensor(&k));
    let k2 = tape.constant(mat_tensor(&(k * k)));
    let s = kc.mul(&angle.sin())?;
    let c = k2.mul(&angle.cos().neg().add_scalar(1.0))?;
    Ok(eye.add(&s)?.add(&c)?)
}

impl<'t> DiffTransform<'t> {
    pub fn constant(tape: &'t Tape, t: &RigidTransform) -> Self {
        Self { rotation: tape.constant(mat_tensor(&t.rotation)), translation: tape.constant(col_tensor(&t.translation)) }
    }

    /// From a 6-vector `[z, y, x, tx, ty, tz]` of intrinsic Z-Y-X angles and
    /// a translation.
    pub fn from_euler(pose: Var<'t>) -> Result<Self> {
        let tape = pose.tape();
        if pose.shape() != [6] {
            return Err(Error::Length { expected: 6, got: pose.with_value(|v| v.len()) });
        }
        let rz = axis_rotation(tape, &Vector3::z(), pose.index(0)?)?;
        let ry = axis_rotation(tape, &Vector3::y(), pose.index(1)?)?;
        let rx = axis_rotation(tape, &Vector3::x(), pose.index(2)?)?;
        let rotation = rz.matmul(&ry)?.matmul(&rx)?;
        let translation = pose.slice(0, 3, 6)?.reshape(&[3, 1])?;
        Ok(Self { rotation, translation })
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &DiffTransform<'t>) -> Result<Self> {
        Ok(Self {
            rotation: self.rotation.matmul(&other.rotation)?,
            translation: self.rotation.matmul(&other.translation)?.add(&self.translation)?,
        })
    }

    pub fn compose_const(&self, other: &RigidTransform) -> Result<Self> {
        let tape = self.rotation.tape();
        self.compose(&Self::constant(tape, other))
    }

    /// Map a `3×n` block of column points.
    pub fn transform_points(&self, pts: &Var<'t>) -> Result<Var<'t>> {
        Ok(self.rotation.matmul(pts)?.add(&self.translation)?)
    }

    pub fn value(&self) -> RigidTransform {
        let r = self.rotation.value();
        let t = self.translation.value();
        let (r, t) = (r.data(), t.data());
        RigidTransform::new(
            Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]),
            Vector3::new(t[0], t[1], t[2]),
        )
    }
}

/// Differentiable [`forward_kinematics`]; `q` holds one rank-0 value per joint.
pub fn forward_kinematics_diff<'t>(
    chain: &KinematicChain,
    base: &DiffTransform<'t>,
    q: &[Var<'t>],
) -> Result<Vec<DiffTransform<'t>>> {
    check_len(chain, q.len())?;
    let tape = base.rotation.tape();
    let mut cur = *base;
    let mut out = Vec::with_capacity(q.len());
    for (j, v) in chain.joints.iter().zip(q) {
        let motion = if !v.requires_grad() {
            DiffTransform::constant(tape, &j.motion(v.item()))
        } else {
            match j.kind {
                JointKind::Revolute => DiffTransform {
                    rotation: axis_rotation(tape, &j.axis, *v)?,
                    translation: tape.constant(Tensor::zeros(&[3, 1])),
                },
                JointKind::Prismatic => DiffTransform {
                    rotation: tape.constant(mat_tensor(&Matrix3::identity())),
                    translation: tape.constant(col_tensor(&j.axis)).mul(v)?,
                },
            }
        };
        cur = cur.compose_const(&j.offset)?.compose(&motion)?;
        out.push(cur);
    }
    Ok(out)
}

/// Keypoints as a `3×K` block, one column per anchor.
pub fn keypoints_3d_diff<'t>(chain: &KinematicChain, links: &[DiffTransform<'t>]) -> Result<Var<'t>> {
    let tape = links[0].rotation.tape();
    let cols = chain
        .keypoints
        .iter()
        .map(|k| links[k.link].transform_points(&tape.constant(col_tensor(&k.point))))
        .collect::<Result<Vec<_>>>()?;
    Ok(tape.concat(&cols, 1)?)
}
