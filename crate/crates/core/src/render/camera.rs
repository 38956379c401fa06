use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::diff::{Tensor, Var};
use crate::{Error, Result};

/// Ideal pinhole looking down +Z, x to the right and y down in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

/// Focal length in pixels at a 128-pixel-wide image.
pub const FOCAL_AT_128: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint2D {
    pub x: f64,
    pub y: f64,
}

impl PinholeCamera {
    /// Square image of side `size` with the same field of view at every size.
    pub fn square(size: usize) -> Self {
        let f = FOCAL_AT_128 * size as f64 / 128.0;
        Self { fx: f, fy: f, cx: size as f64 / 2.0, cy: size as f64 / 2.0, width: size, height: size, near: 0.01, far: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("camera focal lengths must be positive".into()));
        }
        if !(0.0 < self.near && self.near < self.far) {
            return Err(Error::Config("camera requires 0 < near < far".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("camera image must be at least 16x16".into()));
        }
        Ok(())
    }

    /// Project a camera-frame point. The flag is set when the point is not
    /// in front of the near plane, in which case depth is clamped to `near`.
    pub fn project(&self, p: &Vector3<f64>) -> (Keypoint2D, bool) {
        let behind = p[2] <= self.near;
        let z = p[2].max(self.near);
        (Keypoint2D { x: self.fx * p[0] / z + self.cx, y: self.fy * p[1] / z + self.cy }, behind)
    }

    /// Differentiable projection of a `3×n` block of camera-frame points to a
    /// `2×n` block of pixel coordinates, plus per-point behind-camera flags.
    pub fn project_diff<'t>(&self, pts: &Var<'t>) -> Result<(Var<'t>, Vec<bool>)> {
        let shape = pts.shape();
        if shape.len() != 2 || shape[0] != 3 {
            return Err(Error::Invalid(format!("projection expects 3xN points, got {shape:?}")));
        }
        let n = shape[1];
        let tape = pts.tape();
        let flags = pts.with_value(|v| v.data()[2 * n..].iter().map(|&z| z <= self.near).collect());
        let z = pts.slice(0, 2, 3)?.max(&tape.scalar(self.near))?;
        let xy = pts.slice(0, 0, 2)?.div(&z)?;
        let f = tape.constant(Tensor::new(&[2, 1], vec![self.fx, self.fy])?);
        let c = tape.constant(Tensor::new(&[2, 1], vec![self.cx, self.cy])?);
        Ok((xy.mul(&f)?.add(&c)?, flags))
    }

    /// Inside the image shrunk by `margin` (a fraction of each side).
    pub fn contains(&self, k: &Keypoint2D, margin: f64) -> bool {
        let (w, h) = (self.width as f64, self.height as f64);
        k.x > margin * w && k.x < (1.0 - margin) * w && k.y > margin * h && k.y < (1.0 - margin) * h
    }

    /// Depth strictly between the clipping planes.
    pub fn in_depth_range(&self, z: f64) -> bool {
        z > self.near && z < self.far
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tape;

    fn cam() -> PinholeCamera {
        PinholeCamera { fx: 100.0, fy: 100.0, cx: 32.0, cy: 32.0, width: 64, height: 64, near: 0.01, far: 10.0 }
    }

    #[test]
    fn projection_examples() {
        let (k, behind) = cam().project(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!((k.x, k.y, behind), (32.0, 32.0, false));
        let (k, _) = cam().project(&Vector3::new(0.1, 0.0, 1.0));
        assert!((k.x - 42.0).abs() < 1e-12 && k.y == 32.0);
    }

    #[test]
    fn projection_gradient_is_focal_over_depth() {
        let tape = Tape::new();
        let p = tape.var(Tensor::new(&[3, 1], vec![0.1, 0.0, 1.0]).unwrap());
        let (uv, flags) = cam().project_diff(&p).unwrap();
        assert_eq!(flags, vec![false]);
        let g = tape.backward(&uv.index(0).unwrap().reshape(&[]).unwrap()).unwrap().wrt(&p);
        assert!((g.data()[0] - 100.0).abs() < 1e-12);
        assert!((g.data()[2] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_flagged_and_clamped() {
        let c = cam();
        let (k, behind) = c.project(&Vector3::new(0.001, 0.0, -1.0));
        assert!(behind);
        assert!((k.x - (100.0 * 0.001 / 0.01 + 32.0)).abs() < 1e-12);
        let tape = Tape::new();
        let p = tape.var(Tensor::new(&[3, 2], vec![0.0, 0.001, 0.0, 0.0, 1.0, -1.0]).unwrap());
        assert_eq!(c.project_diff(&p).unwrap().1, vec![false, true]);
    }

    #[test]
    fn scaled_defaults() {
        let c = PinholeCamera::square(128);
        assert_eq!((c.fx, c.cx), (150.0, 64.0));
        assert_eq!(PinholeCamera::square(64).fx, 75.0);
        c.validate().unwrap();
        assert!(PinholeCamera { near: 2.0, ..c }.validate().is_err());
        assert!(PinholeCamera::square(8).validate().is_err());
    }
}
