use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

/// A proper rigid motion: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation by `angle` about unit `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
        Self { rotation: *r.matrix(), translation: Vector3::zeros() }
    }

    pub fn rot_x(a: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), a)
    }

    pub fn rot_y(a: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), a)
    }

    pub fn rot_z(a: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), a)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        compose(self, other)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Orthonormal with determinant +1, within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    /// Row-major rotation followed by translation.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t[0], t[1], t[2],
        ]
    }

    pub fn from_array(a: &[f64; 12]) -> Self {
        Self {
            rotation: Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
            translation: Vector3::new(a[9], a[10], a[11]),
        }
    }

    /// Largest absolute elementwise difference of rotation and translation.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

/// `a ∘ b`: rotation `Ra·Rb`, translation `Ra·tb + ta`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform { rotation: a.rotation * b.rotation, translation: a.rotation * b.translation + a.translation }
}

/// Euler angles `[z, y, x]` (intrinsic Z-Y-X, i.e. yaw, pitch, roll) plus a
/// translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerPose {
    pub euler: [f64; 3],
    pub translation: [f64; 3],
}

impl EulerPose {
    pub fn new(euler: [f64; 3], translation: [f64; 3]) -> Self {
        Self { euler, translation }
    }

    /// `[z, y, x, tx, ty, tz]`
    pub fn to_vec6(&self) -> [f64; 6] {
        let [a, b, c] = self.euler;
        let [x, y, z] = self.translation;
        [a, b, c, x, y, z]
    }

    pub fn from_slice6(v: &[f64]) -> Self {
        Self { euler: [v[0], v[1], v[2]], translation: [v[3], v[4], v[5]] }
    }

    pub fn to_transform(&self) -> RigidTransform {
        euler_to_transform(self)
    }
}

/// `R = Rz(euler[0])·Ry(euler[1])·Rx(euler[2])`.
pub fn euler_rotation(euler: &[f64; 3]) -> Matrix3<f64> {
    let (sa, ca) = euler[0].sin_cos();
    let (sb, cb) = euler[1].sin_cos();
    let (sc, cc) = euler[2].sin_cos();
    Matrix3::new(
        ca * cb,
        ca * sb * sc - sa * cc,
        ca * sb * cc + sa * sc,
        sa * cb,
        sa * sb * sc + ca * cc,
        sa * sb * cc - ca * sc,
        -sb,
        cb * sc,
        cb * cc,
    )
}

pub fn euler_to_transform(p: &EulerPose) -> RigidTransform {
    RigidTransform { rotation: euler_rotation(&p.euler), translation: Vector3::from(p.translation) }
}

/// Below this `cos(pitch)` the decomposition is treated as gimbal-locked.
const GIMBAL_EPS: f64 = 1e-10;

/// Canonical Z-Y-X angles with pitch in `[-π/2, π/2]`.
///
/// The flag is set at gimbal lock, where yaw is fixed to 0 and roll carries
/// the remaining rotation.
pub fn transform_to_euler(t: &RigidTransform) -> (EulerPose, bool) {
    let r = &t.rotation;
    let cb = (r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]).sqrt();
    let pitch = (-r[(2, 0)]).atan2(cb);
    let (euler, locked) = if cb > GIMBAL_EPS {
        ([r[(1, 0)].atan2(r[(0, 0)]), pitch, r[(2, 1)].atan2(r[(2, 2)])], false)
    } else if r[(2, 0)] < 0.0 {
        ([0.0, std::f64::consts::FRAC_PI_2, r[(0, 1)].atan2(r[(1, 1)])], true)
    } else {
        ([0.0, -std::f64::consts::FRAC_PI_2, (-r[(0, 1)]).atan2(r[(1, 1)])], true)
    };
    let tr = t.translation;
    (EulerPose { euler, translation: [tr[0], tr[1], tr[2]] }, locked)
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use proptest::prelude::*;

    use super::*;

    fn sample() -> RigidTransform {
        euler_to_transform(&EulerPose::new([0.3, -0.7, 1.1], [0.1, -0.2, 0.05]))
    }

    #[test]
    fn identity_is_neutral() {
        let t = sample();
        assert!(compose(&RigidTransform::identity(), &t).max_abs_diff(&t) < 1e-15);
        assert!(compose(&t, &t.inverse()).max_abs_diff(&RigidTransform::identity()) < 1e-9);
        assert!(t.is_valid(1e-9));
    }

    #[test]
    fn compose_of_quarter_turns() {
        let a = RigidTransform::new(RigidTransform::rot_z(FRAC_PI_2).rotation, Vector3::new(1.0, 0.0, 0.0));
        let c = compose(&a, &RigidTransform::rot_z(FRAC_PI_2));
        assert!(c.max_abs_diff(&RigidTransform {
            rotation: RigidTransform::rot_z(PI).rotation,
            translation: Vector3::new(1.0, 0.0, 0.0),
        }) < 1e-12);
    }

    #[test]
    fn single_axis_euler() {
        assert!(euler_to_transform(&EulerPose::default()).max_abs_diff(&RigidTransform::identity()) == 0.0);
        let r = euler_to_transform(&EulerPose::new([FRAC_PI_2, 0.0, 0.0], [0.0; 3]));
        assert!(r.max_abs_diff(&RigidTransform::rot_z(FRAC_PI_2)) < 1e-15);
        let composed = RigidTransform::rot_z(0.3)
            .compose(&RigidTransform::rot_y(-0.7))
            .compose(&RigidTransform::rot_x(1.1));
        assert!((composed.rotation - sample().rotation).abs().max() < 1e-15);
    }

    #[test]
    fn gimbal_lock_is_flagged() {
        for pitch in [FRAC_PI_2, -FRAC_PI_2] {
            let t = euler_to_transform(&EulerPose::new([0.4, pitch, 0.9], [0.0; 3]));
            let (p, locked) = transform_to_euler(&t);
            assert!(locked);
            assert_eq!(p.euler[0], 0.0);
            // Same rotation regardless of how yaw and roll were split.
            assert!(euler_to_transform(&p).max_abs_diff(&t) < 1e-9);
        }
    }

    #[test]
    fn wrap_into_half_open_interval() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn euler_round_trip_away_from_lock(
            yaw in -PI + 1e-6..PI - 1e-6,
            pitch in -FRAC_PI_2 + 1e-3..FRAC_PI_2 - 1e-3,
            roll in -PI + 1e-6..PI - 1e-6,
            tx in -1.0..1.0f64,
        ) {
            let p = EulerPose::new([yaw, pitch, roll], [tx, 0.5 * tx, -tx]);
            let t = euler_to_transform(&p);
            prop_assert!(t.is_valid(1e-9));
            let (q, locked) = transform_to_euler(&t);
            prop_assert!(!locked);
            for i in 0..3 {
                prop_assert!((q.euler[i] - p.euler[i]).abs() < 1e-9);
            }
            prop_assert_eq!(q.translation, p.translation);
        }

        #[test]
        fn inverse_composes_to_identity(a in -3.0..3.0f64, b in -1.5..1.5f64, c in -3.0..3.0f64) {
            let t = euler_to_transform(&EulerPose::new([a, b, c], [a, b, c]));
            prop_assert!(t.compose(&t.inverse()).max_abs_diff(&RigidTransform::identity()) < 1e-9);
        }
    }
}
