//! Rigid transforms, Euler poses and forward kinematics of serial chains.

mod chain;
mod fk;
mod transform;

pub use chain::{
    geometry, Joint, JointConfig, JointKind, KeypointAnchor, KinematicChain, FIRST_VISIBLE_JOINT,
    REFERENCE_JOINT_NAMES, VISIBLE_JOINTS,
};
pub use fk::{
    axis_rotation, end_effector, forward_kinematics, forward_kinematics_diff, keypoints_3d, keypoints_3d_diff,
    DiffTransform,
};
pub use transform::{compose, euler_rotation, euler_to_transform, transform_to_euler, wrap_angle, EulerPose, RigidTransform};
