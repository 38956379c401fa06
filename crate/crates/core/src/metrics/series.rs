use std::path::Path;

use serde::{Deserialize, Serialize};

use super::filter::{unwrap_angles, Butterworth2};
use crate::kinematics::{
    end_effector, euler_rotation, transform_to_euler, KinematicChain, RigidTransform, FIRST_VISIBLE_JOINT, VISIBLE_JOINTS,
};
use crate::synth::Trajectory;
use crate::{Error, Result};

/// End-effector pose in the camera frame from a base estimate, the noisy
/// configuration and corrected visible joints: the first three joints keep
/// their noisy values, the visible ones are replaced.
pub fn hand_eye(
    chain: &KinematicChain,
    base: &RigidTransform,
    q_noisy: &[f64],
    visible: &[f64; VISIBLE_JOINTS],
) -> Result<RigidTransform> {
    let mut q = q_noisy.to_vec();
    if q.len() != FIRST_VISIBLE_JOINT + VISIBLE_JOINTS {
        return Err(Error::Length { expected: FIRST_VISIBLE_JOINT + VISIBLE_JOINTS, got: q.len() });
    }
    q[FIRST_VISIBLE_JOINT..].copy_from_slice(visible);
    end_effector(chain, base, &q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesSource {
    Noisy,
    Corrected,
    Baseline,
    Truth,
}

/// Per-frame end-effector poses and visible joints of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSeries {
    pub source: SeriesSource,
    pub t: Vec<f64>,
    pub ee: Vec<RigidTransform>,
    pub joints: Vec<[f64; VISIBLE_JOINTS]>,
    /// Optimizer iterations per frame; 1 for one-shot and reference series.
    pub iters: Vec<u32>,
}

fn visible(q: &[f64]) -> [f64; VISIBLE_JOINTS] {
    q[FIRST_VISIBLE_JOINT..FIRST_VISIBLE_JOINT + VISIBLE_JOINTS].try_into().expect("seven joints")
}

impl PoseSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn truth(chain: &KinematicChain, traj: &Trajectory) -> Result<Self> {
        let mut ee = Vec::with_capacity(traj.frames.len());
        for f in &traj.frames {
            ee.push(end_effector(chain, &f.base_true, &f.q_true)?);
        }
        Ok(Self {
            source: SeriesSource::Truth,
            t: traj.frames.iter().map(|f| f.t).collect(),
            ee,
            joints: traj.frames.iter().map(|f| visible(&f.q_true)).collect(),
            iters: vec![1; traj.frames.len()],
        })
    }

    /// The uncorrected estimate: noisy base and noisy joints.
    pub fn noisy(chain: &KinematicChain, traj: &Trajectory) -> Result<Self> {
        let estimates: Vec<_> = traj.frames.iter().map(|f| (f.base_noisy, visible(&f.q_noisy), 1)).collect();
        Self::from_estimates(chain, traj, &estimates, SeriesSource::Noisy)
    }

    /// Per-frame `(base, visible joints, iterations)` estimates composed with
    /// the noisy leading joints.
    pub fn from_estimates(
        chain: &KinematicChain,
        traj: &Trajectory,
        estimates: &[(RigidTransform, [f64; VISIBLE_JOINTS], u32)],
        source: SeriesSource,
    ) -> Result<Self> {
        if estimates.len() != traj.frames.len() {
            return Err(Error::Length { expected: traj.frames.len(), got: estimates.len() });
        }
        let mut ee = Vec::with_capacity(estimates.len());
        for (f, (base, vis, _)) in traj.frames.iter().zip(estimates) {
            ee.push(hand_eye(chain, base, &f.q_noisy, vis)?);
        }
        Ok(Self {
            source,
            t: traj.frames.iter().map(|f| f.t).collect(),
            ee,
            joints: estimates.iter().map(|e| e.1).collect(),
            iters: estimates.iter().map(|e| e.2).collect(),
        })
    }

    /// Timestamps strictly increasing with a uniform step; returns the rate.
    pub fn sample_rate(&self) -> Result<f64> {
        if self.t.len() < 2 {
            return Ok(crate::synth::FRAME_RATE);
        }
        let dt = self.t[1] - self.t[0];
        for w in self.t.windows(2) {
            let d = w[1] - w[0];
            if !(d > 0.0) || (d - dt).abs() > 1e-6 * dt.max(1e-9) + 1e-9 {
                return Err(Error::Invalid(format!("series is not uniformly sampled near t = {}", w[0])));
            }
        }
        Ok(1.0 / dt)
    }

    /// Causal second-order low-pass on translations, unwrapped Euler angles
    /// and visible joints.
    pub fn lowpass(&self, cutoff_hz: f64) -> Result<Self> {
        let filter = Butterworth2::new(cutoff_hz, self.sample_rate()?)?;
        let n = self.len();
        let column = |f: &dyn Fn(usize) -> f64| filter.apply(&(0..n).map(f).collect::<Vec<_>>());
        let trans: Vec<Vec<f64>> = (0..3).map(|a| column(&|i| self.ee[i].translation[a])).collect();
        let eulers: Vec<[f64; 3]> = self.ee.iter().map(|t| transform_to_euler(t).0.euler).collect();
        let rot: Vec<Vec<f64>> = (0..3)
            .map(|a| filter.apply(&unwrap_angles(&eulers.iter().map(|e| e[a]).collect::<Vec<_>>())))
            .collect();
        let joints: Vec<Vec<f64>> = (0..VISIBLE_JOINTS).map(|j| column(&|i| self.joints[i][j])).collect();
        let ee = (0..n)
            .map(|i| {
                RigidTransform::new(
                    euler_rotation(&[rot[0][i], rot[1][i], rot[2][i]]),
                    nalgebra::Vector3::new(trans[0][i], trans[1][i], trans[2][i]),
                )
            })
            .collect();
        Ok(Self {
            source: self.source,
            t: self.t.clone(),
            ee,
            joints: (0..n).map(|i| std::array::from_fn(|j| joints[j][i])).collect(),
            iters: self.iters.clone(),
        })
    }
}

/// One row of the pose CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub t: f64,
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub q4_deg: f64,
    pub q5_deg: f64,
    pub q6_deg: f64,
    pub q7_deg: f64,
    pub iters: u32,
}

pub const POSE_CSV_HEADER: &str = "t,x_mm,y_mm,z_mm,roll_deg,pitch_deg,yaw_deg,q4_deg,q5_deg,q6_deg,q7_deg,iters";

impl PoseRow {
    fn from_frame(t: f64, ee: &RigidTransform, q: &[f64; 4], iters: u32) -> Self {
        let (p, _) = transform_to_euler(ee);
        let [yaw, pitch, roll] = p.euler.map(f64::to_degrees);
        let [x, y, z] = p.translation.map(|v| v * 1000.0);
        let [q4, q5, q6, q7] = q.map(f64::to_degrees);
        Self {
            t,
            x_mm: x,
            y_mm: y,
            z_mm: z,
            roll_deg: roll,
            pitch_deg: pitch,
            yaw_deg: yaw,
            q4_deg: q4,
            q5_deg: q5,
            q6_deg: q6,
            q7_deg: q7,
            iters,
        }
    }

    fn transform(&self) -> RigidTransform {
        let e = [self.yaw_deg, self.pitch_deg, self.roll_deg].map(f64::to_radians);
        RigidTransform::new(euler_rotation(&e), nalgebra::Vector3::new(self.x_mm, self.y_mm, self.z_mm) / 1000.0)
    }
}

/// Rows of several series, one trajectory after another.
pub fn pose_rows(series: &[PoseSeries]) -> Vec<PoseRow> {
    series
        .iter()
        .flat_map(|s| (0..s.len()).map(move |i| PoseRow::from_frame(s.t[i], &s.ee[i], &s.joints[i], s.iters[i])))
        .collect()
}

pub fn write_pose_csv(path: &Path, series: &[PoseSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in pose_rows(series) {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::At { path: path.to_path_buf(), inner: Box::new(Error::Format(e.to_string())) }
}

pub fn read_pose_rows(path: &Path) -> Result<Vec<PoseRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_owned).collect();
    if header.join(",") != POSE_CSV_HEADER {
        return Err(Error::At {
            path: path.to_path_buf(),
            inner: Box::new(Error::Format(format!("unexpected header {:?}", header.join(",")))),
        });
    }
    r.deserialize().collect::<std::result::Result<Vec<PoseRow>, _>>().map_err(|e| csv_error(path, e))
}

/// Split rows back into consecutive series of the given lengths.
pub fn series_from_rows(rows: &[PoseRow], lengths: &[usize], source: SeriesSource) -> Result<Vec<PoseSeries>> {
    let total: usize = lengths.iter().sum();
    if rows.len() != total {
        return Err(Error::Length { expected: total, got: rows.len() });
    }
    let mut out = Vec::with_capacity(lengths.len());
    let mut at = 0;
    for &n in lengths {
        let chunk = &rows[at..at + n];
        at += n;
        out.push(PoseSeries {
            source,
            t: chunk.iter().map(|r| r.t).collect(),
            ee: chunk.iter().map(PoseRow::transform).collect(),
            joints: chunk.iter().map(|r| [r.q4_deg, r.q5_deg, r.q6_deg, r.q7_deg].map(f64::to_radians)).collect(),
            iters: chunk.iter().map(|r| r.iters).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, EulerPose};
    use crate::scene::Scene;
    use crate::synth::{generate_trajectory, NoiseSpec, Placement};

    fn traj(noise: NoiseSpec, frames: usize) -> (Scene, Trajectory) {
        let s = Scene::reference(64);
        let t = generate_trajectory(&s, &Placement::default(), &noise, frames, 12, 0).unwrap();
        (s, t)
    }

    #[test]
    fn zero_noise_hand_eye_is_exact() {
        let (s, t) = traj(NoiseSpec::zero(7), 300);
        let truth = PoseSeries::truth(&s.chain, &t).unwrap();
        let noisy = PoseSeries::noisy(&s.chain, &t).unwrap();
        for (a, b) in truth.ee.iter().zip(&noisy.ee) {
            assert!(a.max_abs_diff(b) < 1e-9);
        }
    }

    #[test]
    fn identity_base_zero_joints_gives_offsets() {
        let chain = KinematicChain::reference();
        let ee = hand_eye(&chain, &RigidTransform::identity(), &[0.0; 7], &[0.0; 4]).unwrap();
        let offsets = chain.joints.iter().fold(RigidTransform::identity(), |acc, j| acc.compose(&j.offset));
        assert!(ee.max_abs_diff(&offsets) < 1e-12);
    }

    #[test]
    fn residual_isolates_first_joint() {
        let chain = KinematicChain::reference();
        let base = EulerPose::new([0.1, 0.9, 0.0], [-0.1, 0.0, 0.06]).to_transform();
        let q = [0.1, -0.2, 0.1, 0.3, 0.2, -0.1, 0.4];
        let mut noisy = q;
        noisy[0] += 0.01;
        let vis = [q[3], q[4], q[5], q[6]];
        let est = hand_eye(&chain, &base, &noisy, &vis).unwrap();
        let direct = forward_kinematics(&chain, &base, &noisy).unwrap();
        assert!(est.max_abs_diff(direct.last().unwrap()) < 1e-15);
        let truth = end_effector(&chain, &base, &q).unwrap();
        assert!((est.translation - truth.translation).norm() > 1e-4);
    }

    #[test]
    fn constant_series_survives_filter() {
        let (s, t) = traj(NoiseSpec::zero(7), 60);
        let mut truth = PoseSeries::truth(&s.chain, &t).unwrap();
        let first = (truth.ee[0], truth.joints[0]);
        truth.ee.iter_mut().for_each(|e| *e = first.0);
        truth.joints.iter_mut().for_each(|j| *j = first.1);
        let f = truth.lowpass(1.5).unwrap();
        for (e, j) in f.ee.iter().zip(&f.joints) {
            assert!(e.max_abs_diff(&first.0) < 1e-12);
            assert!(j.iter().zip(&first.1).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn nonuniform_time_rejected() {
        let (s, t) = traj(NoiseSpec::zero(7), 10);
        let mut truth = PoseSeries::truth(&s.chain, &t).unwrap();
        truth.t[5] += 0.01;
        assert!(truth.lowpass(1.5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let (s, t) = traj(NoiseSpec::default(), 40);
        let truth = PoseSeries::truth(&s.chain, &t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.csv");
        write_pose_csv(&p, &[truth.clone(), truth.clone()]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), POSE_CSV_HEADER);
        let rows = read_pose_rows(&p).unwrap();
        let back = series_from_rows(&rows, &[40, 40], SeriesSource::Truth).unwrap();
        for (a, b) in truth.ee.iter().zip(&back[1].ee) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        assert!(series_from_rows(&rows, &[40], SeriesSource::Truth).is_err());
    }
}
