use super::*;
use crate::kinematics::forward_kinematics;

fn scene() -> Scene {
    Scene::reference(64)
}

#[test]
fn interpolation_endpoints_and_ramp() {
    let same = interpolate_segment(&[0.3, -1.0], &[0.3, -1.0], 50);
    assert_eq!(same.len(), 50);
    assert!(same.iter().all(|q| q == &vec![0.3, -1.0]));

    let ramp = interpolate_segment(&[0.0], &[1.0], 50);
    for (i, q) in ramp.iter().enumerate() {
        assert!((q[0] - i as f64 / 49.0).abs() < 1e-15);
    }
    assert_eq!(ramp[49][0], 1.0);
}

#[test]
fn stitched_path_is_continuous() {
    let s = scene();
    let base = Placement::default().nominal.to_transform();
    let mut rng = stream(11, 0, 1);
    let path = sample_joint_path(&s, &base, 150, &mut rng).unwrap();
    assert_eq!(path.len(), 150);
    // Segments share endpoints once, so consecutive steps never jump by more
    // than one 49th of the full joint range.
    for w in path.windows(2) {
        for (j, joint) in s.chain.joints.iter().enumerate() {
            assert!((w[1][j] - w[0][j]).abs() <= joint.range() / 49.0 + 1e-12);
        }
    }
}

#[test]
fn targets_respect_limits_and_margin() {
    let s = scene();
    let base = Placement::default().nominal.to_transform();
    let mut rng = stream(5, 0, 1);
    for _ in 0..20 {
        let q = sample_target_pose(&s, &base, &mut rng).unwrap();
        assert!(s.chain.within_limits(&crate::kinematics::JointConfig(q.clone())));
        let (lo, hi) = (0.1 * 64.0, 0.9 * 64.0);
        for (k, behind) in s.keypoints_2d(&base, &q).unwrap() {
            assert!(!behind);
            assert!(k.x > lo && k.x < hi && k.y > lo && k.y < hi, "{k:?}");
        }
    }
}

#[test]
fn camera_looking_away_fails() {
    let mut s = scene();
    s.camera.cx = -5000.0;
    let base = Placement::default().nominal.to_transform();
    let err = sample_target_pose(&s, &base, &mut stream(1, 0, 1)).unwrap_err();
    assert!(err.to_string().contains("10000"), "{err}");
}

#[test]
fn zero_noise_is_exact() {
    let s = scene();
    let t = generate_trajectory(&s, &Placement::default(), &NoiseSpec::zero(7), 60, 3, 0).unwrap();
    assert_eq!(t.frames.len(), 60);
    for f in &t.frames {
        assert_eq!(f.q_true, f.q_noisy);
        assert_eq!(f.base_true, f.base_noisy);
    }
}

#[test]
fn same_seed_same_trajectory() {
    let s = scene();
    let noise = NoiseSpec::default();
    let a = generate_trajectory(&s, &Placement::default(), &noise, 120, 9, 2).unwrap();
    let b = generate_trajectory(&s, &Placement::default(), &noise, 120, 9, 2).unwrap();
    assert_eq!(a, b);
    let c = generate_trajectory(&s, &Placement::default(), &noise, 120, 9, 3).unwrap();
    assert_ne!(a.frames[0].q_true, c.frames[0].q_true);
}

#[test]
fn base_noisy_is_constant_and_ee_in_view() {
    let s = scene();
    let t = generate_trajectory(&s, &Placement::default(), &NoiseSpec::default(), 200, 4, 1).unwrap();
    for f in &t.frames {
        assert_eq!(f.base_noisy, t.frames[0].base_noisy);
        let links = forward_kinematics(&s.chain, &f.base_true, &f.q_true).unwrap();
        let (k, behind) = s.camera.project(&links.last().unwrap().translation);
        assert!(!behind && s.camera.contains(&k, 0.0));
    }
}

#[test]
fn joint_noise_is_unbiased() {
    let noise = NoiseSpec::default();
    let n = 100_000;
    let mut rng = stream(21, 0, 2);
    let q = vec![0.0; 7];
    let mut sum = [0.0; 7];
    let mut sq = [0.0; 7];
    for _ in 0..n {
        for (j, v) in noise.perturb_joints(&q, &mut rng).into_iter().enumerate() {
            sum[j] += v;
            sq[j] += v * v;
        }
    }
    for j in 0..7 {
        let s = noise.joint_sigma[j];
        let mean = sum[j] / n as f64;
        let std = (sq[j] / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 3.0 * s / (n as f64).sqrt(), "joint {j}: mean {mean}");
        assert!((std / s - 1.0).abs() < 0.02, "joint {j}: std {std}");
    }
}

/// Kolmogorov-Smirnov distance of `xs` from `U(-h, h)`.
pub(crate) fn ks_uniform(mut xs: Vec<f64>, h: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = ((x + h) / (2.0 * h)).clamp(0.0, 1.0);
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn base_noise_marginals_are_uniform() {
    let noise = NoiseSpec::default();
    let placement = Placement::default();
    let mut coords = vec![Vec::new(); 6];
    for i in 0..10_000 {
        let (t, n) = sample_bases(&placement, &noise, 8, i);
        let (t, n) = (t.to_vec6(), n.to_vec6());
        for c in 0..6 {
            coords[c].push(n[c] - t[c]);
        }
    }
    for (c, xs) in coords.into_iter().enumerate() {
        let h = if c < 3 { noise.euler_halfwidth[c] } else { noise.translation_halfwidth[c - 3] };
        let d = ks_uniform(xs, h);
        assert!(d < 0.02, "coordinate {c}: KS {d}");
    }
}

#[test]
fn ks_detects_wrong_distribution() {
    let xs: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0) * 0.5).collect();
    assert!(ks_uniform(xs, 1.0) > 0.2);
}

#[test]
fn masks_regenerate_from_stored_state() {
    let s = scene();
    let t = generate_trajectory(&s, &Placement::default(), &NoiseSpec::default(), 40, 6, 0).unwrap();
    for f in &t.frames {
        assert_eq!(s.render_hard(&f.base_true, &f.q_true).unwrap(), f.mask);
    }
}

#[test]
fn durations_map_to_frames() {
    assert_eq!(frames_for_duration(30.0), 900);
    assert_eq!(frames_for_duration(60.0), 1800);
}

#[test]
fn dataset_round_trip() {
    let s = scene();
    let m = DatasetManifest::new(Split::Val, 1, 75, 2, s.camera, NoiseSpec::default());
    let trajs = generate_dataset(&m, &s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &m, &s, &trajs).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, m);
    assert_eq!(back.scene, s);
    assert_eq!(back.trajectories, trajs);

    std::fs::write(trajectory_dir(dir.path(), 0).join(FRAMES_FILE), [0u8; 17]).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains(FRAMES_FILE), "{err}");
}

#[test]
fn splits_parse_and_default() {
    assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
    assert!("dev".parse::<Split>().is_err());
    assert_eq!(Split::Train.defaults(), (32, 30.0));
    assert_eq!(Split::Test.defaults(), (3, 60.0));
}
