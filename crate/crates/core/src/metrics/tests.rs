use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scene::Scene;
use crate::synth::{generate_trajectory, NoiseSpec, Placement, Trajectory};

fn oracle_rmse(e: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..e.len() {
        acc += e[i] * e[i];
    }
    (acc / e.len() as f64).sqrt()
}

#[test]
fn worked_example() {
    let truth = [1.0, 2.0, 3.0];
    let pred = [1.0, 2.0, 4.0];
    let e: Vec<f64> = pred.iter().zip(&truth).map(|(p, t)| p - t).collect();
    let r = rmse(&e);
    assert!((r - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert!((nrmse(r, &truth).unwrap() - 28.867513459481287).abs() < 1e-9);
    assert_eq!(nrmse(1.0, &[2.0, 2.0]), None);
    assert_eq!(reduction(2.0, 0.0), 100.0);
    assert_eq!(reduction(2.0, 2.0), 0.0);
}

#[test]
fn formulas_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = rng.random_range(2..200);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-1.0..1.0)).collect();
        let noisy: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-2.0..2.0)).collect();
        let ep: Vec<f64> = pred.iter().zip(&truth).map(|(p, t)| p - t).collect();
        let en: Vec<f64> = noisy.iter().zip(&truth).map(|(p, t)| p - t).collect();
        let (rp, rn) = (oracle_rmse(&ep), oracle_rmse(&en));
        assert!((rmse(&ep) - rp).abs() < 1e-12);
        let (mut lo, mut hi) = (truth[0], truth[0]);
        for &v in &truth {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        assert!((nrmse(rp, &truth).unwrap() - 100.0 * rp / (hi - lo)).abs() < 1e-12);
        assert!((reduction(rn, rp) - 100.0 * (rn - rp) / rn).abs() < 1e-12);
    }
}

fn trajectory(seed: u64) -> (Scene, Trajectory) {
    let s = Scene::reference(64);
    let t = generate_trajectory(&s, &Placement::default(), &NoiseSpec::default(), 120, seed, 0).unwrap();
    (s, t)
}

#[test]
fn perfect_and_uncorrected_predictions() {
    let (s, t) = trajectory(3);
    let truth = PoseSeries::truth(&s.chain, &t).unwrap();
    let noisy = PoseSeries::noisy(&s.chain, &t).unwrap();
    let r = evaluate(std::slice::from_ref(&truth), std::slice::from_ref(&truth), std::slice::from_ref(&noisy), NrmseRange::Truth).unwrap();
    for g in &r.groups {
        assert!(g.rmse.iter().all(|m| m.mean == 0.0), "{:?}", g.group);
        assert!(g.reduction.iter().all(|m| m.mean == 100.0));
    }
    let r = evaluate(std::slice::from_ref(&noisy), std::slice::from_ref(&truth), std::slice::from_ref(&noisy), NrmseRange::Truth).unwrap();
    for g in &r.groups {
        assert!(g.reduction.iter().all(|m| m.mean == 0.0));
        assert!(g.rmse.iter().all(|m| m.mean > 0.0));
    }
    assert!(r.to_text().contains("reduction"));
    assert_eq!(r.to_csv().lines().count(), 1 + 4 * (4 + 4 + 5));
}

#[test]
fn group_errors_match_loops() {
    let (s, t) = trajectory(5);
    let truth = PoseSeries::truth(&s.chain, &t).unwrap();
    let noisy = PoseSeries::noisy(&s.chain, &t).unwrap();
    let m = trajectory_metrics(&noisy, &truth, &noisy, NrmseRange::Truth).unwrap();
    let n = truth.len();
    let mut sq = 0.0;
    for i in 0..n {
        let d = (noisy.ee[i].translation - truth.ee[i].translation) * 1000.0;
        sq += d.norm_squared();
    }
    let tr = m.group(Group::Translation);
    assert!((tr.rmse[3] - (sq / n as f64).sqrt()).abs() < 1e-9);
    let mut per_joint = [0.0; 4];
    for i in 0..n {
        for j in 0..4 {
            per_joint[j] += (noisy.joints[i][j] - truth.joints[i][j]).to_degrees().powi(2);
        }
    }
    let jm = m.group(Group::Joints);
    for j in 0..4 {
        assert!((jm.rmse[j] - (per_joint[j] / n as f64).sqrt()).abs() < 1e-9);
    }
    let overall = (per_joint.iter().sum::<f64>() / (4 * n) as f64).sqrt();
    assert!((jm.rmse[4] - overall).abs() < 1e-9);
}

#[test]
fn mean_std_across_trajectories() {
    let m = MeanStd::of(&[1.0, 2.0, 3.0]);
    assert_eq!(m.mean, 2.0);
    assert!((m.std - 1.0).abs() < 1e-15);
    assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
}
