use super::*;
use crate::diff::finite_diff_check;
use crate::kinematics::EulerPose;
use crate::render::{default_sigma, MaskKind};
use crate::synth::{Dataset, DatasetManifest, NoiseSpec, Split};

fn tiny_vit(size: usize) -> VitConfig {
    VitConfig { image_size: size, embed_dim: 16, heads: 2, layers: 2, mlp_ratio: 2, head_hidden: vec![16], ..VitConfig::default() }
}

fn dataset(size: usize, trajectories: usize, frames: usize, seed: u64) -> Dataset {
    let scene = Scene::reference(size);
    let m = DatasetManifest::new(Split::Train, trajectories, frames, seed, scene.camera, NoiseSpec::default());
    Dataset::generate(m, scene).unwrap()
}

fn tiny_train_config(size: usize) -> TrainConfig {
    TrainConfig { epochs: 1, batch: 2, frames_per_epoch: Some(4), val_frames: Some(2), vit: tiny_vit(size), ..TrainConfig::for_image(size) }
}

#[test]
fn default_network_shapes() {
    let cfg = VitConfig::default();
    assert_eq!(cfg.patches(), 64);
    assert_eq!(cfg.patch_dim(), 128);
    let w = ModelWeights::init(cfg.clone(), 0).unwrap();
    w.validate().unwrap();
    assert!(w.param_count() > 200_000 && w.param_count() < 260_000, "{}", w.param_count());

    let data = dataset(64, 1, 2, 1);
    let f = &data.trajectories[0].frames[0];
    let c = Corrector { weights: w, space: CorrectionSpace::for_chain(&data.scene.chain) };
    let input = CorrectorInput { observed: &f.mask, uncorrected: &f.mask, theta_noisy: parametrize(&f.base_noisy, &f.q_noisy) };
    let tape = Tape::new();
    let p = c.weights.bind(&tape, false);
    let raw = c.raw(&tape, &p, &input).unwrap();
    assert_eq!(raw.shape(), [CORRECTION_DIM]);
    // The output layer starts at zero: no correction before training.
    assert!(raw.value().data().iter().all(|v| *v == 0.0));
    // Noisy joints past a limit are still clamped.
    let th = input.theta_noisy;
    let sp = &c.space;
    let expected: [f64; CORRECTION_DIM] =
        std::array::from_fn(|i| if i < 6 { th[i] } else { th[i].clamp(sp.joint_lower[i - 6], sp.joint_upper[i - 6]) });
    assert_eq!(c.infer(&input).unwrap(), expected);
}

#[test]
fn bad_configs_rejected() {
    assert!(VitConfig { patch_size: 7, ..VitConfig::default() }.validate().is_err());
    assert!(VitConfig { heads: 3, ..VitConfig::default() }.validate().is_err());
    assert!(VitConfig { head_hidden: vec![0], ..VitConfig::default() }.validate().is_err());
}

#[test]
fn patchify_layout() {
    let mut a = SilhouetteImage::zeros(16, 16, MaskKind::Hard);
    let b = SilhouetteImage::zeros(16, 16, MaskKind::Hard);
    // Pixel (9, 2) lies in patch (1, 0) at row 2, column 1.
    a.pixels[2 * 16 + 9] = 1.0;
    let t = patchify(&[&a, &b], 8).unwrap();
    assert_eq!(t.shape(), [4, 128]);
    let hot: Vec<usize> = t.data().iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
    assert_eq!(hot, vec![128 + 2 * 8 + 1]);
    assert!(patchify(&[&a], 5).is_err());
}

#[test]
fn tokens_are_permutation_equivariant_without_positions() {
    // With zero positional embeddings the class token output cannot depend on
    // patch order.
    let cfg = tiny_vit(16);
    let mut w = ModelWeights::init(cfg.clone(), 3).unwrap();
    w.tensors.get_mut("pos").unwrap().data_mut().fill(0.0);
    for (i, v) in w.tensors.get_mut("head1.w").unwrap().data_mut().iter_mut().enumerate() {
        *v = ((i * 13) % 7) as f64 / 70.0 - 0.05;
    }
    let n = cfg.patches();
    let dim = cfg.patch_dim();
    let data: Vec<f64> = (0..n * dim).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
    let mut rev = Vec::with_capacity(data.len());
    for r in (0..n).rev() {
        rev.extend_from_slice(&data[r * dim..(r + 1) * dim]);
    }
    let run = |d: Vec<f64>| {
        let tape = Tape::new();
        let p = w.bind(&tape, false);
        let x = tape.constant(Tensor::new(&[n, dim], d).unwrap());
        let th = tape.constant(Tensor::vector(vec![0.1; cfg.params]));
        forward(&cfg, &p, &x, &th).unwrap().value().data().to_vec()
    };
    let (a, b) = (run(data), run(rev));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn correction_bounds_and_zero_point() {
    let chain = crate::kinematics::KinematicChain::reference();
    let space = CorrectionSpace::for_chain(&chain);
    assert!((space.k[0] - 10f64.to_radians()).abs() < 1e-15);
    assert_eq!(space.k[4], 0.020);
    assert!((space.k[6] - 0.25 * chain.joints[3].range()).abs() < 1e-15);

    let theta = [0.1, 0.2, -0.1, 0.01, 0.02, 0.03, 0.0, 0.1, -0.1, 0.05];
    assert_eq!(apply_correction(&[0.0; 10], &theta, &space), theta);
    let big = apply_correction(&[50.0; 10], &theta, &space);
    let small = apply_correction(&[-50.0; 10], &theta, &space);
    for i in 0..6 {
        assert!((big[i] - theta[i] - space.k[i]).abs() < 1e-12);
        assert!((small[i] - theta[i] + space.k[i]).abs() < 1e-12);
    }
    // A correction past a limit is clamped.
    let edge = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, space.joint_upper[0] - 0.01, 0.0, 0.0, 0.0];
    assert_eq!(apply_correction(&[50.0; 10], &edge, &space)[6], space.joint_upper[0]);

    let literal = CorrectionSpace { squash: Squash::Literal, ..space.clone() };
    let l = apply_correction(&[0.0; 10], &theta, &literal);
    assert!((l[3] - theta[3] - 0.5 * literal.k[3]).abs() < 1e-15);

    let tape = Tape::new();
    let raw = tape.constant(Tensor::vector(vec![0.3, -0.2, 1.0, 0.0, 2.0, -3.0, 0.5, -0.5, 4.0, -4.0]));
    let d = apply_correction_diff(&raw, &edge, &space).unwrap().value();
    let raw: [f64; 10] = raw.value().data().try_into().unwrap();
    for (a, b) in d.data().iter().zip(apply_correction(&raw, &edge, &space)) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn parametrize_round_trips() {
    let pose = EulerPose::new([0.2, 0.9, -0.1], [-0.1, 0.01, 0.05]);
    let q = [0.1, -0.2, 0.12, 0.3, 0.4, -0.5, 0.6];
    let th = parametrize(&pose.to_transform(), &q);
    for i in 0..6 {
        assert!((th[i] - pose.to_vec6()[i]).abs() < 1e-12);
    }
    assert_eq!(th[6..], q[3..]);
}

#[test]
fn corrected_render_matches_scene() {
    let data = dataset(64, 1, 3, 4);
    let sigma = default_sigma(64);
    for f in &data.trajectories[0].frames {
        let tape = Tape::new();
        // True parameters, but the first three joints from the noisy reading.
        let mut q = f.q_true.clone();
        q[..3].copy_from_slice(&f.q_noisy[..3]);
        let th = tape.constant(Tensor::vector(parametrize(&f.base_true, &q).to_vec()));
        let (mask, kp) = render_corrected(&data.scene, &th, &f.q_noisy, sigma).unwrap();
        let soft = data.scene.render_soft(&f.base_true, &q, sigma).unwrap();
        let m = mask.value();
        for (a, b) in m.data().iter().zip(soft.to_f64()) {
            assert!((a - b).abs() < 1e-5);
        }
        let expect = data.scene.keypoints_2d(&f.base_true, &q).unwrap();
        for (i, (k, _)) in expect.iter().enumerate() {
            assert!((kp.value().data()[i] - k.x).abs() < 1e-9);
            assert!((kp.value().data()[6 + i] - k.y).abs() < 1e-9);
        }
    }
}

#[test]
fn loss_oracles() {
    let tape = Tape::new();
    let ones = tape.constant(Tensor::ones(&[64, 64]));
    let zeros = SilhouetteImage::zeros(64, 64, MaskKind::Hard);
    assert_eq!(loss_render(&ones, &zeros).unwrap().item(), 4096.0);

    let p = tape.constant(Tensor::new(&[2, 1], vec![13.0, 24.0]).unwrap());
    assert_eq!(loss_keypoints(&p, &[Keypoint2D { x: 10.0, y: 20.0 }]).unwrap().item(), 25.0);

    let q = tape.constant(Tensor::vector(vec![0.1, 0.0, 0.0, 0.0]));
    assert!((loss_joint(&q, &[0.0; 4]).unwrap().item() - 0.01).abs() < 1e-15);

    let w = LossWeights::for_image(64, 64);
    assert_eq!(w, LossWeights { alpha: 1000.0 / 4096.0, beta: 0.05, gamma: 500.0 });
    let total = loss_total(&w, &tape.scalar(4096.0), &tape.scalar(25.0), &tape.scalar(0.01)).unwrap();
    assert!((total.item() - (1000.0 + 1.25 + 5.0)).abs() < 1e-12);
}

#[test]
fn loss_gradient_wrt_raw_matches_differences() {
    let data = dataset(64, 1, 3, 9);
    let space = CorrectionSpace::for_chain(&data.scene.chain);
    let w = LossWeights::for_image(64, 64);
    let sigma = default_sigma(64);
    for f in &data.trajectories[0].frames {
        let theta = parametrize(&f.base_noisy, &f.q_noisy);
        let vis = &f.q_true[3..7];
        let report = finite_diff_check::<Error, _>(
            |_, raw| {
                let th = apply_correction_diff(&raw, &theta, &space)?;
                let (mask, kp) = render_corrected(&data.scene, &th, &f.q_noisy, sigma)?;
                let lr = loss_render(&mask, &f.mask)?;
                let lk = loss_keypoints(&kp, &f.keypoints)?;
                let lj = loss_joint(&th.slice(0, 6, 10)?, vis)?;
                loss_total(&w, &lr, &lk, &lj)
            },
            &[0.1, -0.2, 0.05, 0.3, -0.1, 0.2, 0.0, 0.1, -0.1, 0.2],
            1e-4,
            1e-3,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.rel_errors);
    }
}

#[test]
fn weights_round_trip() {
    let chain = crate::kinematics::KinematicChain::reference();
    let mut c = Corrector { weights: ModelWeights::init(tiny_vit(32), 5).unwrap(), space: CorrectionSpace::for_chain(&chain) };
    c.space.squash = Squash::Literal;
    // Storage is single precision.
    for t in c.weights.tensors.values_mut() {
        for v in t.data_mut() {
            *v = *v as f32 as f64;
        }
    }
    let mut buf = Vec::new();
    write_weights(&mut buf, &c).unwrap();
    assert_eq!(&buf[..4], SGWT_MAGIC);
    assert_eq!(read_weights(buf.as_slice()).unwrap(), c);

    assert!(read_weights(&buf[..buf.len() - 3]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_weights(bad.as_slice()).unwrap_err().to_string().contains("magic"));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.sgwt");
    assert!(load_weights(&missing).unwrap_err().to_string().contains("none.sgwt"));
    let p = dir.path().join("m.sgwt");
    std::fs::write(&p, &buf[..20]).unwrap();
    assert!(load_weights(&p).unwrap_err().to_string().contains("m.sgwt"));
}

#[test]
fn adam_first_step_is_lr_sized() {
    let mut params = std::collections::BTreeMap::from([("w".to_string(), Tensor::vector(vec![1.0, -2.0]))]);
    let grads = std::collections::BTreeMap::from([("w".to_string(), Tensor::vector(vec![0.5, -3.0]))]);
    let mut adam = Adam::new(0.1, 0.0);
    adam.step(&mut params, &grads);
    let w = params["w"].data();
    assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 1.9).abs() < 1e-6, "{w:?}");

    // Weight decay alone pulls toward zero.
    let zero = std::collections::BTreeMap::from([("w".to_string(), Tensor::vector(vec![0.0, 0.0]))]);
    let mut decay = Adam::new(0.1, 1e-4);
    decay.step(&mut params, &zero);
    assert!(params["w"].data()[0] < 0.9 && params["w"].data()[1] > -1.9);
}

#[test]
fn epoch_frames_shuffle_is_seeded() {
    let data = dataset(32, 2, 3, 2);
    let a = epoch_frames(&data, None, 7, 1);
    assert_eq!(a.len(), 6);
    assert_eq!(a, epoch_frames(&data, None, 7, 1));
    assert_ne!(a, epoch_frames(&data, None, 7, 2));
    assert_eq!(epoch_frames(&data, Some(4), 7, 1), a[..4]);
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let data = dataset(32, 1, 4, 3);
    let cfg = TrainConfig { lr: 0.0, weight_decay: 0.0, ..tiny_train_config(32) };
    let out = train(&data, &data, &cfg, None).unwrap();
    let init = ModelWeights::init(cfg.vit.clone(), cfg.seed).unwrap();
    assert_eq!(out.last.weights, init);
    assert_eq!(out.log.len(), 2);
    assert!(out.log[0].train.is_none());
}

#[test]
fn training_is_reproducible_and_writes_artifacts() {
    let data = dataset(32, 1, 4, 3);
    let cfg = tiny_train_config(32);
    let dir = tempfile::tempdir().unwrap();
    let a = train(&data, &data, &cfg, Some(dir.path())).unwrap();
    let b = train(&data, &data, &cfg, None).unwrap();
    assert_eq!(a.log[1].train, b.log[1].train);
    assert_eq!(a.last.weights, b.last.weights);
    assert_ne!(a.last.weights, ModelWeights::init(cfg.vit.clone(), cfg.seed).unwrap());
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,"));
    let saved = load_weights(&dir.path().join(MODEL_FILE)).unwrap();
    assert_eq!(saved.weights.config, cfg.vit);
}

#[test]
fn joint_term_alone_is_learnable() {
    // With only the joint loss active the network should quickly learn to
    // reduce it on its training frames.
    let data = dataset(32, 1, 4, 6);
    let cfg = TrainConfig {
        epochs: 15,
        batch: 4,
        lr: 3e-3,
        frames_per_epoch: None,
        val_frames: None,
        loss: LossWeights { alpha: 0.0, beta: 0.0, gamma: 500.0 },
        ..tiny_train_config(32)
    };
    let out = train(&data, &data, &cfg, None).unwrap();
    let first = out.log[0].val.joint;
    let best = out.log.iter().map(|e| e.val.joint).fold(f64::INFINITY, f64::min);
    assert!(best < 0.5 * first, "{first} -> {best}");
}

#[test]
fn mismatched_image_size_is_rejected() {
    let data = dataset(32, 1, 2, 3);
    let cfg = TrainConfig { vit: tiny_vit(64), ..tiny_train_config(32) };
    assert!(train(&data, &data, &cfg, None).unwrap_err().to_string().contains("32x32"));
}

#[test]
fn non_finite_loss_names_the_frame() {
    let mut data = dataset(32, 1, 2, 3);
    data.trajectories[0].frames[1].keypoints[0].x = f64::NAN;
    let cfg = TrainConfig { val_frames: None, ..tiny_train_config(32) };
    let err = train(&data, &data, &cfg, None).unwrap_err().to_string();
    assert!(err.contains("trajectory 0 frame 1"), "{err}");
}
