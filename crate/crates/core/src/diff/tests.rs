use proptest::prelude::*;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn product_rule() {
    let tape = Tape::new();
    let x = tape.var(Tensor::scalar(3.0));
    let y = tape.var(Tensor::scalar(4.0));
    let z = x.mul(&y).unwrap();
    assert_eq!(z.item(), 12.0);
    let g = tape.backward(&z).unwrap();
    assert_eq!(g.wrt(&x).item(), Some(4.0));
    assert_eq!(g.wrt(&y).item(), Some(3.0));
}

#[test]
fn sigmoid_at_zero() {
    let tape = Tape::new();
    let x = tape.var(Tensor::scalar(0.0));
    let s = x.sigmoid();
    assert_eq!(s.item(), 0.5);
    assert_eq!(tape.backward(&s).unwrap().wrt(&x).item(), Some(0.25));
}

#[test]
fn sum_of_ones() {
    let tape = Tape::new();
    let a = tape.var(Tensor::ones(&[2, 2]));
    let s = a.sum();
    assert_eq!(s.item(), 4.0);
    assert_eq!(tape.backward(&s).unwrap().wrt(&a), Tensor::ones(&[2, 2]));
}

#[test]
fn squared_norm_gradient() {
    let tape = Tape::new();
    let x = tape.var(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let loss = x.mul(&x).unwrap().sum();
    assert_eq!(tape.backward(&loss).unwrap().wrt(&x).data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn constant_loss_has_no_gradients() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let loss = c.sum();
    assert!(tape.backward(&loss).unwrap().is_empty());
}

#[test]
fn sigmoid_of_product() {
    let tape = Tape::new();
    let w = tape.var(Tensor::scalar(1.0));
    let x = tape.constant(Tensor::scalar(2.0));
    let loss = w.mul(&x).unwrap().sigmoid();
    let gw = tape.backward(&loss).unwrap().wrt(&w).item().unwrap();
    let s2 = 1.0 / (1.0 + (-2.0f64).exp());
    assert!((gw - s2 * (1.0 - s2) * 2.0).abs() < 1e-15);
    assert!((gw - 0.209_987).abs() < 1e-6);
}

#[test]
fn fan_out_accumulates() {
    let tape = Tape::new();
    let x = tape.var(Tensor::scalar(1.7));
    let f = x.add(&x).unwrap();
    assert_eq!(tape.backward(&f).unwrap().wrt(&x).item(), Some(2.0));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let tape = Tape::new();
    let x = tape.var(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(&x), Err(DiffError::NonScalarLoss { .. })));
}

#[test]
fn shape_mismatch_names_op() {
    let tape = Tape::new();
    let a = tape.var(Tensor::zeros(&[2, 3]));
    let b = tape.var(Tensor::zeros(&[4, 5]));
    match a.matmul(&b) {
        Err(DiffError::Shape { op, shapes }) => {
            assert_eq!(op, "matmul");
            assert_eq!(shapes, vec![vec![2, 3], vec![4, 5]]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(a.add(&b), Err(DiffError::Shape { op: "add", .. })));
}

#[test]
fn gradient_check_square() {
    let r = finite_diff_check::<DiffError, _>(|_, x| Ok(x.mul(&x)?.sum()), &[3.0], 1e-5, 1e-6).unwrap();
    assert!((r.numeric[0] - 6.0).abs() < 1e-8);
    assert!(r.max_rel_error < 1e-9, "{r:?}");
    assert!(r.passed());
}

#[test]
fn gradient_check_flags_kink() {
    let r = finite_diff_check::<DiffError, _>(|_, x| Ok(x.abs().sum()), &[0.0], 1e-5, 1e-6).unwrap();
    assert_eq!(r.nonsmooth, vec![0]);
    assert!(!r.passed());
}

#[test]
fn gradient_check_quadratic_minimum_is_smooth() {
    let r = finite_diff_check::<DiffError, _>(|_, x| Ok(x.mul(&x)?.sum()), &[0.0, 1.0], 1e-4, 1e-6).unwrap();
    assert!(r.nonsmooth.is_empty(), "{r:?}");
}

#[test]
fn gradient_check_reports_non_finite_probe() {
    let err = finite_diff_check::<DiffError, _>(|_, x| Ok(x.log().sum()), &[1.0, 1e-7], 1e-5, 1e-6).unwrap_err();
    assert!(matches!(err, DiffError::NonFinite { coordinate: 1, .. }));
}

#[test]
fn independent_tapes_are_bit_identical() {
    let run = || {
        let tape = Tape::new();
        let w = tape.var(t(&[3, 4], &(0..12).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()));
        let x = tape.constant(t(&[2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]));
        let y = x.matmul(&w).unwrap().gelu().softmax().layer_norm(1e-5);
        let l = y.mul(&y).unwrap().sum();
        tape.backward(&l).unwrap().wrt(&w).into_data()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn slicing_concat_transpose_values() {
    let tape = Tape::new();
    let a = tape.var(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let s = a.slice(1, 1, 3).unwrap();
    assert_eq!(s.value().data(), &[2.0, 3.0, 5.0, 6.0]);
    let c = tape.concat(&[a, s], 1).unwrap();
    assert_eq!(c.shape(), vec![2, 5]);
    assert_eq!(c.value().data(), &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
    let tr = a.transpose(0, 1).unwrap();
    assert_eq!(tr.value().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    let g = tape.backward(&c.sum()).unwrap().wrt(&a);
    assert_eq!(g.data(), &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
}

#[test]
fn clamp_blocks_gradient_outside() {
    let tape = Tape::new();
    let x = tape.var(Tensor::vector(vec![-2.0, 0.5, 3.0]));
    let y = x.clamp(-1.0, 1.0);
    assert_eq!(y.value().data(), &[-1.0, 0.5, 1.0]);
    assert_eq!(tape.backward(&y.sum()).unwrap().wrt(&x).data(), &[0.0, 1.0, 0.0]);
}

/// Weighted sum of `op(x)` so every output element matters.
fn check_unary(
    x: Vec<f64>,
    op: impl for<'t> Fn(Var<'t>) -> Result<Var<'t>, DiffError>,
) -> Result<(), TestCaseError> {
    let r = finite_diff_check::<DiffError, _>(
        |tape, v| {
            let y = op(v)?;
            let n = y.value().len();
            let weights = (0..n).map(|i| 0.5 + (i as f64 * 0.913).sin()).collect();
            let w = tape.constant(Tensor::vector(weights));
            Ok(y.reshape(&[n])?.mul(&w)?.sum())
        },
        &x,
        1e-5,
        1e-6,
    )
    .unwrap();
    prop_assert!(r.within_tolerance(), "{:?}", r);
    Ok(())
}

fn vec_in(lo: f64, hi: f64, n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_primitives_match_fd(x in vec_in(0.2, 2.0, 6)) {
        check_unary(x.clone(), |v| Ok(v.exp()))?;
        check_unary(x.clone(), |v| Ok(v.log()))?;
        check_unary(x.clone(), |v| Ok(v.sin()))?;
        check_unary(x.clone(), |v| Ok(v.cos()))?;
        check_unary(x.clone(), |v| Ok(v.sqrt()))?;
        check_unary(x.clone(), |v| Ok(v.powf(2.5)))?;
        check_unary(x.clone(), |v| Ok(v.sigmoid()))?;
        check_unary(x.clone(), |v| Ok(v.tanh()))?;
        check_unary(x.clone(), |v| Ok(v.relu()))?;
        check_unary(x.clone(), |v| Ok(v.gelu()))?;
        check_unary(x.clone(), |v| Ok(v.neg().abs()))?;
        check_unary(x.clone(), |v| Ok(v.clamp(0.0, 5.0)))?;
        check_unary(x, |v| Ok(v.add_scalar(1.5).mul_scalar(-2.0)))?;
    }

    #[test]
    fn binary_primitives_match_fd(x in vec_in(0.5, 2.0, 6)) {
        check_unary(x.clone(), |v| {
            let a = v.slice(0, 0, 3)?;
            let b = v.slice(0, 3, 6)?;
            let s = a.add(&b)?;
            let d = a.sub(&b)?;
            let m = a.mul(&b)?;
            let q = a.div(&b)?;
            v.tape().concat(&[s, d, m, q], 0)
        })?;
        check_unary(x, |v| {
            // Shift apart so min/max have no ties.
            let a = v.slice(0, 0, 3)?;
            let b = v.slice(0, 3, 6)?.add_scalar(10.0);
            let lo = a.min(&b)?;
            let hi = a.max(&b)?;
            v.tape().concat(&[lo, hi], 0)
        })?;
    }

    #[test]
    fn reductions_and_shape_ops_match_fd(x in vec_in(-1.5, 1.5, 12)) {
        check_unary(x.clone(), |v| {
            let m = v.reshape(&[3, 4])?;
            let s0 = m.sum_axis(0, false)?;
            let s1 = m.mean_axis(1, true)?.reshape(&[3])?;
            let tr = m.transpose(0, 1)?.slice(0, 1, 3)?.reshape(&[6])?;
            let b = v.slice(0, 0, 4)?.broadcast_to(&[2, 4])?.reshape(&[8])?;
            let tot = m.sum().reshape(&[1])?;
            let avg = m.mean().reshape(&[1])?;
            v.tape().concat(&[s0, s1, tr, b, tot, avg], 0)
        })?;
        check_unary(x.clone(), |v| v.reshape(&[3, 4]).map(|m| m.softmax()))?;
        check_unary(x.clone(), |v| v.reshape(&[2, 6]).map(|m| m.layer_norm(1e-5)))?;
        check_unary(x, |v| {
            let a = v.slice(0, 0, 6)?.reshape(&[2, 3])?;
            let b = v.slice(0, 6, 12)?.reshape(&[3, 2])?;
            let ab = a.matmul(&b)?.reshape(&[4])?;
            let a3 = v.reshape(&[2, 2, 3])?;
            let b3 = v.reshape(&[2, 3, 2])?;
            let batched = a3.matmul(&b3)?.reshape(&[8])?;
            v.tape().concat(&[ab, batched], 0)
        })?;
    }
}
