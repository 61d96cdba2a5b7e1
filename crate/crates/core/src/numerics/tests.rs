use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_examples() {
    let i2 = Tensor::<f64>::eye(2).unwrap();
    assert_eq!(matmul(&i2, &i2).unwrap(), i2);
    let a = t(&[2, 2], &[1., 2., 3., 4.]);
    let b = t(&[2, 1], &[0., 1.]);
    assert_eq!(matmul(&a, &b).unwrap(), t(&[2, 1], &[2., 4.]));
    let z = Tensor::<f64>::zeros([3, 5]).unwrap();
    let any = random(&mut ChaCha8Rng::seed_from_u64(1), &[5, 2]);
    assert_eq!(matmul(&z, &any).unwrap(), Tensor::zeros([3, 2]).unwrap());
}

#[test]
fn matmul_mismatch_names_both_shapes() {
    let a = Tensor::<f64>::zeros([2, 3]).unwrap();
    let b = Tensor::<f64>::zeros([4, 2]).unwrap();
    let err = matmul(&a, &b).unwrap_err();
    assert_eq!(
        err,
        NumericsError::ShapeMismatch { op: "matmul", left: vec![2, 3], right: vec![4, 2] }
    );
    let msg = alloc::format!("{err}");
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn tensor_rejects_bad_shapes() {
    assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
}

#[test]
fn masked_softmax_examples() {
    let all = Tensor::filled([1, 3], true).unwrap();
    let y = masked_softmax(&t(&[1, 3], &[0., 0., 0.]), &all).unwrap();
    for &v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let m = Tensor::new([1, 3], vec![true, true, false]).unwrap();
    let y = masked_softmax(&t(&[1, 3], &[5., 5., f64::NEG_INFINITY]), &m).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5, 0.0]);
    let y = masked_softmax(&t(&[1, 3], &[1., 2., 3.]), &all).unwrap();
    for (v, e) in y.data().iter().zip([0.0900, 0.2447, 0.6652]) {
        assert!((v - e).abs() < 1e-4);
    }
}

#[test]
fn masked_softmax_rejects_fully_masked_row() {
    let m = Tensor::new([2, 2], vec![true, false, false, false]).unwrap();
    let err = masked_softmax(&t(&[2, 2], &[1., 2., 3., 4.]), &m).unwrap_err();
    assert_eq!(err, NumericsError::FullyMaskedRow { row: 1 });
}

#[test]
fn layer_norm_examples() {
    let ones = t(&[2], &[1., 1.]);
    let zeros = t(&[2], &[0., 0.]);
    let y = layer_norm(&t(&[1, 2], &[4., 4.]), &ones, &zeros, LAYER_NORM_EPS).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0]);
    let y = layer_norm(&t(&[1, 2], &[1., 3.]), &ones, &zeros, 1e-12).unwrap();
    assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    let b = t(&[2], &[0.25, -3.0]);
    let y = layer_norm(&t(&[3, 2], &[1., 7., -2., 0.5, 9., 9.]), &zeros, &b, LAYER_NORM_EPS).unwrap();
    for row in y.data().chunks(2) {
        assert_eq!(row, b.data());
    }
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.var(t(&[2, 2], &[1., -2., 3., 0.5]));
    let s = tape.sum(x).unwrap();
    assert_eq!(tape.backward(s).unwrap().wrt(x), Tensor::ones([2, 2]).unwrap());

    let mut tape = Tape::new();
    let x = tape.var(t(&[2], &[1., 2.]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    assert_eq!(tape.backward(s).unwrap().wrt(x).data(), &[2.0, 4.0]);

    let mut tape = Tape::new();
    let x = tape.var(t(&[2], &[1., 2.]));
    let c = tape.constant(t(&[3], &[1., 2., 3.]));
    let s = tape.sum(c).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x), Tensor::zeros([2]).unwrap());
    assert!(g.get(c).is_none());
}

#[test]
fn backward_errors() {
    let mut other = Tape::<f64>::new();
    let foreign = other.var(Tensor::scalar(1.0));
    let mut tape = Tape::<f64>::new();
    let x = tape.var(t(&[2], &[1., 2.]));
    assert_eq!(tape.backward(foreign).unwrap_err(), NumericsError::NotOnTape);
    assert!(matches!(tape.backward(x), Err(NumericsError::NotScalar { .. })));
}

#[test]
fn replay_reproduces_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let a = tape.var(random(&mut rng, &[3, 4]));
    let b = tape.var(random(&mut rng, &[4, 2]));
    let g = tape.var(random(&mut rng, &[2]));
    let z = tape.constant(random(&mut rng, &[2]));
    let m = tape.matmul(a, b).unwrap();
    let n = tape.layer_norm(m, g, z, 1e-6).unwrap();
    let e = tape.gelu(n).unwrap();
    let s = tape.mean(e).unwrap();
    let values = tape.replay().unwrap();
    assert_eq!(values[s.index()], *tape.value(s));
    assert_eq!(values[n.index()], *tape.value(n));
}

#[test]
fn fd_check_linear_is_exact() {
    let x = random(&mut ChaCha8Rng::seed_from_u64(5), &[3, 3]);
    let err = finite_difference_check(|tp, v| tp.sum(v), &x, 1e-5).unwrap();
    assert!(err <= 1e-10, "{err}");
}

fn softmax_pick(tp: &mut Tape<f64>, v: Var) -> Result<Var, NumericsError> {
    let mask = Arc::new(Tensor::new([2, 4], vec![true, true, false, true, true, true, true, true]).unwrap());
    let y = tp.masked_softmax(v, mask)?;
    let p = tp.pick(y, &[1, 2])?;
    let w = tp.constant(Tensor::from_f64([2], &[1.5, -0.7])?);
    let pw = tp.mul(p, w)?;
    tp.sum(pw)
}

#[test]
fn fd_check_masked_softmax_pick() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let x = random(&mut rng, &[2, 4]);
        let err = finite_difference_check(softmax_pick, &x, 1e-5).unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}

#[test]
fn fd_check_detects_corrupted_gradient() {
    let x = random(&mut ChaCha8Rng::seed_from_u64(9), &[2, 4]);
    let ad = analytic_gradient(&softmax_pick, &x).unwrap();
    let fd = numeric_gradient(&softmax_pick, &x, 1e-5).unwrap();
    let mut corrupted = ad.data().to_vec();
    corrupted[3] += 0.1;
    let corrupted = Tensor::new(ad.shape().to_vec(), corrupted).unwrap();
    assert!(max_relative_error(&corrupted, &fd).unwrap() >= 0.05);
}

#[test]
fn fd_check_rejects_non_finite() {
    let x = t(&[2], &[0.0, 1.0]);
    let err = finite_difference_check(
        |tp, v| {
            let l = tp.ln(v)?;
            tp.sum(l)
        },
        &x,
        1e-5,
    );
    assert_eq!(err.unwrap_err(), NumericsError::NonFinite);
}

type Case = (&'static str, &'static [usize], fn(&mut Tape<f64>, Var) -> Result<Var, NumericsError>);

fn weighted_sum(tp: &mut Tape<f64>, v: Var) -> Result<Var, NumericsError> {
    let n = tp.value(v).numel();
    let shape = tp.value(v).shape().to_vec();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64 - 0.05 * (i * i % 7) as f64).collect();
    let w = tp.constant(Tensor::new(shape, w)?);
    let p = tp.mul(v, w)?;
    tp.sum(p)
}

/// Every differentiable tape op, each wrapped into a scalar function of one input.
fn op_cases() -> Vec<Case> {
    vec![
        ("matmul_left", &[2, 3], |tp, v| {
            let b = tp.constant(Tensor::from_f64([3, 2], &[0.5, -1., 2., 0.3, -0.7, 1.1])?);
            let m = tp.matmul(v, b)?;
            weighted_sum(tp, m)
        }),
        ("matmul_right", &[3, 2], |tp, v| {
            let a = tp.constant(Tensor::from_f64([2, 3], &[0.5, -1., 2., 0.3, -0.7, 1.1])?);
            let m = tp.matmul(a, v)?;
            weighted_sum(tp, m)
        }),
        ("transpose", &[2, 3], |tp, v| {
            let m = tp.transpose(v)?;
            weighted_sum(tp, m)
        }),
        ("add_sub_mul", &[2, 2], |tp, v| {
            let a = tp.add(v, v)?;
            let b = tp.mul(a, v)?;
            let c = tp.sub(b, v)?;
            weighted_sum(tp, c)
        }),
        ("minimum", &[4], |tp, v| {
            let c = tp.constant(Tensor::from_f64([4], &[0.05, -0.5, 0.9, -0.2])?);
            let m = tp.minimum(v, c)?;
            weighted_sum(tp, m)
        }),
        ("add_row_mul_row", &[3], |tp, v| {
            let x = tp.constant(Tensor::from_f64([2, 3], &[0.5, -1., 2., 0.3, -0.7, 1.1])?);
            let a = tp.add_row(x, v)?;
            let b = tp.mul_row(a, v)?;
            weighted_sum(tp, b)
        }),
        ("scale_add_scalar", &[3], |tp, v| {
            let a = tp.scale(v, -2.5)?;
            let b = tp.add_scalar(a, 0.75)?;
            let c = tp.mul(b, v)?;
            weighted_sum(tp, c)
        }),
        ("clamp", &[4], |tp, v| {
            let c = tp.clamp(v, -0.4, 0.4)?;
            let d = tp.mul(c, v)?;
            weighted_sum(tp, d)
        }),
        ("exp_ln", &[3], |tp, v| {
            let e = tp.exp(v)?;
            let a = tp.add_scalar(e, 1.0)?;
            let l = tp.ln(a)?;
            weighted_sum(tp, l)
        }),
        ("tanh_gelu", &[4], |tp, v| {
            let a = tp.tanh(v)?;
            let b = tp.gelu(v)?;
            let c = tp.mul(a, b)?;
            weighted_sum(tp, c)
        }),
        ("mean", &[2, 3], |tp, v| {
            let sq = tp.mul(v, v)?;
            tp.mean(sq)
        }),
        ("masked_softmax", &[2, 4], softmax_pick),
        ("log_softmax", &[3, 4], |tp, v| {
            let l = tp.log_softmax(v)?;
            let p = tp.pick(l, &[0, 3, 1])?;
            weighted_sum(tp, p)
        }),
        ("layer_norm", &[3, 4], |tp, v| {
            let g = tp.constant(Tensor::from_f64([4], &[1.0, 0.5, -1.2, 2.0])?);
            let b = tp.constant(Tensor::from_f64([4], &[0.1, 0.0, -0.3, 0.2])?);
            let y = tp.layer_norm(v, g, b, 1e-6)?;
            weighted_sum(tp, y)
        }),
        ("layer_norm_affine", &[4], |tp, v| {
            let x = tp.constant(Tensor::from_f64([2, 4], &[0.5, -1., 2., 0.3, -0.7, 1.1, 0.2, 0.9])?);
            let y = tp.layer_norm(x, v, v, 1e-6)?;
            weighted_sum(tp, y)
        }),
        ("gather_concat_reshape", &[2, 3], |tp, v| {
            let r = tp.slice_rows(v, 1, 1)?;
            let c = tp.slice_cols(v, 0, 2)?;
            let cr = tp.reshape(c, [2, 2])?;
            let h = tp.concat(&[v, r], 0)?;
            let w = tp.concat(&[v, cr], 1)?;
            let a = weighted_sum(tp, h)?;
            let b = weighted_sum(tp, w)?;
            let s = tp.mul(a, b)?;
            tp.sum(s)
        }),
    ]
}

#[test]
fn fd_check_every_op_ten_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, shape, f) in op_cases() {
        for _ in 0..10 {
            let x = random(&mut rng, shape);
            let err = finite_difference_check(f, &x, 1e-5).unwrap();
            assert!(err <= 1e-4, "{name}: {err}");
        }
    }
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random(&mut rng, &[8, 16]);
        let b = random(&mut rng, &[16, 8]);
        let m = matmul(&a, &b).unwrap();
        let all = Tensor::filled([8, 8], true).unwrap();
        masked_softmax(&m, &all).unwrap()
    };
    assert_eq!(run().data(), run().data());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(
        logits in proptest::collection::vec(-20.0f64..20.0, 12),
        mask_bits in proptest::collection::vec(any::<bool>(), 12),
    ) {
        let mut mask = mask_bits.clone();
        for r in 0..3 {
            mask[r * 4] = true;
        }
        let x = Tensor::new([3, 4], logits).unwrap();
        let m = Tensor::new([3, 4], mask.clone()).unwrap();
        let y = masked_softmax(&x, &m).unwrap();
        for r in 0..3 {
            let mut s = 0.0;
            for c in 0..4 {
                let v = y.at(r, c);
                if mask[r * 4 + c] { prop_assert!(v > 0.0); s += v; } else { prop_assert_eq!(v, 0.0); }
            }
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[4, 4]);
        let b = random(&mut rng, &[4, 4]);
        let c = random(&mut rng, &[4, 4]);
        let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(l.max_abs_diff(&r).unwrap() <= 1e-9);
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut params = vec![Tensor::<f64>::from_f64([2], &[3.0, -2.0]).unwrap()];
    let mut opt = Adam::new(0.1);
    for _ in 0..500 {
        let mut tape = Tape::new();
        let x = tape.var(params[0].clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap().wrt(x);
        opt.step(&mut params, &[g]).unwrap();
    }
    assert!(params[0].data().iter().all(|v| v.abs() < 1e-2));
}
