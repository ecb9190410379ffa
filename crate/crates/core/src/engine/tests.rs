use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck;
use super::*;
use crate::error::Error;

fn t(shape: &[usize], vals: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), vals).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    t(shape, &v)
}

fn linear_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (rows, m, p) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    let mut out = vec![0.0; rows * p];
    for i in 0..rows {
        for j in 0..p {
            let mut acc = b.values()[j];
            for k in 0..m {
                acc += x.values()[i * m + k] * w.values()[k * p + j];
            }
            out[i * p + j] = acc;
        }
    }
    out
}

fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let [b, c, h, w] = x.shape().try_into().unwrap();
    let o = k.shape()[0];
    let oh = (h + 2 * pad - 3) / stride + 1;
    let ow = (w + 2 * pad - 3) / stride + 1;
    let mut out = vec![0.0; b * o * oh * ow];
    for bi in 0..b {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((bi * c + ci) * h + iy as usize) * w + ix as usize;
                                let ki = ((oi * c + ci) * 3 + ky) * 3 + kx;
                                acc += x.values()[xi] * k.values()[ki];
                            }
                        }
                    }
                    out[((bi * o + oi) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

fn mse_oracle(p: &Tensor<f64>, q: &Tensor<f64>) -> f64 {
    let b = p.shape()[0];
    let d = p.shape()[1];
    let mut total = 0.0;
    for i in 0..b {
        let mut row = 0.0;
        for j in 0..d {
            let diff = p.values()[i * d + j] - q.values()[i * d + j];
            row += diff * diff;
        }
        total += row;
    }
    total / b as f64
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn linear_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let w = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = tape.constant(t(&[2], &[0.0, 0.0]));
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).values(), &[1.0, 2.0]);

    let w0 = tape.constant(t(&[2, 2], &[0.0; 4]));
    let b1 = tape.constant(t(&[2], &[3.0, 4.0]));
    let y = tape.linear(x, w0, Some(b1)).unwrap();
    assert_eq!(tape.value(y).values(), &[3.0, 4.0]);
}

#[test]
fn linear_shape_mismatch_reports_both_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
    let w = tape.constant(t(&[2, 2], &[0.0; 4]));
    let err = tape.linear(x, w, None).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn linear_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[3, 4]);
    let w = rand_tensor(&mut rng, &[4, 2]);
    let b = rand_tensor(&mut rng, &[2]);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.linear(xv, wv, Some(bv)).unwrap();
    assert!(max_abs_diff(tape.value(y).values(), &linear_oracle(&x, &w, &b)) < 1e-12);
}

#[test]
fn conv_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 3, 3], &[1.0; 9]));
    let k = tape.constant(t(&[1, 1, 3, 3], &[1.0; 9]));
    let y = tape.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
    assert_eq!(tape.value(y).values(), &[9.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = rand_tensor(&mut rng, &[2, 1, 4, 5]);
    let mut ident = vec![0.0; 9];
    ident[4] = 1.0;
    let x = tape.constant(img.clone());
    let k = tape.constant(t(&[1, 1, 3, 3], &ident));
    let y = tape.conv2d(x, k, None, 1, 1).unwrap();
    assert_eq!(tape.value(y).values(), img.values());
}

#[test]
fn conv_rejects_empty_output() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 2, 2], &[1.0; 4]));
    let k = tape.constant(t(&[1, 1, 3, 3], &[1.0; 9]));
    assert!(matches!(tape.conv2d(x, k, None, 1, 0), Err(Error::Dimension(_))));
    assert!(matches!(tape.conv2d(x, k, None, 0, 1), Err(Error::Dimension(_))));
    assert!(matches!(tape.conv2d(x, k, None, 1, 2), Err(Error::Dimension(_))));
}

#[test]
fn conv_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[2, 3, 8, 8]);
    let k = rand_tensor(&mut rng, &[4, 3, 3, 3]);
    for (stride, pad) in [(1, 0), (1, 1), (2, 0), (2, 1), (3, 1)] {
        let mut tape = Tape::new();
        let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
        let y = tape.conv2d(xv, kv, None, stride, pad).unwrap();
        let oracle = conv_oracle(&x, &k, stride, pad);
        assert!(max_abs_diff(tape.value(y).values(), &oracle) < 1e-12, "stride {stride} pad {pad}");
    }
}

#[test]
fn elementwise_and_pooling_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).values(), &[0.0, 0.0, 2.0]);

    let seq = tape.constant(t(&[2, 3, 2], &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0, 4.0, 0.5, 4.0, 0.5, 4.0, 0.5]));
    let pooled = tape.mean_pool(seq, None).unwrap();
    assert_eq!(tape.value(pooled).values(), &[1.5, -2.0, 4.0, 0.5]);

    let masked = tape.mean_pool(seq, Some(vec![false; 6]));
    assert!(matches!(masked, Err(Error::Dimension(_))));
}

#[test]
fn single_position_attention_is_value_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[3, 1, 4]);
    let w: Vec<_> = (0..3).map(|_| rand_tensor(&mut rng, &[4, 4])).collect();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let ws: Vec<Var> = w.iter().map(|m| tape.constant(m.clone())).collect();
    let out = tape.attention(xv, ws[0], ws[1], ws[2], None).unwrap();
    let flat = x.reshaped(vec![3, 4]).unwrap();
    let expected = linear_oracle(&flat, &w[2], &Tensor::zeros(vec![4]));
    assert!(max_abs_diff(tape.value(out).values(), &expected) < 1e-12);
}

#[test]
fn empty_sequence_is_rejected() {
    let mut tape = Tape::new();
    let table = tape.constant(t(&[3, 2], &[0.0; 6]));
    assert!(matches!(tape.embedding(table, &[], 1, 0), Err(Error::Dimension(_))));
    let bad = tape.embedding(table, &[0, 3], 1, 2).unwrap_err();
    assert!(bad.to_string().contains("token id 3"));
}

#[test]
fn mse_examples() {
    let mut tape = Tape::new();
    let p = tape.constant(t(&[1, 2], &[1.0, 0.0]));
    let q = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let l = tape.mse(p, q).unwrap();
    assert_eq!(tape.value(l).values(), &[4.0]);
    let l = tape.mse(p, p).unwrap();
    assert_eq!(tape.value(l).values(), &[0.0]);
}

#[test]
fn mse_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = rand_tensor(&mut rng, &[5, 3]);
    let b = rand_tensor(&mut rng, &[5, 3]);
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let l = tape.mse(av, bv).unwrap();
    assert!((tape.value(l).values()[0] - mse_oracle(&a, &b)).abs() < 1e-12);
}

#[test]
fn square_gradient() {
    let mut tape = Tape::new();
    let w = tape.param(0, &t(&[1, 1], &[3.0]));
    let zero = tape.constant(t(&[1, 1], &[0.0]));
    let loss = tape.mse(w, zero).unwrap();
    assert_eq!(tape.value(loss).values(), &[9.0]);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(0).unwrap().values(), &[6.0]);
    // a second pass does not accumulate into the first
    let again = tape.backward(loss).unwrap();
    assert_eq!(again.get(0).unwrap().values(), &[6.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let w = tape.param(0, &t(&[2, 1], &[0.5, -0.5]));
    let y = tape.linear(x, w, None).unwrap();
    let target = tape.constant(t(&[2, 1], &[0.0, 1.0]));
    let loss = tape.mse(y, target).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.len(), 1);
    assert!(grads.get(0).is_some());
}

#[test]
fn backward_needs_recorded_scalar() {
    let mut tape = Tape::new();
    let w = tape.param(0, &t(&[1], &[1.0]));
    assert!(matches!(tape.backward(w), Err(Error::Usage(_))));
    let x = tape.param(1, &t(&[1, 2], &[1.0, 1.0]));
    let y = tape.relu(x).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
}

#[test]
fn gradients_fill_param_grad_fields() {
    let mut params = vec![t(&[1, 1], &[3.0]), t(&[2], &[1.0, 1.0])];
    let mut tape = Tape::new();
    let w = tape.param(0, &params[0]);
    let zero = tape.constant(t(&[1, 1], &[0.0]));
    let loss = tape.mse(w, zero).unwrap();
    let grads = tape.backward(loss).unwrap();
    grads.fill(&mut params).unwrap();
    assert_eq!(params[0].grad().unwrap(), &[6.0]);
    assert_eq!(params[1].grad().unwrap(), &[0.0, 0.0]);
}

#[test]
fn non_finite_outputs_are_errors() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::new(vec![1, 1], vec![3.0e38]).unwrap());
    let w = tape.constant(Tensor::new(vec![1, 1], vec![10.0]).unwrap());
    assert!(matches!(tape.linear(x, w, None), Err(Error::NonFinite(_))));
}

#[test]
fn finite_difference_suite_passes() {
    for check in gradcheck::run_suite(7).unwrap() {
        assert!(check.passed(), "{} rel error {}", check.op, check.max_rel_error);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mse_scales_quadratically(seed in any::<u64>(), a in -20.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rand_tensor(&mut rng, &[4, 3]);
        let q = rand_tensor(&mut rng, &[4, 3]);
        let mut tape = Tape::new();
        let (pv, qv) = (tape.constant(p.clone()), tape.constant(q.clone()));
        let base = tape.mse(pv, qv).unwrap();
        let ps = tape.constant(p.map(|v| a * v).unwrap());
        let qs = tape.constant(q.map(|v| a * v).unwrap());
        let scaled = tape.mse(ps, qs).unwrap();
        let lhs = tape.value(scaled).values()[0];
        let rhs = a * a * tape.value(base).values()[0];
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::new(vec![2, 2, 5, 5], (0..100).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
        let k = Tensor::<f32>::new(vec![3, 2, 3, 3], (0..54).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
            let y = tape.conv2d(xv, kv, None, 1, 1).unwrap();
            tape.value(y).values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
