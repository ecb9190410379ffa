//! Central finite-difference check of every differentiable operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct OpCheck {
    pub op: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Relative error between gradient vectors, `‖a − n‖ / max(‖a‖, ‖n‖)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

/// Compares backprop against central differences for a scalar function of
/// `inputs`. Every input is registered as a trainable leaf.
pub fn check_function(name: &str, inputs: &[Tensor<f64>], build: &Build<'_>) -> Result<OpCheck> {
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().enumerate().map(|(i, t)| tape.param(i, t)).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).values()[0])
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(i, t)).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut coordinates = 0;
    for (slot, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(slot) {
            Some(g) => g.values().to_vec(),
            None => vec![0.0; input.len()],
        };
        let mut numeric = Vec::with_capacity(input.len());
        let mut probe = inputs.to_vec();
        for i in 0..input.len() {
            let orig = input.values()[i];
            probe[slot].values_mut()[i] = orig + EPSILON;
            let up = eval(&probe)?;
            probe[slot].values_mut()[i] = orig - EPSILON;
            let down = eval(&probe)?;
            probe[slot].values_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * EPSILON));
        }
        coordinates += input.len();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(OpCheck {
        op: name.to_string(),
        max_rel_error: worst,
        coordinates,
    })
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape.to_vec(), &vals).expect("finite")
}

/// Values bounded away from zero so no coordinate sits on a relu kink.
fn random_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let vals: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_f64(shape.to_vec(), &vals).expect("finite")
}

/// Reduces any op output to a scalar through the distillation loss against
/// a fixed random target.
fn reduce(tape: &mut Tape<f64>, out: Var, target: &Tensor<f64>) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let rows = shape[0];
    let flat = tape.reshape(out, vec![rows, shape[1..].iter().product()])?;
    let t = tape.constant(target.reshaped(vec![rows, target.len() / rows])?);
    tape.mse(flat, t)
}

/// Runs the full suite in 64-bit mode.
pub fn run_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let tgt = random(&mut rng, &[3, 2]);
    let inputs = [
        random(&mut rng, &[3, 4]),
        random(&mut rng, &[4, 2]),
        random(&mut rng, &[2]),
    ];
    checks.push(check_function("linear", &inputs, &|t, v| {
        let out = t.linear(v[0], v[1], Some(v[2]))?;
        reduce(t, out, &tgt)
    })?);

    for (stride, pad, hw) in [(1usize, 1usize, 5usize), (2, 0, 6), (2, 1, 5)] {
        let out_hw = (hw + 2 * pad - 3) / stride + 1;
        let tgt = random(&mut rng, &[2, 3, out_hw, out_hw]);
        let inputs = [
            random(&mut rng, &[2, 2, hw, hw]),
            random(&mut rng, &[3, 2, 3, 3]),
            random(&mut rng, &[3]),
        ];
        let name = format!("conv2d(stride={stride},pad={pad})");
        checks.push(check_function(&name, &inputs, &|t, v| {
            let out = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            reduce(t, out, &tgt)
        })?);
    }

    let tgt = random(&mut rng, &[4, 5]);
    let inputs = [random_off_kink(&mut rng, &[4, 5])];
    checks.push(check_function("relu", &inputs, &|t, v| {
        let out = t.relu(v[0])?;
        reduce(t, out, &tgt)
    })?);

    let tgt = random(&mut rng, &[3, 4]);
    let inputs = [random(&mut rng, &[3, 4]), random(&mut rng, &[3, 4])];
    checks.push(check_function("add", &inputs, &|t, v| {
        let out = t.add(v[0], v[1])?;
        reduce(t, out, &tgt)
    })?);

    let tgt = random(&mut rng, &[2, 3]);
    let mask = vec![true, true, false, true, true, true, false, false];
    let inputs = [random(&mut rng, &[2, 4, 3])];
    checks.push(check_function("mean_pool", &inputs, &|t, v| {
        let out = t.mean_pool(v[0], Some(mask.clone()))?;
        reduce(t, out, &tgt)
    })?);

    let tgt = random(&mut rng, &[2, 3]);
    let inputs = [random(&mut rng, &[2, 3, 3, 2])];
    checks.push(check_function("global_avg_pool", &inputs, &|t, v| {
        let out = t.global_avg_pool(v[0])?;
        reduce(t, out, &tgt)
    })?);

    let tgt = random(&mut rng, &[2, 3, 4]);
    let ids = [1usize, 4, 1, 0, 2, 2];
    let inputs = [random(&mut rng, &[5, 4])];
    checks.push(check_function("embedding", &inputs, &|t, v| {
        let out = t.embedding(v[0], &ids, 2, 3)?;
        reduce(t, out, &tgt)
    })?);

    let tgt = random(&mut rng, &[2, 4, 3]);
    let key_mask = [true, true, true, false, true, true, true, true];
    let inputs = [
        random(&mut rng, &[2, 4, 3]),
        random(&mut rng, &[3, 3]),
        random(&mut rng, &[3, 3]),
        random(&mut rng, &[3, 3]),
    ];
    checks.push(check_function("attention", &inputs, &|t, v| {
        let out = t.attention(v[0], v[1], v[2], v[3], Some(&key_mask))?;
        reduce(t, out, &tgt)
    })?);

    let inputs = [random(&mut rng, &[5, 3]), random(&mut rng, &[5, 3])];
    checks.push(check_function("mse", &inputs, &|t, v| t.mse(v[0], v[1]))?);

    let tgt = random(&mut rng, &[6, 2]);
    let inputs = [random(&mut rng, &[2, 3, 2])];
    checks.push(check_function("reshape", &inputs, &|t, v| {
        let out = t.reshape(v[0], vec![6, 2])?;
        reduce(t, out, &tgt)
    })?);

    Ok(checks)
}
