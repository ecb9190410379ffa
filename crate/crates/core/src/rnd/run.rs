use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{derive_seed, rnd_epoch, split, TrainConfig};
use crate::data::Dataset;
use crate::engine::{Gradients, OptimizerState, Real, SgdConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nets::{Input, Network, NetworkSpec};

/// Examples per forward pass when only measuring losses.
const EVAL_CHUNK: usize = 128;

const STREAM_TARGET: u64 = 1;
const STREAM_PREDICTOR: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

/// Per-epoch record of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub run_seed: u64,
    /// Indexed by completed training epochs, `0..=epochs`.
    pub mse_train: Vec<f64>,
    pub mse_val: Vec<f64>,
    pub rnd: Vec<f64>,
    /// Mean mini-batch loss of each training epoch (`epochs` entries).
    pub train_loss: Vec<f64>,
    /// Epochs where both losses were exactly zero.
    pub degenerate_epochs: Vec<usize>,
    pub rnd_hat: f64,
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub run_seed: u64,
    pub epoch: usize,
    /// `None` when the failure happened while measuring losses.
    pub batch: Option<usize>,
    pub detail: String,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run {} failed at epoch {}", self.run_seed, self.epoch)?;
        if let Some(b) = self.batch {
            write!(f, ", batch {b}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

enum Samples<'a, F: Real> {
    Dense {
        shape: &'a [usize],
        values: Vec<F>,
    },
    Tokens(&'a [Vec<u32>]),
}

impl<F: Real> Samples<'_, F> {
    fn batch(&self, idx: &[usize]) -> Result<Input<F>> {
        match self {
            Samples::Dense { shape, values } => {
                let per: usize = shape.iter().product();
                let mut out = Vec::with_capacity(idx.len() * per);
                for &i in idx {
                    out.extend_from_slice(&values[i * per..(i + 1) * per]);
                }
                let mut full = vec![idx.len()];
                full.extend_from_slice(shape);
                Ok(Input::Dense(Tensor::new(full, out)?))
            }
            Samples::Tokens(seqs) => Ok(Input::Tokens(idx.iter().map(|&i| seqs[i].clone()).collect())),
        }
    }
}

fn diverged(run_seed: u64, epoch: usize, batch: Option<usize>) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite(detail) => Error::Diverged(Box::new(RunFailure {
            run_seed,
            epoch,
            batch,
            detail,
        })),
        other => other,
    }
}

/// Mean squared feature distance over `idx`, accumulated in f64.
fn evaluate<F: Real>(
    predictor: &Network<F>,
    samples: &Samples<'_, F>,
    targets: &[F],
    feature_dim: usize,
    idx: &[usize],
) -> Result<f64> {
    let mut total = 0.0f64;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let feats = predictor.features(&samples.batch(chunk)?)?;
        for (row, &i) in feats.values().chunks(feature_dim).zip(chunk) {
            let tgt = &targets[i * feature_dim..(i + 1) * feature_dim];
            total += row
                .iter()
                .zip(tgt)
                .map(|(&p, &t)| (p - t).as_f64().powi(2))
                .sum::<f64>();
        }
    }
    let mse = total / idx.len() as f64;
    if !mse.is_finite() {
        return Err(Error::NonFinite(format!("evaluation loss {mse}")));
    }
    Ok(mse)
}

fn batch_gradients<F: Real>(
    predictor: &Network<F>,
    samples: &Samples<'_, F>,
    targets: &[F],
    feature_dim: usize,
    chunk: &[usize],
) -> Result<(Gradients<F>, f64)> {
    let mut tape = Tape::new();
    let out = predictor.forward(&mut tape, &samples.batch(chunk)?, true)?;
    let mut rows = Vec::with_capacity(chunk.len() * feature_dim);
    for &i in chunk {
        rows.extend_from_slice(&targets[i * feature_dim..(i + 1) * feature_dim]);
    }
    let tgt = tape.constant(Tensor::new(vec![chunk.len(), feature_dim], rows)?);
    let loss = tape.mse(out, tgt)?;
    let value = tape.value(loss).values()[0].as_f64();
    Ok((tape.backward(loss)?, value))
}

/// One split/initialize/train cycle. Losses are measured with frozen
/// weights before each training epoch and once after the last one.
pub fn single_run<F: Real>(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig, run_seed: u64) -> Result<RunTrace> {
    config.validate(dataset.len())?;
    let samples: Samples<'_, F> = match dataset {
        Dataset::Tensor(d) => Samples::Dense {
            shape: d.example_shape(),
            values: d.values().iter().map(|&v| F::of(v as f64)).collect(),
        },
        Dataset::Tokens(d) => Samples::Tokens(d.sequences()),
    };
    let mut target = Network::<F>::build(spec, derive_seed(run_seed, STREAM_TARGET))?;
    target.freeze();
    let mut predictor = Network::<F>::build(spec, derive_seed(run_seed, STREAM_PREDICTOR))?;
    let (train, val) = split(dataset.len(), config.train_size, derive_seed(run_seed, STREAM_SPLIT))?;
    let fd = spec.feature_dim;

    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut targets = Vec::with_capacity(dataset.len() * fd);
    for chunk in all.chunks(EVAL_CHUNK) {
        let feats = target
            .features(&samples.batch(chunk)?)
            .map_err(diverged(run_seed, 0, None))?;
        targets.extend_from_slice(feats.values());
    }

    let mut state = OptimizerState::new(
        predictor.params(),
        SgdConfig {
            learning_rate: config.learning_rate,
            momentum: config.momentum,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, STREAM_SHUFFLE));
    let mut order = train.clone();
    let n = config.epochs;
    let mut trace = RunTrace {
        run_seed,
        mse_train: Vec::with_capacity(n + 1),
        mse_val: Vec::with_capacity(n + 1),
        rnd: Vec::with_capacity(n + 1),
        train_loss: Vec::with_capacity(n),
        degenerate_epochs: Vec::new(),
        rnd_hat: 0.0,
    };

    for epoch in 0..=n {
        let mt = evaluate(&predictor, &samples, &targets, fd, &train).map_err(diverged(run_seed, epoch, None))?;
        let mv = evaluate(&predictor, &samples, &targets, fd, &val).map_err(diverged(run_seed, epoch, None))?;
        if mt == 0.0 && mv == 0.0 {
            trace.degenerate_epochs.push(epoch);
        }
        trace.rnd.push(rnd_epoch(mv, mt)?);
        trace.mse_train.push(mt);
        trace.mse_val.push(mv);
        if epoch == n {
            break;
        }

        order.shuffle(&mut rng);
        let mut weighted = 0.0f64;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let (grads, value) = batch_gradients(&predictor, &samples, &targets, fd, chunk)
                .map_err(diverged(run_seed, epoch + 1, Some(bi)))?;
            predictor
                .sgd_step(&grads, &mut state)
                .map_err(diverged(run_seed, epoch + 1, Some(bi)))?;
            weighted += value * chunk.len() as f64;
        }
        trace.train_loss.push(weighted / train.len() as f64);
    }

    let w = config.averaging_window;
    trace.rnd_hat = trace.rnd[n + 1 - w..].iter().sum::<f64>() / w as f64;
    Ok(trace)
}
