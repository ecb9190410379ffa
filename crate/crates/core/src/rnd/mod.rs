//! Diversity score from the generalization gap of random network
//! distillation.
//!
//! For each run a frozen random target and a same-architecture predictor
//! are built, the data is split into `train_size` training examples and a
//! validation remainder, and the predictor is trained on the squared
//! feature distance to the target. Before every epoch (and once after the
//! last) the normalized gap `(val − train) / (val + train)` is recorded;
//! a run's value is the mean gap over the final `averaging_window` epochs
//! and the score is the mean over runs.

mod run;
mod stats;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{ChannelStats, Dataset, TensorDataset};
use crate::engine::Precision;
use crate::error::{Error, Result};
use crate::nets::{NetKind, NetworkSpec};

pub use run::{single_run, RunFailure, RunTrace};
pub use stats::{confidence_interval, Interval, CI95_Z};

/// Channels with a standard deviation below this are only shifted.
pub const STD_GUARD: f64 = 1e-8;

/// Hyperparameters of the scoring procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub averaging_window: usize,
    pub runs: usize,
    pub train_size: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `None` standardizes tensor data and leaves token data untouched.
    pub normalize_inputs: Option<bool>,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 50,
            averaging_window: 10,
            runs: 40,
            train_size: 200,
            batch_size: 32,
            seed: 0,
            normalize_inputs: None,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        crate::engine::SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
        }
        .validate()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.averaging_window == 0 || self.averaging_window > self.epochs {
            return Err(Error::config(
                "averaging_window",
                format!("must lie in 1..={} (epochs), got {}", self.epochs, self.averaging_window),
            ));
        }
        if self.runs == 0 {
            return Err(Error::config("runs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.train_size == 0 || self.train_size >= dataset_len {
            return Err(Error::config(
                "train_size",
                format!("must lie in 1..{dataset_len} so validation is non-empty, got {}", self.train_size),
            ));
        }
        Ok(())
    }

    fn normalizes(&self, dataset: &Dataset) -> Result<bool> {
        match (dataset, self.normalize_inputs) {
            (Dataset::Tensor(_), None) => Ok(true),
            (Dataset::Tokens(_), None) => Ok(false),
            (Dataset::Tokens(_), Some(true)) => Err(Error::config(
                "normalize_inputs",
                "token datasets cannot be standardized",
            )),
            (_, Some(flag)) => Ok(flag),
        }
    }
}

/// Standardizes every channel (first example axis) to mean 0 and std 1,
/// with statistics estimated over the whole dataset.
pub fn normalize(dataset: &TensorDataset) -> Result<(TensorDataset, ChannelStats)> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot normalize an empty dataset".into()));
    }
    let channels = dataset.channels();
    let per_example = dataset.example_len();
    let plane = per_example / channels;
    let mut sum = vec![0.0f64; channels];
    for ex in dataset.values().chunks(per_example) {
        for (c, px) in ex.chunks(plane).enumerate() {
            sum[c] += px.iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    let count = (dataset.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0f64; channels];
    for ex in dataset.values().chunks(per_example) {
        for (c, px) in ex.chunks(plane).enumerate() {
            sq[c] += px.iter().map(|&v| (v as f64 - mean[c]).powi(2)).sum::<f64>();
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / count).sqrt()).collect();
    let degenerate: Vec<bool> = std.iter().map(|&s| s < STD_GUARD).collect();
    let mut values = Vec::with_capacity(dataset.values().len());
    for ex in dataset.values().chunks(per_example) {
        for (c, px) in ex.chunks(plane).enumerate() {
            let scale = if degenerate[c] { 1.0 } else { 1.0 / std[c] };
            values.extend(px.iter().map(|&v| ((v as f64 - mean[c]) * scale) as f32));
        }
    }
    let out = TensorDataset::new(dataset.example_shape().to_vec(), values)?;
    Ok((out, ChannelStats { mean, std, degenerate }))
}

/// Seeded uniform permutation; the first `k` indices train, the rest
/// validate.
pub fn split(len: usize, k: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if k == 0 || k >= len {
        return Err(Error::config("train_size", format!("must lie in 1..{len}, got {k}")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let val = idx.split_off(k);
    Ok((idx, val))
}

/// Normalized gap of one epoch. Two exact zeros give 0; callers flag that
/// epoch as degenerate.
pub fn rnd_epoch(mse_val: f64, mse_train: f64) -> Result<f64> {
    if !(mse_val.is_finite() && mse_train.is_finite()) || mse_val < 0.0 || mse_train < 0.0 {
        return Err(Error::Usage(format!(
            "losses must be finite and non-negative, got val {mse_val}, train {mse_train}"
        )));
    }
    let total = mse_val + mse_train;
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(((mse_val - mse_train) / total).clamp(-1.0, 1.0))
}

/// Derives an independent stream seed from a run seed.
pub(crate) fn derive_seed(run_seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = run_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Aggregate over all runs of one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct RndReport {
    pub score: f64,
    pub per_run: Vec<f64>,
    pub run_seeds: Vec<u64>,
    pub stddev: Option<f64>,
    pub ci95: Option<f64>,
    pub failed_runs: Vec<RunFailure>,
    pub config: TrainConfig,
    pub network: NetworkSpec,
    pub dataset_fingerprint: String,
    pub normalization: Option<ChannelStats>,
    #[serde(skip)]
    pub traces: Vec<RunTrace>,
}

impl RndReport {
    /// Per-epoch curves as CSV: `run,epoch,mse_train,mse_val,rnd_i`.
    pub fn write_curves(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "run,epoch,mse_train,mse_val,rnd_i")?;
        self.write_curve_rows(&mut out, None)
    }

    /// Curve rows only, each prefixed by `label` when given.
    pub fn write_curve_rows(&self, mut out: impl Write, label: Option<&str>) -> Result<()> {
        for trace in &self.traces {
            let run = trace.run_seed - self.config.seed;
            for (epoch, ((t, v), r)) in trace
                .mse_train
                .iter()
                .zip(&trace.mse_val)
                .zip(&trace.rnd)
                .enumerate()
            {
                if let Some(l) = label {
                    write!(out, "{l},")?;
                }
                writeln!(out, "{run},{epoch},{t},{v},{r}")?;
            }
        }
        Ok(())
    }
}

fn check_spec(spec: &NetworkSpec, dataset: &Dataset) -> Result<()> {
    spec.validate()?;
    match (spec.kind, dataset) {
        (NetKind::Token, Dataset::Tokens(d)) => {
            if spec.vocab_size.unwrap_or(0) < d.vocab().len() {
                return Err(Error::config(
                    "vocab_size",
                    format!("network vocabulary {:?} smaller than dataset's {}", spec.vocab_size, d.vocab().len()),
                ));
            }
            if spec.max_seq_len.unwrap_or(0) < d.max_seq_len() {
                return Err(Error::config(
                    "max_seq_len",
                    format!("network accepts {:?} tokens, dataset needs {}", spec.max_seq_len, d.max_seq_len()),
                ));
            }
        }
        (NetKind::Mlp | NetKind::Conv, Dataset::Tensor(d)) => {
            if spec.input_shape != d.example_shape() {
                return Err(Error::config(
                    "input_shape",
                    format!("network expects {:?}, dataset examples are {:?}", spec.input_shape, d.example_shape()),
                ));
            }
        }
        (kind, _) => {
            return Err(Error::config("kind", format!("a {kind} network cannot read this dataset")));
        }
    }
    Ok(())
}

/// Runs `config.runs` independent runs with seeds `seed+1 ..= seed+runs`
/// and aggregates them. `threads == 0` uses every available core; the
/// result does not depend on the thread count.
pub fn rnd_score(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig, threads: usize) -> Result<RndReport> {
    use rayon::prelude::*;

    config.validate(dataset.len())?;
    check_spec(spec, dataset)?;
    let (prepared, normalization) = match dataset {
        Dataset::Tensor(d) if config.normalizes(dataset)? => {
            let (n, stats) = normalize(d)?;
            (Dataset::Tensor(n), Some(stats))
        }
        _ => {
            config.normalizes(dataset)?;
            (dataset.clone(), None)
        }
    };

    let seeds: Vec<u64> = (1..=config.runs as u64).map(|j| config.seed.wrapping_add(j)).collect();
    let one = |&seed: &u64| match config.precision {
        Precision::F32 => single_run::<f32>(&prepared, spec, config, seed),
        Precision::F64 => single_run::<f64>(&prepared, spec, config, seed),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<RunTrace>> = pool.install(|| seeds.par_iter().map(one).collect());

    let mut traces = Vec::new();
    let mut failed = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(trace) => traces.push(trace),
            Err(Error::Diverged(failure)) => failed.push(*failure),
            Err(e) => return Err(e),
        }
    }
    if traces.len() * 2 < config.runs {
        return Err(Error::RunsFailed {
            failed: failed.len(),
            total: config.runs,
            seeds: failed.iter().map(|f| f.run_seed).collect(),
        });
    }
    let per_run: Vec<f64> = traces.iter().map(|t| t.rnd_hat).collect();
    let interval = confidence_interval(&per_run)?;
    Ok(RndReport {
        score: interval.mean,
        run_seeds: traces.iter().map(|t| t.run_seed).collect(),
        per_run,
        stddev: interval.stddev,
        ci95: interval.ci95,
        failed_runs: failed,
        config: config.clone(),
        network: spec.clone(),
        dataset_fingerprint: dataset.fingerprint().to_string(),
        normalization,
        traces,
    })
}

#[cfg(test)]
mod tests;
