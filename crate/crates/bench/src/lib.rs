//! Benchmark fixtures shared by the criterion targets.

use rndscore::rnd::TrainConfig;
use rndscore::synth::{gen_truncated, gen_zipf_corpus, TruncGenSpec, ZipfCorpusSpec};
use rndscore::{Dataset, NetworkSpec, TokenDataset};

pub const IMAGE_SHAPE: [usize; 3] = [3, 8, 8];

pub fn images(n: usize) -> Dataset {
    gen_truncated(&TruncGenSpec::new(IMAGE_SHAPE.to_vec(), 1.0, n)).unwrap().into()
}

pub fn corpus(sequences: usize) -> TokenDataset {
    gen_zipf_corpus(&ZipfCorpusSpec {
        vocab_size: 500,
        exponent: 1.1,
        min_len: 4,
        max_len: 12,
        sequences,
        seed: 5,
    })
    .unwrap()
}

pub fn mlp() -> NetworkSpec {
    NetworkSpec::mlp(IMAGE_SHAPE.to_vec(), 2, 32).with_feature_dim(64)
}

pub fn conv() -> NetworkSpec {
    NetworkSpec::conv(IMAGE_SHAPE.to_vec(), 2, 32).with_feature_dim(64)
}

/// One short run: enough epochs to exercise training and evaluation.
pub fn short_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.001,
        batch_size: 8,
        epochs: 3,
        averaging_window: 2,
        runs: 1,
        normalize_inputs: Some(false),
        ..TrainConfig::default()
    }
}
