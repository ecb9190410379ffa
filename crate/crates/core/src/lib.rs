//! Dataset diversity scoring by random network distillation.

pub mod baselines;
pub mod data;
pub mod engine;
pub mod error;
pub mod nets;
pub mod rnd;
pub mod synth;

pub use data::{Dataset, TensorDataset, TokenDataset, Vocab};
pub use engine::{Precision, Real, Tensor};
pub use error::{Error, ErrorKind, Result};
pub use nets::{NetKind, Network, NetworkSpec};
pub use rnd::{rnd_score, RndReport, RunTrace, TrainConfig};
