//! Experiment configuration. Built-in defaults are overridden by a TOML
//! file, which is in turn overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use rndscore::data::{load_tensor_file, load_token_file};
use rndscore::nets::{NetKind, NetworkSpec, DEFAULT_FEATURE_DIM};
use rndscore::rnd::TrainConfig;
use rndscore::synth::{MixtureSpec, TruncGenSpec, ZipfCorpusSpec};
use rndscore::{Dataset, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    /// Worker threads, 0 for one per core. Never changes results.
    pub threads: usize,
    pub train: TrainConfig,
    pub network: NetworkConfig,
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub corpus: CorpusConfig,
    pub sweep: SweepConfig,
    pub ablate: AblateConfig,
    pub baseline: BaselineConfig,
    pub synth: SynthConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("rnd-out"),
            threads: 0,
            train: TrainConfig::default(),
            network: NetworkConfig::default(),
            data: DataConfig::default(),
            generator: GeneratorConfig::default(),
            corpus: CorpusConfig::default(),
            sweep: SweepConfig::default(),
            ablate: AblateConfig::default(),
            baseline: BaselineConfig::default(),
            synth: SynthConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Inferred from the data when unset: mlp for tensors, token for text.
    pub arch: Option<NetKind>,
    pub depth: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub homogeneous: bool,
    pub stem_stride: usize,
    /// Token networks only; defaults to the corpus' longest sequence.
    pub max_seq_len: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            arch: None,
            depth: 2,
            width: 32,
            feature_dim: DEFAULT_FEATURE_DIM,
            homogeneous: false,
            stem_stride: 2,
            max_seq_len: None,
        }
    }
}

impl NetworkConfig {
    pub fn spec_for(&self, dataset: &Dataset) -> Result<NetworkSpec> {
        let base = match (dataset, self.arch) {
            (Dataset::Tensor(d), None | Some(NetKind::Mlp)) => {
                NetworkSpec::mlp(d.example_shape().to_vec(), self.depth, self.width)
            }
            (Dataset::Tensor(d), Some(NetKind::Conv)) => {
                NetworkSpec::conv(d.example_shape().to_vec(), self.depth, self.width)
            }
            (Dataset::Tokens(d), None | Some(NetKind::Token)) => NetworkSpec::token(
                d.vocab().len(),
                self.max_seq_len.unwrap_or(d.max_seq_len()),
                self.depth,
                self.width,
            ),
            (Dataset::Tensor(_), Some(kind)) => {
                return Err(Error::config("network.arch", format!("{kind} cannot read tensor data")))
            }
            (Dataset::Tokens(_), Some(kind)) => {
                return Err(Error::config("network.arch", format!("{kind} cannot read token data")))
            }
        };
        let mut spec = base.with_feature_dim(self.feature_dim).with_homogeneous(self.homogeneous);
        spec.stem_stride = self.stem_stride;
        spec.validate()?;
        Ok(spec)
    }
}

/// Input files of `score` and `baseline`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// RNDT tensor file.
    pub path: Option<PathBuf>,
    /// One sequence per line, whitespace separated.
    pub corpus: Option<PathBuf>,
    /// One token per line.
    pub vocab: Option<PathBuf>,
}

impl DataConfig {
    pub fn load(&self, max_seq_len: Option<usize>) -> Result<Dataset> {
        match (&self.path, &self.corpus, &self.vocab) {
            (Some(p), None, None) => Ok(load_tensor_file(p)?.into()),
            (None, Some(c), Some(v)) => Ok(load_token_file(c, v, max_seq_len)?.into()),
            (None, Some(_), None) | (None, None, Some(_)) => {
                Err(Error::config("data", "token data needs both `corpus` and `vocab`"))
            }
            (None, None, None) => Err(Error::config("data", "no input: set `path`, or `corpus` and `vocab`")),
            _ => Err(Error::config("data", "give either a tensor `path` or a token corpus, not both")),
        }
    }

    pub fn files(&self) -> Vec<&Path> {
        [&self.path, &self.corpus, &self.vocab]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect()
    }
}

/// Synthetic tensor data: truncated generator images, Gaussian mixtures
/// and uniform noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub shape: Vec<usize>,
    pub n: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub bias_scale: f64,
    pub generator_seed: u64,
    pub sample_seed: u64,
    pub truncation: f64,
    pub modes: usize,
    pub sigma: f64,
    pub center_scale: f64,
    pub mixture_seed: u64,
    pub noise_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let shape = vec![3, 8, 8];
        let t = TruncGenSpec::new(shape.clone(), 1.0, 600);
        Self {
            shape,
            n: t.n,
            latent_dim: t.latent_dim,
            hidden: t.hidden,
            bias_scale: t.bias_scale,
            generator_seed: t.generator_seed,
            sample_seed: t.sample_seed,
            truncation: t.truncation,
            modes: 16,
            sigma: 0.5,
            center_scale: 10.0,
            mixture_seed: 7,
            noise_seed: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn truncated(&self, truncation: f64) -> TruncGenSpec {
        TruncGenSpec {
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            bias_scale: self.bias_scale,
            output_shape: self.shape.clone(),
            truncation,
            generator_seed: self.generator_seed,
            sample_seed: self.sample_seed,
            n: self.n,
        }
    }

    pub fn mixture(&self, modes: usize) -> MixtureSpec {
        MixtureSpec {
            modes,
            shape: self.shape.clone(),
            sigma: self.sigma,
            center_scale: self.center_scale,
            seed: self.mixture_seed,
            n: self.n,
        }
    }
}

/// Synthetic Zipf corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub sequences: usize,
    pub seed: u64,
    /// `synth` only: keep the `top_k` most frequent tokens.
    pub top_k: Option<usize>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 500,
            exponent: 1.1,
            min_len: 4,
            max_len: 12,
            sequences: 400,
            seed: 5,
            top_k: None,
        }
    }
}

impl CorpusConfig {
    pub fn spec(&self) -> ZipfCorpusSpec {
        ZipfCorpusSpec {
            vocab_size: self.vocab_size,
            exponent: self.exponent,
            min_len: self.min_len,
            max_len: self.max_len,
            sequences: self.sequences,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Truncation,
    Modes,
    Vocab,
}

impl SweepKind {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepKind::Truncation => vec![0.1, 0.5, 1.0],
            SweepKind::Modes => vec![1.0, 4.0, 16.0],
            SweepKind::Vocab => vec![50.0, 100.0, 200.0],
        }
    }

    pub fn is_integral(self) -> bool {
        self != SweepKind::Truncation
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Truncation => "truncation",
            SweepKind::Modes => "modes",
            SweepKind::Vocab => "vocab",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// Empty means the kind's default grid.
    pub values: Vec<f64>,
    /// Also score uniform noise of the same shape and count.
    pub noise_reference: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Truncation,
            values: Vec::new(),
            noise_reference: false,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        let values = if self.values.is_empty() {
            self.kind.default_values()
        } else {
            self.values.clone()
        };
        for &v in &values {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config("sweep.values", format!("{v} is not a positive number")));
            }
            if self.kind.is_integral() && v.fract() != 0.0 {
                return Err(Error::config(
                    "sweep.values",
                    format!("{} sweeps take whole numbers, got {v}", self.kind),
                ));
            }
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum AblateAxis {
    Epochs,
    Window,
    Runs,
    TrainSize,
    Arch,
}

impl fmt::Display for AblateAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblateAxis::Epochs => "epochs",
            AblateAxis::Window => "window",
            AblateAxis::Runs => "runs",
            AblateAxis::TrainSize => "train_size",
            AblateAxis::Arch => "arch",
        })
    }
}

/// One grid value of an ablation: a count, or an architecture name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Count(usize),
    Name(String),
}

impl std::str::FromStr for AxisValue {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(s.parse().map_or_else(|_| AxisValue::Name(s.to_string()), AxisValue::Count))
    }
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Count(c) => write!(f, "{c}"),
            AxisValue::Name(n) => f.write_str(n),
        }
    }
}

impl AxisValue {
    /// Applies this grid value to a copy of `base`.
    pub fn apply(&self, axis: AblateAxis, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        let field = format!("ablate.values ({axis})");
        match (axis, self) {
            (AblateAxis::Arch, AxisValue::Name(n)) => c.network.arch = Some(n.parse()?),
            (AblateAxis::Arch, AxisValue::Count(_)) => {
                return Err(Error::config(field, "arch values are names such as mlp or conv"))
            }
            (_, AxisValue::Name(n)) => return Err(Error::config(field, format!("expected a count, got `{n}`"))),
            (AblateAxis::Epochs, &AxisValue::Count(v)) => c.train.epochs = v,
            (AblateAxis::Window, &AxisValue::Count(v)) => c.train.averaging_window = v,
            (AblateAxis::Runs, &AxisValue::Count(v)) => c.train.runs = v,
            (AblateAxis::TrainSize, &AxisValue::Count(v)) => c.train.train_size = v,
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub axis: Option<AblateAxis>,
    pub values: Vec<AxisValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// n-gram orders for distinct-n.
    pub distinct: Vec<usize>,
    /// Largest n-gram order of Self-BLEU; 0 skips it.
    pub self_bleu: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            distinct: vec![1, 2],
            self_bleu: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Truncated,
    Mixture,
    Noise,
    Zipf,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Truncated => "truncated",
            SynthKind::Mixture => "mixture",
            SynthKind::Noise => "noise",
            SynthKind::Zipf => "zipf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { kind: SynthKind::Noise }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
}

/// Parses `3x8x8` or `3,8,8`.
pub fn parse_shape(s: &str) -> std::result::Result<Vec<usize>, String> {
    let dims: std::result::Result<Vec<usize>, _> = s.split(['x', ',']).map(|d| d.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if !d.is_empty() && !d.contains(&0) => Ok(d),
        _ => Err(format!("`{s}` is not a shape like 3x8x8")),
    }
}
