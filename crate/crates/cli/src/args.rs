//! Command-line flags and their precedence over the config file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rndscore::nets::NetKind;
use rndscore::Precision;

use crate::config::{
    parse_shape, AblateAxis, AxisValue, ExperimentConfig, SweepKind, SynthKind,
};

#[derive(Debug, Parser)]
#[command(name = "rndscore", version, about = "Dataset diversity scores from random network distillation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML experiment file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed (run seeds for training commands, sampler seed for synth).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for the report and curves.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 = one per core. Does not affect results.
    #[arg(long, global = true, env = "RND_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one dataset.
    Score(ScoreArgs),
    /// Score a family of synthetic datasets along one diversity knob.
    Sweep(SweepArgs),
    /// Repeat a sweep while varying one hyperparameter.
    Ablate(AblateArgs),
    /// Distinct-n and Self-BLEU of a token corpus.
    Baseline(BaselineArgs),
    /// Write a synthetic dataset to disk.
    Synth(SynthArgs),
    /// Finite-difference check of every engine operation.
    Gradcheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Score(_) => "score",
            Command::Sweep(_) => "sweep",
            Command::Ablate(_) => "ablate",
            Command::Baseline(_) => "baseline",
            Command::Synth(_) => "synth",
            Command::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct DataArgs {
    /// RNDT tensor file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Token corpus, one sequence per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Vocabulary file, one token per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Final epochs averaged into each run's value.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Standardize tensor inputs per channel.
    #[arg(long)]
    pub normalize: Option<bool>,
}

#[derive(Debug, Default, Args)]
pub struct NetArgs {
    #[arg(long)]
    pub arch: Option<NetKind>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Bias-free networks (mlp and conv).
    #[arg(long)]
    pub homogeneous: Option<bool>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

/// Example shape flag, kept whole so clap does not treat it as a list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

fn shape_arg(s: &str) -> Result<Shape, String> {
    parse_shape(s).map(Shape)
}

#[derive(Debug, Default, Args)]
pub struct GenArgs {
    /// Example shape such as 3x8x8.
    #[arg(long, value_parser = shape_arg)]
    pub shape: Option<Shape>,
    /// Number of examples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub truncation: Option<f64>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub center_scale: Option<f64>,
    #[arg(long)]
    pub generator_seed: Option<u64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub exponent: Option<f64>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub sequences: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Default, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub kind: Option<SweepKind>,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Also score uniform noise of the same shape.
    #[arg(long)]
    pub noise_reference: Option<bool>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub gen: GenArgs,
}

#[derive(Debug, Default, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub axis: Option<AblateAxis>,
    /// Comma-separated grid for the axis.
    #[arg(long = "grid", value_delimiter = ',')]
    pub grid: Option<Vec<AxisValue>>,
    #[command(flatten)]
    pub sweep: SweepArgs,
}

#[derive(Debug, Default, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Comma-separated n-gram orders for distinct-n.
    #[arg(long, value_delimiter = ',')]
    pub distinct: Option<Vec<usize>>,
    /// Largest n-gram order of Self-BLEU (0 skips it).
    #[arg(long)]
    pub self_bleu: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub kind: Option<SynthKind>,
    /// `zipf` only: keep the most frequent tokens.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[command(flatten)]
    pub gen: GenArgs,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl TrainArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        let t = &mut c.train;
        set(&mut t.learning_rate, self.lr);
        set(&mut t.momentum, self.momentum);
        set(&mut t.epochs, self.epochs);
        set(&mut t.averaging_window, self.window);
        set(&mut t.runs, self.runs);
        set(&mut t.train_size, self.train_size);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.precision, self.precision);
        if self.normalize.is_some() {
            t.normalize_inputs = self.normalize;
        }
    }
}

impl NetArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        let n = &mut c.network;
        if self.arch.is_some() {
            n.arch = self.arch;
        }
        set(&mut n.depth, self.depth);
        set(&mut n.width, self.width);
        set(&mut n.feature_dim, self.feature_dim);
        set(&mut n.homogeneous, self.homogeneous);
        if self.max_seq_len.is_some() {
            n.max_seq_len = self.max_seq_len;
        }
    }
}

impl GenArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        let g = &mut c.generator;
        set(&mut g.shape, self.shape.map(|s| s.0));
        set(&mut g.n, self.n);
        set(&mut g.truncation, self.truncation);
        set(&mut g.modes, self.modes);
        set(&mut g.sigma, self.sigma);
        set(&mut g.center_scale, self.center_scale);
        set(&mut g.generator_seed, self.generator_seed);
        let z = &mut c.corpus;
        set(&mut z.vocab_size, self.vocab_size);
        set(&mut z.exponent, self.exponent);
        set(&mut z.min_len, self.min_len);
        set(&mut z.max_len, self.max_len);
        set(&mut z.sequences, self.sequences);
    }
}

impl SweepArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        set(&mut c.sweep.kind, self.kind);
        set(&mut c.sweep.values, self.values);
        set(&mut c.sweep.noise_reference, self.noise_reference);
        self.train.apply(c);
        self.net.apply(c);
        self.gen.apply(c);
    }
}

/// Layers the flags of `command` and `global` over `config`.
pub fn apply_flags(config: &mut ExperimentConfig, global: &GlobalArgs, command: Command) {
    set(&mut config.out, global.out.clone());
    set(&mut config.threads, global.threads);
    let seed = global.seed;
    match command {
        Command::Score(a) => {
            set(&mut config.data.path, a.data.data.map(Some));
            set(&mut config.data.corpus, a.data.corpus.map(Some));
            set(&mut config.data.vocab, a.data.vocab.map(Some));
            a.train.apply(config);
            a.net.apply(config);
            set(&mut config.train.seed, seed);
        }
        Command::Sweep(a) => {
            a.apply(config);
            set(&mut config.train.seed, seed);
        }
        Command::Ablate(a) => {
            if a.axis.is_some() {
                config.ablate.axis = a.axis;
            }
            set(&mut config.ablate.values, a.grid);
            a.sweep.apply(config);
            set(&mut config.train.seed, seed);
        }
        Command::Baseline(a) => {
            set(&mut config.data.corpus, a.corpus.map(Some));
            set(&mut config.data.vocab, a.vocab.map(Some));
            set(&mut config.baseline.distinct, a.distinct);
            set(&mut config.baseline.self_bleu, a.self_bleu);
        }
        Command::Synth(a) => {
            set(&mut config.synth.kind, a.kind);
            if a.top_k.is_some() {
                config.corpus.top_k = a.top_k;
            }
            a.gen.apply(config);
            if let Some(s) = seed {
                match config.synth.kind {
                    SynthKind::Truncated => config.generator.sample_seed = s,
                    SynthKind::Mixture => config.generator.mixture_seed = s,
                    SynthKind::Noise => config.generator.noise_seed = s,
                    SynthKind::Zipf => config.corpus.seed = s,
                }
            }
        }
        Command::Gradcheck => set(&mut config.gradcheck.seed, seed),
    }
}
