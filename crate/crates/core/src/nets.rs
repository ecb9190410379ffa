//! Target and predictor networks.
//!
//! Both networks of a run are built from one [`NetworkSpec`] with
//! different seeds. Three families are available:
//!
//! * `mlp`: `depth × (linear + relu)` followed by a linear head, applied
//!   to the flattened example.
//! * `conv`: a strided 3×3 stem, `depth` residual blocks
//!   (`relu(conv(relu(conv(x))) + x)`), spatial mean-pool and a linear head.
//! * `token`: token + learned positional embeddings, `depth` blocks of
//!   single-head attention and a relu feed-forward layer (each with a
//!   residual skip), mean-pool over non-pad positions and a linear head.
//!
//! Weights use Kaiming-uniform fan-in initialization, biases start at
//! zero. In homogeneous mode no biases exist at all, which makes mlp and
//! conv networks positively homogeneous of degree one in their input.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Gradients, OptimizerState, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Mlp,
    Conv,
    Token,
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetKind::Mlp => "mlp",
            NetKind::Conv => "conv",
            NetKind::Token => "token",
        })
    }
}

impl std::str::FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(NetKind::Mlp),
            "conv" => Ok(NetKind::Conv),
            "token" => Ok(NetKind::Token),
            other => Err(Error::config("kind", format!("unknown network kind `{other}`"))),
        }
    }
}

/// Architecture shared by the target and predictor of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetKind,
    pub depth: usize,
    pub width: usize,
    pub feature_dim: usize,
    /// Per-example shape: any shape for mlp, `[c, h, w]` for conv, unused
    /// for token networks.
    pub input_shape: Vec<usize>,
    pub homogeneous: bool,
    /// Stride of the conv stem (block convolutions always use stride 1).
    pub stem_stride: usize,
    pub vocab_size: Option<usize>,
    pub max_seq_len: Option<usize>,
}

pub const DEFAULT_FEATURE_DIM: usize = 64;

impl NetworkSpec {
    pub fn mlp(input_shape: Vec<usize>, depth: usize, width: usize) -> Self {
        Self {
            kind: NetKind::Mlp,
            depth,
            width,
            feature_dim: DEFAULT_FEATURE_DIM,
            input_shape,
            homogeneous: false,
            stem_stride: 2,
            vocab_size: None,
            max_seq_len: None,
        }
    }

    pub fn conv(input_shape: Vec<usize>, depth: usize, width: usize) -> Self {
        Self {
            kind: NetKind::Conv,
            ..Self::mlp(input_shape, depth, width)
        }
    }

    pub fn token(vocab_size: usize, max_seq_len: usize, depth: usize, width: usize) -> Self {
        Self {
            kind: NetKind::Token,
            vocab_size: Some(vocab_size),
            max_seq_len: Some(max_seq_len),
            ..Self::mlp(Vec::new(), depth, width)
        }
    }

    pub fn with_feature_dim(mut self, feature_dim: usize) -> Self {
        self.feature_dim = feature_dim;
        self
    }

    pub fn with_homogeneous(mut self, homogeneous: bool) -> Self {
        self.homogeneous = homogeneous;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("depth", "must be >= 1"));
        }
        if self.width == 0 {
            return Err(Error::config("width", "must be >= 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be >= 1"));
        }
        match self.kind {
            NetKind::Mlp => {
                if self.input_shape.is_empty() || self.input_shape.contains(&0) {
                    return Err(Error::config("input_shape", "must be non-empty with positive extents"));
                }
            }
            NetKind::Conv => {
                if self.input_shape.len() != 3 || self.input_shape.contains(&0) {
                    return Err(Error::config("input_shape", "conv networks need [c, h, w]"));
                }
                if self.stem_stride == 0 {
                    return Err(Error::config("stem_stride", "must be >= 1"));
                }
            }
            NetKind::Token => {
                match self.vocab_size {
                    Some(v) if v >= 2 => {}
                    _ => return Err(Error::config("vocab_size", "token networks need vocab_size >= 2")),
                }
                match self.max_seq_len {
                    Some(l) if l >= 1 => {}
                    _ => return Err(Error::config("max_seq_len", "token networks need max_seq_len >= 1")),
                }
            }
        }
        Ok(())
    }

    fn flat_input(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Shapes and initializers of all parameters in slot order.
    fn layout(&self) -> Vec<(Vec<usize>, Init)> {
        let bias = !self.homogeneous;
        let mut out = Vec::new();
        let push_linear = |out: &mut Vec<(Vec<usize>, Init)>, m: usize, p: usize| {
            out.push((vec![m, p], Init::Kaiming(m)));
            if bias {
                out.push((vec![p], Init::Zero));
            }
        };
        match self.kind {
            NetKind::Mlp => {
                let mut fan = self.flat_input();
                for _ in 0..self.depth {
                    push_linear(&mut out, fan, self.width);
                    fan = self.width;
                }
                push_linear(&mut out, fan, self.feature_dim);
            }
            NetKind::Conv => {
                let c = self.input_shape[0];
                let push_conv = |out: &mut Vec<(Vec<usize>, Init)>, cin: usize| {
                    out.push((vec![self.width, cin, 3, 3], Init::Kaiming(cin * 9)));
                    if bias {
                        out.push((vec![self.width], Init::Zero));
                    }
                };
                push_conv(&mut out, c);
                for _ in 0..self.depth {
                    push_conv(&mut out, self.width);
                    push_conv(&mut out, self.width);
                }
                push_linear(&mut out, self.width, self.feature_dim);
            }
            NetKind::Token => {
                let d = self.width;
                out.push((vec![self.vocab_size.unwrap_or(2), d], Init::Embedding));
                out.push((vec![self.max_seq_len.unwrap_or(1), d], Init::Embedding));
                for _ in 0..self.depth {
                    for _ in 0..3 {
                        out.push((vec![d, d], Init::Kaiming(d)));
                    }
                    push_linear(&mut out, d, d);
                    push_linear(&mut out, d, d);
                }
                push_linear(&mut out, d, self.feature_dim);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(s, _)| s.iter().product::<usize>())
            .sum()
    }

    /// Number of linear/conv layers on the main path.
    pub fn layer_count(&self) -> usize {
        match self.kind {
            NetKind::Mlp => self.depth + 1,
            NetKind::Conv => 2 * self.depth + 2,
            NetKind::Token => 2 * self.depth + 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Kaiming(usize),
    Zero,
    Embedding,
}

/// A batch of network inputs.
#[derive(Debug, Clone)]
pub enum Input<F: Real> {
    /// `[b, ...example_shape]`
    Dense(Tensor<F>),
    /// One id sequence per example.
    Tokens(Vec<Vec<u32>>),
}

impl<F: Real> Input<F> {
    pub fn batch_size(&self) -> usize {
        match self {
            Input::Dense(t) => t.shape()[0],
            Input::Tokens(s) => s.len(),
        }
    }
}

/// Instantiated parameters for a [`NetworkSpec`].
#[derive(Debug, Clone)]
pub struct Network<F: Real> {
    spec: NetworkSpec,
    params: Vec<Tensor<F>>,
    frozen: bool,
}

impl<F: Real> Network<F> {
    /// Deterministic in `(spec, seed)`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .layout()
            .into_iter()
            .map(|(shape, init)| {
                let n: usize = shape.iter().product();
                let values: Vec<F> = match init {
                    Init::Zero => vec![F::zero(); n],
                    Init::Kaiming(fan_in) => {
                        let bound = (6.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| F::of(rng.random_range(-bound..bound))).collect()
                    }
                    Init::Embedding => {
                        let bound = 3f64.sqrt();
                        (0..n).map(|_| F::of(rng.random_range(-bound..bound))).collect()
                    }
                };
                Tensor::new(shape, values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            params,
            frozen: false,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    /// Replaces the parameters wholesale; shapes must match.
    pub fn set_params(&mut self, params: Vec<Tensor<F>>) -> Result<()> {
        if self.frozen {
            return Err(Error::Usage("cannot overwrite parameters of a frozen network".into()));
        }
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Dimension("replacement parameters do not match the layout".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Applies one optimizer step with `grads`. Frozen networks refuse.
    pub fn sgd_step(&mut self, grads: &Gradients<F>, state: &mut OptimizerState<F>) -> Result<()> {
        if self.frozen {
            return Err(Error::Usage("frozen network cannot be trained".into()));
        }
        grads.fill(&mut self.params)?;
        state.step(&mut self.params)
    }

    /// Records the forward pass on `tape`. With `trainable` the parameters
    /// become gradient leaves (slot = index in [`Network::params`]).
    pub fn forward(&self, tape: &mut Tape<F>, input: &Input<F>, trainable: bool) -> Result<Var> {
        if trainable && self.frozen {
            return Err(Error::Usage("frozen network cannot record trainable parameters".into()));
        }
        let p: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(slot, t)| {
                if trainable {
                    tape.param(slot, t)
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let mut cursor = Params { vars: &p, next: 0, bias: !self.spec.homogeneous };
        match (&self.spec.kind, input) {
            (NetKind::Mlp, Input::Dense(x)) => self.forward_mlp(tape, x, &mut cursor),
            (NetKind::Conv, Input::Dense(x)) => self.forward_conv(tape, x, &mut cursor),
            (NetKind::Token, Input::Tokens(seqs)) => self.forward_token(tape, seqs, &mut cursor),
            (kind, _) => Err(Error::Usage(format!("input kind does not match a {kind} network"))),
        }
    }

    /// Feature rows for `input`, without recording gradients.
    pub fn features(&self, input: &Input<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, input, false)?;
        Ok(tape.value(out).clone())
    }

    fn check_dense(&self, x: &Tensor<F>) -> Result<usize> {
        let shape = x.shape();
        if shape.len() < 2 || shape[1..] != self.spec.input_shape[..] {
            return Err(Error::Dimension(format!(
                "batch shape {shape:?} does not match input shape {:?}",
                self.spec.input_shape
            )));
        }
        Ok(shape[0])
    }

    fn forward_mlp(&self, tape: &mut Tape<F>, x: &Tensor<F>, p: &mut Params<'_>) -> Result<Var> {
        let b = self.check_dense(x)?;
        let mut h = tape.constant(x.reshaped(vec![b, self.spec.flat_input()])?);
        for _ in 0..self.spec.depth {
            let (w, bias) = p.linear();
            h = tape.linear(h, w, bias)?;
            h = tape.relu(h)?;
        }
        let (w, bias) = p.linear();
        tape.linear(h, w, bias)
    }

    fn forward_conv(&self, tape: &mut Tape<F>, x: &Tensor<F>, p: &mut Params<'_>) -> Result<Var> {
        self.check_dense(x)?;
        let input = tape.constant(x.clone());
        let (k, bias) = p.linear();
        let stem = tape.conv2d(input, k, bias, self.spec.stem_stride, 1)?;
        let mut h = tape.relu(stem)?;
        for _ in 0..self.spec.depth {
            let (k1, b1) = p.linear();
            let (k2, b2) = p.linear();
            let mut r = tape.conv2d(h, k1, b1, 1, 1)?;
            r = tape.relu(r)?;
            r = tape.conv2d(r, k2, b2, 1, 1)?;
            let sum = tape.add(r, h)?;
            h = tape.relu(sum)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        let (w, bias) = p.linear();
        tape.linear(pooled, w, bias)
    }

    fn forward_token(&self, tape: &mut Tape<F>, seqs: &[Vec<u32>], p: &mut Params<'_>) -> Result<Var> {
        let vocab = self.spec.vocab_size.unwrap_or(2);
        let max_len = self.spec.max_seq_len.unwrap_or(1);
        if seqs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let seq = seqs.iter().map(Vec::len).max().unwrap_or(0);
        for (i, s) in seqs.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Dimension(format!("sequence {i} is empty")));
            }
            if s.len() > max_len {
                return Err(Error::Data(format!(
                    "sequence {i} has length {} > max_seq_len {max_len}",
                    s.len()
                )));
            }
            if let Some(pos) = s.iter().position(|&id| id as usize >= vocab) {
                return Err(Error::Data(format!(
                    "token id {} at sequence {i}, position {pos} exceeds vocabulary size {vocab}",
                    s[pos]
                )));
            }
        }
        let b = seqs.len();
        let mut ids = Vec::with_capacity(b * seq);
        let mut positions = Vec::with_capacity(b * seq);
        let mut mask = Vec::with_capacity(b * seq);
        for s in seqs {
            for j in 0..seq {
                let id = s.get(j).copied().unwrap_or(PAD_ID);
                ids.push(id as usize);
                positions.push(j);
                mask.push(id != PAD_ID);
            }
        }
        let tok_table = p.take();
        let pos_table = p.take();
        let tok = tape.embedding(tok_table, &ids, b, seq)?;
        let pos = tape.embedding(pos_table, &positions, b, seq)?;
        let mut h = tape.add(tok, pos)?;
        let d = self.spec.width;
        for _ in 0..self.spec.depth {
            let (wq, wk, wv) = (p.take(), p.take(), p.take());
            let att = tape.attention(h, wq, wk, wv, Some(&mask))?;
            h = tape.add(h, att)?;
            let flat = tape.reshape(h, vec![b * seq, d])?;
            let (w1, b1) = p.linear();
            let (w2, b2) = p.linear();
            let mut ff = tape.linear(flat, w1, b1)?;
            ff = tape.relu(ff)?;
            ff = tape.linear(ff, w2, b2)?;
            let ff = tape.reshape(ff, vec![b, seq, d])?;
            h = tape.add(h, ff)?;
        }
        let pooled = tape.mean_pool(h, Some(mask))?;
        let (w, bias) = p.linear();
        tape.linear(pooled, w, bias)
    }
}

struct Params<'a> {
    vars: &'a [Var],
    next: usize,
    bias: bool,
}

impl Params<'_> {
    fn take(&mut self) -> Var {
        let v = self.vars[self.next];
        self.next += 1;
        v
    }

    fn linear(&mut self) -> (Var, Option<Var>) {
        let w = self.take();
        let b = self.bias.then(|| self.take());
        (w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SgdConfig;

    fn dense(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mlp_parameter_count() {
        let spec = NetworkSpec::mlp(vec![8], 2, 16).with_feature_dim(4);
        assert_eq!(spec.parameter_count(), 8 * 16 + 16 + 16 * 16 + 16 + 16 * 4 + 4);
        assert_eq!(spec.parameter_count(), 484);
        let net = Network::<f32>::build(&spec, 0).unwrap();
        assert_eq!(net.params().iter().map(Tensor::len).sum::<usize>(), 484);
    }

    #[test]
    fn build_is_deterministic_in_seed() {
        for spec in [
            NetworkSpec::mlp(vec![3, 4], 2, 8),
            NetworkSpec::conv(vec![2, 6, 6], 1, 4),
            NetworkSpec::token(10, 6, 1, 8),
        ] {
            let a = Network::<f32>::build(&spec, 1).unwrap();
            let b = Network::<f32>::build(&spec, 1).unwrap();
            let c = Network::<f32>::build(&spec, 2).unwrap();
            assert_eq!(a.params(), b.params());
            assert_ne!(a.params(), c.params());
            for (x, y) in a.params().iter().zip(c.params()) {
                assert_eq!(x.shape(), y.shape());
            }
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let mut spec = NetworkSpec::mlp(vec![4], 0, 8);
        let err = Network::<f32>::build(&spec, 0).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "depth"));
        spec.depth = 1;
        spec.feature_dim = 0;
        let err = Network::<f32>::build(&spec, 0).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "feature_dim"));
        let tok = NetworkSpec::token(1, 4, 1, 4);
        let err = Network::<f32>::build(&tok, 0).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "vocab_size"));
        let conv = NetworkSpec::conv(vec![4, 4], 1, 4);
        assert!(Network::<f32>::build(&conv, 0).is_err());
    }

    #[test]
    fn zero_head_gives_zero_features() {
        let spec = NetworkSpec::mlp(vec![5], 1, 6).with_feature_dim(3);
        let mut net = Network::<f64>::build(&spec, 4).unwrap();
        let mut params = net.params().to_vec();
        let n = params.len();
        params[n - 2] = Tensor::zeros(params[n - 2].shape().to_vec());
        net.set_params(params).unwrap();
        let out = net.features(&Input::Dense(dense(&[4, 5], 1))).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_homogeneity() {
        for spec in [
            NetworkSpec::mlp(vec![2, 3], 3, 8).with_homogeneous(true),
            NetworkSpec::conv(vec![2, 5, 5], 2, 4).with_homogeneous(true),
        ] {
            let net = Network::<f64>::build(&spec, 9).unwrap();
            let mut shape = vec![3];
            shape.extend(&spec.input_shape);
            let x = dense(&shape, 2);
            let base = net.features(&Input::Dense(x.clone())).unwrap();
            for c in [0.5, 2.0, 10.0] {
                let scaled = net.features(&Input::Dense(x.map(|v| c * v).unwrap())).unwrap();
                for (s, b) in scaled.values().iter().zip(base.values()) {
                    assert!((s - c * b).abs() <= 1e-9 * (c * b).abs().max(1e-6), "{} vs {}", s, c * b);
                }
            }
        }
    }

    #[test]
    fn examples_do_not_interact_within_a_batch() {
        let spec = NetworkSpec::conv(vec![2, 6, 6], 1, 4);
        let net = Network::<f32>::build(&spec, 3).unwrap();
        let x = dense(&[8, 2, 6, 6], 5);
        let x32 = Tensor::<f32>::new(x.shape().to_vec(), x.values().iter().map(|&v| v as f32).collect()).unwrap();
        let full = net.features(&Input::Dense(x32.clone())).unwrap();
        let one = Tensor::new(vec![1, 2, 6, 6], x32.values()[72 * 5..72 * 6].to_vec()).unwrap();
        let single = net.features(&Input::Dense(one)).unwrap();
        assert_eq!(single.values(), &full.values()[64 * 5..64 * 6]);

        let tspec = NetworkSpec::token(12, 8, 2, 8);
        let tnet = Network::<f32>::build(&tspec, 1).unwrap();
        let seqs: Vec<Vec<u32>> = (0..8).map(|i| (0..(i % 5 + 1)).map(|j| 2 + ((i + j) % 10) as u32).collect()).collect();
        let full = tnet.features(&Input::Tokens(seqs.clone())).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let single = tnet.features(&Input::Tokens(vec![s.clone()])).unwrap();
            assert_eq!(single.values(), &full.values()[64 * i..64 * (i + 1)], "row {i}");
        }
    }

    #[test]
    fn token_input_errors() {
        let spec = NetworkSpec::token(5, 4, 1, 4);
        let net = Network::<f32>::build(&spec, 0).unwrap();
        let err = net.features(&Input::Tokens(vec![vec![2, 3], vec![2, 7, 1]])).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Data(_)));
        assert!(msg.contains("token id 7") && msg.contains("sequence 1") && msg.contains("position 1"), "{msg}");
        assert!(net.features(&Input::Tokens(vec![vec![2; 5]])).is_err());
    }

    #[test]
    fn frozen_network_rejects_training() {
        let spec = NetworkSpec::mlp(vec![3], 1, 4).with_feature_dim(2);
        let mut net = Network::<f64>::build(&spec, 0).unwrap();
        let mut state = OptimizerState::new(net.params(), SgdConfig { learning_rate: 0.1, momentum: 0.9 }).unwrap();
        let x = Input::Dense(dense(&[2, 3], 1));
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &x, true).unwrap();
        let tgt = tape.constant(Tensor::zeros(vec![2, 2]));
        let loss = tape.mse(out, tgt).unwrap();
        let grads = tape.backward(loss).unwrap();
        net.freeze();
        let before = net.params().to_vec();
        assert!(net.sgd_step(&grads, &mut state).is_err());
        assert!(net.forward(&mut Tape::new(), &x, true).is_err());
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn network_gradients_match_finite_differences() {
        use crate::engine::gradcheck::check_function;
        let specs = [
            NetworkSpec::mlp(vec![4], 2, 5).with_feature_dim(3),
            NetworkSpec::conv(vec![2, 4, 4], 1, 3).with_feature_dim(3),
        ];
        for spec in specs {
            let net = Network::<f64>::build(&spec, 17).unwrap();
            let mut shape = vec![2];
            shape.extend(&spec.input_shape);
            let x = Input::Dense(dense(&shape, 8));
            let tgt = dense(&[2, 3], 12);
            let check = check_function("net", net.params(), &|tape, vars| {
                // the probed leaves are re-registered by forward under the same slots
                let vals: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.value(v).clone()).collect();
                let mut probe = net.clone();
                probe.set_params(vals)?;
                let out = probe.forward(tape, &x, true)?;
                let t = tape.constant(tgt.clone());
                tape.mse(out, t)
            })
            .unwrap();
            assert!(check.passed(), "{:?} {}", spec.kind, check.max_rel_error);
        }
    }
}
