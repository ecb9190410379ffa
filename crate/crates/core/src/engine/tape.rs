use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom, KSIZE};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F: Real> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<F>,
    },
    Relu(Var),
    Add(Var, Var),
    Reshape(Var),
    MeanPool {
        x: Var,
        mask: Option<Vec<bool>>,
        counts: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        x: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        q: Vec<F>,
        k: Vec<F>,
        v: Vec<F>,
        probs: Vec<F>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    param: Option<usize>,
}

/// Records one forward computation so it can be differentiated once.
///
/// Parameters enter through [`Tape::param`] with a slot number; the
/// gradients returned by [`Tape::backward`] are keyed by that slot.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss, keyed by parameter slot.
#[derive(Debug, Clone)]
pub struct Gradients<F: Real> {
    by_slot: BTreeMap<usize, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, slot: usize) -> Option<&Tensor<F>> {
        self.by_slot.get(&slot)
    }

    pub fn len(&self) -> usize {
        self.by_slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_slot.is_empty()
    }

    /// Writes each gradient into the `grad` field of the parameter in the
    /// same slot. Parameters without a gradient get an all-zero one.
    pub fn fill(&self, params: &mut [Tensor<F>]) -> Result<()> {
        for (slot, p) in params.iter_mut().enumerate() {
            match self.by_slot.get(&slot) {
                Some(g) => {
                    if g.shape() != p.shape() {
                        return Err(Error::Dimension(format!(
                            "gradient for slot {slot} has shape {:?}, parameter has {:?}",
                            g.shape(),
                            p.shape()
                        )));
                    }
                    p.set_grad(g.values().to_vec())?;
                }
                None => p.set_grad(vec![F::zero(); p.len()])?,
            }
        }
        Ok(())
    }
}

fn dims2(t: &Tensor<impl Real>, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        ref s => Err(Error::Dimension(format!("{what} must be 2-d, got shape {s:?}"))),
    }
}

fn dims3(t: &Tensor<impl Real>, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        ref s => Err(Error::Dimension(format!("{what} must be 3-d, got shape {s:?}"))),
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf; its gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, value: &Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Tensor::from_parts(value.shape().to_vec(), value.values().to_vec()),
            op: Op::Leaf,
            requires_grad: true,
            param: Some(slot),
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        let value = Tensor::from_parts(value.shape().to_vec(), value.into_values());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var], name: &str) -> Result<Var> {
        value.check_finite(name)?;
        let requires_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `x[b×m] · w[m×p] + bias[p]`
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (b, m) = dims2(self.value(x), "linear input")?;
        let (m2, p) = dims2(self.value(w), "linear weight")?;
        if m != m2 {
            return Err(Error::Dimension(format!(
                "linear input {:?} incompatible with weight {:?}",
                self.shape(x),
                self.shape(w)
            )));
        }
        let mut out = vec![F::zero(); b * p];
        if let Some(bv) = bias {
            let bias_t = self.value(bv);
            if bias_t.shape() != [p] {
                return Err(Error::Dimension(format!(
                    "linear bias {:?} does not match output width {p}",
                    bias_t.shape()
                )));
            }
            for row in out.chunks_mut(p) {
                row.copy_from_slice(bias_t.values());
            }
        }
        kernels::matmul_acc(self.value(x).values(), self.value(w).values(), &mut out, b, m, p);
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.push(
            Tensor::from_parts(vec![b, p], out),
            Op::Linear { x, w, b: bias },
            &inputs,
            "linear",
        )
    }

    /// 3×3 cross-correlation of `x[b×c×h×w]` with `kernel[o×c×3×3]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (batch, in_ch, height, width) = match *self.shape(x) {
            [a, b, c, d] => (a, b, c, d),
            ref s => return Err(Error::Dimension(format!("conv2d input must be 4-d, got {s:?}"))),
        };
        let out_ch = match *self.shape(kernel) {
            [o, c, KSIZE, KSIZE] if c == in_ch => o,
            ref s => {
                return Err(Error::Dimension(format!(
                    "conv2d kernel {s:?} incompatible with input {:?}",
                    self.shape(x)
                )))
            }
        };
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be >= 1".into()));
        }
        if pad > 1 {
            return Err(Error::Dimension(format!("conv2d pad must be 0 or 1, got {pad}")));
        }
        let extent = |n: usize| (n + 2 * pad).checked_sub(KSIZE).map(|v| v / stride + 1);
        let (out_h, out_w) = match (extent(height), extent(width)) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::Dimension(format!(
                    "conv2d output extent < 1 for input {:?}, stride {stride}, pad {pad}",
                    self.shape(x)
                )))
            }
        };
        if let Some(bv) = bias {
            if self.shape(bv) != [out_ch] {
                return Err(Error::Dimension(format!(
                    "conv2d bias {:?} does not match {out_ch} output channels",
                    self.shape(bv)
                )));
            }
        }
        let geom = ConvGeom {
            batch,
            in_ch,
            height,
            width,
            out_h,
            out_w,
            stride,
            pad,
        };
        let cols = kernels::im2col(self.value(x).values(), &geom);
        let ncols = geom.columns();
        let mut out_cm = vec![F::zero(); out_ch * ncols];
        if let Some(bv) = bias {
            for (o, &bval) in self.value(bv).values().iter().enumerate() {
                out_cm[o * ncols..(o + 1) * ncols].fill(bval);
            }
        }
        kernels::matmul_acc(
            self.value(kernel).values(),
            &cols,
            &mut out_cm,
            out_ch,
            geom.patch_len(),
            ncols,
        );
        let plane = out_h * out_w;
        let out = kernels::channel_major_to_batch_major(&out_cm, out_ch, batch, plane);
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push(
            Tensor::from_parts(vec![batch, out_ch, out_h, out_w], out),
            Op::Conv2d {
                x,
                k: kernel,
                b: bias,
                geom,
                cols,
            },
            &inputs,
            "conv2d",
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out: Vec<F> = t
            .values()
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Relu(x), &[x], "relu")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<F> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Add(a, b), &[a, b], "add")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        self.push(t, Op::Reshape(x), &[x], "reshape")
    }

    /// Mean over the sequence axis of `x[b×s×d]`, optionally restricted to
    /// positions where `mask` (length `b·s`) is true.
    pub fn mean_pool(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let (b, s, d) = dims3(self.value(x), "mean_pool input")?;
        if let Some(m) = &mask {
            if m.len() != b * s {
                return Err(Error::Dimension(format!(
                    "mean_pool mask has {} entries, expected {}",
                    m.len(),
                    b * s
                )));
            }
        }
        let valid = |bi: usize, si: usize| mask.as_ref().map_or(true, |m| m[bi * s + si]);
        let src = self.value(x).values();
        let mut out = vec![F::zero(); b * d];
        let mut counts = Vec::with_capacity(b);
        for bi in 0..b {
            let row = &mut out[bi * d..(bi + 1) * d];
            let mut count = 0usize;
            for si in 0..s {
                if !valid(bi, si) {
                    continue;
                }
                count += 1;
                for (o, &v) in row.iter_mut().zip(&src[(bi * s + si) * d..][..d]) {
                    *o = *o + v;
                }
            }
            if count == 0 {
                return Err(Error::Dimension(format!(
                    "mean_pool over empty sequence at batch index {bi}"
                )));
            }
            let inv = F::one() / F::of(count as f64);
            row.iter_mut().for_each(|o| *o = *o * inv);
            counts.push(count);
        }
        self.push(
            Tensor::from_parts(vec![b, d], out),
            Op::MeanPool { x, mask, counts },
            &[x],
            "mean_pool",
        )
    }

    /// Spatial mean of `x[b×c×h×w]`, giving `[b×c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, plane) = match *self.shape(x) {
            [b, c, h, w] => (b, c, h * w),
            ref s => return Err(Error::Dimension(format!("global_avg_pool needs 4-d input, got {s:?}"))),
        };
        let inv = F::one() / F::of(plane as f64);
        let out: Vec<F> = self
            .value(x)
            .values()
            .chunks(plane)
            .map(|ch| ch.iter().fold(F::zero(), |acc, &v| acc + v) * inv)
            .collect();
        self.push(
            Tensor::from_parts(vec![b, c], out),
            Op::GlobalAvgPool(x),
            &[x],
            "global_avg_pool",
        )
    }

    /// Gathers rows of `table[v×d]` for `ids` laid out as `[b×s]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], batch: usize, seq: usize) -> Result<Var> {
        if batch == 0 || seq == 0 {
            return Err(Error::Dimension(format!(
                "embedding lookup over empty batch or sequence ({batch}×{seq})"
            )));
        }
        if ids.len() != batch * seq {
            return Err(Error::Dimension(format!(
                "embedding ids has {} entries, expected {batch}×{seq}",
                ids.len()
            )));
        }
        let (vocab, d) = dims2(self.value(table), "embedding table")?;
        if let Some(pos) = ids.iter().position(|&id| id >= vocab) {
            return Err(Error::Data(format!(
                "token id {} at flat position {pos} out of range for table of {vocab} rows",
                ids[pos]
            )));
        }
        let tv = self.value(table).values();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        self.push(
            Tensor::from_parts(vec![batch, seq, d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
            "embedding",
        )
    }

    /// Single-head scaled dot-product self-attention on `x[b×s×d]`.
    /// Keys where `key_mask` is false are excluded from every softmax.
    pub fn attention(
        &mut self,
        x: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (b, s, d) = dims3(self.value(x), "attention input")?;
        for w in [wq, wk, wv] {
            if self.shape(w) != [d, d] {
                return Err(Error::Dimension(format!(
                    "attention projection {:?} must be {d}×{d}",
                    self.shape(w)
                )));
            }
        }
        if let Some(m) = key_mask {
            if m.len() != b * s {
                return Err(Error::Dimension(format!(
                    "attention mask has {} entries, expected {}",
                    m.len(),
                    b * s
                )));
            }
        }
        let rows = b * s;
        let xv = self.value(x).values();
        let project = |w: Var| {
            let mut out = vec![F::zero(); rows * d];
            kernels::matmul_acc(xv, self.value(w).values(), &mut out, rows, d, d);
            out
        };
        let (q, k, v) = (project(wq), project(wk), project(wv));
        let scale = F::one() / F::of(d as f64).sqrt();
        let mut probs = vec![F::zero(); b * s * s];
        let mut out = vec![F::zero(); rows * d];
        for bi in 0..b {
            let qb = &q[bi * s * d..(bi + 1) * s * d];
            let kb = &k[bi * s * d..(bi + 1) * s * d];
            let vb = &v[bi * s * d..(bi + 1) * s * d];
            let pb = &mut probs[bi * s * s..(bi + 1) * s * s];
            kernels::matmul_a_bt_acc(qb, kb, pb, s, d, s);
            let valid = |j: usize| key_mask.map_or(true, |m| m[bi * s + j]);
            if !(0..s).any(valid) {
                return Err(Error::Dimension(format!(
                    "attention over empty sequence at batch index {bi}"
                )));
            }
            for i in 0..s {
                let row = &mut pb[i * s..(i + 1) * s];
                let mut max = F::neg_infinity();
                for (j, r) in row.iter_mut().enumerate() {
                    *r = *r * scale;
                    if valid(j) && *r > max {
                        max = *r;
                    }
                }
                let mut total = F::zero();
                for (j, r) in row.iter_mut().enumerate() {
                    *r = if valid(j) { (*r - max).exp() } else { F::zero() };
                    total = total + *r;
                }
                row.iter_mut().for_each(|r| *r = *r / total);
            }
            kernels::matmul_acc(pb, vb, &mut out[bi * s * d..(bi + 1) * s * d], s, s, d);
        }
        self.push(
            Tensor::from_parts(vec![b, s, d], out),
            Op::Attention {
                x,
                wq,
                wk,
                wv,
                q,
                k,
                v,
                probs,
            },
            &[x, wq, wk, wv],
            "attention",
        )
    }

    /// Mean over examples of the squared L2 distance between rows.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (b, _) = dims2(self.value(pred), "mse prediction")?;
        if self.shape(pred) != self.shape(target) {
            return Err(Error::Dimension(format!(
                "mse shapes differ: {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        let sum: f64 = self
            .value(pred)
            .values()
            .iter()
            .zip(self.value(target).values())
            .map(|(&p, &t)| {
                let diff = (p - t).as_f64();
                diff * diff
            })
            .sum();
        self.push(
            Tensor::scalar(F::of(sum / b as f64)),
            Op::Mse { pred, target },
            &[pred, target],
            "mse",
        )
    }

    /// Reverse pass from a scalar `loss`. Gradients start from zero on every
    /// call; nothing accumulates across calls.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if matches!(root.op, Op::Leaf) {
            return Err(Error::Usage(
                "backward called on a value with no recorded computation".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let mut by_slot = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Some(slot) = node.param {
                match by_slot.get_mut(&slot) {
                    Some(existing) => {
                        let existing: &mut Tensor<F> = existing;
                        for (e, &c) in existing.values_mut().iter_mut().zip(&g) {
                            *e = *e + c;
                        }
                    }
                    None => {
                        by_slot.insert(slot, Tensor::from_parts(node.value.shape().to_vec(), g));
                    }
                }
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { by_slot })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<F>>], v: Var, contrib: Vec<F>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e = *e + c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xt = self.value(*x);
                let (batch, m) = (xt.shape()[0], xt.shape()[1]);
                let p = self.shape(*w)[1];
                if self.needs(*x) {
                    let mut dx = vec![F::zero(); batch * m];
                    kernels::matmul_a_bt_acc(g, self.value(*w).values(), &mut dx, batch, p, m);
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![F::zero(); m * p];
                    kernels::matmul_at_b_acc(xt.values(), g, &mut dw, batch, m, p);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(bv) = b {
                    if self.needs(*bv) {
                        let mut db = vec![F::zero(); p];
                        for row in g.chunks(p) {
                            for (d, &r) in db.iter_mut().zip(row) {
                                *d = *d + r;
                            }
                        }
                        self.accumulate(grads, *bv, db);
                    }
                }
            }
            Op::Conv2d {
                x,
                k,
                b,
                geom,
                cols,
            } => {
                let out_ch = self.shape(*k)[0];
                let plane = geom.out_h * geom.out_w;
                let ncols = geom.columns();
                let g_cm = kernels::batch_major_to_channel_major(g, out_ch, geom.batch, plane);
                if self.needs(*k) {
                    let mut dk = vec![F::zero(); out_ch * geom.patch_len()];
                    kernels::matmul_a_bt_acc(&g_cm, cols, &mut dk, out_ch, ncols, geom.patch_len());
                    self.accumulate(grads, *k, dk);
                }
                if self.needs(*x) {
                    let mut dcols = vec![F::zero(); geom.patch_len() * ncols];
                    kernels::matmul_at_b_acc(
                        self.value(*k).values(),
                        &g_cm,
                        &mut dcols,
                        out_ch,
                        geom.patch_len(),
                        ncols,
                    );
                    let mut dx = vec![F::zero(); self.value(*x).len()];
                    kernels::col2im_acc(&dcols, geom, &mut dx);
                    self.accumulate(grads, *x, dx);
                }
                if let Some(bv) = b {
                    if self.needs(*bv) {
                        let db = g_cm
                            .chunks(ncols)
                            .map(|row| row.iter().fold(F::zero(), |a, &v| a + v))
                            .collect();
                        self.accumulate(grads, *bv, db);
                    }
                }
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .values()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > F::zero() { gv } else { F::zero() })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::MeanPool { x, mask, counts } => {
                let (b, s, d) = dims3(self.value(*x), "mean_pool input")?;
                let mut dx = vec![F::zero(); b * s * d];
                for bi in 0..b {
                    let inv = F::one() / F::of(counts[bi] as f64);
                    for si in 0..s {
                        if mask.as_ref().map_or(true, |m| m[bi * s + si]) {
                            let dst = &mut dx[(bi * s + si) * d..][..d];
                            for (o, &gv) in dst.iter_mut().zip(&g[bi * d..(bi + 1) * d]) {
                                *o = gv * inv;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.shape(*x);
                let plane = shape[2] * shape[3];
                let inv = F::one() / F::of(plane as f64);
                let mut dx = Vec::with_capacity(self.value(*x).len());
                for &gv in g {
                    dx.extend(std::iter::repeat(gv * inv).take(plane));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let mut dt = vec![F::zero(); self.value(*table).len()];
                for (pos, &id) in ids.iter().enumerate() {
                    let dst = &mut dt[id * d..(id + 1) * d];
                    for (o, &gv) in dst.iter_mut().zip(&g[pos * d..(pos + 1) * d]) {
                        *o = *o + gv;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::Attention {
                x,
                wq,
                wk,
                wv,
                q,
                k,
                v,
                probs,
            } => self.attention_backward(*x, [*wq, *wk, *wv], [q, k, v], probs, g, grads)?,
            Op::Mse { pred, target } => {
                let pv = self.value(*pred).values();
                let tv = self.value(*target).values();
                let b = self.shape(*pred)[0];
                let coeff = F::of(2.0 / b as f64) * g[0];
                let dp: Vec<F> = pv.iter().zip(tv).map(|(&p, &t)| coeff * (p - t)).collect();
                if self.needs(*target) {
                    self.accumulate(grads, *target, dp.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *pred, dp);
            }
        }
        Ok(())
    }

    fn attention_backward(
        &self,
        x: Var,
        weights: [Var; 3],
        qkv: [&Vec<F>; 3],
        probs: &[F],
        g: &[F],
        grads: &mut [Option<Vec<F>>],
    ) -> Result<()> {
        let (b, s, d) = dims3(self.value(x), "attention input")?;
        let [q, k, v] = qkv;
        let scale = F::one() / F::of(d as f64).sqrt();
        let rows = b * s;
        let mut dq = vec![F::zero(); rows * d];
        let mut dk = vec![F::zero(); rows * d];
        let mut dv = vec![F::zero(); rows * d];
        let mut dprobs = vec![F::zero(); s * s];
        for bi in 0..b {
            let span = bi * s * d..(bi + 1) * s * d;
            let pb = &probs[bi * s * s..(bi + 1) * s * s];
            let gb = &g[span.clone()];
            dprobs.fill(F::zero());
            kernels::matmul_a_bt_acc(gb, &v[span.clone()], &mut dprobs, s, d, s);
            kernels::matmul_at_b_acc(pb, gb, &mut dv[span.clone()], s, s, d);
            // softmax Jacobian, then the 1/sqrt(d) scaling
            for i in 0..s {
                let prow = &pb[i * s..(i + 1) * s];
                let drow = &mut dprobs[i * s..(i + 1) * s];
                let dot = prow.iter().zip(drow.iter()).fold(F::zero(), |a, (&p, &dp)| a + p * dp);
                for (dr, &p) in drow.iter_mut().zip(prow) {
                    *dr = p * (*dr - dot) * scale;
                }
            }
            kernels::matmul_acc(&dprobs, &k[span.clone()], &mut dq[span.clone()], s, s, d);
            kernels::matmul_at_b_acc(&dprobs, &q[span.clone()], &mut dk[span.clone()], s, s, d);
        }
        let xv = self.value(x).values();
        let mut dx = vec![F::zero(); rows * d];
        for (w, dproj) in weights.into_iter().zip([&dq, &dk, &dv]) {
            if self.needs(w) {
                let mut dw = vec![F::zero(); d * d];
                kernels::matmul_at_b_acc(xv, dproj, &mut dw, rows, d, d);
                self.accumulate(grads, w, dw);
            }
            if self.needs(x) {
                kernels::matmul_a_bt_acc(dproj, self.value(w).values(), &mut dx, rows, d, d);
            }
        }
        self.accumulate(grads, x, dx);
        Ok(())
    }
}
