//! Desk-scale causal decoder stack.
//!
//! Each layer is pre-norm: `x + MHSA(rms(x) * g1)` followed by
//! `y + W2 gelu(W1 (rms(y) * g2) + b1) + b2`. There is no positional
//! encoding; position enters through the token embeddings.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const RMS_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    /// Longest accepted token sequence.
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            heads: 4,
            model_dim: 32,
            ff_dim: 64,
            max_seq: 32_768,
            seed: 0,
        }
    }
}

impl StackConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return Err(Error::invalid("stack dimensions must be non-zero"));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Parameters of one decoder layer. Head `h` owns columns
/// `h*dh..(h+1)*dh` of `wq`, `wk` and `wv`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub norm1: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub norm2: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "norm1", "wq", "wk", "wv", "wo", "norm2", "w1", "b1", "w2", "b2",
];

impl LayerWeights {
    pub fn random(d: usize, ff: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut mat = |r: usize, c: usize| {
            Array2::from_shape_simple_fn((r, c), || rng.random_range(-bound..bound))
        };
        Self {
            norm1: Array1::ones(d),
            wq: mat(d, d),
            wk: mat(d, d),
            wv: mat(d, d),
            wo: mat(d, d),
            norm2: Array1::ones(d),
            w1: mat(d, ff),
            b1: Array1::zeros(ff),
            w2: mat(ff, d),
            b2: Array1::zeros(d),
        }
    }

    pub fn zeros(d: usize, ff: usize) -> Self {
        Self {
            norm1: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            norm2: Array1::zeros(d),
            w1: Array2::zeros((d, ff)),
            b1: Array1::zeros(ff),
            w2: Array2::zeros((ff, d)),
            b2: Array1::zeros(d),
        }
    }

    /// Tensor shapes in declaration order.
    pub fn shapes(&self) -> [Vec<usize>; 10] {
        [
            self.norm1.shape().to_vec(),
            self.wq.shape().to_vec(),
            self.wk.shape().to_vec(),
            self.wv.shape().to_vec(),
            self.wo.shape().to_vec(),
            self.norm2.shape().to_vec(),
            self.w1.shape().to_vec(),
            self.b1.shape().to_vec(),
            self.w2.shape().to_vec(),
            self.b2.shape().to_vec(),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            self.norm1.as_slice().expect("standard layout"),
            self.wq.as_slice().expect("standard layout"),
            self.wk.as_slice().expect("standard layout"),
            self.wv.as_slice().expect("standard layout"),
            self.wo.as_slice().expect("standard layout"),
            self.norm2.as_slice().expect("standard layout"),
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.norm1.as_slice_mut().expect("standard layout"),
            self.wq.as_slice_mut().expect("standard layout"),
            self.wk.as_slice_mut().expect("standard layout"),
            self.wv.as_slice_mut().expect("standard layout"),
            self.wo.as_slice_mut().expect("standard layout"),
            self.norm2.as_slice_mut().expect("standard layout"),
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &LayerWeights, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStack {
    pub config: StackConfig,
    pub layers: Vec<LayerWeights>,
}

impl DecoderStack {
    /// Seeded uniform(-1/sqrt(d), 1/sqrt(d)) initialisation.
    pub fn random(config: StackConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = (0..config.layers)
            .map(|_| LayerWeights::random(config.model_dim, config.ff_dim, &mut rng))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn zeros_like(&self) -> Vec<LayerWeights> {
        self.layers
            .iter()
            .map(|_| LayerWeights::zeros(self.config.model_dim, self.config.ff_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.tensors().iter().map(|t| t.len()).sum::<usize>())
            .sum()
    }

    fn check_input(&self, seq: &TokenSequence) -> Result<()> {
        seq.validate()?;
        if seq.len() > self.config.max_seq {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: self.config.max_seq,
            });
        }
        if seq.embeddings.ncols() != self.config.model_dim {
            return Err(Error::invalid(format!(
                "embedding width {} does not match model_dim {}",
                seq.embeddings.ncols(),
                self.config.model_dim
            )));
        }
        Ok(())
    }

    /// Inference forward pass. Returns the final hidden states and, for
    /// every layer and head, the attention rows of the turn-boundary tokens
    /// restricted to vision columns.
    pub fn forward(&self, seq: &TokenSequence) -> Result<(Array2<f64>, AttentionRecord)> {
        self.forward_layers(seq, self.layers.len())
    }

    /// Like [`forward`](Self::forward) but stops after `depth` layers.
    pub fn forward_layers(
        &self,
        seq: &TokenSequence,
        depth: usize,
    ) -> Result<(Array2<f64>, AttentionRecord)> {
        self.check_input(seq)?;
        let vis = seq.vision_range();
        let mut x = seq.embeddings.clone();
        let mut layers = Vec::with_capacity(depth);
        for w in self.layers.iter().take(depth) {
            let (out, rows) = layer_forward_rows(w, &x, self.config.heads, &seq.turn_ends, vis.clone());
            layers.push(rows);
            x = out;
        }
        Ok((x, AttentionRecord { layers }))
    }

    /// Training forward pass that keeps every intermediate needed by the
    /// backward pass.
    pub fn forward_cached(&self, seq: &TokenSequence) -> Result<ForwardCache> {
        self.check_input(seq)?;
        let mut x = seq.embeddings.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for w in &self.layers {
            let cache = layer_forward_cached(w, &x, self.config.heads);
            x = cache.out.clone();
            layers.push(cache);
        }
        Ok(ForwardCache { layers })
    }

    /// Attention rows of `head` in 1-based `layer`, obtained by running the
    /// fused attention kernel with an identity basis as the value matrix:
    /// the kernel output at each query row is then the attention row itself.
    pub fn extract_rows_via_value_matrix(
        &self,
        seq: &TokenSequence,
        layer: usize,
        head: usize,
    ) -> Result<Array2<f64>> {
        if layer == 0 || layer > self.layers.len() || head >= self.config.heads {
            return Err(Error::invalid(format!("no layer {layer} / head {head}")));
        }
        let (x, _) = self.forward_layers(seq, layer - 1)?;
        let w = &self.layers[layer - 1];
        let dh = self.config.head_dim();
        let (_, u) = rms_norm(&x, &w.norm1);
        let cols = s![.., head * dh..(head + 1) * dh];
        let q = u.dot(&w.wq.slice(cols));
        let k = u.dot(&w.wk.slice(cols));
        let vis = seq.vision_range();
        let mut basis = Array2::<f64>::zeros((seq.len(), vis.len()));
        for (c, i) in vis.enumerate() {
            basis[[i, c]] = 1.0;
        }
        Ok(fused_attention(q.view(), k.view(), basis.view(), &seq.turn_ends, true))
    }
}

/// Deep-copies teacher layers `indices` (1-based, strictly increasing) into
/// a new student stack.
pub fn init_student_from_teacher(teacher: &DecoderStack, indices: &[usize]) -> Result<DecoderStack> {
    if indices.is_empty() {
        return Err(Error::invalid("student needs at least one layer"));
    }
    let m = teacher.layers.len();
    for w in indices.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::invalid(format!(
                "teacher indices must be strictly increasing, got {indices:?}"
            )));
        }
    }
    if indices[0] == 0 || indices[indices.len() - 1] > m {
        return Err(Error::invalid(format!(
            "teacher indices {indices:?} out of range 1..={m}"
        )));
    }
    let layers = indices.iter().map(|&i| teacher.layers[i - 1].clone()).collect();
    Ok(DecoderStack {
        config: StackConfig {
            layers: indices.len(),
            ..teacher.config
        },
        layers,
    })
}

/// Contiguous segment sizes of a multimodal sequence, in order
/// `[system, vision-lr, vision-hr, text]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    pub sys: usize,
    pub lr: usize,
    pub hr: usize,
    pub txt: usize,
}

impl Segments {
    pub fn total(&self) -> usize {
        self.sys + self.lr + self.hr + self.txt
    }

    pub fn vision(&self) -> Range<usize> {
        self.sys..self.sys + self.lr + self.hr
    }

    /// hr columns relative to the start of the vision block.
    pub fn hr_columns(&self) -> Range<usize> {
        self.lr..self.lr + self.hr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub embeddings: Array2<f64>,
    pub segments: Segments,
    /// Absolute indices of the last text token of each dialogue turn.
    pub turn_ends: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn vision_range(&self) -> Range<usize> {
        self.segments.vision()
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.total() != self.len() {
            return Err(Error::invalid(format!(
                "segments sum to {} but sequence has {} tokens",
                self.segments.total(),
                self.len()
            )));
        }
        if self.segments.txt == 0 || self.turn_ends.is_empty() {
            return Err(Error::invalid("sequence needs text and at least one turn"));
        }
        let txt_start = self.len() - self.segments.txt;
        let mut prev = None;
        for &t in &self.turn_ends {
            if t < txt_start || t >= self.len() || prev.is_some_and(|p| t <= p) {
                return Err(Error::invalid(format!(
                    "turn boundary {t} is not an increasing text position"
                )));
            }
            prev = Some(t);
        }
        if self.embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embeddings contain non-finite values"));
        }
        Ok(())
    }
}

/// Attention rows `[layer][head]`, each `turns x n_vision`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Vec<Array2<f64>>>,
}

impl AttentionRecord {
    pub fn rows(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer - 1][head]
    }

    /// Head-averaged last-turn row of 1-based `layer`.
    pub fn head_mean_last_row(&self, layer: usize) -> Array1<f64> {
        let heads = &self.layers[layer - 1];
        let mut acc = Array1::<f64>::zeros(heads[0].ncols());
        for h in heads {
            acc += &h.row(h.nrows() - 1);
        }
        acc / heads.len() as f64
    }

    /// Binary attention-map file: `ATTN`, u32 version 1, u32 layers,
    /// u32 heads, u32 rows, u32 cols, then f32 LE `[layer][head][row][col]`.
    pub fn encode(&self) -> Vec<u8> {
        let heads = self.layers.first().map_or(0, Vec::len);
        let (rows, cols) = self
            .layers
            .first()
            .and_then(|l| l.first())
            .map_or((0, 0), |a| a.dim());
        let mut out = Vec::with_capacity(24 + self.layers.len() * heads * rows * cols * 4);
        out.extend_from_slice(b"ATTN");
        for v in [1u32, self.layers.len() as u32, heads as u32, rows as u32, cols as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for layer in &self.layers {
            for head in layer {
                for v in head.iter() {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..4] != b"ATTN" {
            return Err(Error::format("attention map", "missing ATTN header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
        let (version, layers, heads, rows, cols) = (word(0), word(1), word(2), word(3), word(4));
        if version != 1 {
            return Err(Error::format("attention map", format!("unsupported version {version}")));
        }
        let n = layers * heads * rows * cols;
        let body = &bytes[24..];
        if body.len() != n * 4 {
            return Err(Error::format(
                "attention map",
                format!("expected {} payload bytes, found {}", n * 4, body.len()),
            ));
        }
        let mut vals = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
        let layers = (0..layers)
            .map(|_| {
                (0..heads)
                    .map(|_| Array2::from_shape_fn((rows, cols), |_| vals.next().expect("sized")))
                    .collect()
            })
            .collect();
        Ok(Self { layers })
    }
}

/// Per-layer intermediates of [`DecoderStack::forward_cached`].
#[derive(Clone, Debug)]
pub struct LayerCache {
    pub x: Array2<f64>,
    pub inv_rms1: Array1<f64>,
    pub u: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Full causal attention matrix per head.
    pub probs: Vec<Array2<f64>>,
    pub attn: Array2<f64>,
    pub y: Array2<f64>,
    pub inv_rms2: Array1<f64>,
    pub z: Array2<f64>,
    pub pre: Array2<f64>,
    pub act: Array2<f64>,
    pub out: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Rows `turn_ends` x vision columns of `head` at 0-based layer `layer`.
    pub fn attention_rows(&self, layer: usize, head: usize, seq: &TokenSequence) -> Array2<f64> {
        let p = &self.layers[layer].probs[head];
        let vis = seq.vision_range();
        Array2::from_shape_fn((seq.turn_ends.len(), vis.len()), |(r, c)| {
            p[[seq.turn_ends[r], vis.start + c]]
        })
    }

    pub fn record(&self, seq: &TokenSequence) -> AttentionRecord {
        AttentionRecord {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, c)| (0..c.probs.len()).map(|h| self.attention_rows(l, h, seq)).collect())
                .collect(),
        }
    }
}

/// Row-wise RMS normalisation followed by the gain. Returns `(1/rms, out)`.
pub(crate) fn rms_norm(x: &Array2<f64>, gain: &Array1<f64>) -> (Array1<f64>, Array2<f64>) {
    let d = x.ncols() as f64;
    let inv = x.map_axis(Axis(1), |r| 1.0 / (r.dot(&r) / d + RMS_EPS).sqrt());
    let mut out = x.clone();
    for (mut row, &s) in out.axis_iter_mut(Axis(0)).zip(inv.iter()) {
        row *= s;
        row *= gain;
    }
    (inv, out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Softmax of `q_i . k_j * scale` over `j < len`, written into `out[..len]`.
fn softmax_row(qi: ArrayView1<f64>, k: ArrayView2<f64>, len: usize, scale: f64, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for j in 0..len {
        let s = qi.dot(&k.row(j)) * scale;
        out[j] = s;
        max = max.max(s);
    }
    let mut sum = 0.0;
    for v in &mut out[..len] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut out[..len] {
        *v /= sum;
    }
}

/// Row-stochastic `softmax(Q K^T / sqrt(d_h))`; with `causal`, entries above
/// the diagonal are exactly zero.
pub fn attention_scores(q: ArrayView2<f64>, k: ArrayView2<f64>, causal: bool) -> Array2<f64> {
    let n = q.nrows();
    let m = k.nrows();
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut p = Array2::<f64>::zeros((n, m));
    let mut buf = vec![0.0; m];
    for i in 0..n {
        let len = if causal { (i + 1).min(m) } else { m };
        softmax_row(q.row(i), k, len, scale, &mut buf);
        for j in 0..len {
            p[[i, j]] = buf[j];
        }
    }
    p
}

/// Streaming attention kernel: computes `softmax(Q K^T / sqrt(d_h)) V` for
/// the requested query rows with an online max/sum, never materialising an
/// attention row.
pub fn fused_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    rows: &[usize],
    causal: bool,
) -> Array2<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut out = Array2::<f64>::zeros((rows.len(), v.ncols()));
    for (r, &i) in rows.iter().enumerate() {
        let len = if causal { (i + 1).min(k.nrows()) } else { k.nrows() };
        let qi = q.row(i);
        let mut max = f64::NEG_INFINITY;
        let mut denom = 0.0;
        let mut acc = Array1::<f64>::zeros(v.ncols());
        for j in 0..len {
            let s = qi.dot(&k.row(j)) * scale;
            if s > max {
                let rescale = (max - s).exp();
                acc *= rescale;
                denom *= rescale;
                max = s;
            }
            let w = (s - max).exp();
            denom += w;
            acc.scaled_add(w, &v.row(j));
        }
        out.row_mut(r).assign(&(acc / denom));
    }
    out
}

fn layer_forward_cached(w: &LayerWeights, x: &Array2<f64>, heads: usize) -> LayerCache {
    let d = x.ncols();
    let dh = d / heads;
    let (inv_rms1, u) = rms_norm(x, &w.norm1);
    let q = u.dot(&w.wq);
    let k = u.dot(&w.wk);
    let v = u.dot(&w.wv);
    let mut attn = Array2::<f64>::zeros(x.raw_dim());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = attention_scores(q.slice(cols), k.slice(cols), true);
        let vh = v.slice(cols);
        // same accumulation order as the streaming path, so both agree bitwise
        for i in 0..x.nrows() {
            let mut o = attn.slice_mut(s![i, h * dh..(h + 1) * dh]);
            for j in 0..=i {
                o.scaled_add(p[[i, j]], &vh.row(j));
            }
        }
        probs.push(p);
    }
    let y = x + &attn.dot(&w.wo);
    let (inv_rms2, z) = rms_norm(&y, &w.norm2);
    let pre = z.dot(&w.w1) + &w.b1;
    let act = pre.mapv(gelu);
    let out = &y + &(act.dot(&w.w2) + &w.b2);
    LayerCache {
        x: x.clone(),
        inv_rms1,
        u,
        q,
        k,
        v,
        probs,
        attn,
        y,
        inv_rms2,
        z,
        pre,
        act,
        out,
    }
}

/// Memory-light layer forward: attention is evaluated row by row and only
/// the requested rows (restricted to `vis`) are kept.
fn layer_forward_rows(
    w: &LayerWeights,
    x: &Array2<f64>,
    heads: usize,
    keep: &[usize],
    vis: Range<usize>,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let n = x.nrows();
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (_, u) = rms_norm(x, &w.norm1);
    let q = u.dot(&w.wq);
    let k = u.dot(&w.wk);
    let v = u.dot(&w.wv);
    let mut attn = Array2::<f64>::zeros((n, d));
    let mut kept = Vec::with_capacity(heads);
    let mut buf = vec![0.0; n];
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
        let mut rows = Array2::<f64>::zeros((keep.len(), vis.len()));
        for i in 0..n {
            softmax_row(qh.row(i), kh, i + 1, scale, &mut buf);
            let mut o = attn.slice_mut(s![i, h * dh..(h + 1) * dh]);
            for j in 0..=i {
                o.scaled_add(buf[j], &vh.row(j));
            }
            for (r, _) in keep.iter().enumerate().filter(|(_, &t)| t == i) {
                for (c, j) in vis.clone().enumerate() {
                    rows[[r, c]] = if j <= i { buf[j] } else { 0.0 };
                }
            }
        }
        kept.push(rows);
    }
    let y = x + &attn.dot(&w.wo);
    let (_, z) = rms_norm(&y, &w.norm2);
    let act = (z.dot(&w.w1) + &w.b1).mapv(gelu);
    let out = &y + &(act.dot(&w.w2) + &w.b2);
    (out, kept)
}

/// Binary checkpoint: `TWTS`, u32 version, config block
/// (u32 layers, heads, model_dim, ff_dim, max_seq; u64 seed), then every
/// tensor as f64 LE in declaration order, layer by layer.
pub fn encode_checkpoint(stack: &DecoderStack) -> Vec<u8> {
    let c = &stack.config;
    let mut out = Vec::with_capacity(36 + stack.param_count() * 8);
    out.extend_from_slice(b"TWTS");
    for v in [1u32, c.layers as u32, c.heads as u32, c.model_dim as u32, c.ff_dim as u32, c.max_seq as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    for layer in &stack.layers {
        for t in layer.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DecoderStack> {
    if bytes.len() < 36 || &bytes[..4] != b"TWTS" {
        return Err(Error::format("checkpoint", "missing TWTS header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    if word(0) != 1 {
        return Err(Error::format("checkpoint", format!("unsupported version {}", word(0))));
    }
    let config = StackConfig {
        layers: word(1),
        heads: word(2),
        model_dim: word(3),
        ff_dim: word(4),
        max_seq: word(5),
        seed: u64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes")),
    };
    config.validate()?;
    let mut layers: Vec<LayerWeights> = (0..config.layers)
        .map(|_| LayerWeights::zeros(config.model_dim, config.ff_dim))
        .collect();
    let mut vals = bytes[36..].chunks_exact(8);
    let expected: usize = layers.iter().map(|l| l.tensors().iter().map(|t| t.len()).sum::<usize>()).sum();
    if bytes.len() - 36 != expected * 8 {
        return Err(Error::format(
            "checkpoint",
            format!("expected {expected} parameters, found {} bytes", bytes.len() - 36),
        ));
    }
    for layer in &mut layers {
        for t in layer.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from_le_bytes(vals.next().expect("sized").try_into().expect("8 bytes"));
            }
        }
    }
    Ok(DecoderStack { config, layers })
}

/// JSON sidecar describing the tensors of a checkpoint.
pub fn checkpoint_sidecar(stack: &DecoderStack) -> serde_json::Value {
    let tensors: Vec<_> = stack
        .layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            TENSOR_NAMES
                .iter()
                .zip(l.shapes())
                .map(move |(name, shape)| serde_json::json!({"name": format!("layers.{i}.{name}"), "shape": shape}))
        })
        .collect();
    serde_json::json!({
        "magic": "TWTS",
        "version": 1,
        "config": stack.config,
        "dtype": "f64le",
        "tensors": tensors,
    })
}
