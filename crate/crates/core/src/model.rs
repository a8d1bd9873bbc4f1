// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small encoder-only transformer over patched univariate series.
//!
//! The series is cut into `N = T / P` non-overlapping patches, each patch is
//! embedded linearly and given a learned position vector, and the token
//! stream then passes through `L` pre-norm residual blocks:
//!
//! ```text
//! h ← h + MHA(LN₁(h))
//! h ← h + FF(LN₂(h))        FF(x) = GELU(x·W₁ + b₁)·W₂ + b₂
//! ```
//!
//! There is no final layer norm, so the residual stream at the last layer is
//! a plain sum of every block's contribution. Weights are frozen random
//! draws (SplitMix64 + Box–Muller, σ = 0.02); a ridge-fitted linear readout
//! maps final-layer tokens back to patch values.
//!
//! `forward` records the residual stream after the embedding (index 0) and
//! after each block's feed-forward residual add (index `i` for layer `i`).
//! Skipped layers pass the stream through untouched. When steering is
//! active at layer `i`, `λ·S_i` is added to the stream right after layer
//! `i`, the capture at index `i` records the steered stream, and layers
//! `i+1..=L` consume it.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::PruningPlan;
use crate::error::{Error, Result};
use crate::io::{self, ArtifactKind, Fnv1a, MetaSidecar};
use crate::numerics::{solve_ridge, Matrix};
use crate::steer::{SteerConfig, SteeringMatrix};
use crate::synthgen::{Rng, SeriesSet};

const LN_EPS: f32 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch: usize,
    pub seq_len: usize,
    pub ff_mult: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            dim: 64,
            heads: 4,
            patch: 8,
            seq_len: 128,
            ff_mult: 4,
            init_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("dim", self.dim),
            ("heads", self.heads),
            ("patch", self.patch),
            ("seq_len", self.seq_len),
            ("ff_mult", self.ff_mult),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !self.seq_len.is_multiple_of(self.patch) {
            return Err(Error::InvalidConfig(format!(
                "seq_len {} is not divisible by patch {}",
                self.seq_len, self.patch
            )));
        }
        Ok(())
    }

    /// Token count `N = T / P`.
    pub fn tokens(&self) -> usize {
        self.seq_len / self.patch
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ff_dim(&self) -> usize {
        self.dim * self.ff_mult
    }

    /// Total number of scalars in [`Weights::to_flat`].
    pub fn param_count(&self) -> usize {
        let (d, p, n, f) = (self.dim, self.patch, self.tokens(), self.ff_dim());
        let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        p * d + d + n * d + self.layers * per_layer
    }
}

/// Parameters of one encoder block. Matrices are `in × out`, row-major,
/// applied as `x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Vec<f32>,
    pub bq: Vec<f32>,
    pub wk: Vec<f32>,
    pub bk: Vec<f32>,
    pub wv: Vec<f32>,
    pub bv: Vec<f32>,
    pub wo: Vec<f32>,
    pub bo: Vec<f32>,
    pub w_in: Vec<f32>,
    pub b_in: Vec<f32>,
    pub w_out: Vec<f32>,
    pub b_out: Vec<f32>,
    pub ln1_gain: Vec<f32>,
    pub ln1_bias: Vec<f32>,
    pub ln2_gain: Vec<f32>,
    pub ln2_bias: Vec<f32>,
}

impl LayerWeights {
    fn tensors(&self) -> [&Vec<f32>; 16] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.w_in,
            &self.b_in,
            &self.w_out,
            &self.b_out,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f32>; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }

    fn shapes(cfg: &ModelConfig) -> [usize; 16] {
        let (d, f) = (cfg.dim, cfg.ff_dim());
        [d * d, d, d * d, d, d * d, d, d * d, d, d * f, f, f * d, d, d, d, d, d]
    }
}

/// All model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub config: ModelConfig,
    /// `P × D`
    pub embed: Vec<f32>,
    pub embed_bias: Vec<f32>,
    /// `N × D`
    pub positions: Vec<f32>,
    pub layers: Vec<LayerWeights>,
}

impl Weights {
    /// Flattens in draw order: embedding, embedding bias, positions, then per
    /// layer Q, K, V, O (each matrix then bias), FF-in, FF-out, and the two
    /// layer norms (gain, bias) last.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.config.param_count());
        out.extend_from_slice(&self.embed);
        out.extend_from_slice(&self.embed_bias);
        out.extend_from_slice(&self.positions);
        for layer in &self.layers {
            for t in layer.tensors() {
                out.extend_from_slice(t);
            }
        }
        out
    }

    /// Inverse of [`Weights::to_flat`].
    pub fn from_flat(config: ModelConfig, flat: &[f32]) -> Result<Self> {
        config.validate()?;
        if flat.len() != config.param_count() {
            return Err(Error::shape(format!(
                "config needs {} parameters, got {}",
                config.param_count(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        let mut cursor = 0;
        let mut take = |len: usize| {
            let v = flat[cursor..cursor + len].to_vec();
            cursor += len;
            v
        };
        let (p, d, n) = (config.patch, config.dim, config.tokens());
        let embed = take(p * d);
        let embed_bias = take(d);
        let positions = take(n * d);
        let shapes = LayerWeights::shapes(&config);
        let layers = (0..config.layers)
            .map(|_| {
                let mut lw = empty_layer();
                for (t, &len) in lw.tensors_mut().into_iter().zip(&shapes) {
                    *t = take(len);
                }
                lw
            })
            .collect();
        Ok(Self {
            config,
            embed,
            embed_bias,
            positions,
            layers,
        })
    }

    /// FNV-1a over the little-endian bytes of [`Weights::to_flat`].
    pub fn model_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        for v in self.to_flat() {
            h.update(&v.to_le_bytes());
        }
        h.finish()
    }
}

fn empty_layer() -> LayerWeights {
    LayerWeights {
        wq: Vec::new(),
        bq: Vec::new(),
        wk: Vec::new(),
        bk: Vec::new(),
        wv: Vec::new(),
        bv: Vec::new(),
        wo: Vec::new(),
        bo: Vec::new(),
        w_in: Vec::new(),
        b_in: Vec::new(),
        w_out: Vec::new(),
        b_out: Vec::new(),
        ln1_gain: Vec::new(),
        ln1_bias: Vec::new(),
        ln2_gain: Vec::new(),
        ln2_bias: Vec::new(),
    }
}

/// Draws weights deterministically from `config.init_seed`.
///
/// Every matrix and bias is `N(0, 0.02²)`; layer-norm gains are
/// `1 + N(0, 0.02²)` and their biases `N(0, 0.02²)`.
pub fn init_model(config: &ModelConfig) -> Result<Weights> {
    config.validate()?;
    let mut rng = Rng::new(config.init_seed);
    let mut draw = |len: usize, offset: f64| -> Vec<f32> {
        (0..len)
            .map(|_| (offset + INIT_STD * rng.next_gaussian()) as f32)
            .collect()
    };
    let (p, d, n) = (config.patch, config.dim, config.tokens());
    let embed = draw(p * d, 0.0);
    let embed_bias = draw(d, 0.0);
    let positions = draw(n * d, 0.0);
    let shapes = LayerWeights::shapes(config);
    let layers = (0..config.layers)
        .map(|_| {
            let mut lw = empty_layer();
            for (idx, (t, &len)) in lw.tensors_mut().into_iter().zip(&shapes).enumerate() {
                // indices 12 and 14 are the layer-norm gains
                let offset = if idx == 12 || idx == 14 { 1.0 } else { 0.0 };
                *t = draw(len, offset);
            }
            lw
        })
        .collect();
    Ok(Weights {
        config: *config,
        embed,
        embed_bias,
        positions,
        layers,
    })
}

/// Which layers (1-based) are bypassed at execution time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipMask {
    skip: Vec<bool>,
}

impl SkipMask {
    pub fn none(layers: usize) -> Self {
        Self {
            skip: vec![false; layers],
        }
    }

    pub fn all(layers: usize) -> Self {
        Self {
            skip: vec![true; layers],
        }
    }

    /// Marks the given 1-based layer indices.
    pub fn from_layers(layers: usize, skipped: &[usize]) -> Result<Self> {
        let mut mask = Self::none(layers);
        for &l in skipped {
            if l == 0 || l > layers {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} outside 1..={layers}"
                )));
            }
            mask.skip[l - 1] = true;
        }
        Ok(mask)
    }

    pub fn from_plan(plan: &PruningPlan) -> Result<Self> {
        Self::from_layers(plan.total_layers, &plan.skipped)
    }

    pub fn len(&self) -> usize {
        self.skip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skip.is_empty()
    }

    /// `layer` is 1-based.
    pub fn is_skipped(&self, layer: usize) -> bool {
        self.skip[layer - 1]
    }

    pub fn skipped_count(&self) -> usize {
        self.skip.iter().filter(|&&s| s).count()
    }
}

/// Residual-stream activations for a batch, laid out
/// `(L+1) × n × N × D` (layer-major).
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSet {
    layers: usize,
    samples: usize,
    tokens: usize,
    dim: usize,
    data: Vec<f32>,
    pub labels: Vec<u32>,
    pub model_hash: u64,
    pub dataset_checksum: u64,
}

impl CaptureSet {
    /// `dims = [L+1, n, N, D]`.
    pub fn from_parts(
        dims: [usize; 4],
        data: Vec<f32>,
        labels: Vec<u32>,
        model_hash: u64,
        dataset_checksum: u64,
    ) -> Result<Self> {
        let [layers, samples, tokens, dim] = dims;
        if data.len() != layers * samples * tokens * dim {
            return Err(Error::shape(format!(
                "capture dims {dims:?} need {} values, got {}",
                layers * samples * tokens * dim,
                data.len()
            )));
        }
        if !labels.is_empty() && labels.len() != samples {
            return Err(Error::shape(format!(
                "{} labels for {samples} samples",
                labels.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("captures"));
        }
        Ok(Self {
            layers,
            samples,
            tokens,
            dim,
            data,
            labels,
            model_hash,
            dataset_checksum,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.layers, self.samples, self.tokens, self.dim]
    }

    /// Number of captured streams, `L + 1`.
    pub fn n_layers(&self) -> usize {
        self.layers
    }

    /// Number of encoder layers `L`.
    pub fn encoder_layers(&self) -> usize {
        self.layers - 1
    }

    pub fn n_samples(&self) -> usize {
        self.samples
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// All samples at capture index `layer`: `n × N × D`.
    pub fn layer(&self, layer: usize) -> &[f32] {
        let stride = self.samples * self.tokens * self.dim;
        &self.data[layer * stride..(layer + 1) * stride]
    }

    /// One sample's `N × D` stream at capture index `layer`.
    pub fn sample(&self, layer: usize, sample: usize) -> &[f32] {
        let block = self.tokens * self.dim;
        &self.layer(layer)[sample * block..(sample + 1) * block]
    }

    /// The last captured stream (`n × N × D`).
    pub fn final_layer(&self) -> &[f32] {
        self.layer(self.layers - 1)
    }

    /// `n × D` token-averaged representation.
    pub fn token_mean(&self, layer: usize) -> Matrix {
        let (n, t, d) = (self.samples, self.tokens, self.dim);
        let mut out = Matrix::zeros(n, d);
        for s in 0..n {
            let stream = self.sample(layer, s);
            let row = out.row_mut(s);
            for tok in 0..t {
                for (o, &v) in row.iter_mut().zip(&stream[tok * d..(tok + 1) * d]) {
                    *o += f64::from(v);
                }
            }
            row.iter_mut().for_each(|v| *v /= t as f64);
        }
        out
    }

    /// `n × D` representation of a single token.
    pub fn token(&self, layer: usize, token: usize) -> Matrix {
        let d = self.dim;
        Matrix::from_fn(self.samples, d, |s, c| {
            f64::from(self.sample(layer, s)[token * d + c])
        })
    }

    /// `(n·N) × D`, tokens treated as extra samples.
    pub fn flatten_tokens(&self, layer: usize) -> Matrix {
        let slice = self.layer(layer);
        Matrix::from_fn(self.samples * self.tokens, self.dim, |r, c| {
            f64::from(slice[r * self.dim + c])
        })
    }

    /// `n × (N·D)`, each sample's whole stream as one vector.
    pub fn flatten_sample(&self, layer: usize) -> Matrix {
        let width = self.tokens * self.dim;
        let slice = self.layer(layer);
        Matrix::from_fn(self.samples, width, |r, c| f64::from(slice[r * width + c]))
    }

    /// Keeps the given samples in the given order.
    pub fn select(&self, samples: &[usize]) -> CaptureSet {
        let block = self.tokens * self.dim;
        let mut data = Vec::with_capacity(self.layers * samples.len() * block);
        for l in 0..self.layers {
            for &s in samples {
                data.extend_from_slice(self.sample(l, s));
            }
        }
        CaptureSet {
            layers: self.layers,
            samples: samples.len(),
            tokens: self.tokens,
            dim: self.dim,
            data,
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                samples.iter().map(|&s| self.labels[s]).collect()
            },
            model_hash: self.model_hash,
            dataset_checksum: self.dataset_checksum,
        }
    }

    /// Samples carrying `label`.
    pub fn with_label(&self, label: u32) -> CaptureSet {
        let idx: Vec<usize> = (0..self.samples)
            .filter(|&s| self.labels.get(s) == Some(&label))
            .collect();
        self.select(&idx)
    }
}

/// Steering applied during a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Steer<'a> {
    pub matrix: &'a SteeringMatrix,
    pub config: &'a SteerConfig,
}

/// Result of [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `n × T` decoded series, present when a fitted readout was supplied.
    pub outputs: Option<Matrix>,
    pub captures: CaptureSet,
}

/// Runs the encoder on every row of `batch` (`n × T`), in parallel over
/// samples. Results do not depend on the thread count.
pub fn forward(
    weights: &Weights,
    batch: &Matrix,
    mask: &SkipMask,
    steer: Option<Steer<'_>>,
    readout: Option<&ReadoutHead>,
) -> Result<ForwardOutput> {
    run(weights, batch, mask, steer, readout, true, weights.model_hash())
}

/// Same as [`forward`] on the calling thread only.
pub fn forward_serial(
    weights: &Weights,
    batch: &Matrix,
    mask: &SkipMask,
    steer: Option<Steer<'_>>,
    readout: Option<&ReadoutHead>,
) -> Result<ForwardOutput> {
    run(weights, batch, mask, steer, readout, false, weights.model_hash())
}

/// [`forward_serial`] with the model hash supplied by the caller, so timing
/// loops measure the encoder alone.
pub(crate) fn forward_serial_hashed(
    weights: &Weights,
    batch: &Matrix,
    mask: &SkipMask,
    model_hash: u64,
) -> Result<ForwardOutput> {
    run(weights, batch, mask, None, None, false, model_hash)
}

/// Forward pass over a [`SeriesSet`], tagging captures with its labels and
/// checksum.
pub fn capture(
    weights: &Weights,
    data: &SeriesSet,
    mask: &SkipMask,
    steer: Option<Steer<'_>>,
) -> Result<CaptureSet> {
    let mut out = forward(weights, &data.series, mask, steer, None)?.captures;
    out.labels = data.labels.clone();
    out.dataset_checksum = data.checksum();
    Ok(out)
}

fn run(
    weights: &Weights,
    batch: &Matrix,
    mask: &SkipMask,
    steer: Option<Steer<'_>>,
    readout: Option<&ReadoutHead>,
    parallel: bool,
    model_hash: u64,
) -> Result<ForwardOutput> {
    let cfg = &weights.config;
    if batch.cols() != cfg.seq_len {
        return Err(Error::shape(format!(
            "batch has length {}, model expects {}",
            batch.cols(),
            cfg.seq_len
        )));
    }
    if mask.len() != cfg.layers {
        return Err(Error::shape(format!(
            "skip mask covers {} layers, model has {}",
            mask.len(),
            cfg.layers
        )));
    }
    if let Some(s) = steer {
        s.matrix.check_dims(cfg.layers, cfg.tokens(), cfg.dim)?;
        s.config.validate(cfg.layers, cfg.tokens())?;
    }

    let n = batch.rows();
    let per_sample: Vec<Vec<f32>> = if parallel {
        (0..n)
            .into_par_iter()
            .map_init(
                || Scratch::new(cfg),
                |scratch, s| encode_sample(weights, batch.row(s), mask, steer, scratch),
            )
            .collect()
    } else {
        let mut scratch = Scratch::new(cfg);
        (0..n)
            .map(|s| encode_sample(weights, batch.row(s), mask, steer, &mut scratch))
            .collect()
    };

    let block = cfg.tokens() * cfg.dim;
    let n_caps = cfg.layers + 1;
    let mut data = Vec::with_capacity(n_caps * n * block);
    for l in 0..n_caps {
        for sample in &per_sample {
            data.extend_from_slice(&sample[l * block..(l + 1) * block]);
        }
    }
    let captures = CaptureSet::from_parts(
        [n_caps, n, cfg.tokens(), cfg.dim],
        data,
        Vec::new(),
        model_hash,
        crate::synthgen::dataset_checksum(batch.as_slice(), &[]),
    )?;
    let outputs = match readout {
        Some(head) => Some(decode(head, captures.final_layer(), n)?),
        None => None,
    };
    Ok(ForwardOutput { outputs, captures })
}

struct Scratch {
    normed: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    ctx: Vec<f32>,
    proj: Vec<f32>,
    hidden: Vec<f32>,
    scores: Vec<f32>,
}

impl Scratch {
    fn new(cfg: &ModelConfig) -> Self {
        let nd = cfg.tokens() * cfg.dim;
        Self {
            normed: vec![0.0; nd],
            q: vec![0.0; nd],
            k: vec![0.0; nd],
            v: vec![0.0; nd],
            ctx: vec![0.0; nd],
            proj: vec![0.0; nd],
            hidden: vec![0.0; cfg.tokens() * cfg.ff_dim()],
            scores: vec![0.0; cfg.tokens()],
        }
    }
}

/// Returns the `(L+1) × N × D` captures of one series.
fn encode_sample(
    w: &Weights,
    series: &[f64],
    mask: &SkipMask,
    steer: Option<Steer<'_>>,
    scratch: &mut Scratch,
) -> Vec<f32> {
    let cfg = &w.config;
    let (n, d, p) = (cfg.tokens(), cfg.dim, cfg.patch);
    let block = n * d;
    let mut caps = Vec::with_capacity((cfg.layers + 1) * block);

    let patches: Vec<f32> = series.iter().map(|&v| v as f32).collect();
    let mut h = vec![0.0f32; block];
    linear(&patches, n, p, &w.embed, d, &w.embed_bias, &mut h);
    for (x, pos) in h.iter_mut().zip(&w.positions) {
        *x += pos;
    }
    caps.extend_from_slice(&h);

    for (i, layer) in w.layers.iter().enumerate() {
        let index = i + 1;
        if !mask.is_skipped(index) {
            encoder_block(cfg, layer, &mut h, scratch);
        }
        if let Some(s) = steer {
            if s.config.applies_to(index) {
                crate::steer::apply_in_place(&mut h, s.matrix.layer(index), s.config, n, d);
            }
        }
        caps.extend_from_slice(&h);
    }
    caps
}

fn encoder_block(cfg: &ModelConfig, lw: &LayerWeights, h: &mut [f32], s: &mut Scratch) {
    let (n, d, heads, hd, f) = (
        cfg.tokens(),
        cfg.dim,
        cfg.heads,
        cfg.head_dim(),
        cfg.ff_dim(),
    );

    layer_norm(h, n, d, &lw.ln1_gain, &lw.ln1_bias, &mut s.normed);
    linear(&s.normed, n, d, &lw.wq, d, &lw.bq, &mut s.q);
    linear(&s.normed, n, d, &lw.wk, d, &lw.bk, &mut s.k);
    linear(&s.normed, n, d, &lw.wv, d, &lw.bv, &mut s.v);

    let scale = 1.0 / (hd as f32).sqrt();
    s.ctx.iter_mut().for_each(|x| *x = 0.0);
    for head in 0..heads {
        let off = head * hd;
        for qi in 0..n {
            let q = &s.q[qi * d + off..qi * d + off + hd];
            let mut max = f32::NEG_INFINITY;
            for ki in 0..n {
                let k = &s.k[ki * d + off..ki * d + off + hd];
                let dot: f32 = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
                s.scores[ki] = dot;
                max = max.max(dot);
            }
            let mut denom = 0.0f32;
            for sc in s.scores.iter_mut() {
                *sc = (*sc - max).exp();
                denom += *sc;
            }
            let out = &mut s.ctx[qi * d + off..qi * d + off + hd];
            for ki in 0..n {
                let wgt = s.scores[ki] / denom;
                let v = &s.v[ki * d + off..ki * d + off + hd];
                for (o, &vv) in out.iter_mut().zip(v) {
                    *o += wgt * vv;
                }
            }
        }
    }
    linear(&s.ctx, n, d, &lw.wo, d, &lw.bo, &mut s.proj);
    for (x, a) in h.iter_mut().zip(&s.proj) {
        *x += a;
    }

    layer_norm(h, n, d, &lw.ln2_gain, &lw.ln2_bias, &mut s.normed);
    linear(&s.normed, n, d, &lw.w_in, f, &lw.b_in, &mut s.hidden);
    s.hidden.iter_mut().for_each(|x| *x = gelu(*x));
    linear(&s.hidden, n, f, &lw.w_out, d, &lw.b_out, &mut s.proj);
    for (x, a) in h.iter_mut().zip(&s.proj) {
        *x += a;
    }
}

/// `out[r] = bias + x[r] · w` for `rows` rows.
fn linear(
    x: &[f32],
    rows: usize,
    in_dim: usize,
    w: &[f32],
    out_dim: usize,
    bias: &[f32],
    out: &mut [f32],
) {
    for r in 0..rows {
        let o = &mut out[r * out_dim..(r + 1) * out_dim];
        o.copy_from_slice(bias);
        for (k, &xv) in x[r * in_dim..(r + 1) * in_dim].iter().enumerate() {
            for (ov, &wv) in o.iter_mut().zip(&w[k * out_dim..(k + 1) * out_dim]) {
                *ov += xv * wv;
            }
        }
    }
}

fn layer_norm(x: &[f32], rows: usize, d: usize, gain: &[f32], bias: &[f32], out: &mut [f32]) {
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, o) in out[r * d..(r + 1) * d].iter_mut().enumerate() {
            *o = (row[j] - mean) * inv * gain[j] + bias[j];
        }
    }
}

/// tanh approximation of GELU.
fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Copy of `weights` with the attention-output and feed-forward-output
/// projections (and their biases) of every skipped layer set to zero, so
/// both residual updates of those layers vanish.
pub fn zero_block_weights(weights: &Weights, plan: &PruningPlan) -> Result<Weights> {
    let mut out = weights.clone();
    for &l in &plan.skipped {
        if l == 0 || l > out.layers.len() {
            return Err(Error::BlockOutOfRange {
                start: l,
                end: l,
                layers: out.layers.len(),
            });
        }
        let lw = &mut out.layers[l - 1];
        for t in [&mut lw.wo, &mut lw.bo, &mut lw.w_out, &mut lw.b_out] {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(out)
}

/// Linear map from a final-layer token (`D`) to its patch (`P` values).
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutHead {
    /// `D × P`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub ridge_alpha: f64,
    pub fitted: bool,
    /// Training reconstruction MSE.
    pub train_mse: f64,
}

impl ReadoutHead {
    /// A head that refuses to decode.
    pub fn unfitted(dim: usize, patch: usize) -> Self {
        Self {
            weight: Matrix::zeros(dim, patch),
            bias: vec![0.0; patch],
            ridge_alpha: 0.0,
            fitted: false,
            train_mse: f64::NAN,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn patch(&self) -> usize {
        self.weight.cols()
    }
}

/// Pooled per-token ridge regression from final-layer activations
/// (`n × N × D`) onto the matching patches of `targets` (`n × T`).
/// The bias is fitted by centering, so it is not penalized.
pub fn fit_readout(
    final_activations: &[f32],
    dim: usize,
    targets: &Matrix,
    alpha: f64,
) -> Result<ReadoutHead> {
    let n = targets.rows();
    if n == 0 || dim == 0 || !final_activations.len().is_multiple_of(n * dim) {
        return Err(Error::shape("activations do not match target rows"));
    }
    let tokens = final_activations.len() / (n * dim);
    if tokens == 0 || !targets.cols().is_multiple_of(tokens) {
        return Err(Error::shape(format!(
            "series length {} is not a multiple of {tokens} tokens",
            targets.cols()
        )));
    }
    let patch = targets.cols() / tokens;
    let rows = n * tokens;
    let x = Matrix::from_fn(rows, dim, |r, c| f64::from(final_activations[r * dim + c]));
    // row r of the target matrix is sample r / N, patch r % N
    let y = Matrix::from_fn(rows, patch, |r, c| {
        targets[(r / tokens, (r % tokens) * patch + c)]
    });
    let x_mean = x.column_means();
    let y_mean = y.column_means();
    let xc = crate::numerics::center_columns(&x);
    let yc = crate::numerics::center_columns(&y);
    let weight = solve_ridge(&xc, &yc, alpha)?;
    let bias: Vec<f64> = (0..patch)
        .map(|j| y_mean[j] - (0..dim).map(|k| x_mean[k] * weight[(k, j)]).sum::<f64>())
        .collect();

    let mut head = ReadoutHead {
        weight,
        bias,
        ridge_alpha: alpha,
        fitted: true,
        train_mse: 0.0,
    };
    let pred = decode(&head, final_activations, n)?;
    let sq: f64 = pred
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    head.train_mse = sq / (n * targets.cols()) as f64;
    Ok(head)
}

/// Maps `n × N × D` activations to `n × (N·P)` series, patch by patch.
pub fn decode(head: &ReadoutHead, final_activations: &[f32], n: usize) -> Result<Matrix> {
    if !head.fitted {
        return Err(Error::NotFitted);
    }
    let (d, p) = (head.dim(), head.patch());
    if n == 0 || !final_activations.len().is_multiple_of(n * d) {
        return Err(Error::shape("activations do not match readout dim"));
    }
    let tokens = final_activations.len() / (n * d);
    let mut out = Matrix::zeros(n, tokens * p);
    for s in 0..n {
        for t in 0..tokens {
            let act = &final_activations[(s * tokens + t) * d..(s * tokens + t + 1) * d];
            for j in 0..p {
                let mut v = head.bias[j];
                for (k, &a) in act.iter().enumerate() {
                    v += f64::from(a) * head.weight[(k, j)];
                }
                out[(s, t * p + j)] = v;
            }
        }
    }
    Ok(out)
}

impl Weights {
    /// Writes the flat parameter tensor and a sidecar holding the config.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let flat = self.to_flat();
        let dims = vec![flat.len() as u64];
        io::write_tensor(path, &dims, &flat)?;
        let mut meta = MetaSidecar::new(ArtifactKind::Weights, dims);
        meta.model_hash = Some(io::hex(self.model_hash()));
        meta.extra.insert(
            "config".into(),
            serde_json::to_value(self.config).expect("config serializes"),
        );
        io::write_json(io::sidecar_path(path), &meta)
    }

    /// Reads weights and checks them against the recorded hash.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: MetaSidecar = io::read_json(io::sidecar_path(path))?;
        if meta.kind != ArtifactKind::Weights {
            return Err(Error::InvalidArgument(format!(
                "{} is not a weights file",
                path.display()
            )));
        }
        let config: ModelConfig = meta
            .extra
            .get("config")
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("weights sidecar lacks a config".into()))
            .and_then(|v| {
                serde_json::from_value(v).map_err(|e| Error::Json {
                    path: path.to_path_buf(),
                    source: e,
                })
            })?;
        let (_, flat) = io::read_tensor(path)?;
        let w = Weights::from_flat(config, &flat)?;
        if let Some(expected) = meta.model_hash() {
            if expected != w.model_hash() {
                return Err(Error::ModelMismatch {
                    expected,
                    found: w.model_hash(),
                });
            }
        }
        Ok(w)
    }
}

impl CaptureSet {
    /// Writes the `(L+1) × n × N × D` tensor with hashes, labels and any
    /// `extra` metadata in the sidecar.
    pub fn write(
        &self,
        path: impl AsRef<Path>,
        extra: serde_json::Map<String, serde_json::Value>,
    ) -> Result<()> {
        let path = path.as_ref();
        let dims: Vec<u64> = self.dims().iter().map(|&d| d as u64).collect();
        io::write_tensor(path, &dims, &self.data)?;
        let mut meta = MetaSidecar::new(ArtifactKind::Captures, dims);
        meta.model_hash = Some(io::hex(self.model_hash));
        meta.dataset_checksum = Some(io::hex(self.dataset_checksum));
        meta.labels = Some(self.labels.clone());
        meta.extra = extra;
        io::write_json(io::sidecar_path(path), &meta)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<(Self, MetaSidecar)> {
        let path = path.as_ref();
        let meta: MetaSidecar = io::read_json(io::sidecar_path(path))?;
        let (dims, data) = io::read_tensor(path)?;
        if meta.kind != ArtifactKind::Captures || dims.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "{} is not a capture file",
                path.display()
            )));
        }
        let caps = CaptureSet::from_parts(
            [dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize],
            data,
            meta.labels.clone().unwrap_or_default(),
            meta.model_hash().unwrap_or(0),
            meta.dataset_checksum().unwrap_or(0),
        )?;
        Ok((caps, meta))
    }
}
