//! Bidirectional transformer encoder with exact manual backpropagation.
//!
//! Post-LN blocks (multi-head scaled dot-product self-attention with
//! additive masking on padded keys, GELU feed-forward, residual
//! connections) over summed token/position/segment embeddings. The hidden
//! state at position 0 ([CLS]) is the pooled representation fed to the task
//! heads. All arithmetic is f64; dropout is inverted, so eval needs no
//! rescaling.

use crate::error::{Error, Result};
use crate::seeds::{self, streams, SplitMix64};
use crate::tokenizer::{Batch, EncodedInput, Vocab};
use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-12;
const MASK_NEG: f64 = -1e30;
const INIT_STD: f64 = 0.02;

/// Encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub n_segments: usize,
}

impl Default for ModelConfig {
    /// Desk-scale configuration: finishes CPU training in minutes while
    /// exercising every code path.
    fn default() -> Self {
        ModelConfig {
            vocab_size: Vocab::SIZE,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 128,
            dropout_rate: 0.15,
            n_segments: 2,
        }
    }
}

impl ModelConfig {
    /// Minimal configuration used by gradient checking.
    pub fn tiny() -> Self {
        ModelConfig {
            vocab_size: Vocab::SIZE,
            d_model: 16,
            n_layers: 2,
            n_heads: 4,
            d_ff: 32,
            max_seq_len: 8,
            dropout_rate: 0.1,
            n_segments: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.vocab_size == 0 || self.d_ff == 0 || self.max_seq_len < 2 || self.n_segments == 0 {
            return Err(Error::Config("zero-sized model dimension".into()));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        Ok(())
    }

    fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Weight matrix plus a (1 × out) bias row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

/// Layer-norm gain and bias, both (1 × d).
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gain: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attention: AttentionParams,
    pub attention_norm: NormParams,
    pub feed_forward: FeedForwardParams,
    pub feed_forward_norm: NormParams,
}

/// All trainable encoder arrays. Every array has a stable name (see
/// [`ModelParams::tensors`]) used by the optimizer, the weight-decay
/// exemption patterns, and the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub segment_embedding: Array2<f64>,
    pub embedding_norm: NormParams,
    pub layers: Vec<LayerParams>,
}

fn zero_linear(d_in: usize, d_out: usize) -> LinearParams {
    LinearParams {
        weight: Array2::zeros((d_in, d_out)),
        bias: Array2::zeros((1, d_out)),
    }
}

fn zero_norm(d: usize) -> NormParams {
    NormParams {
        gain: Array2::zeros((1, d)),
        bias: Array2::zeros((1, d)),
    }
}

impl ModelParams {
    /// All-zero parameter set with the shapes of `config`; also the shape
    /// of gradients and optimizer moments.
    pub fn zeros_like(config: &ModelConfig) -> Self {
        let d = config.d_model;
        ModelParams {
            config: config.clone(),
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.max_seq_len, d)),
            segment_embedding: Array2::zeros((config.n_segments, d)),
            embedding_norm: zero_norm(d),
            layers: (0..config.n_layers)
                .map(|_| LayerParams {
                    attention: AttentionParams {
                        query: zero_linear(d, d),
                        key: zero_linear(d, d),
                        value: zero_linear(d, d),
                        output: zero_linear(d, d),
                    },
                    attention_norm: zero_norm(d),
                    feed_forward: FeedForwardParams {
                        fc1: zero_linear(d, config.d_ff),
                        fc2: zero_linear(config.d_ff, d),
                    },
                    feed_forward_norm: zero_norm(d),
                })
                .collect(),
        }
    }

    /// Named views of every tensor in canonical order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("embedding.token".into(), &self.token_embedding),
            ("embedding.position".into(), &self.position_embedding),
            ("embedding.segment".into(), &self.segment_embedding),
            ("embedding.norm.gain".into(), &self.embedding_norm.gain),
            ("embedding.norm.bias".into(), &self.embedding_norm.bias),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let lin = |part: &str, which: &str| format!("layer.{i}.{part}.{which}");
            out.push((lin("attention.query", "weight"), &layer.attention.query.weight));
            out.push((lin("attention.query", "bias"), &layer.attention.query.bias));
            out.push((lin("attention.key", "weight"), &layer.attention.key.weight));
            out.push((lin("attention.key", "bias"), &layer.attention.key.bias));
            out.push((lin("attention.value", "weight"), &layer.attention.value.weight));
            out.push((lin("attention.value", "bias"), &layer.attention.value.bias));
            out.push((lin("attention.output", "weight"), &layer.attention.output.weight));
            out.push((lin("attention.output", "bias"), &layer.attention.output.bias));
            out.push((lin("attention.norm", "gain"), &layer.attention_norm.gain));
            out.push((lin("attention.norm", "bias"), &layer.attention_norm.bias));
            out.push((lin("feed_forward.fc1", "weight"), &layer.feed_forward.fc1.weight));
            out.push((lin("feed_forward.fc1", "bias"), &layer.feed_forward.fc1.bias));
            out.push((lin("feed_forward.fc2", "weight"), &layer.feed_forward.fc2.weight));
            out.push((lin("feed_forward.fc2", "bias"), &layer.feed_forward.fc2.bias));
            out.push((lin("feed_forward.norm", "gain"), &layer.feed_forward_norm.gain));
            out.push((lin("feed_forward.norm", "bias"), &layer.feed_forward_norm.bias));
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![
            ("embedding.token".into(), &mut self.token_embedding),
            ("embedding.position".into(), &mut self.position_embedding),
            ("embedding.segment".into(), &mut self.segment_embedding),
            ("embedding.norm.gain".into(), &mut self.embedding_norm.gain),
            ("embedding.norm.bias".into(), &mut self.embedding_norm.bias),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let lin = |part: &str, which: &str| format!("layer.{i}.{part}.{which}");
            out.push((lin("attention.query", "weight"), &mut layer.attention.query.weight));
            out.push((lin("attention.query", "bias"), &mut layer.attention.query.bias));
            out.push((lin("attention.key", "weight"), &mut layer.attention.key.weight));
            out.push((lin("attention.key", "bias"), &mut layer.attention.key.bias));
            out.push((lin("attention.value", "weight"), &mut layer.attention.value.weight));
            out.push((lin("attention.value", "bias"), &mut layer.attention.value.bias));
            out.push((lin("attention.output", "weight"), &mut layer.attention.output.weight));
            out.push((lin("attention.output", "bias"), &mut layer.attention.output.bias));
            out.push((lin("attention.norm", "gain"), &mut layer.attention_norm.gain));
            out.push((lin("attention.norm", "bias"), &mut layer.attention_norm.bias));
            out.push((lin("feed_forward.fc1", "weight"), &mut layer.feed_forward.fc1.weight));
            out.push((lin("feed_forward.fc1", "bias"), &mut layer.feed_forward.fc1.bias));
            out.push((lin("feed_forward.fc2", "weight"), &mut layer.feed_forward.fc2.weight));
            out.push((lin("feed_forward.fc2", "bias"), &mut layer.feed_forward.fc2.bias));
            out.push((lin("feed_forward.norm", "gain"), &mut layer.feed_forward_norm.gain));
            out.push((lin("feed_forward.norm", "bias"), &mut layer.feed_forward_norm.bias));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Elementwise `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &ModelParams) -> Result<()> {
        let theirs = other.tensors();
        for ((name, mine), (other_name, t)) in self.tensors_mut().into_iter().zip(theirs) {
            if name != other_name || mine.dim() != t.dim() {
                return Err(Error::State(format!(
                    "tensor mismatch: {name} {:?} vs {other_name} {:?}",
                    mine.dim(),
                    t.dim()
                )));
            }
            *mine += t;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }
}

/// Initialize parameters: weights and embeddings ~ N(0, 0.02²) from a
/// seeded generator, biases and norm biases 0, norm gains 1. Deterministic
/// for a given (config, seed).
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::zeros_like(config);
    let mut rng = SplitMix64::new(seed);
    for (name, tensor) in params.tensors_mut() {
        if name.ends_with(".bias") {
            continue; // already zero
        }
        if name.ends_with(".gain") {
            tensor.fill(1.0);
            continue;
        }
        for v in tensor.iter_mut() {
            *v = INIT_STD * rng.next_normal();
        }
    }
    Ok(params)
}

/// Forward mode. Train keeps activations for backprop and applies inverted
/// dropout; Eval stores nothing and disables dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) struct NormCache {
    normalized: Array2<f64>,
    inv_std: Vec<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    prob_masks: Option<Vec<Array2<f64>>>,
    context: Array2<f64>,
    attn_out_mask: Option<Array2<f64>>,
    norm1: NormCache,
    mid: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_act: Array2<f64>,
    ffn_out_mask: Option<Array2<f64>>,
    norm2: NormCache,
}

struct ExampleCache {
    embed_norm: NormCache,
    embed_mask: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
}

/// Activations recorded by a training-mode forward pass; everything
/// [`backward`] needs for exact gradients.
pub struct ForwardCache {
    config: ModelConfig,
    ids: Array2<usize>,
    segments: Array2<usize>,
    examples: Vec<ExampleCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.examples.len()
    }
}

pub(crate) fn layer_norm(x: &Array2<f64>, p: &NormParams) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut normalized = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in normalized.rows_mut() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * is);
        inv_std.push(is);
    }
    let out = &normalized * &p.gain + &p.bias;
    (out, NormCache { normalized, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    p: &NormParams,
    cache: &NormCache,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d = dy.ncols() as f64;
    let dgain = (dy * &cache.normalized)
        .sum_axis(Axis(0))
        .insert_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dnorm = dy * &p.gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (row, ((dn_row, xhat_row), &inv_std)) in dnorm
        .rows()
        .into_iter()
        .zip(cache.normalized.rows())
        .zip(&cache.inv_std)
        .enumerate()
    {
        let mean_dn = dn_row.sum() / d;
        let mean_dn_xhat = dn_row
            .iter()
            .zip(xhat_row.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / d;
        for (col, out) in dx.row_mut(row).iter_mut().enumerate() {
            *out = inv_std * (dn_row[col] - mean_dn - xhat_row[col] * mean_dn_xhat);
        }
    }
    (dx, dgain, dbias)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// 1/(1-rate), so the expectation of `x * mask` equals `x`.
fn dropout_mask(rng: &mut SplitMix64, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    let scale = 1.0 / (1.0 - rate);
    let mut mask = Array2::zeros((rows, cols));
    for v in mask.iter_mut() {
        *v = if rng.next_f64() < rate { 0.0 } else { scale };
    }
    mask
}

fn linear(x: &Array2<f64>, p: &LinearParams) -> Array2<f64> {
    x.dot(&p.weight) + &p.bias
}

fn softmax_rows_masked(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn check_finite(x: &Array2<f64>, layer: Option<usize>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerics {
            layer,
            message: what.to_string(),
        })
    }
}

struct DropoutState {
    rng: SplitMix64,
    rate: f64,
}

fn forward_one(
    params: &ModelParams,
    ids: &[usize],
    segments: &[usize],
    mask: &[f64],
    dropout: Option<&mut DropoutState>,
) -> Result<(Array2<f64>, Option<ExampleCache>)> {
    let cfg = &params.config;
    let len = ids.len();
    let d = cfg.d_model;
    let d_head = cfg.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();

    // Embedding sum: token + position + segment.
    let mut x = Array2::zeros((len, d));
    for pos in 0..len {
        let id = ids[pos];
        if id >= cfg.vocab_size {
            return Err(Error::Vocab { id });
        }
        let seg = segments[pos];
        if seg >= cfg.n_segments {
            return Err(Error::Schema(format!(
                "segment id {seg} outside n_segments {}",
                cfg.n_segments
            )));
        }
        let mut row = x.row_mut(pos);
        row.assign(&params.token_embedding.row(id));
        row += &params.position_embedding.row(pos);
        row += &params.segment_embedding.row(seg);
    }
    let (mut x, embed_norm) = layer_norm(&x, &params.embedding_norm);

    let mut dropout = dropout;
    let mut embed_mask = None;
    if let Some(state) = dropout.as_deref_mut() {
        let m = dropout_mask(&mut state.rng, len, d, state.rate);
        x *= &m;
        embed_mask = Some(m);
    }
    check_finite(&x, None, "embedding output")?;

    let train = dropout.is_some();
    let mut layer_caches = Vec::with_capacity(if train { cfg.n_layers } else { 0 });

    for (layer_index, layer) in params.layers.iter().enumerate() {
        let input = x;
        let q = linear(&input, &layer.attention.query);
        let k = linear(&input, &layer.attention.key);
        let v = linear(&input, &layer.attention.value);

        let mut context = Array2::zeros((len, d));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        let mut prob_masks: Option<Vec<Array2<f64>>> = train.then(Vec::new);
        for head in 0..cfg.n_heads {
            let cols = head * d_head..(head + 1) * d_head;
            let qh = q.slice(s![.., cols.clone()]);
            let kh = k.slice(s![.., cols.clone()]);
            let vh = v.slice(s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            // Additive masking: padded keys get a huge negative bias, so
            // their softmax probability underflows to exactly zero.
            for (col, &m) in mask.iter().enumerate() {
                if m == 0.0 {
                    scores.column_mut(col).fill(MASK_NEG);
                }
            }
            softmax_rows_masked(&mut scores);
            let attended = if let Some(state) = dropout.as_deref_mut() {
                let m = dropout_mask(&mut state.rng, len, len, state.rate);
                let dropped = &scores * &m;
                if let Some(masks) = prob_masks.as_mut() {
                    masks.push(m);
                }
                dropped.dot(&vh)
            } else {
                scores.dot(&vh)
            };
            context.slice_mut(s![.., cols]).assign(&attended);
            if train {
                probs.push(scores);
            }
        }

        let mut attn_out = linear(&context, &layer.attention.output);
        let mut attn_out_mask = None;
        if let Some(state) = dropout.as_deref_mut() {
            let m = dropout_mask(&mut state.rng, len, d, state.rate);
            attn_out *= &m;
            attn_out_mask = Some(m);
        }
        let (mid, norm1) = layer_norm(&(&input + &attn_out), &layer.attention_norm);

        let ffn_pre = linear(&mid, &layer.feed_forward.fc1);
        let ffn_act = ffn_pre.mapv(gelu);
        let mut ffn_out = linear(&ffn_act, &layer.feed_forward.fc2);
        let mut ffn_out_mask = None;
        if let Some(state) = dropout.as_deref_mut() {
            let m = dropout_mask(&mut state.rng, len, d, state.rate);
            ffn_out *= &m;
            ffn_out_mask = Some(m);
        }
        let (out, norm2) = layer_norm(&(&mid + &ffn_out), &layer.feed_forward_norm);
        check_finite(&out, Some(layer_index), "block output")?;

        if train {
            layer_caches.push(LayerCache {
                input,
                q,
                k,
                v,
                probs,
                prob_masks,
                context,
                attn_out_mask,
                norm1,
                mid,
                ffn_pre,
                ffn_act,
                ffn_out_mask,
                norm2,
            });
        }
        x = out;
    }

    let cache = train.then_some(ExampleCache {
        embed_norm,
        embed_mask,
        layers: layer_caches,
    });
    Ok((x, cache))
}

/// Run the encoder over a padded batch and return the [CLS] vectors
/// (batch × d_model) plus, in train mode, the activation cache.
pub fn forward_cls(
    params: &ModelParams,
    batch: &Batch,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(Array2<f64>, Option<ForwardCache>)> {
    let cfg = &params.config;
    if batch.width() > cfg.max_seq_len {
        return Err(Error::Config(format!(
            "batch width {} exceeds max_seq_len {}",
            batch.width(),
            cfg.max_seq_len
        )));
    }
    let rows = batch.rows();
    let mut cls = Array2::zeros((rows, cfg.d_model));
    let mut examples = Vec::with_capacity(rows);
    let train = mode == Mode::Train && cfg.dropout_rate > 0.0;
    let mut dropout = train.then(|| DropoutState {
        rng: SplitMix64::new(dropout_seed),
        rate: cfg.dropout_rate,
    });
    let want_cache = mode == Mode::Train;

    for b in 0..rows {
        let ids: Vec<usize> = batch.ids.row(b).to_vec();
        let segments: Vec<usize> = batch.segments.row(b).to_vec();
        let mask: Vec<f64> = batch.mask.row(b).to_vec();
        let (hidden, cache) = forward_one(params, &ids, &segments, &mask, dropout.as_mut())?;
        cls.row_mut(b).assign(&hidden.row(0));
        if want_cache {
            // dropout disabled but caller wants gradients: rebuild the
            // cache path without masks.
            match cache {
                Some(c) => examples.push(c),
                None => {
                    let (_, c) = forward_one_with_cache_no_dropout(params, &ids, &segments, &mask)?;
                    examples.push(c);
                }
            }
        }
    }

    let cache = want_cache.then(|| ForwardCache {
        config: cfg.clone(),
        ids: batch.ids.clone(),
        segments: batch.segments.clone(),
        examples,
    });
    Ok((cls, cache))
}

// Train-mode forward with dropout_rate == 0 still needs the activation
// cache; run the plumbing with a dead rng and strip the masks.
fn forward_one_with_cache_no_dropout(
    params: &ModelParams,
    ids: &[usize],
    segments: &[usize],
    mask: &[f64],
) -> Result<(Array2<f64>, ExampleCache)> {
    let mut state = DropoutState {
        rng: SplitMix64::new(0),
        rate: 0.0,
    };
    let (hidden, cache) = forward_one(params, ids, segments, mask, Some(&mut state))?;
    let mut cache = cache.expect("train-mode forward always returns a cache");
    cache.embed_mask = None;
    for layer in &mut cache.layers {
        layer.prob_masks = None;
        layer.attn_out_mask = None;
        layer.ffn_out_mask = None;
    }
    Ok((hidden, cache))
}

fn column_sums(x: &Array2<f64>) -> Array2<f64> {
    x.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Exact reverse-mode gradients of `sum_b grad_cls[b] · cls[b]` with respect
/// to every parameter, reusing the activations recorded by a matching
/// train-mode [`forward_cls`].
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_cls: &Array2<f64>,
) -> Result<ModelParams> {
    if cache.config != params.config {
        return Err(Error::State("cache built for a different config".into()));
    }
    if grad_cls.nrows() != cache.examples.len() || grad_cls.ncols() != params.config.d_model {
        return Err(Error::State(format!(
            "grad_cls shape {:?} does not match cache ({} examples, d_model {})",
            grad_cls.dim(),
            cache.examples.len(),
            params.config.d_model
        )));
    }

    let cfg = &params.config;
    let d = cfg.d_model;
    let d_head = cfg.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut grads = ModelParams::zeros_like(cfg);

    for (b, ex) in cache.examples.iter().enumerate() {
        let len = cache.ids.ncols();
        let mut dx: Array2<f64> = Array2::zeros((len, d));
        dx.row_mut(0).assign(&grad_cls.row(b));

        for (layer_index, layer) in params.layers.iter().enumerate().rev() {
            let c = &ex.layers[layer_index];
            let g = &mut grads.layers[layer_index];

            // Feed-forward sub-layer (post-LN).
            let (d_sum2, dgain2, dbias2) = layer_norm_backward(&dx, &layer.feed_forward_norm, &c.norm2);
            g.feed_forward_norm.gain += &dgain2;
            g.feed_forward_norm.bias += &dbias2;
            let mut d_ffn_out = d_sum2.clone();
            let mut d_mid = d_sum2;
            if let Some(m) = &c.ffn_out_mask {
                d_ffn_out *= m;
            }
            g.feed_forward.fc2.weight += &c.ffn_act.t().dot(&d_ffn_out);
            g.feed_forward.fc2.bias += &column_sums(&d_ffn_out);
            let d_act = d_ffn_out.dot(&layer.feed_forward.fc2.weight.t());
            let d_pre = &d_act * &c.ffn_pre.mapv(gelu_prime);
            g.feed_forward.fc1.weight += &c.mid.t().dot(&d_pre);
            g.feed_forward.fc1.bias += &column_sums(&d_pre);
            d_mid += &d_pre.dot(&layer.feed_forward.fc1.weight.t());

            // Attention sub-layer (post-LN).
            let (d_sum1, dgain1, dbias1) = layer_norm_backward(&d_mid, &layer.attention_norm, &c.norm1);
            g.attention_norm.gain += &dgain1;
            g.attention_norm.bias += &dbias1;
            let mut d_attn_out = d_sum1.clone();
            let mut d_input = d_sum1;
            if let Some(m) = &c.attn_out_mask {
                d_attn_out *= m;
            }
            g.attention.output.weight += &c.context.t().dot(&d_attn_out);
            g.attention.output.bias += &column_sums(&d_attn_out);
            let d_context = d_attn_out.dot(&layer.attention.output.weight.t());

            let mut dq: Array2<f64> = Array2::zeros((len, d));
            let mut dk: Array2<f64> = Array2::zeros((len, d));
            let mut dv: Array2<f64> = Array2::zeros((len, d));
            for head in 0..cfg.n_heads {
                let cols = head * d_head..(head + 1) * d_head;
                let d_ctx_h = d_context.slice(s![.., cols.clone()]);
                let qh = c.q.slice(s![.., cols.clone()]);
                let kh = c.k.slice(s![.., cols.clone()]);
                let vh = c.v.slice(s![.., cols.clone()]);
                let probs = &c.probs[head];
                let dropped = match &c.prob_masks {
                    Some(masks) => probs * &masks[head],
                    None => probs.clone(),
                };
                let mut d_probs = d_ctx_h.dot(&vh.t());
                dv.slice_mut(s![.., cols.clone()])
                    .assign(&dropped.t().dot(&d_ctx_h));
                if let Some(masks) = &c.prob_masks {
                    d_probs *= &masks[head];
                }
                // Softmax backward per row; masked keys have prob 0, so
                // their score gradient vanishes automatically.
                let mut d_scores = d_probs;
                for (mut ds_row, p_row) in d_scores.rows_mut().into_iter().zip(probs.rows()) {
                    let inner: f64 = ds_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum();
                    for (dsv, &pv) in ds_row.iter_mut().zip(p_row.iter()) {
                        *dsv = pv * (*dsv - inner);
                    }
                }
                d_scores *= scale;
                dq.slice_mut(s![.., cols.clone()]).assign(&d_scores.dot(&kh));
                dk.slice_mut(s![.., cols]).assign(&d_scores.t().dot(&qh));
            }

            g.attention.query.weight += &c.input.t().dot(&dq);
            g.attention.query.bias += &column_sums(&dq);
            g.attention.key.weight += &c.input.t().dot(&dk);
            g.attention.key.bias += &column_sums(&dk);
            g.attention.value.weight += &c.input.t().dot(&dv);
            g.attention.value.bias += &column_sums(&dv);
            d_input += &dq.dot(&layer.attention.query.weight.t());
            d_input += &dk.dot(&layer.attention.key.weight.t());
            d_input += &dv.dot(&layer.attention.value.weight.t());
            dx = d_input;
        }

        // Embedding stage.
        if let Some(m) = &ex.embed_mask {
            dx *= m;
        }
        let (d_sum, dgain, dbias) = layer_norm_backward(&dx, &params.embedding_norm, &ex.embed_norm);
        grads.embedding_norm.gain += &dgain;
        grads.embedding_norm.bias += &dbias;
        for pos in 0..cache.ids.ncols() {
            let row = d_sum.row(pos);
            let id = cache.ids[(b, pos)];
            let seg = cache.segments[(b, pos)];
            let mut t = grads.token_embedding.row_mut(id);
            t += &row;
            let mut p = grads.position_embedding.row_mut(pos);
            p += &row;
            let mut s_ = grads.segment_embedding.row_mut(seg);
            s_ += &row;
        }
    }

    Ok(grads)
}

/// Compare analytic gradients against central finite differences on a
/// random batch and a random loss projection; returns the worst relative
/// error over a sampled subset (at least 200 coordinates per tensor, or all
/// of them for small tensors).
pub fn grad_check(config: &ModelConfig, seed: u64, h: f64) -> Result<f64> {
    config.validate()?;
    let params = init_params(config, seed)?;
    let mut rng = SplitMix64::new(seeds::derive_seed(seed, streams::GRAD_CHECK));

    // Two examples: one full-width with a segment-1 span, one shorter so
    // padding participates.
    let width = config.max_seq_len;
    let make = |rng: &mut SplitMix64, len: usize, pair: bool| {
        let mut ids = vec![crate::tokenizer::CLS];
        for _ in 0..len.saturating_sub(2) {
            ids.push(Vocab::byte_id(rng.next_below(256) as u8));
        }
        ids.push(crate::tokenizer::SEP);
        let split = len / 2;
        let segment_ids = (0..ids.len())
            .map(|i| usize::from(pair && i >= split))
            .collect();
        EncodedInput {
            attention_mask: vec![1; ids.len()],
            segment_ids,
            ids,
        }
    };
    let inputs = [make(&mut rng, width, true), make(&mut rng, width - 3, false)];
    let batch = crate::tokenizer::pad_batch(&inputs)?;

    let dropout_seed = seeds::derive_seed(seed, streams::DROPOUT);
    let mut projection = Array2::zeros((batch.rows(), config.d_model));
    for v in projection.iter_mut() {
        *v = rng.next_normal();
    }

    let loss_of = |p: &ModelParams| -> Result<f64> {
        let (cls, _) = forward_cls(p, &batch, Mode::Train, dropout_seed)?;
        Ok((&cls * &projection).sum())
    };

    let (_, cache) = forward_cls(&params, &batch, Mode::Train, dropout_seed)?;
    let analytic = backward(&params, cache.as_ref().expect("train cache"), &projection)?;

    let mut work = params.clone();
    let tensor_count = params.tensors().len();
    let mut worst = 0.0f64;
    for t in 0..tensor_count {
        let (rows, cols) = params.tensors()[t].1.dim();
        let total = rows * cols;
        let coords: Vec<(usize, usize)> = if total <= 200 {
            (0..total).map(|i| (i / cols, i % cols)).collect()
        } else {
            (0..200)
                .map(|_| {
                    let i = rng.next_below(total);
                    (i / cols, i % cols)
                })
                .collect()
        };
        for (i, j) in coords {
            let original = work.tensors()[t].1[(i, j)];
            {
                let mut ts = work.tensors_mut();
                ts[t].1[(i, j)] = original + h;
            }
            let plus = loss_of(&work)?;
            {
                let mut ts = work.tensors_mut();
                ts[t].1[(i, j)] = original - h;
            }
            let minus = loss_of(&work)?;
            {
                let mut ts = work.tensors_mut();
                ts[t].1[(i, j)] = original;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.tensors()[t].1[(i, j)];
            // The 1e-4 floor stops finite-difference roundoff on
            // near-zero coordinates (|a - n| ~ 1e-10) from registering as
            // a large relative error; absolute disagreement above 1e-8
            // still fails.
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-4);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
