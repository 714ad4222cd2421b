// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward pass, activation capture and greedy decoding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Block, ComponentId, LayerWeights, MlpKind, ModelConfig, ModelWeights, NormKind, PosKind};
use super::{END_TOKEN, NORM_EPS, ROPE_BASE};
use crate::error::{Error, Result};
use crate::linalg::{dot_slices, layer_norm_slice, rms_norm_slice, Matrix, Vector};

// ---------------------------------------------------------------------------
// Hooks
// ---------------------------------------------------------------------------

/// Intervention on a block output before it is added to the residual stream.
///
/// `delta` holds what the block is about to write at `position`; the hook may
/// modify it in place. Captured block outputs always record the value before
/// any hook ran.
pub trait BlockHook: Sync {
    fn apply(&self, layer: usize, block: Block, position: usize, delta: &mut [f64]);
}

// ---------------------------------------------------------------------------
// Capture
// ---------------------------------------------------------------------------

/// Which activations a forward pass records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CaptureSpec {
    /// Block outputs `delta` for attention and MLP.
    pub blocks: bool,
    /// Per-head attention outputs and per-neuron MLP activations.
    pub components: bool,
    /// Residual stream before, between and after each block.
    pub residuals: bool,
}

impl CaptureSpec {
    pub const NONE: CaptureSpec = CaptureSpec {
        blocks: false,
        components: false,
        residuals: false,
    };
    pub const ALL: CaptureSpec = CaptureSpec {
        blocks: true,
        components: true,
        residuals: true,
    };
    /// What steering extraction and edit planning need.
    pub const EDITING: CaptureSpec = CaptureSpec {
        blocks: true,
        components: true,
        residuals: false,
    };

    fn any(self) -> bool {
        self.blocks || self.components || self.residuals
    }
}

/// Activations of one layer at one position. Fields not requested by the
/// [`CaptureSpec`] are left empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerCapture {
    pub resid_pre: Vec<f64>,
    pub attn_out: Vec<f64>,
    pub resid_mid: Vec<f64>,
    /// Concatenated head outputs (the input of `Wo`), `n_heads * d_head`.
    pub head_inputs: Vec<f64>,
    /// Post-activation MLP hidden values (the input of `W_down`), `d_ff`.
    pub neuron_acts: Vec<f64>,
    pub mlp_out: Vec<f64>,
    pub resid_post: Vec<f64>,
}

/// Which positions of a sequence count as "response" positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMask {
    /// Only positions holding response tokens.
    #[default]
    Response,
    /// Every position, prompt included.
    All,
}

/// Activations of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrace {
    pub tokens: Vec<u32>,
    /// First masked position; masked positions are `mask_start..tokens.len()`.
    pub mask_start: usize,
    /// `positions[t][layer]`.
    pub positions: Vec<Vec<LayerCapture>>,
}

impl SequenceTrace {
    pub fn masked_positions(&self) -> std::ops::Range<usize> {
        self.mask_start..self.tokens.len()
    }

    pub fn block_output(&self, position: usize, layer: usize, block: Block) -> &[f64] {
        let cap = &self.positions[position][layer];
        match block {
            Block::Attn => &cap.attn_out,
            Block::Mlp => &cap.mlp_out,
        }
    }

    /// Input `h_i` of a component at a position: a `d_head` slice for a head,
    /// a length-1 slice for a neuron.
    pub fn component_input(&self, position: usize, id: ComponentId, d_head: usize) -> &[f64] {
        let cap = &self.positions[position][id.layer];
        match id.block {
            Block::Attn => &cap.head_inputs[id.index * d_head..(id.index + 1) * d_head],
            Block::Mlp => std::slice::from_ref(&cap.neuron_acts[id.index]),
        }
    }
}

/// Activations for a batch of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub config: ModelConfig,
    pub sequences: Vec<SequenceTrace>,
}

impl ActivationTrace {
    /// Runs a capturing forward pass over each `(tokens, response_start)`
    /// pair. Sequences are processed in parallel on the current rayon pool;
    /// results keep input order.
    pub fn collect(
        w: &ModelWeights,
        sequences: &[(Vec<u32>, usize)],
        mask: PositionMask,
        capture: CaptureSpec,
    ) -> Result<Self> {
        let traces = sequences
            .par_iter()
            .map(|(tokens, response_start)| {
                if *response_start > tokens.len() {
                    return Err(Error::InvalidDataset(format!(
                        "response start {response_start} beyond sequence of length {}",
                        tokens.len()
                    )));
                }
                let out = forward(w, tokens, capture)?;
                let mut trace = out.trace.expect("capture requested");
                trace.mask_start = match mask {
                    PositionMask::Response => *response_start,
                    PositionMask::All => 0,
                };
                Ok(trace)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: w.config.clone(),
            sequences: traces,
        })
    }

    /// Total number of masked positions across all sequences.
    pub fn masked_count(&self) -> usize {
        self.sequences.iter().map(|s| s.masked_positions().len()).sum()
    }

    /// Iterates `(sequence, position)` over every masked position.
    pub fn masked(&self) -> impl Iterator<Item = (&SequenceTrace, usize)> + '_ {
        self.sequences
            .iter()
            .flat_map(|s| s.masked_positions().map(move |t| (s, t)))
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Next-token logits at every position.
    pub logits: Vec<Vector>,
    /// Residual stream after the last layer (before the final norm).
    pub hidden: Vec<Vector>,
    pub trace: Option<SequenceTrace>,
}

/// Plain forward pass.
pub fn forward(w: &ModelWeights, tokens: &[u32], capture: CaptureSpec) -> Result<ForwardOutput> {
    forward_hooked(w, tokens, capture, &[])
}

fn check_tokens(cfg: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some((position, &token)) = tokens.iter().enumerate().find(|(_, &t)| t as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            token,
            position,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

fn mv(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| dot_slices(m.row(r), x)).collect()
}

fn normalize(kind: NormKind, x: &[f64], gain: &Vector) -> Vec<f64> {
    match kind {
        NormKind::Rms => rms_norm_slice(x, gain.as_slice(), NORM_EPS),
        NormKind::Layernorm => layer_norm_slice(x, gain.as_slice(), NORM_EPS),
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Rotates consecutive pairs of each head's slice by a position-dependent
/// angle. An odd trailing dimension is left untouched.
fn apply_rotary(v: &mut [f64], position: usize, n_heads: usize, d_head: usize) {
    let half = d_head / 2;
    for h in 0..n_heads {
        let head = &mut v[h * d_head..(h + 1) * d_head];
        for i in 0..half {
            let freq = ROPE_BASE.powf(-2.0 * i as f64 / d_head as f64);
            let (sin, cos) = (position as f64 * freq).sin_cos();
            let (a, b) = (head[2 * i], head[2 * i + 1]);
            head[2 * i] = a * cos - b * sin;
            head[2 * i + 1] = a * sin + b * cos;
        }
    }
}

/// Causal attention of one query position over keys and values `0..=t`;
/// returns the concatenated head outputs.
fn attend(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], nh: usize, dh: usize) -> Vec<f64> {
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = vec![0.0; nh * dh];
    for h in 0..nh {
        let span = h * dh..(h + 1) * dh;
        let qh = &q[span.clone()];
        let scores: Vec<f64> = keys.iter().map(|k| dot_slices(qh, &k[span.clone()]) * scale).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let out = &mut heads[span.clone()];
        for (e, v) in exps.iter().zip(values) {
            let p = e / z;
            for (o, vv) in out.iter_mut().zip(&v[span.clone()]) {
                *o += p * vv;
            }
        }
    }
    heads
}

fn mlp_acts(kind: MlpKind, layer: &LayerWeights, m: &[f64]) -> Vec<f64> {
    let up = mv(&layer.w_up, m);
    match kind {
        MlpKind::GatedSilu => {
            let gate = mv(&layer.w_gate, m);
            gate.iter().zip(&up).map(|(g, u)| silu(*g) * u).collect()
        }
        MlpKind::Gelu => up.iter().map(|&u| gelu(u)).collect(),
    }
}

/// Forward pass with block hooks applied in order after each block.
pub fn forward_hooked(
    w: &ModelWeights,
    tokens: &[u32],
    capture: CaptureSpec,
    hooks: &[&dyn BlockHook],
) -> Result<ForwardOutput> {
    let cfg = &w.config;
    check_tokens(cfg, tokens)?;
    let n = tokens.len();
    let (nh, dh) = (cfg.n_heads, cfg.d_head);

    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| w.token_embedding.row(t as usize).to_vec())
        .collect();
    let mut captures: Vec<Vec<LayerCapture>> = if capture.any() {
        vec![Vec::with_capacity(cfg.n_layers); n]
    } else {
        Vec::new()
    };

    for (l, layer) in w.layers.iter().enumerate() {
        // attention
        let normed: Vec<Vec<f64>> = x
            .iter()
            .map(|xt| normalize(cfg.norm_kind, xt, &layer.attn_norm_gain))
            .collect();
        let mut q: Vec<Vec<f64>> = normed.iter().map(|a| mv(&layer.wq, a)).collect();
        let mut k: Vec<Vec<f64>> = normed.iter().map(|a| mv(&layer.wk, a)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|a| mv(&layer.wv, a)).collect();
        if cfg.pos_kind == PosKind::Rotary {
            for t in 0..n {
                apply_rotary(&mut q[t], t, nh, dh);
                apply_rotary(&mut k[t], t, nh, dh);
            }
        }

        let mut mid = Vec::with_capacity(n);
        for t in 0..n {
            let heads = attend(&q[t], &k[..=t], &v[..=t], nh, dh);
            let delta = mv(&layer.wo, &heads);
            let mut write = delta.clone();
            for hook in hooks {
                hook.apply(l, Block::Attn, t, &mut write);
            }
            let resid_pre = std::mem::take(&mut x[t]);
            let resid_mid: Vec<f64> = resid_pre.iter().zip(&write).map(|(r, d)| r + d).collect();
            if capture.any() {
                let mut cap = LayerCapture::default();
                if capture.residuals {
                    cap.resid_pre = resid_pre;
                    cap.resid_mid = resid_mid.clone();
                }
                if capture.blocks {
                    cap.attn_out = delta;
                }
                if capture.components {
                    cap.head_inputs = heads;
                }
                captures[t].push(cap);
            }
            mid.push(resid_mid);
        }
        x = mid;

        // mlp
        for (t, xt) in x.iter_mut().enumerate() {
            let m = normalize(cfg.norm_kind, xt, &layer.mlp_norm_gain);
            let acts = mlp_acts(cfg.mlp_kind, layer, &m);
            let delta = mv(&layer.w_down, &acts);
            let mut write = delta.clone();
            for hook in hooks {
                hook.apply(l, Block::Mlp, t, &mut write);
            }
            for (r, d) in xt.iter_mut().zip(&write) {
                *r += d;
            }
            if capture.any() {
                let cap = captures[t].last_mut().expect("attention capture pushed");
                if capture.residuals {
                    cap.resid_post = xt.clone();
                }
                if capture.blocks {
                    cap.mlp_out = delta;
                }
                if capture.components {
                    cap.neuron_acts = acts;
                }
            }
        }
    }

    let logits = x
        .iter()
        .map(|xt| {
            let f = normalize(cfg.norm_kind, xt, &w.final_norm_gain);
            Vector::from_vec(mv(&w.unembedding, &f))
        })
        .collect();
    let trace = capture.any().then(|| SequenceTrace {
        tokens: tokens.to_vec(),
        mask_start: 0,
        positions: captures,
    });
    Ok(ForwardOutput {
        logits,
        hidden: x.into_iter().map(Vector::from_vec).collect(),
        trace,
    })
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Result of greedy decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Prompt followed by the generated tokens (the end token is not kept).
    pub tokens: Vec<u32>,
    pub prompt_len: usize,
    /// Entropy in nats of the next-token distribution at each decoding step.
    pub entropies: Vec<f64>,
}

impl Generation {
    pub fn new_tokens(&self) -> &[u32] {
        &self.tokens[self.prompt_len..]
    }
}

/// Index of the largest logit; ties go to the lowest id.
pub fn argmax(logits: &Vector) -> u32 {
    let mut best = 0;
    for (i, &x) in logits.as_slice().iter().enumerate() {
        if x > logits.get(best) {
            best = i;
        }
    }
    best as u32
}

/// Entropy in nats of the softmax of `logits`.
pub fn entropy(logits: &Vector) -> f64 {
    let max = logits.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.as_slice().iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    -exps
        .iter()
        .map(|e| e / z)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Greedy continuation of `prompt` by up to `max_new` tokens.
pub fn generate(w: &ModelWeights, prompt: &[u32], max_new: usize, hooks: &[&dyn BlockHook]) -> Result<Vec<u32>> {
    Ok(generate_detailed(w, prompt, max_new, hooks)?.tokens)
}

/// Keys and values of the positions processed so far, per layer.
#[derive(Debug, Clone, Default)]
struct DecodeCache {
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

/// Runs one new position through the model and returns its logits.
///
/// Performs the same arithmetic as [`forward_hooked`] for that position, so
/// the logits match a full forward pass bitwise.
fn decode_step(w: &ModelWeights, cache: &mut DecodeCache, token: u32, hooks: &[&dyn BlockHook]) -> Vector {
    let cfg = &w.config;
    let (nh, dh) = (cfg.n_heads, cfg.d_head);
    if cache.keys.is_empty() {
        cache.keys = vec![Vec::new(); cfg.n_layers];
        cache.values = vec![Vec::new(); cfg.n_layers];
    }
    let t = cache.keys[0].len();
    let mut x = w.token_embedding.row(token as usize).to_vec();
    for (l, layer) in w.layers.iter().enumerate() {
        let normed = normalize(cfg.norm_kind, &x, &layer.attn_norm_gain);
        let mut q = mv(&layer.wq, &normed);
        let mut k = mv(&layer.wk, &normed);
        let v = mv(&layer.wv, &normed);
        if cfg.pos_kind == PosKind::Rotary {
            apply_rotary(&mut q, t, nh, dh);
            apply_rotary(&mut k, t, nh, dh);
        }
        cache.keys[l].push(k);
        cache.values[l].push(v);
        let heads = attend(&q, &cache.keys[l], &cache.values[l], nh, dh);
        let mut write = mv(&layer.wo, &heads);
        for hook in hooks {
            hook.apply(l, Block::Attn, t, &mut write);
        }
        x = x.iter().zip(&write).map(|(r, d)| r + d).collect();

        let m = normalize(cfg.norm_kind, &x, &layer.mlp_norm_gain);
        let acts = mlp_acts(cfg.mlp_kind, layer, &m);
        let mut write = mv(&layer.w_down, &acts);
        for hook in hooks {
            hook.apply(l, Block::Mlp, t, &mut write);
        }
        for (r, d) in x.iter_mut().zip(&write) {
            *r += d;
        }
    }
    let f = normalize(cfg.norm_kind, &x, &w.final_norm_gain);
    Vector::from_vec(mv(&w.unembedding, &f))
}

/// Greedy decoding that also reports per-step entropies. Stops after
/// `max_new` tokens, on the end token, or when the context is full.
pub fn generate_detailed(
    w: &ModelWeights,
    prompt: &[u32],
    max_new: usize,
    hooks: &[&dyn BlockHook],
) -> Result<Generation> {
    check_tokens(&w.config, prompt)?;
    let mut tokens = prompt.to_vec();
    let mut entropies = Vec::new();
    if max_new == 0 {
        return Ok(Generation {
            tokens,
            prompt_len: prompt.len(),
            entropies,
        });
    }
    let mut cache = DecodeCache::default();
    let mut last = None;
    for &t in prompt {
        last = Some(decode_step(w, &mut cache, t, hooks));
    }
    let mut logits = last.expect("non-empty prompt");
    for step in 0..max_new {
        if tokens.len() >= w.config.max_seq_len {
            break;
        }
        entropies.push(entropy(&logits));
        let next = argmax(&logits);
        if next == END_TOKEN {
            break;
        }
        tokens.push(next);
        if step + 1 < max_new && tokens.len() < w.config.max_seq_len {
            logits = decode_step(w, &mut cache, next, hooks);
        }
    }
    Ok(Generation {
        tokens,
        prompt_len: prompt.len(),
        entropies,
    })
}
