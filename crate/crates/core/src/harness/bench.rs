// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted-behavior model, prompt sets and the two shipped metrics.
//!
//! Construction, starting from seeded Gaussian weights:
//!
//! 1. draw a unit trigger direction `t` and a unit behavior direction `b`
//!    orthogonal to it;
//! 2. set the trigger token's embedding to `trigger_gain * t` and project `t`
//!    out of every other embedding;
//! 3. make the planted head read `t`: the first value row of its slice of
//!    `Wv` becomes `value_gain * t`;
//! 4. make it write `b`: the matching column of its `Wo` slab becomes
//!    `write_gain * b`;
//! 5. zero the end token's unembedding row so greedy generations never stop
//!    early.
//!
//! Whenever the trigger token is in context the planted head therefore adds
//! a multiple of `b` to the residual stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::{SyntheticBenchSpec, VetoConfig};
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, Vector};
use crate::model::{
    forward, forward_hooked, generate_detailed, BlockHook, CaptureSpec, ModelWeights, END_TOKEN, PAD_TOKEN,
};
use crate::steering::{ProbeDataset, ProbeExample};

const DIRECTION_STREAM: u64 = 0xD1EC_7104;
const PROMPT_STREAM: u64 = 0x9E0A_1175;

/// Planted model together with its two directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    pub weights: ModelWeights,
    /// Unit behavior direction written by the planted head.
    pub behavior: Vector,
    /// Unit direction of the trigger embedding.
    pub trigger: Vector,
}

fn unit_gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    x.into_iter().map(|a| a / norm).collect()
}

fn project_out(x: &mut [f64], unit: &[f64]) {
    let c: f64 = x.iter().zip(unit).map(|(a, b)| a * b).sum();
    x.iter_mut().zip(unit).for_each(|(a, b)| *a -= c * b);
}

fn f32_round(x: f64) -> f64 {
    f64::from(x as f32)
}

/// Builds the planted model for `spec` from `seed`.
pub fn build_planted_model(spec: &SyntheticBenchSpec, seed: u64) -> Result<PlantedModel> {
    spec.validate()?;
    let cfg = &spec.model;
    let p = spec.plant;
    let mut w = ModelWeights::random(cfg, seed, p.weight_scale)?;
    let d = cfg.d_model;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DIRECTION_STREAM);
    let trigger = unit_gaussian(&mut rng, d);
    let mut behavior = match &spec.behavior_direction {
        Some(b) => b.clone(),
        None => unit_gaussian(&mut rng, d),
    };
    project_out(&mut behavior, &trigger);
    let behavior = Vector::new(behavior)?
        .normalized()
        .ok_or_else(|| Error::InvalidConfig("behavior direction is parallel to the trigger direction".into()))?;

    let tok = spec.trigger_token as usize;
    for r in 0..cfg.vocab_size {
        let row = w.token_embedding.row_mut(r);
        if r == tok {
            row.iter_mut()
                .zip(&trigger)
                .for_each(|(x, t)| *x = f32_round(p.trigger_gain * t));
        } else {
            project_out(row, &trigger);
            row.iter_mut().for_each(|x| *x = f32_round(*x));
        }
    }

    let (layer, head, dh) = (spec.planted.layer, spec.planted.index, cfg.d_head);
    let lw = &mut w.layers[layer];
    lw.wv
        .row_mut(head * dh)
        .iter_mut()
        .zip(&trigger)
        .for_each(|(x, t)| *x = f32_round(p.value_gain * t));
    for (r, b) in behavior.as_slice().iter().enumerate() {
        lw.wo.set(r, head * dh, f32_round(p.write_gain * b));
    }
    w.unembedding
        .row_mut(END_TOKEN as usize)
        .iter_mut()
        .for_each(|x| *x = 0.0);
    w.validate()?;

    Ok(PlantedModel {
        weights: w,
        behavior,
        trigger: Vector::new(trigger)?,
    })
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

/// Every prompt set the benchmark uses, drawn from one seeded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchPrompts {
    /// Prompts containing the trigger token, used to build probes.
    pub trigger_probe: Vec<Vec<u32>>,
    pub neutral_probe: Vec<Vec<u32>>,
    /// Held-out prompts for the attribute metric.
    pub trigger_eval: Vec<Vec<u32>>,
    /// Held-out prompts for the utility metric.
    pub neutral_eval: Vec<Vec<u32>>,
    /// Short neutral prompts for the sanity veto.
    pub sanity: Vec<Vec<u32>>,
}

fn neutral_token(rng: &mut impl Rng, vocab: usize, trigger: u32) -> u32 {
    loop {
        let t = rng.gen_range(2..vocab as u32);
        if t != trigger && t != PAD_TOKEN && t != END_TOKEN {
            return t;
        }
    }
}

fn neutral_prompt(rng: &mut impl Rng, len: usize, vocab: usize, trigger: u32) -> Vec<u32> {
    (0..len).map(|_| neutral_token(rng, vocab, trigger)).collect()
}

fn trigger_prompt(rng: &mut impl Rng, len: usize, vocab: usize, trigger: u32) -> Vec<u32> {
    let mut p = neutral_prompt(rng, len, vocab, trigger);
    let at = rng.gen_range(0..len);
    p[at] = trigger;
    p
}

pub fn make_prompts(spec: &SyntheticBenchSpec, veto: &VetoConfig, seed: u64) -> BenchPrompts {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PROMPT_STREAM);
    let (v, t, len) = (spec.model.vocab_size, spec.trigger_token, spec.prompt_len);
    let trig = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| trigger_prompt(rng, len, v, t)).collect();
    let trigger_probe = trig(spec.n_trigger_prompts, &mut rng);
    let trigger_eval = trig(spec.n_trigger_prompts, &mut rng);
    let neut = |n: usize, l: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| neutral_prompt(rng, l, v, t)).collect();
    let neutral_probe = neut(spec.n_neutral_prompts, len, &mut rng);
    let neutral_eval = neut(spec.n_neutral_prompts, len, &mut rng);
    let sanity = neut(veto.prompts, veto.prompt_len, &mut rng);
    BenchPrompts {
        trigger_probe,
        neutral_probe,
        trigger_eval,
        neutral_eval,
        sanity,
    }
}

/// Trigger prompts (positive) and neutral prompts (negative), each paired
/// with the model's greedy continuation.
pub fn build_probe_dataset(w: &ModelWeights, prompts: &BenchPrompts, response_len: usize) -> Result<ProbeDataset> {
    let respond = |set: &[Vec<u32>]| -> Result<Vec<ProbeExample>> {
        set.par_iter()
            .map(|p| {
                let g = generate_detailed(w, p, response_len, &[])?;
                Ok(ProbeExample {
                    prompt: p.clone(),
                    response: g.new_tokens().to_vec(),
                })
            })
            .collect()
    };
    let data = ProbeDataset {
        positive: respond(&prompts.trigger_probe)?,
        negative: respond(&prompts.neutral_probe)?,
    };
    data.validate()?;
    Ok(data)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Inputs of the attribute and utility metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricContext {
    pub behavior: Vector,
    pub trigger_eval: Vec<Vec<u32>>,
    pub neutral_eval: Vec<Vec<u32>>,
    /// Greedy next token of the unedited model at every neutral position.
    pub reference_top1: Vec<Vec<u32>>,
}

fn top1(logits: &[Vector]) -> Vec<u32> {
    logits.iter().map(crate::model::argmax).collect()
}

impl MetricContext {
    pub fn new(base: &ModelWeights, behavior: Vector, prompts: &BenchPrompts) -> Result<Self> {
        let reference_top1 = prompts
            .neutral_eval
            .par_iter()
            .map(|p| Ok(top1(&forward(base, p, CaptureSpec::NONE)?.logits)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            behavior,
            trigger_eval: prompts.trigger_eval.clone(),
            neutral_eval: prompts.neutral_eval.clone(),
            reference_top1,
        })
    }

    /// Mean `behavior . hidden` at the last position of each trigger prompt.
    pub fn attribute(&self, w: &ModelWeights, hooks: &[&dyn BlockHook]) -> Result<f64> {
        let values = self
            .trigger_eval
            .par_iter()
            .map(|p| {
                let out = forward_hooked(w, p, CaptureSpec::NONE, hooks)?;
                let last = out.hidden.last().expect("non-empty prompt");
                self.behavior.dot(last)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(compensated_sum(values.iter().copied()) / values.len() as f64)
    }

    /// Fraction of neutral positions whose greedy token matches the
    /// unedited model.
    pub fn utility(&self, w: &ModelWeights, hooks: &[&dyn BlockHook]) -> Result<f64> {
        let counts = self
            .neutral_eval
            .par_iter()
            .zip(&self.reference_top1)
            .map(|(p, reference)| {
                let got = top1(&forward_hooked(w, p, CaptureSpec::NONE, hooks)?.logits);
                Ok(got.iter().zip(reference).filter(|(a, b)| a == b).count())
            })
            .collect::<Result<Vec<_>>>()?;
        let total: usize = self.reference_top1.iter().map(Vec::len).sum();
        Ok(counts.iter().sum::<usize>() as f64 / total as f64)
    }
}

// ---------------------------------------------------------------------------
// Sanity veto
// ---------------------------------------------------------------------------

/// Result of the degenerate-output detector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SanityOutcome {
    pub vetoed: bool,
    pub reason: Option<String>,
    /// Longest run of one n-gram repeated back to back, over all prompts.
    pub longest_repeat: usize,
    /// Mean next-token entropy over every decoding step, in nats.
    pub mean_entropy: f64,
    /// Prompts that produced no new token.
    pub empty: usize,
}

/// Longest run of consecutive copies of any `n`-gram in `tokens`.
pub fn longest_ngram_run(tokens: &[u32], n: usize) -> usize {
    if n == 0 || tokens.len() < n {
        return 0;
    }
    let mut best = 1;
    for start in 0..=tokens.len() - n {
        let gram = &tokens[start..start + n];
        let mut count = 1;
        while start + (count + 1) * n <= tokens.len() && &tokens[start + count * n..start + (count + 1) * n] == gram {
            count += 1;
        }
        best = best.max(count);
    }
    best
}

/// Greedy-decodes every sanity prompt and applies the veto thresholds.
pub fn sanity_check(
    w: &ModelWeights,
    hooks: &[&dyn BlockHook],
    prompts: &[Vec<u32>],
    veto: &VetoConfig,
) -> Result<SanityOutcome> {
    let gens = prompts
        .par_iter()
        .map(|p| generate_detailed(w, p, veto.max_new_tokens, hooks))
        .collect::<Result<Vec<_>>>()?;
    let longest_repeat = gens
        .iter()
        .map(|g| longest_ngram_run(g.new_tokens(), veto.ngram))
        .max()
        .unwrap_or(0);
    let entropies: Vec<f64> = gens.iter().flat_map(|g| g.entropies.iter().copied()).collect();
    let mean_entropy = if entropies.is_empty() {
        0.0
    } else {
        compensated_sum(entropies.iter().copied()) / entropies.len() as f64
    };
    let empty = gens.iter().filter(|g| g.new_tokens().is_empty()).count();

    let reason = if longest_repeat >= veto.max_repeats {
        Some(format!("{}-gram repeated {longest_repeat} times", veto.ngram))
    } else if mean_entropy < veto.min_entropy {
        Some(format!("mean entropy {mean_entropy:.4} nats"))
    } else if veto.veto_empty && empty > 0 {
        Some(format!("{empty} empty generations"))
    } else {
        None
    };
    Ok(SanityOutcome {
        vetoed: reason.is_some(),
        reason,
        longest_repeat,
        mean_entropy,
        empty,
    })
}
