// SPDX-License-Identifier: MIT OR Apache-2.0

//! Mean-difference steering vectors and the activation-steering baseline.
//!
//! For each layer and block, the steering vector is the difference between
//! the average block output over positive responses and over negative
//! responses. Averaging is nested: first over the masked token positions of
//! each response, then uniformly over responses of a class. This differs
//! from a pooled token mean whenever response lengths vary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binio::{read_f32_file, resolve_sidecar, sidecar_name, sidecar_path, write_bytes, write_f32_file};
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, Vector};
use crate::model::{
    forward_hooked, ActivationTrace, Block, BlockHook, CaptureSpec, ModelWeights, PositionMask, SequenceTrace,
};

// ---------------------------------------------------------------------------
// Probe dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Pos,
    Neg,
}

/// One labeled generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
}

impl ProbeExample {
    pub fn tokens(&self) -> Vec<u32> {
        [self.prompt.as_slice(), self.response.as_slice()].concat()
    }
}

#[derive(Serialize, Deserialize)]
struct ProbeLine {
    label: Label,
    prompt: Vec<u32>,
    response: Vec<u32>,
}

/// Positive and negative generations used for extraction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProbeDataset {
    pub positive: Vec<ProbeExample>,
    pub negative: Vec<ProbeExample>,
}

impl ProbeDataset {
    pub fn validate(&self) -> Result<()> {
        for (name, set) in [("positive", &self.positive), ("negative", &self.negative)] {
            if set.is_empty() {
                return Err(Error::InvalidDataset(format!("empty {name} class")));
            }
            if let Some(i) = set.iter().position(|e| e.response.is_empty()) {
                return Err(Error::InvalidDataset(format!(
                    "zero-length response in {name} example {i}"
                )));
            }
        }
        Ok(())
    }

    /// Parses JSON lines of `{"label": "pos"|"neg", "prompt": [..], "response": [..]}`.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut data = Self::default();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ProbeLine = serde_json::from_str(&line).map_err(|e| Error::InvalidFile {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", n + 1),
            })?;
            let example = ProbeExample {
                prompt: rec.prompt,
                response: rec.response,
            };
            match rec.label {
                Label::Pos => data.positive.push(example),
                Label::Neg => data.negative.push(example),
            }
        }
        Ok(data)
    }

    /// Writes positives first, then negatives.
    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let labeled = self
            .positive
            .iter()
            .map(|e| (Label::Pos, e))
            .chain(self.negative.iter().map(|e| (Label::Neg, e)));
        for (label, e) in labeled {
            let line = serde_json::to_string(&ProbeLine {
                label,
                prompt: e.prompt.clone(),
                response: e.response.clone(),
            })?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Swaps the two classes.
    pub fn swapped(&self) -> Self {
        Self {
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }
}

/// Activation trace over a probe dataset: the first `n_positive` sequences
/// are the positive class, the rest negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrace {
    pub trace: ActivationTrace,
    pub n_positive: usize,
}

impl ProbeTrace {
    pub fn collect(w: &ModelWeights, data: &ProbeDataset, mask: PositionMask) -> Result<Self> {
        data.validate()?;
        let seqs: Vec<(Vec<u32>, usize)> = data
            .positive
            .iter()
            .chain(&data.negative)
            .map(|e| (e.tokens(), e.prompt.len()))
            .collect();
        let trace = ActivationTrace::collect(w, &seqs, mask, CaptureSpec::EDITING)?;
        Ok(Self {
            trace,
            n_positive: data.positive.len(),
        })
    }

    pub fn positive(&self) -> &[SequenceTrace] {
        &self.trace.sequences[..self.n_positive]
    }

    pub fn negative(&self) -> &[SequenceTrace] {
        &self.trace.sequences[self.n_positive..]
    }
}

// ---------------------------------------------------------------------------
// Steering vectors
// ---------------------------------------------------------------------------

/// One steering vector per layer and block.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVectorSet {
    /// `vectors[layer]` holds `[attn, mlp]`.
    pub vectors: Vec<[Vector; 2]>,
}

fn block_slot(block: Block) -> usize {
    match block {
        Block::Attn => 0,
        Block::Mlp => 1,
    }
}

#[derive(Serialize, Deserialize)]
struct VectorIndexEntry {
    layer: usize,
    block: Block,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct VectorIndex {
    data_file: String,
    entries: Vec<VectorIndexEntry>,
}

/// Per-block norm, as written in extraction summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorNorm {
    pub layer: usize,
    pub block: Block,
    pub norm: f64,
}

impl SteeringVectorSet {
    pub fn n_layers(&self) -> usize {
        self.vectors.len()
    }

    pub fn get(&self, layer: usize, block: Block) -> &Vector {
        &self.vectors[layer][block_slot(block)]
    }

    pub fn d_model(&self) -> usize {
        self.vectors.first().map_or(0, |v| v[0].len())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            vectors: self.vectors.iter().map(|[a, m]| [a.scale(c), m.scale(c)]).collect(),
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn norms(&self) -> Vec<VectorNorm> {
        self.vectors
            .iter()
            .enumerate()
            .flat_map(|(layer, pair)| {
                Block::ALL.into_iter().map(move |block| VectorNorm {
                    layer,
                    block,
                    norm: pair[block_slot(block)].norm(),
                })
            })
            .collect()
    }

    /// Writes a JSON index at `path` and the f32 payload next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut data = Vec::new();
        let mut entries = Vec::new();
        for (layer, pair) in self.vectors.iter().enumerate() {
            for block in Block::ALL {
                let v = &pair[block_slot(block)];
                entries.push(VectorIndexEntry {
                    layer,
                    block,
                    offset: data.len(),
                    len: v.len(),
                });
                data.extend_from_slice(v.as_slice());
            }
        }
        let index = VectorIndex {
            data_file: sidecar_name(path),
            entries,
        };
        write_bytes(path, &serde_json::to_vec_pretty(&index)?)?;
        write_f32_file(&sidecar_path(path), &data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let index: VectorIndex = serde_json::from_slice(&bytes)?;
        let data = read_f32_file(&resolve_sidecar(path, &index.data_file))?;
        let bad = |reason: String| Error::InvalidFile {
            path: path.to_path_buf(),
            reason,
        };
        let n_layers = index.entries.iter().map(|e| e.layer + 1).max().unwrap_or(0);
        let mut slots: Vec<[Option<Vector>; 2]> = vec![[None, None]; n_layers];
        for e in index.entries {
            let slice = data
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| bad(format!("entry {}:{} out of range", e.layer, e.block)))?;
            slots[e.layer][block_slot(e.block)] = Some(Vector::new(slice.to_vec())?);
        }
        let vectors = slots
            .into_iter()
            .enumerate()
            .map(|(l, [a, m])| match (a, m) {
                (Some(a), Some(m)) => Ok([a, m]),
                _ => Err(bad(format!("layer {l} is missing a block"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { vectors })
    }
}

/// Token mean of one block's output over a sequence's masked positions.
fn response_mean(seq: &SequenceTrace, layer: usize, block: Block, d: usize) -> Result<Vec<f64>> {
    let positions = seq.masked_positions();
    if positions.is_empty() {
        return Err(Error::InvalidDataset("zero-length response".into()));
    }
    let n = positions.len() as f64;
    Ok((0..d)
        .map(|i| compensated_sum(positions.clone().map(|t| seq.block_output(t, layer, block)[i])) / n)
        .collect())
}

fn class_mean(seqs: &[SequenceTrace], layer: usize, block: Block, d: usize) -> Result<Vec<f64>> {
    let per_response = seqs
        .iter()
        .map(|s| response_mean(s, layer, block, d))
        .collect::<Result<Vec<_>>>()?;
    let n = per_response.len() as f64;
    Ok((0..d)
        .map(|i| compensated_sum(per_response.iter().map(|m| m[i])) / n)
        .collect())
}

/// Mean-difference vectors from already-captured positive and negative
/// sequence traces.
pub fn mean_difference(
    positive: &[SequenceTrace],
    negative: &[SequenceTrace],
    n_layers: usize,
    d_model: usize,
) -> Result<SteeringVectorSet> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::InvalidDataset("empty class".into()));
    }
    let vectors = (0..n_layers)
        .map(|layer| {
            let diff = |block| -> Result<Vector> {
                let p = class_mean(positive, layer, block, d_model)?;
                let q = class_mean(negative, layer, block, d_model)?;
                Vector::new(p.iter().zip(&q).map(|(a, b)| a - b).collect())
            };
            Ok([diff(Block::Attn)?, diff(Block::Mlp)?])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SteeringVectorSet { vectors })
}

/// Steering vectors from a probe trace.
pub fn steering_from_trace(probe: &ProbeTrace) -> Result<SteeringVectorSet> {
    let cfg = &probe.trace.config;
    mean_difference(probe.positive(), probe.negative(), cfg.n_layers, cfg.d_model)
}

/// Runs the model over the probe dataset and returns mean-difference vectors
/// averaged over response positions.
pub fn extract_steering_vectors(w: &ModelWeights, data: &ProbeDataset) -> Result<SteeringVectorSet> {
    steering_from_trace(&ProbeTrace::collect(w, data, PositionMask::Response)?)
}

// ---------------------------------------------------------------------------
// Activation steering
// ---------------------------------------------------------------------------

/// Which blocks a steering hook writes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSet {
    Attn,
    Mlp,
    #[default]
    Both,
}

impl BlockSet {
    pub fn contains(self, block: Block) -> bool {
        matches!(
            (self, block),
            (BlockSet::Both, _) | (BlockSet::Attn, Block::Attn) | (BlockSet::Mlp, Block::Mlp)
        )
    }
}

impl FromStr for BlockSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attn" => Ok(Self::Attn),
            "mlp" => Ok(Self::Mlp),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidParameter(format!("unknown block set `{other}`"))),
        }
    }
}

/// Adds `gamma * v[layer][block]` to every targeted block output.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringHook {
    gamma: f64,
    vectors: SteeringVectorSet,
    blocks: BlockSet,
    /// Positions before this index are left alone.
    from_position: usize,
}

impl SteeringHook {
    pub fn new(gamma: f64, vectors: SteeringVectorSet, blocks: BlockSet) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "steering strength {gamma} must be >= 0"
            )));
        }
        Ok(Self {
            gamma,
            vectors,
            blocks,
            from_position: 0,
        })
    }

    /// Restricts steering to positions `>= position`.
    pub fn starting_at(mut self, position: usize) -> Self {
        self.from_position = position;
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl BlockHook for SteeringHook {
    fn apply(&self, layer: usize, block: Block, position: usize, delta: &mut [f64]) {
        if self.gamma == 0.0 || position < self.from_position || !self.blocks.contains(block) {
            return;
        }
        let v = self.vectors.get(layer, block);
        for (d, x) in delta.iter_mut().zip(v.as_slice()) {
            *d += self.gamma * x;
        }
    }
}

/// Logits under activation steering.
pub fn steered_forward(w: &ModelWeights, tokens: &[u32], hook: &SteeringHook) -> Result<Vec<Vector>> {
    if hook.vectors.n_layers() != w.config.n_layers || hook.vectors.d_model() != w.config.d_model {
        return Err(Error::dim(
            "steered_forward",
            format!("{} layers x d {}", w.config.n_layers, w.config.d_model),
            format!(
                "vectors {} layers x d {}",
                hook.vectors.n_layers(),
                hook.vectors.d_model()
            ),
        ));
    }
    Ok(forward_hooked(w, tokens, CaptureSpec::NONE, &[hook])?.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, LayerCapture, ModelConfig};

    /// A one-layer trace whose attention and MLP outputs at each response
    /// position are given directly.
    fn planted(outputs: &[[f64; 2]]) -> SequenceTrace {
        let positions = outputs
            .iter()
            .map(|o| {
                vec![LayerCapture {
                    attn_out: o.to_vec(),
                    mlp_out: o.to_vec(),
                    ..Default::default()
                }]
            })
            .collect();
        SequenceTrace {
            tokens: vec![2; outputs.len()],
            mask_start: 0,
            positions,
        }
    }

    #[test]
    fn mean_difference_single_token_responses() {
        let pos = [planted(&[[1.0, 0.0]]), planted(&[[3.0, 0.0]])];
        let neg = [planted(&[[0.0, 1.0]]), planted(&[[0.0, 3.0]])];
        let v = mean_difference(&pos, &neg, 1, 2).unwrap();
        assert_eq!(v.get(0, Block::Attn).as_slice(), &[2.0, -2.0]);
        assert_eq!(v.get(0, Block::Mlp).as_slice(), &[2.0, -2.0]);
    }

    #[test]
    fn token_mean_precedes_class_mean() {
        let pos = [planted(&[[0.0, 0.0], [4.0, 0.0]])];
        let neg = [planted(&[[0.0, 0.0]])];
        let v = mean_difference(&pos, &neg, 1, 2).unwrap();
        assert_eq!(v.get(0, Block::Attn).as_slice(), &[2.0, 0.0]);

        // unequal lengths: nested mean (2 + 1)/2 differs from pooled (0+4+1)/3
        let pos = [planted(&[[0.0, 0.0], [4.0, 0.0]]), planted(&[[1.0, 0.0]])];
        let v = mean_difference(&pos, &neg, 1, 2).unwrap();
        assert_eq!(v.get(0, Block::Attn).as_slice(), &[1.5, 0.0]);
    }

    #[test]
    fn identical_classes_give_zero() {
        let set = [planted(&[[0.3, -1.0], [2.0, 5.0]]), planted(&[[7.0, 1.0]])];
        let v = mean_difference(&set, &set, 1, 2).unwrap();
        assert!(v.get(0, Block::Attn).is_zero() && v.get(0, Block::Mlp).is_zero());
    }

    #[test]
    fn empty_class_and_empty_response_error() {
        let one = [planted(&[[1.0, 0.0]])];
        assert!(mean_difference(&one, &[], 1, 2).is_err());
        let mut empty = planted(&[[1.0, 0.0]]);
        empty.mask_start = 1;
        assert!(mean_difference(&one, &[empty], 1, 2).is_err());

        let data = ProbeDataset {
            positive: vec![ProbeExample {
                prompt: vec![2],
                response: vec![3],
            }],
            negative: vec![],
        };
        assert!(data.validate().is_err());
        let data = ProbeDataset {
            positive: vec![ProbeExample {
                prompt: vec![2],
                response: vec![3],
            }],
            negative: vec![ProbeExample {
                prompt: vec![2],
                response: vec![],
            }],
        };
        assert!(data.validate().is_err());
    }

    fn toy_data() -> (ModelWeights, ProbeDataset) {
        let w = ModelWeights::random(&ModelConfig::toy(), 21, 0.2).unwrap();
        let ex = |p: &[u32], r: &[u32]| ProbeExample {
            prompt: p.to_vec(),
            response: r.to_vec(),
        };
        let data = ProbeDataset {
            positive: vec![ex(&[5, 6, 7], &[8, 9]), ex(&[10, 11], &[12, 13, 14])],
            negative: vec![ex(&[20, 21], &[22]), ex(&[23, 24, 25], &[26, 27])],
        };
        (w, data)
    }

    #[test]
    fn swap_negates_exactly() {
        let (w, data) = toy_data();
        let v = extract_steering_vectors(&w, &data).unwrap();
        let swapped = extract_steering_vectors(&w, &data.swapped()).unwrap();
        assert_eq!(swapped, v.negated());
    }

    #[test]
    fn steering_zero_gamma_is_bitwise_plain() {
        let (w, data) = toy_data();
        let v = extract_steering_vectors(&w, &data).unwrap();
        let hook = SteeringHook::new(0.0, v, BlockSet::Both).unwrap();
        let tokens = [3, 4, 5, 6];
        assert_eq!(
            steered_forward(&w, &tokens, &hook).unwrap(),
            forward(&w, &tokens, CaptureSpec::NONE).unwrap().logits
        );
        assert!(SteeringHook::new(-0.1, hook.vectors.clone(), BlockSet::Both).is_err());
    }

    #[test]
    fn vector_file_round_trip() {
        let (w, data) = toy_data();
        let v = extract_steering_vectors(&w, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.json");
        v.save(&path).unwrap();
        let back = SteeringVectorSet::load(&path).unwrap();
        for (a, b) in v.vectors.iter().flatten().zip(back.vectors.iter().flatten()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(f64::from(*x as f32), *y);
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let (_, data) = toy_data();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.jsonl");
        data.save_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"label\":\"pos\",\"prompt\":[5,6,7],\"response\":[8,9]}"));
        assert_eq!(ProbeDataset::load_jsonl(&path).unwrap(), data);
    }
}
