// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weight and trace files.
//!
//! Weight file layout:
//!
//! ```text
//! 0..4      magic "S2E1" (53 32 45 31)
//! 4..8      u32 LE: byte length N of the JSON ModelConfig
//! 8..8+N    UTF-8 JSON ModelConfig
//! ...       tensors as f32 LE, row-major, in canonical order:
//!           token_embedding; per layer attn_norm_gain, Wq, Wk, Wv, Wo,
//!           mlp_norm_gain, W_gate, W_up, W_down; final_norm_gain; unembedding
//! ```
//!
//! No padding, no checksum.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::forward::{ActivationTrace, LayerCapture, SequenceTrace};
use super::{ModelConfig, ModelWeights};
use crate::binio::{
    decode_f32, encode_f32, read_bytes, read_f32_file, resolve_sidecar, sidecar_name, sidecar_path, write_bytes,
};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"S2E1";

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Serializes weights to the S2E1 byte stream.
pub fn encode_weights(w: &ModelWeights) -> Result<Vec<u8>> {
    w.validate()?;
    let config = serde_json::to_vec(&w.config)?;
    let payload: usize = w.canonical_tensors().iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(8 + config.len() + 4 * payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for tensor in w.canonical_tensors() {
        encode_f32(tensor.iter().copied(), &mut out);
    }
    Ok(out)
}

/// Parses an S2E1 byte stream.
pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            tensor: "magic".into(),
            expected: 4,
            available: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            tensor: "config length".into(),
            expected: 4,
            available: bytes.len() - 4,
        });
    }
    let n = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let rest = &bytes[8..];
    if rest.len() < n {
        return Err(Error::Truncated {
            tensor: "config".into(),
            expected: n,
            available: rest.len(),
        });
    }
    let config: ModelConfig = serde_json::from_slice(&rest[..n])?;
    config.validate()?;

    let mut cursor = &rest[n..];
    let shapes = ModelWeights::canonical_shapes(&config);
    let mut tensors = Vec::with_capacity(shapes.len());
    for (name, (r, c)) in &shapes {
        let len = r * c * 4;
        if cursor.len() < len {
            return Err(Error::Truncated {
                tensor: name.clone(),
                expected: len,
                available: cursor.len(),
            });
        }
        tensors.push(decode_f32(&cursor[..len]));
        cursor = &cursor[len..];
    }
    if !cursor.is_empty() {
        return Err(Error::ShapeMismatch {
            tensor: "<payload>".into(),
            expected: "end of file after unembedding".into(),
            found: format!("{} trailing bytes", cursor.len()),
        });
    }
    ModelWeights::from_canonical(config, tensors)
}

/// Writes weights to `path` in the S2E1 format.
pub fn save_weights(w: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_weights(w)?)
}

/// Reads an S2E1 weight file, widening stored f32 values to f64.
pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    decode_weights(&read_bytes(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

const TRACE_FIELDS: [&str; 7] = [
    "resid_pre",
    "attn_out",
    "resid_mid",
    "head_inputs",
    "neuron_acts",
    "mlp_out",
    "resid_post",
];

fn fields(cap: &LayerCapture) -> [&Vec<f64>; 7] {
    [
        &cap.resid_pre,
        &cap.attn_out,
        &cap.resid_mid,
        &cap.head_inputs,
        &cap.neuron_acts,
        &cap.mlp_out,
        &cap.resid_post,
    ]
}

#[derive(Serialize, Deserialize)]
struct FieldEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct SequenceEntry {
    tokens: Vec<u32>,
    mask_start: usize,
    /// Offset into the data file, in f32 elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct TraceIndex {
    config: ModelConfig,
    data_file: String,
    /// Per-layer record layout; data is ordered sequence, position, layer,
    /// then these fields.
    fields: Vec<FieldEntry>,
    sequences: Vec<SequenceEntry>,
}

/// Writes a trace as a JSON index at `path` plus a raw f32 file next to it.
pub fn save_trace(trace: &ActivationTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let template = trace
        .sequences
        .first()
        .and_then(|s| s.positions.first())
        .and_then(|p| p.first())
        .cloned()
        .unwrap_or_default();
    let lens: Vec<usize> = fields(&template).iter().map(|f| f.len()).collect();
    let mut data = Vec::new();
    let mut sequences = Vec::with_capacity(trace.sequences.len());
    for seq in &trace.sequences {
        sequences.push(SequenceEntry {
            tokens: seq.tokens.clone(),
            mask_start: seq.mask_start,
            offset: data.len() / 4,
        });
        for pos in &seq.positions {
            for cap in pos {
                for (f, &len) in fields(cap).iter().zip(&lens) {
                    if f.len() != len {
                        return Err(Error::MissingTraceCoverage(
                            "trace captures differ between positions".into(),
                        ));
                    }
                    encode_f32(f.iter().copied(), &mut data);
                }
            }
        }
    }
    let index = TraceIndex {
        config: trace.config.clone(),
        data_file: sidecar_name(path),
        fields: TRACE_FIELDS
            .iter()
            .zip(&lens)
            .map(|(name, &len)| FieldEntry {
                name: (*name).to_string(),
                len,
            })
            .collect(),
        sequences,
    };
    write_bytes(path, &serde_json::to_vec_pretty(&index)?)?;
    write_bytes(&sidecar_path(path), &data)
}

/// Reads a trace written by [`save_trace`].
pub fn load_trace(path: impl AsRef<Path>) -> Result<ActivationTrace> {
    let path = path.as_ref();
    let index: TraceIndex = serde_json::from_slice(&read_bytes(path)?)?;
    let data = read_f32_file(&resolve_sidecar(path, &index.data_file))?;
    let lens: Vec<usize> = index.fields.iter().map(|f| f.len).collect();
    let per_layer: usize = lens.iter().sum();
    let n_layers = index.config.n_layers;
    let bad = |reason: String| Error::InvalidFile {
        path: path.to_path_buf(),
        reason,
    };
    let mut sequences = Vec::with_capacity(index.sequences.len());
    for entry in index.sequences {
        let need = entry.tokens.len() * n_layers * per_layer;
        let block = data
            .get(entry.offset..entry.offset + need)
            .ok_or_else(|| bad(format!("sequence at offset {} exceeds data", entry.offset)))?;
        let mut cursor = block;
        let mut positions = Vec::with_capacity(entry.tokens.len());
        for _ in 0..entry.tokens.len() {
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let mut parts = lens.iter().map(|&len| {
                    let (head, tail) = cursor.split_at(len);
                    cursor = tail;
                    head.to_vec()
                });
                let mut next = || parts.next().unwrap_or_default();
                layers.push(LayerCapture {
                    resid_pre: next(),
                    attn_out: next(),
                    resid_mid: next(),
                    head_inputs: next(),
                    neuron_acts: next(),
                    mlp_out: next(),
                    resid_post: next(),
                });
            }
            positions.push(layers);
        }
        sequences.push(SequenceTrace {
            tokens: entry.tokens,
            mask_start: entry.mask_start,
            positions,
        });
    }
    Ok(ActivationTrace {
        config: index.config,
        sequences,
    })
}
