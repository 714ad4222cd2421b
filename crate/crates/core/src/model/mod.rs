// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small pre-normalization decoder-only transformer.
//!
//! The engine exists to expose the quantities the editing math needs:
//! per-block outputs written into the residual stream, per-head inputs to
//! the attention output projection, and per-neuron activations feeding the
//! MLP down projection. There are no bias terms; every editable component
//! is a pure linear map.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod forward;
mod io;
mod weights;

pub use forward::{
    argmax, entropy, forward, forward_hooked, generate, generate_detailed, ActivationTrace, BlockHook, CaptureSpec,
    ForwardOutput, Generation, LayerCapture, PositionMask, SequenceTrace,
};
pub use io::{load_trace, load_weights, save_trace, save_weights, MAGIC};
pub use weights::{LayerWeights, ModelWeights};

/// Reserved padding token.
pub const PAD_TOKEN: u32 = 0;
/// Reserved end-of-sequence token; generation stops when it is produced.
pub const END_TOKEN: u32 = 1;

/// Epsilon used by every normalization layer.
pub const NORM_EPS: f64 = 1e-6;
/// Base frequency for rotary position embeddings.
pub const ROPE_BASE: f64 = 10_000.0;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Rms,
    Layernorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpKind {
    /// `down(silu(gate x) * up x)`.
    GatedSilu,
    /// `down(gelu(up x))`; `W_gate` is stored but unused.
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosKind {
    Rotary,
    None,
}

/// Dimensional configuration of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub norm_kind: NormKind,
    pub mlp_kind: MlpKind,
    pub pos_kind: PosKind,
}

impl ModelConfig {
    /// The 2-layer, 4-head, `d = 32`, `d_ff = 64` configuration used by the
    /// synthetic benchmark and most tests.
    pub fn toy() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_head: 8,
            d_ff: 64,
            vocab_size: 64,
            max_seq_len: 64,
            norm_kind: NormKind::Rms,
            mlp_kind: MlpKind::GatedSilu,
            pos_kind: PosKind::Rotary,
        }
    }

    /// Width of the concatenated head outputs.
    pub fn attn_inner(&self) -> usize {
        self.n_heads * self.d_head
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.vocab_size <= END_TOKEN as usize {
            return Err(Error::InvalidConfig(
                "vocab_size must leave room for the reserved pad and end tokens".into(),
            ));
        }
        Ok(())
    }

    /// Number of components in one block of the given kind.
    pub fn block_width(&self, block: Block) -> usize {
        match block {
            Block::Attn => self.n_heads,
            Block::Mlp => self.d_ff,
        }
    }

    /// Input width of a component of the given kind.
    pub fn component_in_dim(&self, block: Block) -> usize {
        match block {
            Block::Attn => self.d_head,
            Block::Mlp => 1,
        }
    }

    /// Every editable component, ordered by (layer, block, index).
    pub fn components(&self) -> Vec<ComponentId> {
        let mut out = Vec::with_capacity(self.n_layers * (self.n_heads + self.d_ff));
        for layer in 0..self.n_layers {
            for block in Block::ALL {
                for index in 0..self.block_width(block) {
                    out.push(ComponentId { layer, block, index });
                }
            }
        }
        out
    }

    pub fn check_component(&self, id: ComponentId) -> Result<()> {
        if id.layer >= self.n_layers || id.index >= self.block_width(id.block) {
            return Err(Error::InvalidComponent(id.to_string()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Component addressing
// ---------------------------------------------------------------------------

/// Residual-writing block kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Attn,
    Mlp,
}

impl Block {
    pub const ALL: [Block; 2] = [Block::Attn, Block::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            Block::Attn => "attn",
            Block::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attn" => Ok(Block::Attn),
            "mlp" => Ok(Block::Mlp),
            other => Err(Error::InvalidParameter(format!("unknown block `{other}`"))),
        }
    }
}

/// Address of an editable component: one attention head's output-projection
/// slab, or one column of an MLP down projection.
///
/// The derived ordering (layer, then block with attn before mlp, then index)
/// is the canonical ordering used everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId {
    pub layer: usize,
    pub block: Block,
    pub index: usize,
}

impl ComponentId {
    pub fn attn(layer: usize, head: usize) -> Self {
        Self {
            layer,
            block: Block::Attn,
            index: head,
        }
    }

    pub fn mlp(layer: usize, neuron: usize) -> Self {
        Self {
            layer,
            block: Block::Mlp,
            index: neuron,
        }
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.{}.{}", self.layer, self.block, self.index)
    }
}

impl FromStr for ComponentId {
    type Err = Error;

    /// Parses the `L<layer>.<block>.<index>` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidComponent(s.to_string());
        let mut parts = s.strip_prefix('L').ok_or_else(bad)?.split('.');
        let (Some(layer), Some(block), Some(index), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        Ok(Self {
            layer: layer.parse().map_err(|_| bad())?,
            block: block.parse().map_err(|_| bad())?,
            index: index.parse().map_err(|_| bad())?,
        })
    }
}
