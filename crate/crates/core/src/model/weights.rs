// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Block, ComponentId, ModelConfig};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Parameters of one transformer layer.
///
/// Projections into the attention inner space (`wq`, `wk`, `wv`) and the
/// MLP hidden space (`w_gate`, `w_up`) are stored `out x in`; the two
/// residual-writing maps `wo` and `w_down` are `d_model x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm_gain: Vector,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_norm_gain: Vector,
    pub w_gate: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

/// All parameters of a model together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub token_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm_gain: Vector,
    pub unembedding: Matrix,
}

impl ModelWeights {
    /// Gaussian weights with standard deviation `scale` and unit norm gains.
    /// Values are rounded to `f32` so a save/load round trip is lossless.
    pub fn random(config: &ModelConfig, seed: u64, scale: f64) -> Result<Self> {
        config.validate()?;
        let normal =
            Normal::new(0.0, scale).map_err(|e| Error::InvalidParameter(format!("weight scale {scale}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss =
            |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| f64::from(normal.sample(&mut rng) as f32));
        let (d, inner, ff) = (config.d_model, config.attn_inner(), config.d_ff);
        let token_embedding = gauss(config.vocab_size, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm_gain: Vector::from_vec(vec![1.0; d]),
                wq: gauss(inner, d),
                wk: gauss(inner, d),
                wv: gauss(inner, d),
                wo: gauss(d, inner),
                mlp_norm_gain: Vector::from_vec(vec![1.0; d]),
                w_gate: gauss(ff, d),
                w_up: gauss(ff, d),
                w_down: gauss(d, ff),
            })
            .collect();
        let unembedding = gauss(config.vocab_size, d);
        let w = Self {
            config: config.clone(),
            token_embedding,
            layers,
            final_norm_gain: Vector::from_vec(vec![1.0; d]),
            unembedding,
        };
        w.validate()?;
        Ok(w)
    }

    /// Tensor names and expected `(rows, cols)` in canonical file order.
    /// Norm gains are reported as `1 x d_model`.
    pub fn canonical_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let (d, inner, ff, vocab) = (config.d_model, config.attn_inner(), config.d_ff, config.vocab_size);
        let mut out = vec![("token_embedding".to_string(), (vocab, d))];
        for l in 0..config.n_layers {
            out.extend([
                (format!("layers.{l}.attn_norm_gain"), (1, d)),
                (format!("layers.{l}.wq"), (inner, d)),
                (format!("layers.{l}.wk"), (inner, d)),
                (format!("layers.{l}.wv"), (inner, d)),
                (format!("layers.{l}.wo"), (d, inner)),
                (format!("layers.{l}.mlp_norm_gain"), (1, d)),
                (format!("layers.{l}.w_gate"), (ff, d)),
                (format!("layers.{l}.w_up"), (ff, d)),
                (format!("layers.{l}.w_down"), (d, ff)),
            ]);
        }
        out.push(("final_norm_gain".to_string(), (1, d)));
        out.push(("unembedding".to_string(), (vocab, d)));
        out
    }

    /// Flat row-major views of every tensor in canonical file order.
    pub fn canonical_tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.token_embedding.as_slice()];
        for layer in &self.layers {
            out.extend([
                layer.attn_norm_gain.as_slice(),
                layer.wq.as_slice(),
                layer.wk.as_slice(),
                layer.wv.as_slice(),
                layer.wo.as_slice(),
                layer.mlp_norm_gain.as_slice(),
                layer.w_gate.as_slice(),
                layer.w_up.as_slice(),
                layer.w_down.as_slice(),
            ]);
        }
        out.push(self.final_norm_gain.as_slice());
        out.push(self.unembedding.as_slice());
        out
    }

    fn actual_shapes(&self) -> Vec<(usize, usize)> {
        let gain = |v: &Vector| (1, v.len());
        let mut out = vec![self.token_embedding.shape()];
        for l in &self.layers {
            out.extend([
                gain(&l.attn_norm_gain),
                l.wq.shape(),
                l.wk.shape(),
                l.wv.shape(),
                l.wo.shape(),
                gain(&l.mlp_norm_gain),
                l.w_gate.shape(),
                l.w_up.shape(),
                l.w_down.shape(),
            ]);
        }
        out.push(gain(&self.final_norm_gain));
        out.push(self.unembedding.shape());
        out
    }

    /// Rebuilds weights from flat tensors in canonical order.
    pub(crate) fn from_canonical(config: ModelConfig, tensors: Vec<Vec<f64>>) -> Result<Self> {
        let shapes = Self::canonical_shapes(&config);
        if tensors.len() != shapes.len() {
            return Err(Error::ShapeMismatch {
                tensor: "<all>".into(),
                expected: format!("{} tensors", shapes.len()),
                found: format!("{} tensors", tensors.len()),
            });
        }
        let mut it = shapes.into_iter().zip(tensors);
        let mut next_matrix = || -> Result<Matrix> {
            let ((name, (r, c)), data) = it.next().expect("tensor count checked above");
            if data.len() != r * c {
                return Err(Error::ShapeMismatch {
                    tensor: name,
                    expected: format!("{r}x{c}"),
                    found: format!("{} values", data.len()),
                });
            }
            Matrix::new(r, c, data)
        };
        let gain = |m: Matrix| Vector::from_vec(m.as_slice().to_vec());
        let token_embedding = next_matrix()?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                attn_norm_gain: gain(next_matrix()?),
                wq: next_matrix()?,
                wk: next_matrix()?,
                wv: next_matrix()?,
                wo: next_matrix()?,
                mlp_norm_gain: gain(next_matrix()?),
                w_gate: next_matrix()?,
                w_up: next_matrix()?,
                w_down: next_matrix()?,
            });
        }
        let final_norm_gain = gain(next_matrix()?);
        let unembedding = next_matrix()?;
        let w = Self {
            config,
            token_embedding,
            layers,
            final_norm_gain,
            unembedding,
        };
        w.validate()?;
        Ok(w)
    }

    /// Checks every tensor shape against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.n_layers {
            return Err(Error::ShapeMismatch {
                tensor: "layers".into(),
                expected: self.config.n_layers.to_string(),
                found: self.layers.len().to_string(),
            });
        }
        let shapes = Self::canonical_shapes(&self.config);
        for ((name, expected), found) in shapes.iter().zip(self.actual_shapes()) {
            if *expected != found {
                return Err(Error::ShapeMismatch {
                    tensor: name.clone(),
                    expected: format!("{}x{}", expected.0, expected.1),
                    found: format!("{}x{}", found.0, found.1),
                });
            }
        }
        Ok(())
    }

    /// The weight slab of one component: a `d_model x d_head` block of `Wo`
    /// for a head, or a `d_model x 1` column of `W_down` for a neuron.
    pub fn component_weight(&self, id: ComponentId) -> Result<Matrix> {
        self.config.check_component(id)?;
        let layer = &self.layers[id.layer];
        Ok(match id.block {
            Block::Attn => {
                let dh = self.config.d_head;
                layer.wo.column_block(id.index * dh, dh)
            }
            Block::Mlp => layer.w_down.column_block(id.index, 1),
        })
    }

    /// Returns a copy of `self` with one component's slab replaced.
    pub fn set_component_weight(&self, id: ComponentId, m: &Matrix) -> Result<ModelWeights> {
        let mut out = self.clone();
        out.set_component_weight_in_place(id, m)?;
        Ok(out)
    }

    pub(crate) fn set_component_weight_in_place(&mut self, id: ComponentId, m: &Matrix) -> Result<()> {
        self.config.check_component(id)?;
        let expected = (self.config.d_model, self.config.component_in_dim(id.block));
        if m.shape() != expected {
            return Err(Error::ShapeMismatch {
                tensor: id.to_string(),
                expected: format!("{}x{}", expected.0, expected.1),
                found: format!("{}x{}", m.rows(), m.cols()),
            });
        }
        let layer = &mut self.layers[id.layer];
        match id.block {
            Block::Attn => layer.wo.set_column_block(id.index * self.config.d_head, m),
            Block::Mlp => layer.w_down.set_column_block(id.index, m),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelWeights {
        let mut cfg = ModelConfig::toy();
        cfg.n_heads = 2;
        cfg.d_head = 3;
        cfg.d_model = 5;
        cfg.d_ff = 4;
        cfg.vocab_size = 8;
        ModelWeights::random(&cfg, 7, 0.5).unwrap()
    }

    #[test]
    fn head_zero_is_left_block_of_wo() {
        let w = small();
        let slab = w.component_weight(ComponentId::attn(0, 0)).unwrap();
        assert_eq!(slab.shape(), (5, 3));
        for r in 0..5 {
            for c in 0..3 {
                assert_eq!(slab.get(r, c), w.layers[0].wo.get(r, c));
            }
        }
    }

    #[test]
    fn neuron_is_down_column() {
        let w = small();
        let col = w.component_weight(ComponentId::mlp(1, 2)).unwrap();
        assert_eq!(col.shape(), (5, 1));
        assert_eq!(col.column(0), w.layers[1].w_down.column(2));
    }

    #[test]
    fn head_slabs_reassemble_wo() {
        let w = small();
        let mut rebuilt = Matrix::zeros(5, 6);
        for h in 0..2 {
            let slab = w.component_weight(ComponentId::attn(1, h)).unwrap();
            rebuilt.set_column_block(h * 3, &slab);
        }
        assert_eq!(rebuilt, w.layers[1].wo);
    }

    #[test]
    fn set_then_get_and_isolation() {
        let w = small();
        let m = Matrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64);
        let edited = w.set_component_weight(ComponentId::attn(0, 0), &m).unwrap();
        assert_eq!(edited.component_weight(ComponentId::attn(0, 0)).unwrap(), m);
        assert_eq!(
            edited.component_weight(ComponentId::attn(0, 1)).unwrap(),
            w.component_weight(ComponentId::attn(0, 1)).unwrap()
        );
        assert_eq!(edited.layers[1], w.layers[1]);

        let original = w.component_weight(ComponentId::mlp(0, 3)).unwrap();
        assert_eq!(w.set_component_weight(ComponentId::mlp(0, 3), &original).unwrap(), w);
    }

    #[test]
    fn set_rejects_wrong_shape_and_bad_id() {
        let w = small();
        assert!(matches!(
            w.set_component_weight(ComponentId::attn(0, 0), &Matrix::zeros(5, 2)),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            w.component_weight(ComponentId::attn(0, 2)),
            Err(Error::InvalidComponent(_))
        ));
    }

    #[test]
    fn random_is_seeded() {
        let cfg = ModelConfig::toy();
        assert_eq!(
            ModelWeights::random(&cfg, 3, 0.02).unwrap(),
            ModelWeights::random(&cfg, 3, 0.02).unwrap()
        );
        assert_ne!(
            ModelWeights::random(&cfg, 3, 0.02).unwrap(),
            ModelWeights::random(&cfg, 4, 0.02).unwrap()
        );
    }
}
