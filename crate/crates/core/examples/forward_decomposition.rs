// SPDX-License-Identifier: MIT OR Apache-2.0

//! Splits each block output of a toy transformer into per-component
//! contributions: one term per attention head (its `Wo` slab times its
//! output) and one per MLP neuron (its `W_down` column times its
//! activation). The sums reproduce the captured block outputs.
//!
//! ```text
//! cargo run --example forward_decomposition
//! ```

use residual_edit::linalg::{matvec, Vector};
use residual_edit::model::{forward, Block, CaptureSpec, ComponentId, ModelConfig, ModelWeights};

fn main() -> residual_edit::Result<()> {
    let config = ModelConfig::toy();
    let w = ModelWeights::random(&config, 7, 0.1)?;
    let tokens = [2, 9, 14, 3, 30, 5, 11];
    let out = forward(&w, &tokens, CaptureSpec::ALL)?;
    let trace = out.trace.expect("capture requested");

    let mut worst: f64 = 0.0;
    for (pos, layers) in trace.positions.iter().enumerate() {
        for layer in 0..config.n_layers {
            for block in Block::ALL {
                let mut sum = vec![0.0; config.d_model];
                for index in 0..config.block_width(block) {
                    let id = ComponentId { layer, block, index };
                    let h = Vector::new(trace.component_input(pos, id, config.d_head).to_vec())?;
                    let term = matvec(&w.component_weight(id)?, &h)?;
                    for (s, t) in sum.iter_mut().zip(term.as_slice()) {
                        *s += t;
                    }
                }
                let target = trace.block_output(pos, layer, block);
                let err = sum.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(err);
            }
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        println!(
            "pos {pos}: |attn_out L0| = {:.4}, |mlp_out L1| = {:.4}",
            norm(&layers[0].attn_out),
            norm(&layers[1].mlp_out)
        );
    }
    println!("max reconstruction error over heads and neurons: {worst:.3e}");
    Ok(())
}
