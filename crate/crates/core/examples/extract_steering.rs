// SPDX-License-Identifier: MIT OR Apache-2.0

//! Extracts mean-difference steering vectors from trigger (positive) and
//! neutral (negative) generations of the planted-behavior model and checks
//! that the attention vector at the planted layer points along the planted
//! behavior direction.
//!
//! ```text
//! cargo run --example extract_steering
//! ```

use residual_edit::harness::{Experiment, PipelineConfig};
use residual_edit::linalg::cosine;
use residual_edit::model::Block;

fn main() -> residual_edit::Result<()> {
    let cfg = PipelineConfig::default();
    let exp = Experiment::prepare(&cfg)?;
    println!(
        "{} positive and {} negative generations, {} response positions",
        exp.probes.positive.len(),
        exp.probes.negative.len(),
        exp.trace.masked_count()
    );
    println!("{:<6} {:<5} {:>10} {:>14}", "layer", "block", "norm", "cos(behavior)");
    for layer in 0..exp.vectors.n_layers() {
        for block in Block::ALL {
            let v = exp.vectors.get(layer, block);
            println!(
                "{layer:<6} {:<5} {:>10.5} {:>14.4}",
                block.as_str(),
                v.norm(),
                cosine(v, &exp.planted.behavior)?
            );
        }
    }
    println!("planted head: {}", cfg.bench.planted);
    Ok(())
}
