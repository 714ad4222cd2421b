// SPDX-License-Identifier: MIT OR Apache-2.0

//! Compares the edit variants on the planted-behavior model: alternative
//! input directions (mean input, top singular vector), a raw dot-product
//! score, top-K selection and the dense ridge solution.
//!
//! ```text
//! cargo run --example ablation_variants
//! ```

use residual_edit::editor::{EditHyperparams, Variant};
use residual_edit::harness::{Experiment, PipelineConfig};
use residual_edit::model::Block;

fn main() -> residual_edit::Result<()> {
    let cfg = PipelineConfig::default();
    let exp = Experiment::prepare(&cfg)?;
    let hyper = EditHyperparams::new(0.9, 0.9, 0.7)?;
    let variants = [
        Variant::Steer2Edit,
        Variant::KMean,
        Variant::KSvd,
        Variant::GDot,
        Variant::L0TopK(2),
        Variant::L2Dense,
    ];
    println!(
        "{:<10} {:>5} {:>5} {:>12} {:>10} {:>8}",
        "variant", "attn", "mlp", "planted lam", "attribute", "utility"
    );
    for variant in variants {
        let (plan, _, point) = exp.edit_point(hyper, variant)?;
        let planted = plan.score(cfg.bench.planted).map_or(0.0, |s| s.lambda);
        println!(
            "{:<10} {:>5} {:>5} {:>12.4} {:>10.4} {:>8.4}",
            variant.to_string(),
            plan.nonzero_count(Block::Attn),
            plan.nonzero_count(Block::Mlp),
            planted,
            point.attribute,
            point.utility
        );
    }
    Ok(())
}
