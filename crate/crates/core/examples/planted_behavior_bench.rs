// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted-behavior benchmark: builds a toy model whose attention head
//! writes a behavior direction whenever a trigger token is in context, then
//! compares suppression by activation steering against a closed-form edit.
//!
//! ```text
//! cargo run --example planted_behavior_bench [out_dir]
//! ```

use residual_edit::harness::{run_synthetic_bench, PipelineConfig};

fn main() -> residual_edit::Result<()> {
    let cfg = PipelineConfig {
        out_dir: std::env::args().nth(1).unwrap_or_else(|| "out/bench".into()).into(),
        ..PipelineConfig::default()
    };
    let report = run_synthetic_bench(&cfg)?;

    println!("planted head          {}", report.header.planted);
    println!("steering cosine       {:.4}", report.steering_cosine);
    println!(
        "planted g             {:.4} (rank {} among heads)",
        report.planted_g, report.planted_g_rank
    );
    println!("planted |lambda| rank {}", report.planted_lambda_rank);
    println!(
        "attribute             {:.4} -> {:.4}",
        report.base_attribute, report.suppressed_attribute
    );
    println!("utility               {:.4}", report.suppressed_utility);
    println!(
        "edits                 {} attn, {} mlp",
        report.nonzero_attn, report.nonzero_mlp
    );
    println!(
        "\n{:<10} {:<56} {:>10} {:>8}",
        "method", "params", "attribute", "utility"
    );
    for p in &report.tradeoff {
        println!(
            "{:<10} {:<56} {:>10.4} {:>8.4}",
            p.method.name(),
            p.method.params(),
            p.attribute,
            p.utility
        );
    }
    println!("\nartifacts in {}", cfg.out_dir.display());
    Ok(())
}
