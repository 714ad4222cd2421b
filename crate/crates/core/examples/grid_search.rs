// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-stage hyperparameter search with the degenerate-output veto: a
//! coarse grid, then a finer grid around the best survivors. Survivors
//! must keep neutral-prompt utility above a floor and are ranked by the
//! attribute metric, then utility.
//!
//! ```text
//! cargo run --example grid_search [out_dir]
//! ```

use residual_edit::harness::{run_search, Budget, HyperGrid, PipelineConfig};

fn main() -> residual_edit::Result<()> {
    let mut cfg = PipelineConfig {
        out_dir: std::env::args().nth(1).unwrap_or_else(|| "out/search".into()).into(),
        ..PipelineConfig::default()
    };
    cfg.grid = HyperGrid {
        rho_attn: vec![Budget(0.5), Budget(0.9), Budget(1.3)],
        rho_mlp: vec![Budget(f64::INFINITY)],
        alpha: vec![0.5, 0.7, 0.9],
    };
    // An untrained toy model already falls into short loops under greedy
    // decoding, so the repetition check would veto the unedited model too.
    // Keep the entropy and empty-output checks only.
    cfg.veto.max_repeats = usize::MAX;
    // Rank by attribute only among edits that keep neutral behavior intact.
    cfg.min_utility = Some(0.9);
    let report = run_search(&cfg)?;
    println!(
        "base attribute {:.4}, {} evaluations, {} viable",
        report.base_attribute,
        report.evaluations.len(),
        report.viable
    );
    for (rank, e) in report.ranking.iter().enumerate() {
        println!(
            "#{} stage {} rho_attn={} alpha={}: attribute {:.4}, utility {:.4}",
            rank + 1,
            e.stage,
            e.hyper.rho_attn,
            e.hyper.alpha,
            e.attribute,
            e.utility
        );
    }
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}
