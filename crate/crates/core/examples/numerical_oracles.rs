// SPDX-License-Identifier: MIT OR Apache-2.0

//! Runs the independent numerical checks behind the closed-form edit:
//! soft thresholding against a brute-force grid maximizer, optimality of the
//! input direction for output-score correlation, invariance of scores
//! orthogonal to the steering vector, and the per-component output shift.
//!
//! ```text
//! cargo run --example numerical_oracles [out_dir]
//! ```

use residual_edit::harness::{verify, PipelineConfig};

fn main() -> residual_edit::Result<()> {
    let cfg = PipelineConfig {
        out_dir: std::env::args().nth(1).unwrap_or_else(|| "out/verify".into()).into(),
        ..PipelineConfig::default()
    };
    for r in verify(&cfg)? {
        println!(
            "{:<4} {:<32} trials {:>7}  worst {:.3e}  tolerance {:.1e}",
            if r.pass { "ok" } else { "FAIL" },
            r.name,
            r.trials,
            r.max_violation,
            r.tolerance
        );
    }
    Ok(())
}
