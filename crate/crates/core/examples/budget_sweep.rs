// SPDX-License-Identifier: MIT OR Apache-2.0

//! Budget sensitivity: varies the attention budget with MLP edits disabled,
//! then the reverse. Larger budgets leave fewer components edited.
//!
//! ```text
//! cargo run --example budget_sweep [out_dir]
//! ```

use residual_edit::harness::{run_budget_sweep, PipelineConfig, SweepClass};

fn main() -> residual_edit::Result<()> {
    let cfg = PipelineConfig {
        out_dir: std::env::args().nth(1).unwrap_or_else(|| "out/sweep".into()).into(),
        ..PipelineConfig::default()
    };
    for class in [SweepClass::Attn, SweepClass::Mlp] {
        println!("varying {class} budget");
        for p in run_budget_sweep(&cfg, class)? {
            let params = p.point.method.params();
            println!(
                "  {params:<52} edits {:>2}/{:<3} attribute {:>9.4} utility {:.4}",
                p.nonzero_attn, p.nonzero_mlp, p.point.attribute, p.point.utility
            );
        }
    }
    Ok(())
}
