// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form edit magnitudes: prints the soft-threshold curve for one
//! budget, then builds a suppression plan on the planted-behavior model and
//! lists the components it edits.
//!
//! ```text
//! cargo run --example closed_form_edit
//! ```

use residual_edit::editor::{apply_edit_plan, edit_magnitude, ComponentStatus};
use residual_edit::harness::{Experiment, PipelineConfig};

fn main() -> residual_edit::Result<()> {
    let (rho, alpha) = (0.9, 0.7);
    println!(
        "soft threshold at rho={rho}, alpha={alpha} (dead zone |g| <= {:.2})",
        rho * alpha
    );
    for g in [-1.0, -0.8, -0.63, -0.3, 0.0, 0.3, 0.63, 0.8, 1.0] {
        println!("  g = {g:>5.2}  lambda = {:>8.4}", edit_magnitude(g, rho, alpha)?);
    }

    let cfg = PipelineConfig::default();
    let exp = Experiment::prepare(&cfg)?;
    let plan = exp.plan(cfg.edit, cfg.variant)?;
    println!("\nsuppression plan with {:?}", cfg.edit);
    for s in plan.scores.iter().filter(|s| s.status == ComponentStatus::Edited) {
        println!(
            "  {:<10} g = {:>7.4}  lambda = {:>8.4}",
            s.id.to_string(),
            s.g,
            s.lambda
        );
    }
    let dead = plan
        .scores
        .iter()
        .filter(|s| s.status == ComponentStatus::DeadZone)
        .count();
    println!("  {dead} components inside the dead zone");

    let edited = apply_edit_plan(&exp.weights, &plan)?;
    let (a0, u0) = exp.measure(&exp.weights, &[])?;
    let (a1, u1) = exp.measure(&edited, &[])?;
    println!("\nattribute {a0:.4} -> {a1:.4}, utility {u0:.4} -> {u1:.4}");
    Ok(())
}
