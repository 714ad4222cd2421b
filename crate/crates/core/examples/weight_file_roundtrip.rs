// SPDX-License-Identifier: MIT OR Apache-2.0

//! Saves a model and an edit plan and loads them back. Weights and plan
//! scores round-trip exactly; edit directions are stored as f32. A fully
//! disabled plan leaves the weight file unchanged byte for byte.
//!
//! ```text
//! cargo run --example weight_file_roundtrip [dir]
//! ```

use std::path::PathBuf;

use residual_edit::editor::{apply_edit_plan, EditHyperparams, EditPlan};
use residual_edit::harness::{Experiment, PipelineConfig};
use residual_edit::model::{load_weights, save_weights};

fn main() -> residual_edit::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/roundtrip".into()));
    std::fs::create_dir_all(&dir).map_err(|e| residual_edit::Error::io(&dir, e))?;
    let cfg = PipelineConfig::default();
    let exp = Experiment::prepare(&cfg)?;

    let base = dir.join("base.s2e");
    save_weights(&exp.weights, &base)?;
    let loaded = load_weights(&base)?;
    println!("weights round trip exact: {}", loaded == exp.weights);

    let plan = exp.plan(cfg.edit, cfg.variant)?;
    plan.save(dir.join("plan.json"))?;
    let reloaded = EditPlan::load(dir.join("plan.json"))?;
    println!("plan scores exact:        {}", reloaded.scores == plan.scores);
    // directions are stored as f32
    let mut worst: f64 = 0.0;
    for (id, e) in &plan.entries {
        let r = &reloaded.entries[id];
        for (a, b) in [(&e.u_hat, &r.u_hat), (&e.k_hat, &r.k_hat)] {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    println!("plan direction max error: {worst:.2e}");

    let null = exp.plan(EditHyperparams::disabled(), cfg.variant)?;
    let untouched = dir.join("null_edit.s2e");
    save_weights(&apply_edit_plan(&exp.weights, &null)?, &untouched)?;
    let same = std::fs::read(&base).ok() == std::fs::read(&untouched).ok();
    println!("null edit byte-identical: {same}");
    Ok(())
}
