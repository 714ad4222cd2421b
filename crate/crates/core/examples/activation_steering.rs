// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation steering baseline: adds `-gamma v` after every block at
//! inference time and shows how the behavior projection and neutral-prompt
//! agreement move with `gamma`. Unlike a weight edit, the shift is applied
//! on every input, trigger or not.
//!
//! ```text
//! cargo run --example activation_steering
//! ```

use residual_edit::harness::{Experiment, PipelineConfig};
use residual_edit::model::generate;

fn main() -> residual_edit::Result<()> {
    let cfg = PipelineConfig::default();
    let exp = Experiment::prepare(&cfg)?;
    let prompt = &exp.prompts.trigger_eval[0];
    println!("trigger prompt {prompt:?}");
    println!("{:>6} {:>10} {:>8}  continuation", "gamma", "attribute", "utility");
    for gamma in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let point = exp.steering_point(gamma)?;
        let hook = exp.steering_hook(gamma)?;
        let tokens = generate(&exp.weights, prompt, 8, &[&hook])?;
        println!(
            "{gamma:>6.2} {:>10.4} {:>8.4}  {:?}",
            point.attribute,
            point.utility,
            &tokens[prompt.len()..]
        );
    }
    Ok(())
}
