// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end for the residual-edit pipeline.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
//! errors (including a failing oracle under `verify`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use residual_edit::editor::{parse_budget, EditHyperparams, Variant};
use residual_edit::harness::{self, PipelineConfig, SweepClass};
use residual_edit::steering::BlockSet;
use residual_edit::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "residual-edit",
    version,
    about = "Steering-vector derived rank-1 weight edits"
)]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel evaluation.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract steering vectors from the probe dataset.
    Extract,
    /// Build and apply one edit plan.
    Edit(EditArgs),
    /// Generate with activation steering on the evaluation prompts.
    Steer(SteerArgs),
    /// Two-stage grid search with the sanity veto.
    Search,
    /// Vary one class's budget with the other class disabled.
    Sweep {
        #[arg(long, value_parser = parse_sweep_class)]
        class: SweepClass,
    },
    /// Planted-behavior benchmark.
    Bench,
    /// Summarize artifacts in the output directory into report.md.
    Report,
    /// Run the numerical oracles and print one JSON report per line.
    Verify,
}

#[derive(Debug, Args)]
struct EditArgs {
    #[arg(long, value_parser = parse_rho)]
    rho_attn: Option<f64>,
    #[arg(long, value_parser = parse_rho)]
    rho_mlp: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// steer2edit, k_mean, k_svd, g_dot, l0:<K> or l2.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
}

#[derive(Debug, Args)]
struct SteerArgs {
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// attn, mlp or both.
    #[arg(long, value_parser = parse_blocks)]
    blocks: Option<BlockSet>,
}

fn parse_rho(s: &str) -> std::result::Result<f64, String> {
    parse_budget(s).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_blocks(s: &str) -> std::result::Result<BlockSet, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_sweep_class(s: &str) -> std::result::Result<SweepClass, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Extract => print_json(&harness::run_extract(&cfg)?),
        Command::Edit(args) => {
            let hyper = EditHyperparams::new(
                args.rho_attn.unwrap_or(cfg.edit.rho_attn),
                args.rho_mlp.unwrap_or(cfg.edit.rho_mlp),
                args.alpha.unwrap_or(cfg.edit.alpha),
            )?;
            let variant = args.variant.unwrap_or(cfg.variant);
            print_json(&harness::run_edit(&cfg, hyper, variant)?.summary)
        }
        Command::Steer(args) => {
            let gamma = args.gamma.unwrap_or(cfg.steer.gamma);
            let blocks = args.blocks.unwrap_or(cfg.steer.blocks);
            let report = harness::run_steer(&cfg, gamma, blocks)?;
            println!("attribute {:.6} utility {:.6}", report.attribute, report.utility);
            Ok(())
        }
        Command::Search => {
            let report = harness::run_search(&cfg)?;
            println!(
                "evaluated {} configurations, {} viable",
                report.evaluations.len(),
                report.viable
            );
            for e in &report.ranking {
                print_json(e)?;
            }
            Ok(())
        }
        Command::Sweep { class } => {
            for p in harness::run_budget_sweep(&cfg, *class)? {
                print_json(&p)?;
            }
            Ok(())
        }
        Command::Bench => {
            let r = harness::run_synthetic_bench(&cfg)?;
            println!("steering_cosine {:.6}", r.steering_cosine);
            println!("planted_g_rank {}", r.planted_g_rank);
            println!("attribute {:.6} -> {:.6}", r.base_attribute, r.suppressed_attribute);
            println!("utility {:.6} -> {:.6}", r.base_utility, r.suppressed_utility);
            Ok(())
        }
        Command::Report => {
            print!("{}", harness::report(&cfg)?);
            Ok(())
        }
        Command::Verify => {
            let reports = harness::verify(&cfg)?;
            for r in &reports {
                print_json(r)?;
            }
            match reports.iter().find(|r| !r.pass) {
                Some(r) => Err(Error::InvalidParameter(format!("oracle `{}` failed", r.name))),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n as usize).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(Error::InvalidParameter(format!("thread pool: {e}"))),
        },
        None => run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
