// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-stage hyperparameter search and single-class budget sweeps.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::bench::{sanity_check, SanityOutcome};
use super::config::{Goal, HyperGrid, PipelineConfig};
use super::{emit_tradeoff_csv, ensure_dir, write_json, Experiment, Method, TradeoffPoint};
use crate::editor::{apply_edit_plan, EditHyperparams, Variant};
use crate::error::{Error, Result};
use crate::model::Block;

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub stage: u8,
    pub hyper: EditHyperparams,
    pub attribute: f64,
    pub utility: f64,
    pub nonzero_attn: usize,
    pub nonzero_mlp: usize,
    pub sanity: SanityOutcome,
    /// False when utility falls below the configured `min_utility`.
    pub meets_utility_floor: bool,
}

impl Evaluation {
    pub fn viable(&self) -> bool {
        !self.sanity.vetoed && self.meets_utility_floor
    }
}

fn evaluate(exp: &Experiment, hyper: EditHyperparams, variant: Variant, stage: u8) -> Result<Evaluation> {
    let plan = exp.plan(hyper, variant)?;
    let edited = apply_edit_plan(&exp.weights, &plan)?;
    let (attribute, utility) = exp.measure(&edited, &[])?;
    let sanity = sanity_check(&edited, &[], &exp.prompts.sanity, &exp.config.veto)?;
    Ok(Evaluation {
        stage,
        hyper,
        attribute,
        utility,
        nonzero_attn: plan.nonzero_count(Block::Attn),
        nonzero_mlp: plan.nonzero_count(Block::Mlp),
        sanity,
        meets_utility_floor: exp.config.min_utility.is_none_or(|floor| utility >= floor),
    })
}

fn cmp_hyper(a: &EditHyperparams, b: &EditHyperparams) -> Ordering {
    a.rho_attn
        .total_cmp(&b.rho_attn)
        .then(a.rho_mlp.total_cmp(&b.rho_mlp))
        .then(a.alpha.total_cmp(&b.alpha))
}

/// Ranking order: attribute in the goal's direction, then higher utility,
/// then hyperparameters in ascending `(rho_attn, rho_mlp, alpha)` order.
pub fn rank_order(goal: Goal, a: &Evaluation, b: &Evaluation) -> Ordering {
    let by_attribute = match goal {
        Goal::Decrease => a.attribute.total_cmp(&b.attribute),
        Goal::Increase => b.attribute.total_cmp(&a.attribute),
    };
    by_attribute
        .then(b.utility.total_cmp(&a.utility))
        .then_with(|| cmp_hyper(&a.hyper, &b.hyper))
}

fn round12(x: f64) -> f64 {
    if x.is_finite() {
        (x * 1e12).round() / 1e12
    } else {
        x
    }
}

/// Smallest positive gap between finite grid values.
fn coarse_step(values: &[f64]) -> Option<f64> {
    let mut finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    finite
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .min_by(f64::total_cmp)
}

/// `x` plus `-1, -1/2, 0, 1/2, 1` coarse steps, filtered by `valid`.
fn refine_axis(x: f64, step: Option<f64>, valid: impl Fn(f64) -> bool) -> Vec<f64> {
    match step {
        Some(s) if x.is_finite() => [-1.0, -0.5, 0.0, 0.5, 1.0]
            .iter()
            .map(|k| round12(x + k * s))
            .filter(|&v| valid(v))
            .collect(),
        _ => vec![x],
    }
}

/// Stage-2 points around `center` on the coarse `grid`.
pub fn refine_around(center: &EditHyperparams, grid: &HyperGrid) -> Vec<EditHyperparams> {
    let ra: Vec<f64> = grid.rho_attn.iter().map(|b| b.0).collect();
    let rm: Vec<f64> = grid.rho_mlp.iter().map(|b| b.0).collect();
    let rho_ok = |v: f64| v > 0.0;
    let alpha_ok = |v: f64| (0.0..1.0).contains(&v);
    let mut out = Vec::new();
    for a in refine_axis(center.rho_attn, coarse_step(&ra), rho_ok) {
        for m in refine_axis(center.rho_mlp, coarse_step(&rm), rho_ok) {
            for al in refine_axis(center.alpha, coarse_step(&grid.alpha), alpha_ok) {
                out.push(EditHyperparams {
                    rho_attn: a,
                    rho_mlp: m,
                    alpha: al,
                });
            }
        }
    }
    out
}

fn same_point(a: &EditHyperparams, b: &EditHyperparams) -> bool {
    cmp_hyper(a, b) == Ordering::Equal
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

/// Every evaluated configuration plus the best survivors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub variant: Variant,
    pub goal: Goal,
    pub base_attribute: f64,
    pub base_utility: f64,
    pub base_sanity: SanityOutcome,
    /// Stage 1 then stage 2, each in ascending hyperparameter order.
    pub evaluations: Vec<Evaluation>,
    pub viable: usize,
    /// Best `top_k` viable configurations.
    pub ranking: Vec<Evaluation>,
}

fn evaluate_all(exp: &Experiment, points: &[EditHyperparams], variant: Variant, stage: u8) -> Result<Vec<Evaluation>> {
    points.par_iter().map(|&h| evaluate(exp, h, variant, stage)).collect()
}

/// Runs the two-stage search and writes `search.json` and
/// `search_points.csv` to the output directory.
///
/// Stage 1 evaluates the coarse grid. Stage 2 refines around the `top_k`
/// best viable stage-1 points (or evaluates the explicit refinement grid).
/// Returns [`Error::NoViableConfiguration`] when stage 1 leaves no viable
/// point; the report is written either way.
pub fn run_search(cfg: &PipelineConfig) -> Result<SearchReport> {
    let exp = Experiment::prepare(cfg)?;
    search_experiment(&exp)
}

pub fn search_experiment(exp: &Experiment) -> Result<SearchReport> {
    let cfg = &exp.config;
    let variant = cfg.variant;
    let (base_attribute, base_utility) = exp.measure(&exp.weights, &[])?;
    let base_sanity = sanity_check(&exp.weights, &[], &exp.prompts.sanity, &cfg.veto)?;

    let mut coarse = cfg.grid.points();
    coarse.sort_by(cmp_hyper);
    coarse.dedup_by(|a, b| same_point(a, b));
    let mut evaluations = evaluate_all(exp, &coarse, variant, 1)?;

    let mut survivors: Vec<&Evaluation> = evaluations.iter().filter(|e| e.viable()).collect();
    survivors.sort_by(|a, b| rank_order(cfg.goal, a, b));
    if !survivors.is_empty() {
        let mut refined: Vec<EditHyperparams> = match &cfg.refine {
            Some(r) => HyperGrid {
                rho_attn: r.rho_attn.clone(),
                rho_mlp: r.rho_mlp.clone(),
                alpha: r.alpha.clone(),
            }
            .points(),
            None => survivors
                .iter()
                .take(cfg.top_k)
                .flat_map(|e| refine_around(&e.hyper, &cfg.grid))
                .collect(),
        };
        for h in &refined {
            h.validate()?;
        }
        refined.sort_by(cmp_hyper);
        refined.dedup_by(|a, b| same_point(a, b));
        refined.retain(|h| !coarse.iter().any(|c| same_point(c, h)));
        let stage2 = evaluate_all(exp, &refined, variant, 2)?;
        evaluations.extend(stage2);
    }

    let mut viable: Vec<Evaluation> = evaluations.iter().filter(|e| e.viable()).cloned().collect();
    viable.sort_by(|a, b| rank_order(cfg.goal, a, b));
    let report = SearchReport {
        variant,
        goal: cfg.goal,
        base_attribute,
        base_utility,
        base_sanity,
        viable: viable.len(),
        ranking: viable.into_iter().take(cfg.top_k).collect(),
        evaluations,
    };

    ensure_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("search.json"), &report)?;
    let points: Vec<TradeoffPoint> = report
        .evaluations
        .iter()
        .map(|e| TradeoffPoint {
            method: Method::Edit {
                hyper: e.hyper,
                variant,
            },
            attribute: e.attribute,
            utility: e.utility,
        })
        .collect();
    emit_tradeoff_csv(&points, cfg.out_dir.join("search_points.csv"))?;
    if report.viable == 0 {
        return Err(Error::NoViableConfiguration(report.evaluations.len()));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Budget sweep
// ---------------------------------------------------------------------------

/// Component class whose budget a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepClass {
    Attn,
    Mlp,
}

impl fmt::Display for SweepClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepClass::Attn => "attn",
            SweepClass::Mlp => "mlp",
        })
    }
}

impl FromStr for SweepClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attn" => Ok(SweepClass::Attn),
            "mlp" => Ok(SweepClass::Mlp),
            other => Err(Error::InvalidParameter(format!("unknown sweep class `{other}`"))),
        }
    }
}

/// One sweep point with its plan's sparsity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub point: TradeoffPoint,
    pub nonzero_attn: usize,
    pub nonzero_mlp: usize,
}

/// Varies one class's budget over its grid while the other class is
/// disabled (`rho = inf`); `alpha` comes from the `edit` section.
///
/// Writes `sweep_<class>.csv` and `sweep_<class>.json`.
pub fn run_budget_sweep(cfg: &PipelineConfig, varied: SweepClass) -> Result<Vec<SweepPoint>> {
    let exp = Experiment::prepare(cfg)?;
    sweep_experiment(&exp, varied)
}

pub fn sweep_experiment(exp: &Experiment, varied: SweepClass) -> Result<Vec<SweepPoint>> {
    let cfg = &exp.config;
    let grid = match varied {
        SweepClass::Attn => &cfg.grid.rho_attn,
        SweepClass::Mlp => &cfg.grid.rho_mlp,
    };
    let hypers: Vec<EditHyperparams> = grid
        .iter()
        .map(|rho| match varied {
            SweepClass::Attn => EditHyperparams::new(rho.0, f64::INFINITY, cfg.edit.alpha),
            SweepClass::Mlp => EditHyperparams::new(f64::INFINITY, rho.0, cfg.edit.alpha),
        })
        .collect::<Result<_>>()?;
    let points = hypers
        .par_iter()
        .map(|&h| {
            let (plan, _, point) = exp.edit_point(h, cfg.variant)?;
            Ok(SweepPoint {
                point,
                nonzero_attn: plan.nonzero_count(Block::Attn),
                nonzero_mlp: plan.nonzero_count(Block::Mlp),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    ensure_dir(&cfg.out_dir)?;
    let tradeoff: Vec<TradeoffPoint> = points.iter().map(|p| p.point).collect();
    emit_tradeoff_csv(&tradeoff, cfg.out_dir.join(format!("sweep_{varied}.csv")))?;
    write_json(&cfg.out_dir.join(format!("sweep_{varied}.json")), &points)?;
    Ok(points)
}
