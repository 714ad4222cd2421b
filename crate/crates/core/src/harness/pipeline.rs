// SPDX-License-Identifier: MIT OR Apache-2.0

//! Extraction, editing, steering, the planted-behavior benchmark, reports
//! and oracle verification.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::{Goal, PipelineConfig, PlantConstants};
use super::{emit_tradeoff_csv, ensure_dir, write_json, Experiment, TradeoffPoint};
use crate::editor::{apply_edit_plan, build_edit_plan, write_heatmap_csv, EditHyperparams, EditPlan, Variant};
use crate::error::{Error, Result};
use crate::linalg::{cosine, Matrix, Vector};
use crate::model::{generate_detailed, save_weights, Block, ComponentId, ModelConfig};
use crate::oracles::{
    component_shift_oracle, default_halfwidth, elastic_net_scalar_oracle, grid_step,
    pearson_optimality_oracle_with_rng, verify_semantic_invariance, OracleReport,
};
use crate::steering::{BlockSet, VectorNorm};

// ---------------------------------------------------------------------------
// Extract
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub n_positive: usize,
    pub n_negative: usize,
    pub masked_positions: usize,
    pub norms: Vec<VectorNorm>,
}

/// Writes `vectors.json` (+ `vectors.f32`), `probes.jsonl` and
/// `extract_summary.json`.
pub fn run_extract(cfg: &PipelineConfig) -> Result<ExtractSummary> {
    let exp = Experiment::prepare(cfg)?;
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    exp.vectors.save(dir.join("vectors.json"))?;
    exp.probes.save_jsonl(dir.join("probes.jsonl"))?;
    let summary = ExtractSummary {
        n_positive: exp.probes.positive.len(),
        n_negative: exp.probes.negative.len(),
        masked_positions: exp.trace.masked_count(),
        norms: exp.vectors.norms(),
    };
    write_json(&dir.join("extract_summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Edit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditSummary {
    pub hyper: EditHyperparams,
    pub variant: Variant,
    pub goal: Goal,
    pub nonzero_attn: usize,
    pub nonzero_mlp: usize,
    pub base_attribute: f64,
    pub base_utility: f64,
    pub edited_attribute: f64,
    pub edited_utility: f64,
}

/// Paths and plan produced by [`run_edit`].
#[derive(Debug, Clone, PartialEq)]
pub struct EditArtifacts {
    pub plan: EditPlan,
    pub summary: EditSummary,
    pub weights: PathBuf,
    pub plan_file: PathBuf,
    pub heatmap: PathBuf,
}

/// Writes `edited.s2e`, `plan.json` (+ `plan.f32`), `heatmap.csv` and
/// `edit_summary.json`.
pub fn run_edit(cfg: &PipelineConfig, hyper: EditHyperparams, variant: Variant) -> Result<EditArtifacts> {
    hyper.validate()?;
    let exp = Experiment::prepare(cfg)?;
    let plan = exp.plan(hyper, variant)?;
    let edited = apply_edit_plan(&exp.weights, &plan)?;
    let (base_attribute, base_utility) = exp.measure(&exp.weights, &[])?;
    let (edited_attribute, edited_utility) = exp.measure(&edited, &[])?;

    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let weights = dir.join("edited.s2e");
    let plan_file = dir.join("plan.json");
    let heatmap = dir.join("heatmap.csv");
    save_weights(&edited, &weights)?;
    plan.save(&plan_file)?;
    write_heatmap_csv(&plan, &heatmap)?;
    let summary = EditSummary {
        hyper,
        variant,
        goal: cfg.goal,
        nonzero_attn: plan.nonzero_count(Block::Attn),
        nonzero_mlp: plan.nonzero_count(Block::Mlp),
        base_attribute,
        base_utility,
        edited_attribute,
        edited_utility,
    };
    write_json(&dir.join("edit_summary.json"), &summary)?;
    Ok(EditArtifacts {
        plan,
        summary,
        weights,
        plan_file,
        heatmap,
    })
}

// ---------------------------------------------------------------------------
// Steer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteerGeneration {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteerReport {
    pub gamma: f64,
    pub blocks: String,
    pub goal: Goal,
    pub attribute: f64,
    pub utility: f64,
    /// Steered greedy continuations of the held-out trigger prompts.
    pub generations: Vec<SteerGeneration>,
}

/// Applies activation steering and writes `steer.json`.
pub fn run_steer(cfg: &PipelineConfig, gamma: f64, blocks: BlockSet) -> Result<SteerReport> {
    let mut cfg = cfg.clone();
    cfg.steer.blocks = blocks;
    let exp = Experiment::prepare(&cfg)?;
    let hook = exp.steering_hook(gamma)?;
    let (attribute, utility) = exp.measure(&exp.weights, &[&hook])?;
    let generations = exp
        .prompts
        .trigger_eval
        .iter()
        .map(|p| {
            let g = generate_detailed(&exp.weights, p, cfg.bench.response_len, &[&hook])?;
            Ok(SteerGeneration {
                prompt: p.clone(),
                response: g.new_tokens().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = SteerReport {
        gamma,
        blocks: match blocks {
            BlockSet::Attn => "attn",
            BlockSet::Mlp => "mlp",
            BlockSet::Both => "both",
        }
        .to_string(),
        goal: cfg.goal,
        attribute,
        utility,
        generations,
    };
    ensure_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("steer.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

/// Construction constants recorded at the top of the benchmark report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchHeader {
    pub seed: u64,
    pub model: ModelConfig,
    pub planted: String,
    pub trigger_token: u32,
    pub plant: PlantConstants,
    pub n_trigger_prompts: usize,
    pub n_neutral_prompts: usize,
    pub prompt_len: usize,
    pub response_len: usize,
    pub suppression: EditHyperparams,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub header: BenchHeader,
    /// Cosine between the planted layer's attention steering vector and the
    /// behavior direction.
    pub steering_cosine: f64,
    /// Importance score of the planted head.
    pub planted_g: f64,
    /// 1-based rank of the planted head by `|g|` among attention heads.
    pub planted_g_rank: usize,
    /// 1-based rank of the planted head by `|lambda|` among all components.
    pub planted_lambda_rank: usize,
    pub base_attribute: f64,
    pub base_utility: f64,
    pub suppressed_attribute: f64,
    pub suppressed_utility: f64,
    pub nonzero_attn: usize,
    pub nonzero_mlp: usize,
    pub tradeoff: Vec<TradeoffPoint>,
}

fn rank_by<F: Fn(&crate::editor::ComponentScore) -> f64>(
    plan: &EditPlan,
    id: ComponentId,
    filter: impl Fn(&ComponentId) -> bool,
    key: F,
) -> usize {
    let target = plan.score(id).map_or(0.0, &key);
    let better = plan
        .scores
        .iter()
        .filter(|s| filter(&s.id))
        .filter(|s| key(s) > target || (key(s) == target && s.id < id))
        .count();
    better + 1
}

/// Runs the planted-behavior benchmark and writes `bench.json`,
/// `tradeoff.csv`, `heatmap.csv`, `model.s2e`, `probes.jsonl`,
/// `vectors.json` and `plan.json` (with their `.f32` payloads).
///
/// The benchmark always suppresses the planted behavior: steering uses
/// `-gamma v` and every edit plan is negated.
pub fn run_synthetic_bench(cfg: &PipelineConfig) -> Result<BenchReport> {
    let mut cfg = cfg.clone();
    cfg.goal = Goal::Decrease;
    let exp = Experiment::prepare(&cfg)?;
    let spec = &cfg.bench;
    let planted = spec.planted;

    let steering_cosine = cosine(exp.vectors.get(planted.layer, Block::Attn), &exp.planted.behavior)?;
    let promote = build_edit_plan(&exp.weights, &exp.vectors, &exp.trace, cfg.edit, cfg.variant)?;
    let planted_g = promote.score(planted).map_or(0.0, |s| s.g);
    let planted_g_rank = rank_by(&promote, planted, |id| id.block == Block::Attn, |s| s.g.abs());
    let planted_lambda_rank = rank_by(&promote, planted, |_| true, |s| s.lambda.abs());

    let suppress = promote.negated();
    let suppressed = apply_edit_plan(&exp.weights, &suppress)?;
    let (base_attribute, base_utility) = exp.measure(&exp.weights, &[])?;
    let (suppressed_attribute, suppressed_utility) = exp.measure(&suppressed, &[])?;

    let mut tradeoff = cfg
        .gamma_grid
        .iter()
        .map(|&g| exp.steering_point(g))
        .collect::<Result<Vec<_>>>()?;
    let mut hypers = cfg.grid.points();
    hypers.push(cfg.edit);
    for h in hypers {
        let (_, _, point) = exp.edit_point(h, cfg.variant)?;
        if !tradeoff.iter().any(|p| p.method == point.method) {
            tradeoff.push(point);
        }
    }
    super::sort_points(&mut tradeoff);

    let report = BenchReport {
        header: BenchHeader {
            seed: cfg.seed,
            model: spec.model.clone(),
            planted: planted.to_string(),
            trigger_token: spec.trigger_token,
            plant: spec.plant,
            n_trigger_prompts: spec.n_trigger_prompts,
            n_neutral_prompts: spec.n_neutral_prompts,
            prompt_len: spec.prompt_len,
            response_len: spec.response_len,
            suppression: cfg.edit,
            variant: cfg.variant,
        },
        steering_cosine,
        planted_g,
        planted_g_rank,
        planted_lambda_rank,
        base_attribute,
        base_utility,
        suppressed_attribute,
        suppressed_utility,
        nonzero_attn: suppress.nonzero_count(Block::Attn),
        nonzero_mlp: suppress.nonzero_count(Block::Mlp),
        tradeoff,
    };

    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    save_weights(&exp.weights, dir.join("model.s2e"))?;
    exp.probes.save_jsonl(dir.join("probes.jsonl"))?;
    exp.vectors.save(dir.join("vectors.json"))?;
    suppress.save(dir.join("plan.json"))?;
    write_heatmap_csv(&suppress, dir.join("heatmap.csv"))?;
    emit_tradeoff_csv(&report.tradeoff, dir.join("tradeoff.csv"))?;
    write_json(&dir.join("bench.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

fn read_json(path: &Path) -> Result<Option<serde_json::Value>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Some(serde_json::from_slice(&bytes)?))
}

fn num(v: &serde_json::Value, key: &str) -> String {
    match &v[key] {
        serde_json::Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

/// Summarizes the artifacts found in the output directory into
/// `report.md` and returns its text.
pub fn report(cfg: &PipelineConfig) -> Result<String> {
    let dir = &cfg.out_dir;
    let mut out = String::from("# Run report\n");
    if let Some(b) = read_json(&dir.join("bench.json"))? {
        out.push_str("\n## Planted-behavior benchmark\n\n");
        for key in [
            "steering_cosine",
            "planted_g",
            "planted_g_rank",
            "planted_lambda_rank",
            "base_attribute",
            "suppressed_attribute",
            "base_utility",
            "suppressed_utility",
            "nonzero_attn",
            "nonzero_mlp",
        ] {
            out.push_str(&format!("- {key}: {}\n", num(&b, key)));
        }
    }
    if let Some(e) = read_json(&dir.join("edit_summary.json"))? {
        out.push_str("\n## Edit\n\n");
        for key in [
            "variant",
            "nonzero_attn",
            "nonzero_mlp",
            "base_attribute",
            "edited_attribute",
            "base_utility",
            "edited_utility",
        ] {
            out.push_str(&format!("- {key}: {}\n", num(&e, key)));
        }
    }
    if let Some(s) = read_json(&dir.join("search.json"))? {
        out.push_str("\n## Search\n\n");
        let evaluated = s["evaluations"].as_array().map_or(0, Vec::len);
        out.push_str(&format!("- evaluated: {evaluated}\n- viable: {}\n", num(&s, "viable")));
        out.push_str("\n| rank | rho_attn | rho_mlp | alpha | attribute | utility |\n|---|---|---|---|---|---|\n");
        for (i, r) in s["ranking"].as_array().into_iter().flatten().enumerate() {
            let h = &r["hyper"];
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                i + 1,
                num(h, "rho_attn"),
                num(h, "rho_mlp"),
                num(h, "alpha"),
                num(r, "attribute"),
                num(r, "utility")
            ));
        }
    }
    for class in ["attn", "mlp"] {
        if let Some(points) = read_json(&dir.join(format!("sweep_{class}.json")))? {
            out.push_str(&format!(
                "\n## Budget sweep ({class})\n\n| rho | nonzero | attribute | utility |\n|---|---|---|---|\n"
            ));
            for p in points.as_array().into_iter().flatten() {
                let h = &p["point"]["method"]["hyper"];
                let rho = num(h, if class == "attn" { "rho_attn" } else { "rho_mlp" });
                let nz = num(p, if class == "attn" { "nonzero_attn" } else { "nonzero_mlp" });
                out.push_str(&format!(
                    "| {rho} | {nz} | {} | {} |\n",
                    num(&p["point"], "attribute"),
                    num(&p["point"], "utility")
                ));
            }
        }
    }
    if out == "# Run report\n" {
        return Err(Error::InvalidConfig(format!("no artifacts found in {}", dir.display())));
    }
    ensure_dir(dir)?;
    crate::binio::write_bytes(&dir.join("report.md"), out.as_bytes())?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Verify
// ---------------------------------------------------------------------------

/// Trial counts of [`verify`].
pub const VERIFY_SCALAR_TRIPLES: usize = 1_000;
pub const VERIFY_GRID_POINTS: usize = 100_001;
pub const VERIFY_PEARSON_INSTANCES: usize = 100;
pub const VERIFY_PEARSON_PROBES: usize = 1_000;

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_vector(rng: &mut impl Rng, n: usize) -> Vector {
    Vector::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("finite")
}

/// Soft-threshold magnitude versus the dense grid argmax on random triples;
/// violation is measured in grid steps.
pub fn scalar_oracle_report(triples: usize, grid_points: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..triples {
        let g = rng.gen_range(-1.0..=1.0);
        let rho = 2.0 - rng.gen_range(0.0..2.0);
        let alpha = rng.gen_range(0.0..=0.99);
        let half = default_halfwidth(g, rho, alpha);
        let grid = elastic_net_scalar_oracle(g, rho, alpha, half, grid_points)?;
        let closed = crate::editor::edit_magnitude(g, rho, alpha)?;
        worst = worst.max((grid - closed).abs() / grid_step(half, grid_points));
    }
    Ok(OracleReport::new("soft_threshold_vs_grid_steps", triples, worst, 2.0))
}

/// Pearson optimality over random small components, aggregated.
pub fn pearson_oracle_report(instances: usize, probes: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut trials = 0;
    for _ in 0..instances {
        let d_out = rng.gen_range(2..=8);
        let d_in = rng.gen_range(1..=8);
        let n = rng.gen_range(16..=32);
        let w = random_matrix(&mut rng, d_out, d_in);
        let v = random_vector(&mut rng, d_out);
        let h: Vec<Vector> = (0..n).map(|_| random_vector(&mut rng, d_in)).collect();
        let r = pearson_optimality_oracle_with_rng(&w, &v, &h, probes, &mut rng)?;
        worst = worst.max(r.max_violation);
        trials += r.trials;
    }
    Ok(OracleReport::new("pearson_optimality", trials, worst, 1e-9))
}

const SHIFT_PLAN_HYPER: EditHyperparams = EditHyperparams {
    rho_attn: 1.0,
    rho_mlp: 1.0,
    alpha: 0.0,
};

/// Runs every oracle against the configured experiment and writes
/// `verify.jsonl`, one report per line.
pub fn verify(cfg: &PipelineConfig) -> Result<Vec<OracleReport>> {
    let exp = Experiment::prepare(cfg)?;
    let mut reports = vec![
        scalar_oracle_report(VERIFY_SCALAR_TRIPLES, VERIFY_GRID_POINTS, cfg.seed)?,
        pearson_oracle_report(VERIFY_PEARSON_INSTANCES, VERIFY_PEARSON_PROBES, cfg.seed)?,
    ];

    let variants = [
        Variant::Steer2Edit,
        Variant::KMean,
        Variant::KSvd,
        Variant::GDot,
        Variant::L0TopK(4),
        Variant::L2Dense,
    ];
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for variant in variants {
        let plan = build_edit_plan(&exp.weights, &exp.vectors, &exp.trace, cfg.edit, variant)?;
        for (id, e) in &plan.entries {
            let v = exp.vectors.get(id.layer, id.block);
            let r = verify_semantic_invariance(&e.delta(), v, 100, 1e-10);
            worst = worst.max(r.max_violation);
            entries += 1;
        }
    }
    reports.push(OracleReport::new(
        "semantic_invariance_all_plans",
        entries,
        worst,
        1e-10,
    ));

    // a dense plan guarantees an entry in both classes
    let plan = build_edit_plan(
        &exp.weights,
        &exp.vectors,
        &exp.trace,
        SHIFT_PLAN_HYPER,
        Variant::L2Dense,
    )?;
    let probes: Vec<Vec<u32>> = exp.prompts.trigger_eval.iter().take(4).cloned().collect();
    for block in Block::ALL {
        let best = plan
            .entries
            .iter()
            .filter(|(id, _)| id.block == block)
            .max_by(|a, b| a.1.lambda.abs().total_cmp(&b.1.lambda.abs()).then(b.0.cmp(a.0)));
        if let Some((&id, _)) = best {
            let single = plan.restricted_to(id).expect("entry exists");
            reports.push(component_shift_oracle(&exp.weights, &single, &probes)?);
        }
    }

    ensure_dir(&cfg.out_dir)?;
    let mut lines = Vec::new();
    for r in &reports {
        lines.extend(serde_json::to_vec(r)?);
        lines.push(b'\n');
    }
    crate::binio::write_bytes(&cfg.out_dir.join("verify.jsonl"), &lines)?;
    Ok(reports)
}
