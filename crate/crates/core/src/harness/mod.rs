// SPDX-License-Identifier: MIT OR Apache-2.0

//! Config-driven pipeline: extraction, editing, steering, grid search,
//! budget sweeps and the synthetic planted-behavior benchmark.
//!
//! Every entry point takes a [`PipelineConfig`] and writes its artifacts to
//! `out_dir`. Outputs contain no timestamps or host details, so identical
//! configurations produce byte-identical directories regardless of the
//! thread count.

pub mod bench;
pub mod config;
pub mod pipeline;
pub mod search;

use std::cmp::Ordering;
use std::path::Path;

use serde::Serialize;

pub use bench::{BenchPrompts, MetricContext, PlantedModel, SanityOutcome};
pub use config::{
    AttributeMetric, Budget, Goal, HyperGrid, MetricSpec, PipelineConfig, PlantConstants, RefineGrid, SteerConfig,
    SyntheticBenchSpec, UtilityMetric, VetoConfig,
};
pub use pipeline::{report, run_edit, run_extract, run_steer, run_synthetic_bench, verify, BenchReport, EditArtifacts};
pub use search::{run_budget_sweep, run_search, SearchReport, SweepClass};

use crate::binio::write_bytes;
use crate::editor::{apply_edit_plan, build_edit_plan, format_f64, EditHyperparams, EditPlan, Variant};
use crate::error::{Error, Result};
use crate::model::{load_weights, ActivationTrace, BlockHook, ModelWeights};
use crate::steering::{steering_from_trace, ProbeDataset, ProbeTrace, SteeringHook, SteeringVectorSet};

// ---------------------------------------------------------------------------
// Trade-off points
// ---------------------------------------------------------------------------

/// Which intervention produced a trade-off point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Steering { gamma: f64 },
    Edit { hyper: EditHyperparams, variant: Variant },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Steering { .. } => "steering",
            Method::Edit { .. } => "edit",
        }
    }

    /// `key=value` pairs joined by `;`.
    pub fn params(&self) -> String {
        match self {
            Method::Steering { gamma } => format!("gamma={gamma}"),
            Method::Edit { hyper, variant } => format!(
                "rho_attn={};rho_mlp={};alpha={};variant={variant}",
                hyper.rho_attn, hyper.rho_mlp, hyper.alpha
            ),
        }
    }

    fn sort_key(&self) -> (&'static str, [f64; 3], String) {
        match self {
            Method::Steering { gamma } => ("steering", [*gamma, 0.0, 0.0], String::new()),
            Method::Edit { hyper, variant } => (
                "edit",
                [hyper.rho_attn, hyper.rho_mlp, hyper.alpha],
                variant.to_string(),
            ),
        }
    }

    fn cmp(&self, other: &Method) -> Ordering {
        let (a, b) = (self.sort_key(), other.sort_key());
        a.0.cmp(b.0)
            .then_with(|| {
                a.1.iter()
                    .zip(&b.1)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| a.2.cmp(&b.2))
    }
}

/// Attribute and utility of one intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub method: Method,
    pub attribute: f64,
    pub utility: f64,
}

/// Sorts points by `(method, params)` with parameters compared numerically.
pub fn sort_points(points: &mut [TradeoffPoint]) {
    points.sort_by(|a, b| a.method.cmp(&b.method));
}

/// Writes `method,params,attribute,utility` rows sorted by method and
/// parameters; floats carry 17 significant digits.
pub fn emit_tradeoff_csv(points: &[TradeoffPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if points.is_empty() {
        return Err(Error::InvalidParameter("no trade-off points to write".into()));
    }
    if points
        .iter()
        .any(|p| !p.attribute.is_finite() || !p.utility.is_finite())
    {
        return Err(Error::NonFinite("trade-off point"));
    }
    let mut sorted = points.to_vec();
    sort_points(&mut sorted);
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["method", "params", "attribute", "utility"])?;
    for p in &sorted {
        out.write_record([
            p.method.name().to_string(),
            p.method.params(),
            format_f64(p.attribute),
            format_f64(p.utility),
        ])?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// One parsed row of a trade-off CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub method: String,
    pub params: String,
    pub attribute: f64,
    pub utility: f64,
}

pub fn read_tradeoff_csv(path: impl AsRef<Path>) -> Result<Vec<TradeoffRow>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        let num = |i: usize| -> Result<f64> {
            r.get(i).unwrap_or_default().parse().map_err(|e| Error::InvalidFile {
                path: path.as_ref().to_path_buf(),
                reason: format!("column {i}: {e}"),
            })
        };
        rows.push(TradeoffRow {
            method: r.get(0).unwrap_or_default().to_string(),
            params: r.get(1).unwrap_or_default().to_string(),
            attribute: num(2)?,
            utility: num(3)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Experiment context
// ---------------------------------------------------------------------------

/// Model, probes, steering vectors, probe activations and metric inputs
/// shared by every pipeline stage.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: PipelineConfig,
    pub planted: PlantedModel,
    pub weights: ModelWeights,
    pub prompts: BenchPrompts,
    pub probes: ProbeDataset,
    pub vectors: SteeringVectorSet,
    pub trace: ActivationTrace,
    pub metrics: MetricContext,
}

impl Experiment {
    /// Loads or builds every input named by `config`.
    pub fn prepare(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let planted = bench::build_planted_model(&config.bench, config.seed)?;
        let weights = match &config.model {
            Some(path) => load_weights(path)?,
            None => planted.weights.clone(),
        };
        let prompts = bench::make_prompts(&config.bench, &config.veto, config.seed);
        let probes = match &config.probes {
            Some(path) => ProbeDataset::load_jsonl(path)?,
            None => bench::build_probe_dataset(&weights, &prompts, config.bench.response_len)?,
        };
        let probe_trace = ProbeTrace::collect(&weights, &probes, config.mask)?;
        let vectors = match &config.vectors {
            Some(path) => SteeringVectorSet::load(path)?,
            None => steering_from_trace(&probe_trace)?,
        };
        let metrics = MetricContext::new(&weights, planted.behavior.clone(), &prompts)?;
        Ok(Self {
            config: config.clone(),
            planted,
            weights,
            prompts,
            probes,
            vectors,
            trace: probe_trace.trace,
            metrics,
        })
    }

    /// Plan oriented by the configured goal: promoting for `increase`,
    /// negated for `decrease`.
    pub fn plan(&self, hyper: EditHyperparams, variant: Variant) -> Result<EditPlan> {
        let plan = build_edit_plan(&self.weights, &self.vectors, &self.trace, hyper, variant)?;
        Ok(plan.scaled(self.config.goal.sign()))
    }

    /// Steering hook oriented by the configured goal.
    pub fn steering_hook(&self, gamma: f64) -> Result<SteeringHook> {
        SteeringHook::new(
            gamma,
            self.vectors.scaled(self.config.goal.sign()),
            self.config.steer.blocks,
        )
    }

    /// Attribute and utility of `w` run with `hooks`.
    pub fn measure(&self, w: &ModelWeights, hooks: &[&dyn BlockHook]) -> Result<(f64, f64)> {
        let attribute = match self.config.metrics.attribute {
            AttributeMetric::BehaviorProjection => self.metrics.attribute(w, hooks)?,
        };
        let utility = match self.config.metrics.utility {
            UtilityMetric::NeutralAgreement => self.metrics.utility(w, hooks)?,
        };
        Ok((attribute, utility))
    }

    /// Builds, applies and measures one edit.
    pub fn edit_point(
        &self,
        hyper: EditHyperparams,
        variant: Variant,
    ) -> Result<(EditPlan, ModelWeights, TradeoffPoint)> {
        let plan = self.plan(hyper, variant)?;
        let edited = apply_edit_plan(&self.weights, &plan)?;
        let (attribute, utility) = self.measure(&edited, &[])?;
        let point = TradeoffPoint {
            method: Method::Edit { hyper, variant },
            attribute,
            utility,
        };
        Ok((plan, edited, point))
    }

    /// Measures activation steering at strength `gamma`.
    pub fn steering_point(&self, gamma: f64) -> Result<TradeoffPoint> {
        let hook = self.steering_hook(gamma)?;
        let (attribute, utility) = self.measure(&self.weights, &[&hook])?;
        Ok(TradeoffPoint {
            method: Method::Steering { gamma },
            attribute,
            utility,
        })
    }
}

/// Writes `value` as pretty JSON followed by a newline.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
