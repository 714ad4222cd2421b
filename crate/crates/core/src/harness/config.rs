// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON pipeline configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::editor::{parse_budget, EditHyperparams, Variant};
use crate::error::{Error, Result};
use crate::model::{ComponentId, ModelConfig, PositionMask};
use crate::steering::BlockSet;

// ---------------------------------------------------------------------------
// Budgets in lists
// ---------------------------------------------------------------------------

/// A budget value that round-trips `inf` through JSON.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Budget(pub f64);

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(Budget(x)),
            Repr::Str(s) => parse_budget(&s).map(Budget).map_err(serde::de::Error::custom),
        }
    }
}

fn budgets(values: &[f64]) -> Vec<Budget> {
    values.iter().copied().map(Budget).collect()
}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

/// Candidate values for each edit hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub rho_attn: Vec<Budget>,
    pub rho_mlp: Vec<Budget>,
    pub alpha: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let coarse = [0.1, 0.3, 0.5, 0.7, 0.9];
        Self {
            rho_attn: budgets(&coarse),
            rho_mlp: budgets(&coarse),
            alpha: coarse.to_vec(),
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.rho_attn.is_empty() || self.rho_mlp.is_empty() || self.alpha.is_empty() {
            return Err(Error::InvalidConfig("hyperparameter grids must be nonempty".into()));
        }
        for h in self.points() {
            h.validate()?;
        }
        Ok(())
    }

    /// Cartesian product in `(rho_attn, rho_mlp, alpha)` order.
    pub fn points(&self) -> Vec<EditHyperparams> {
        let mut out = Vec::new();
        for ra in &self.rho_attn {
            for rm in &self.rho_mlp {
                for &alpha in &self.alpha {
                    out.push(EditHyperparams {
                        rho_attn: ra.0,
                        rho_mlp: rm.0,
                        alpha,
                    });
                }
            }
        }
        out
    }
}

/// Whether the controlled attribute should go up or down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Increase,
    #[default]
    Decrease,
}

impl Goal {
    /// `+1` to promote the probed behavior, `-1` to suppress it.
    pub fn sign(self) -> f64 {
        match self {
            Goal::Increase => 1.0,
            Goal::Decrease => -1.0,
        }
    }
}

/// Attribute metric ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeMetric {
    /// Mean projection of the final residual onto the behavior direction at
    /// the last position of trigger prompts.
    #[default]
    BehaviorProjection,
}

/// Utility metric ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMetric {
    /// Fraction of neutral-prompt positions whose greedy next token matches
    /// the unedited model.
    #[default]
    NeutralAgreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricSpec {
    #[serde(default)]
    pub attribute: AttributeMetric,
    #[serde(default)]
    pub utility: UtilityMetric,
}

/// Degenerate-output detector applied to every search candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VetoConfig {
    pub prompts: usize,
    pub prompt_len: usize,
    pub max_new_tokens: usize,
    /// Length of the repeated n-gram.
    pub ngram: usize,
    /// Consecutive repeats of one n-gram that trigger the veto.
    pub max_repeats: usize,
    /// Mean per-token entropy (nats) below which outputs count as collapsed.
    pub min_entropy: f64,
    /// Veto when any sanity prompt yields no new tokens.
    pub veto_empty: bool,
}

impl Default for VetoConfig {
    fn default() -> Self {
        Self {
            prompts: 20,
            prompt_len: 4,
            max_new_tokens: 24,
            ngram: 4,
            max_repeats: 5,
            min_entropy: 0.05,
            veto_empty: true,
        }
    }
}

/// Explicit stage-2 grids replacing the automatic refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineGrid {
    pub rho_attn: Vec<Budget>,
    pub rho_mlp: Vec<Budget>,
    pub alpha: Vec<f64>,
}

/// Steering baseline settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteerConfig {
    pub gamma: f64,
    #[serde(with = "block_set_serde")]
    pub blocks: BlockSet,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            blocks: BlockSet::Both,
        }
    }
}

mod block_set_serde {
    use super::*;

    pub fn serialize<S: Serializer>(b: &BlockSet, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match b {
            BlockSet::Attn => "attn",
            BlockSet::Mlp => "mlp",
            BlockSet::Both => "both",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BlockSet, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Constants of the planted-behavior construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConstants {
    /// Standard deviation of every random weight.
    pub weight_scale: f64,
    /// Norm of the trigger token's embedding.
    pub trigger_gain: f64,
    /// Weight of the trigger direction in the planted head's value row.
    pub value_gain: f64,
    /// Norm of the planted head's write along the behavior direction.
    pub write_gain: f64,
}

impl Default for PlantConstants {
    fn default() -> Self {
        Self {
            weight_scale: 0.02,
            trigger_gain: 1.0,
            value_gain: 1.0,
            write_gain: 1.0,
        }
    }
}

/// Synthetic planted-behavior benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBenchSpec {
    pub model: ModelConfig,
    #[serde(with = "component_serde")]
    pub planted: ComponentId,
    /// Behavior direction; drawn from the seed when absent.
    pub behavior_direction: Option<Vec<f64>>,
    pub trigger_token: u32,
    pub n_trigger_prompts: usize,
    pub n_neutral_prompts: usize,
    pub prompt_len: usize,
    /// Greedy response length used to build the probe dataset.
    pub response_len: usize,
    pub plant: PlantConstants,
}

impl Default for SyntheticBenchSpec {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(),
            planted: ComponentId::attn(0, 2),
            behavior_direction: None,
            trigger_token: 7,
            n_trigger_prompts: 16,
            n_neutral_prompts: 16,
            prompt_len: 8,
            response_len: 8,
            plant: PlantConstants::default(),
        }
    }
}

impl SyntheticBenchSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.check_component(self.planted)?;
        if self.planted.block != crate::model::Block::Attn {
            return Err(Error::InvalidConfig(
                "the planted component must be an attention head".into(),
            ));
        }
        if self.trigger_token < 2 || self.trigger_token as usize >= self.model.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "trigger token {} must be a non-reserved id below {}",
                self.trigger_token, self.model.vocab_size
            )));
        }
        if self.n_trigger_prompts == 0 || self.n_neutral_prompts == 0 || self.prompt_len == 0 || self.response_len == 0
        {
            return Err(Error::InvalidConfig(
                "bench prompt counts and lengths must be positive".into(),
            ));
        }
        if self.prompt_len + self.response_len > self.model.max_seq_len {
            return Err(Error::InvalidConfig(
                "prompt plus response exceeds the context length".into(),
            ));
        }
        if let Some(d) = &self.behavior_direction {
            if d.len() != self.model.d_model {
                return Err(Error::InvalidConfig(format!(
                    "behavior direction has length {}, model width is {}",
                    d.len(),
                    self.model.d_model
                )));
            }
        }
        Ok(())
    }
}

mod component_serde {
    use super::*;

    pub fn serialize<S: Serializer>(id: &ComponentId, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(id)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ComponentId, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

/// Everything a pipeline run needs. Every field has a default, so `{}` is a
/// valid configuration that runs on the synthetic benchmark model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Weight file; the planted benchmark model is built when absent.
    pub model: Option<PathBuf>,
    /// Probe dataset (JSONL); generated from the benchmark when absent.
    pub probes: Option<PathBuf>,
    /// Precomputed steering vectors; extracted when absent.
    pub vectors: Option<PathBuf>,
    pub variant: Variant,
    /// Hyperparameters of a single `edit` run and of the benchmark's
    /// suppression edit.
    pub edit: EditHyperparams,
    pub grid: HyperGrid,
    pub refine: Option<RefineGrid>,
    pub gamma_grid: Vec<f64>,
    pub steer: SteerConfig,
    pub metrics: MetricSpec,
    pub goal: Goal,
    pub mask: PositionMask,
    pub veto: VetoConfig,
    /// Number of best stage-1 survivors refined in stage 2 and reported.
    pub top_k: usize,
    /// Search configurations with lower utility are not viable.
    pub min_utility: Option<f64>,
    pub bench: SyntheticBenchSpec,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: None,
            probes: None,
            vectors: None,
            variant: Variant::Steer2Edit,
            edit: EditHyperparams {
                rho_attn: 0.9,
                rho_mlp: f64::INFINITY,
                alpha: 0.7,
            },
            grid: HyperGrid::default(),
            refine: None,
            gamma_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            steer: SteerConfig::default(),
            metrics: MetricSpec::default(),
            goal: Goal::Decrease,
            mask: PositionMask::Response,
            veto: VetoConfig::default(),
            top_k: 3,
            min_utility: None,
            bench: SyntheticBenchSpec::default(),
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        // relative paths resolve against the config file's directory
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for p in [&mut cfg.model, &mut cfg.probes, &mut cfg.vectors]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.edit.validate()?;
        self.grid.validate()?;
        if let Some(r) = &self.refine {
            if r.rho_attn.is_empty() || r.rho_mlp.is_empty() || r.alpha.is_empty() {
                return Err(Error::InvalidConfig("refinement grids must be nonempty".into()));
            }
        }
        if self.gamma_grid.is_empty() {
            return Err(Error::InvalidConfig("gamma grid must be nonempty".into()));
        }
        if self.gamma_grid.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidConfig("gamma values must be finite and >= 0".into()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if let Some(floor) = self.min_utility {
            if !(0.0..=1.0).contains(&floor) {
                return Err(Error::InvalidConfig(format!("min_utility {floor} outside [0, 1]")));
            }
        }
        if self.veto.ngram == 0 || self.veto.max_repeats == 0 || self.veto.prompts == 0 || self.veto.prompt_len == 0 {
            return Err(Error::InvalidConfig("veto lengths and counts must be positive".into()));
        }
        self.bench.validate()
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Goal::Increase => "increase",
            Goal::Decrease => "decrease",
        })
    }
}

impl FromStr for Goal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "increase" => Ok(Goal::Increase),
            "decrease" => Ok(Goal::Decrease),
            other => Err(Error::InvalidParameter(format!("unknown goal `{other}`"))),
        }
    }
}
