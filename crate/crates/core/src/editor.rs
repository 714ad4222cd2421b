// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form rank-1 component edits.
//!
//! Every editable component `W_i` (a head's `Wo` slab or a `W_down` column)
//! receives
//!
//! ```text
//! dW_i = lambda_i * v_hat k_hat^T
//! v_hat    = v / |v|                      (output direction)
//! k_hat    = W_i^T v / |W_i^T v|          (input direction)
//! g_i      = cos(v, W_i mu_i)             (importance, mu_i = E[h_i])
//! lambda_i = sign(g_i) max(|g_i| - rho alpha, 0) / (rho (1 - alpha))
//! ```
//!
//! where `v` is the steering vector of the component's block and `rho` is
//! the budget of its class (attention or MLP). An infinite budget disables
//! the class. The ablation variants swap one ingredient: `k_mean` and
//! `k_svd` change `k_hat`, `g_dot` changes `g`, `l0:K` and `l2` change how
//! `lambda` is allocated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::binio::{read_f32_file, resolve_sidecar, sidecar_name, sidecar_path, write_bytes, write_f32_file};
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, cosine, matvec, outer, Matrix, Vector};
use crate::model::{ActivationTrace, Block, ComponentId, ModelWeights};
use crate::steering::SteeringVectorSet;

// ---------------------------------------------------------------------------
// Hyperparameters and variants
// ---------------------------------------------------------------------------

/// Serializes a budget as a JSON number, or the string `"inf"`.
mod budget_serde {
    use super::*;

    pub fn serialize<S: Serializer>(rho: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if rho.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*rho)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => parse_budget(&s).map_err(serde::de::Error::custom),
        }
    }
}

/// Parses a budget, accepting `inf`/`infinity` for a disabled class.
pub fn parse_budget(s: &str) -> Result<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|e| Error::InvalidParameter(format!("budget `{s}`: {e}"))),
    }
}

/// Elastic-net budgets and sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditHyperparams {
    #[serde(with = "budget_serde")]
    pub rho_attn: f64,
    #[serde(with = "budget_serde")]
    pub rho_mlp: f64,
    pub alpha: f64,
}

impl EditHyperparams {
    pub fn new(rho_attn: f64, rho_mlp: f64, alpha: f64) -> Result<Self> {
        let h = Self {
            rho_attn,
            rho_mlp,
            alpha,
        };
        h.validate()?;
        Ok(h)
    }

    /// Both classes disabled.
    pub fn disabled() -> Self {
        Self {
            rho_attn: f64::INFINITY,
            rho_mlp: f64::INFINITY,
            alpha: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_budget(self.rho_attn)?;
        check_budget(self.rho_mlp)?;
        check_alpha(self.alpha)
    }

    pub fn rho(&self, block: Block) -> f64 {
        match block {
            Block::Attn => self.rho_attn,
            Block::Mlp => self.rho_mlp,
        }
    }
}

fn check_budget(rho: f64) -> Result<()> {
    if rho > 0.0 && !rho.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "budget rho = {rho} must be > 0 or inf"
        )))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in [0, 1)")))
    }
}

/// Which edit rule builds the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// Full rule: `k_hat ~ W^T v`, `g = cos(v, W mu)`, soft threshold.
    Steer2Edit,
    /// `k_hat ~ mu`.
    KMean,
    /// `k_hat` = top right singular vector of `W`.
    KSvd,
    /// `g = v_hat^T (W mu)`, not normalized by `|W mu|`.
    GDot,
    /// Keep the `K` largest `|g|` per class, no shrinkage threshold.
    L0TopK(usize),
    /// Soft threshold with `alpha = 0`.
    L2Dense,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Steer2Edit => f.write_str("steer2edit"),
            Variant::KMean => f.write_str("k_mean"),
            Variant::KSvd => f.write_str("k_svd"),
            Variant::GDot => f.write_str("g_dot"),
            Variant::L0TopK(k) => write!(f, "l0:{k}"),
            Variant::L2Dense => f.write_str("l2"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steer2edit" => Ok(Variant::Steer2Edit),
            "k_mean" => Ok(Variant::KMean),
            "k_svd" => Ok(Variant::KSvd),
            "g_dot" => Ok(Variant::GDot),
            "l2" => Ok(Variant::L2Dense),
            other => match other.strip_prefix("l0:") {
                Some(k) => k
                    .parse()
                    .map(Variant::L0TopK)
                    .map_err(|e| Error::InvalidParameter(format!("variant `{other}`: {e}"))),
                None => Err(Error::InvalidParameter(format!("unknown variant `{other}`"))),
            },
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Per-component quantities
// ---------------------------------------------------------------------------

/// Mean input of a component over every masked position of the trace.
pub fn component_mean_input(trace: &ActivationTrace, id: ComponentId) -> Result<Vector> {
    trace.config.check_component(id)?;
    let d_head = trace.config.d_head;
    let d_in = trace.config.component_in_dim(id.block);
    let mut inputs = Vec::with_capacity(trace.masked_count());
    for (seq, t) in trace.masked() {
        let cap = &seq.positions[t][id.layer];
        let available = match id.block {
            Block::Attn => cap.head_inputs.len(),
            Block::Mlp => cap.neuron_acts.len(),
        };
        if available == 0 {
            return Err(Error::MissingTraceCoverage(format!("{id} inputs were not captured")));
        }
        inputs.push(seq.component_input(t, id, d_head));
    }
    if inputs.is_empty() {
        return Err(Error::NoMaskedPositions(id.to_string()));
    }
    let n = inputs.len() as f64;
    Vector::new(
        (0..d_in)
            .map(|i| compensated_sum(inputs.iter().map(|h| h[i])) / n)
            .collect(),
    )
}

/// Unit output direction `v / |v|`.
pub fn output_direction(v: &Vector) -> Result<Vector> {
    v.normalized()
        .ok_or_else(|| Error::DegenerateSteeringVector("zero steering vector".into()))
}

/// Unit input direction along `W^T v`.
pub fn input_direction(w: &Matrix, v: &Vector) -> Result<Vector> {
    w.transpose_matvec(v)?.normalized().ok_or(Error::InsensitiveComponent)
}

/// `cos(v, W mu)`, zero when `W mu = 0` or `v = 0`.
pub fn importance_score(w: &Matrix, mu: &Vector, v: &Vector) -> Result<f64> {
    cosine(v, &matvec(w, mu)?)
}

/// Soft-threshold edit magnitude. An infinite budget yields 0.
pub fn edit_magnitude(g: f64, rho: f64, alpha: f64) -> Result<f64> {
    check_budget(rho)?;
    check_alpha(alpha)?;
    if rho.is_infinite() {
        return Ok(0.0);
    }
    let shrunk = (g.abs() - rho * alpha).max(0.0);
    Ok(signum0(g) * shrunk / (rho * (1.0 - alpha)))
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Dominant right singular vector of `W` by power iteration on `W^T W`.
///
/// The start vector is the column of `W^T W` with the largest norm (lowest
/// index on ties), normalized. Converged when the eigen-residual
/// `|A x - (x^T A x) x|` falls below `tol * |A|_F`. When `W^T W` is a
/// multiple of the identity the start direction is returned unchanged.
pub fn top_right_singular_vector(w: &Matrix, iters: usize, tol: f64) -> Result<Vector> {
    if w.is_zero() {
        return Err(Error::InvalidParameter("top singular vector of a zero matrix".into()));
    }
    let n = w.cols();
    let gram = Matrix::from_fn(n, n, |i, j| (0..w.rows()).map(|r| w.get(r, i) * w.get(r, j)).sum());
    let scale = gram.frobenius_norm();
    let start = (0..n)
        .map(|j| gram.column(j))
        .fold(None::<Vector>, |best, col| match best {
            Some(b) if b.norm() >= col.norm() => Some(b),
            _ => Some(col),
        })
        .expect("at least one column");
    let mut x = start
        .normalized()
        .ok_or_else(|| Error::InvalidParameter("W^T W has no nonzero column".into()))?;
    let mut residual = f64::INFINITY;
    for _ in 0..=iters {
        let ax = matvec(&gram, &x)?;
        let theta = ax.dot(&x)?;
        residual = ax.sub(&x.scale(theta))?.norm() / scale;
        if residual <= tol {
            return Ok(x);
        }
        x = ax.normalized().ok_or(Error::NonConvergence { iters, residual })?;
    }
    Err(Error::NonConvergence { iters, residual })
}

/// Power-iteration settings used by the `k_svd` variant.
pub const SVD_ITERS: usize = 20_000;
pub const SVD_TOL: f64 = 1e-12;

/// Statistics of one component under a steering vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub id: ComponentId,
    /// Mean component input over masked positions.
    pub mu: Vector,
    /// Steering vector of the component's block.
    pub v: Vector,
    /// `W^T v`.
    pub wv: Vector,
    /// `cos(v, W mu)`.
    pub g: f64,
    /// `v^T W h` for every masked input `h`.
    pub s_samples: Vec<f64>,
}

/// Computes [`ComponentStats`] for one component.
pub fn component_stats(
    w: &ModelWeights,
    vectors: &SteeringVectorSet,
    trace: &ActivationTrace,
    id: ComponentId,
) -> Result<ComponentStats> {
    let weight = w.component_weight(id)?;
    let v = vectors.get(id.layer, id.block).clone();
    let mu = component_mean_input(trace, id)?;
    let wv = weight.transpose_matvec(&v)?;
    let g = importance_score(&weight, &mu, &v)?;
    let d_head = trace.config.d_head;
    let s_samples = trace
        .masked()
        .map(|(seq, t)| {
            let h = seq.component_input(t, id, d_head);
            h.iter().zip(wv.as_slice()).map(|(a, b)| a * b).sum()
        })
        .collect();
    Ok(ComponentStats {
        id,
        mu,
        v,
        wv,
        g,
        s_samples,
    })
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

/// One rank-1 edit `lambda * u_hat k_hat^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EditEntry {
    pub lambda: f64,
    pub u_hat: Vector,
    pub k_hat: Vector,
}

impl EditEntry {
    pub fn delta(&self) -> Matrix {
        outer(&self.u_hat, &self.k_hat, self.lambda)
    }
}

/// Why a component ended up with the magnitude it has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentStatus {
    Edited,
    /// `|g| <= rho alpha`.
    DeadZone,
    /// Budget of the class is infinite.
    Disabled,
    /// `W^T v = 0`.
    Insensitive,
    /// `W mu = 0` (or `mu = 0` for `k_mean`, or `W = 0` for `k_svd`).
    ZeroMean,
    /// Not among the top-K of its class (`l0:K`).
    NotSelected,
}

/// Importance score and magnitude of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub id: ComponentId,
    pub g: f64,
    pub lambda: f64,
    pub status: ComponentStatus,
}

/// A set of rank-1 edits together with the scores of every component.
#[derive(Debug, Clone, PartialEq)]
pub struct EditPlan {
    pub hyper: EditHyperparams,
    pub variant: Variant,
    /// Non-trivial edits, keyed by component.
    pub entries: BTreeMap<ComponentId, EditEntry>,
    /// One row per editable component, in canonical order.
    pub scores: Vec<ComponentScore>,
}

impl EditPlan {
    /// Number of entries with `lambda != 0` in one block class.
    pub fn nonzero_count(&self, block: Block) -> usize {
        self.entries
            .iter()
            .filter(|(id, e)| id.block == block && e.lambda != 0.0)
            .count()
    }

    pub fn nonzero_total(&self) -> usize {
        self.entries.values().filter(|e| e.lambda != 0.0).count()
    }

    /// Multiplies every magnitude by `c`; a negative `c` turns a promoting
    /// plan into a suppressing one.
    pub fn scaled(&self, c: f64) -> EditPlan {
        let mut out = self.clone();
        for e in out.entries.values_mut() {
            e.lambda *= c;
        }
        for s in &mut out.scores {
            s.lambda *= c;
        }
        out
    }

    pub fn negated(&self) -> EditPlan {
        self.scaled(-1.0)
    }

    /// A plan holding only the entry for `id` (with a zero-magnitude entry if
    /// the component was not edited).
    pub fn restricted_to(&self, id: ComponentId) -> Option<EditPlan> {
        let entry = self.entries.get(&id)?.clone();
        Some(EditPlan {
            hyper: self.hyper,
            variant: self.variant,
            entries: BTreeMap::from([(id, entry)]),
            scores: self.scores.iter().filter(|s| s.id == id).cloned().collect(),
        })
    }

    pub fn score(&self, id: ComponentId) -> Option<&ComponentScore> {
        self.scores.iter().find(|s| s.id == id)
    }
}

struct Proposal {
    score: ComponentScore,
    u_hat: Option<Vector>,
    k_hat: Option<Vector>,
}

fn propose(
    w: &ModelWeights,
    vectors: &SteeringVectorSet,
    trace: &ActivationTrace,
    hyper: &EditHyperparams,
    variant: Variant,
    id: ComponentId,
) -> Result<Proposal> {
    let rho = hyper.rho(id.block);
    let v = vectors.get(id.layer, id.block);
    let weight = w.component_weight(id)?;
    let mu = component_mean_input(trace, id)?;
    let u_hat = match output_direction(v) {
        Ok(u) => u,
        Err(_) if rho.is_infinite() => {
            return Ok(Proposal {
                score: ComponentScore {
                    id,
                    g: 0.0,
                    lambda: 0.0,
                    status: ComponentStatus::Disabled,
                },
                u_hat: None,
                k_hat: None,
            })
        }
        Err(_) => {
            return Err(Error::DegenerateSteeringVector(format!(
                "layer {} {} (budget {rho})",
                id.layer, id.block
            )))
        }
    };
    let w_mu = matvec(&weight, &mu)?;
    let g = match variant {
        Variant::GDot => u_hat.dot(&w_mu)?,
        _ => cosine(v, &w_mu)?,
    };
    let k_hat = match variant {
        Variant::KMean => mu.normalized(),
        Variant::KSvd if weight.is_zero() => None,
        Variant::KSvd => Some(top_right_singular_vector(&weight, SVD_ITERS, SVD_TOL)?),
        _ => match input_direction(&weight, v) {
            Ok(k) => Some(k),
            Err(Error::InsensitiveComponent) => None,
            Err(e) => return Err(e),
        },
    };
    let alpha = match variant {
        Variant::L2Dense => 0.0,
        _ => hyper.alpha,
    };
    let (lambda, status) = if rho.is_infinite() {
        (0.0, ComponentStatus::Disabled)
    } else if k_hat.is_none() {
        let status = match variant {
            Variant::KMean | Variant::KSvd => ComponentStatus::ZeroMean,
            _ => ComponentStatus::Insensitive,
        };
        (0.0, status)
    } else if w_mu.is_zero() {
        (0.0, ComponentStatus::ZeroMean)
    } else if let Variant::L0TopK(_) = variant {
        // selection happens across the class afterwards
        (g / (rho * (1.0 - alpha)), ComponentStatus::Edited)
    } else {
        let lambda = edit_magnitude(g, rho, alpha)?;
        let status = if lambda == 0.0 {
            ComponentStatus::DeadZone
        } else {
            ComponentStatus::Edited
        };
        (lambda, status)
    };
    Ok(Proposal {
        score: ComponentScore { id, g, lambda, status },
        u_hat: Some(u_hat),
        k_hat,
    })
}

/// Keeps the `k` largest `|g|` among edit candidates of each class; ties go
/// to the lower component id.
fn select_top_k(proposals: &mut [Proposal], k: usize) {
    for block in Block::ALL {
        let mut candidates: Vec<usize> = proposals
            .iter()
            .enumerate()
            .filter(|(_, p)| p.score.id.block == block && p.score.status == ComponentStatus::Edited)
            .map(|(i, _)| i)
            .collect();
        // proposals are in canonical order, so a stable sort breaks ties by id
        candidates.sort_by(|&a, &b| proposals[b].score.g.abs().total_cmp(&proposals[a].score.g.abs()));
        for &i in candidates.iter().skip(k) {
            proposals[i].score.lambda = 0.0;
            proposals[i].score.status = ComponentStatus::NotSelected;
        }
    }
}

/// Builds an edit plan for every editable component of `w`.
///
/// `trace` supplies the component inputs averaged into `mu_i`; it must have
/// been captured on a model with the same configuration.
pub fn build_edit_plan(
    w: &ModelWeights,
    vectors: &SteeringVectorSet,
    trace: &ActivationTrace,
    hyper: EditHyperparams,
    variant: Variant,
) -> Result<EditPlan> {
    hyper.validate()?;
    let cfg = &w.config;
    if trace.config != *cfg {
        return Err(Error::MissingTraceCoverage(
            "trace was captured on a different model config".into(),
        ));
    }
    if vectors.n_layers() != cfg.n_layers || vectors.d_model() != cfg.d_model {
        return Err(Error::dim(
            "build_edit_plan",
            format!("model {} layers x d {}", cfg.n_layers, cfg.d_model),
            format!("vectors {} layers x d {}", vectors.n_layers(), vectors.d_model()),
        ));
    }
    if trace.masked_count() == 0 {
        return Err(Error::NoMaskedPositions("trace".into()));
    }

    let ids = cfg.components();
    let mut proposals = ids
        .par_iter()
        .map(|&id| propose(w, vectors, trace, &hyper, variant, id))
        .collect::<Result<Vec<_>>>()?;
    if let Variant::L0TopK(k) = variant {
        select_top_k(&mut proposals, k);
    }

    let mut entries = BTreeMap::new();
    let mut scores = Vec::with_capacity(proposals.len());
    for p in proposals {
        if p.score.lambda != 0.0 {
            if let (Some(u_hat), Some(k_hat)) = (p.u_hat, p.k_hat) {
                entries.insert(
                    p.score.id,
                    EditEntry {
                        lambda: p.score.lambda,
                        u_hat,
                        k_hat,
                    },
                );
            }
        }
        scores.push(p.score);
    }
    Ok(EditPlan {
        hyper,
        variant,
        entries,
        scores,
    })
}

/// Adds every entry's rank-1 update to its component.
pub fn apply_edit_plan(w: &ModelWeights, plan: &EditPlan) -> Result<ModelWeights> {
    let mut out = w.clone();
    for (&id, entry) in &plan.entries {
        let current = out.component_weight(id)?;
        let delta = entry.delta();
        if delta.shape() != current.shape() {
            return Err(Error::ShapeMismatch {
                tensor: id.to_string(),
                expected: format!("{}x{}", current.rows(), current.cols()),
                found: format!("{}x{}", delta.rows(), delta.cols()),
            });
        }
        out.set_component_weight_in_place(id, &current.add(&delta)?)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PlanFileEntry {
    layer: usize,
    block: Block,
    index: usize,
    g: f64,
    lambda: f64,
    status: ComponentStatus,
    /// Offsets into the data file, in f32 elements; absent when not edited.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    u_offset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    k_offset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    k_len: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    hyper: EditHyperparams,
    variant: Variant,
    d_model: usize,
    data_file: String,
    entries: Vec<PlanFileEntry>,
}

impl EditPlan {
    /// Writes the plan as JSON at `path` and the `u_hat`/`k_hat` payload as
    /// raw f32 next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let d_model = self.entries.values().next().map_or(0, |e| e.u_hat.len());
        let mut data = Vec::new();
        let mut entries = Vec::with_capacity(self.scores.len());
        for s in &self.scores {
            let mut row = PlanFileEntry {
                layer: s.id.layer,
                block: s.id.block,
                index: s.id.index,
                g: s.g,
                lambda: s.lambda,
                status: s.status,
                u_offset: None,
                k_offset: None,
                k_len: None,
            };
            if let Some(e) = self.entries.get(&s.id) {
                row.lambda = e.lambda;
                row.u_offset = Some(data.len());
                data.extend_from_slice(e.u_hat.as_slice());
                row.k_offset = Some(data.len());
                row.k_len = Some(e.k_hat.len());
                data.extend_from_slice(e.k_hat.as_slice());
            }
            entries.push(row);
        }
        let file = PlanFile {
            hyper: self.hyper,
            variant: self.variant,
            d_model,
            data_file: sidecar_name(path),
            entries,
        };
        write_bytes(path, &serde_json::to_vec_pretty(&file)?)?;
        write_f32_file(&sidecar_path(path), &data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EditPlan> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: PlanFile = serde_json::from_slice(&bytes)?;
        let data = read_f32_file(&resolve_sidecar(path, &file.data_file))?;
        let bad = |reason: String| Error::InvalidFile {
            path: path.to_path_buf(),
            reason,
        };
        let slice = |offset: usize, len: usize| -> Result<Vector> {
            let s = data
                .get(offset..offset + len)
                .ok_or_else(|| bad(format!("offset {offset} + {len} out of range")))?;
            Vector::new(s.to_vec())
        };
        let mut entries = BTreeMap::new();
        let mut scores = Vec::with_capacity(file.entries.len());
        for row in file.entries {
            let id = ComponentId {
                layer: row.layer,
                block: row.block,
                index: row.index,
            };
            if let (Some(u), Some(k), Some(k_len)) = (row.u_offset, row.k_offset, row.k_len) {
                entries.insert(
                    id,
                    EditEntry {
                        lambda: row.lambda,
                        u_hat: slice(u, file.d_model)?,
                        k_hat: slice(k, k_len)?,
                    },
                );
            }
            scores.push(ComponentScore {
                id,
                g: row.g,
                lambda: row.lambda,
                status: row.status,
            });
        }
        Ok(EditPlan {
            hyper: file.hyper,
            variant: file.variant,
            entries,
            scores,
        })
    }
}

/// Formats a float with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Writes one `(layer, block, index, g, lambda)` row per component, sorted by
/// component id.
pub fn write_heatmap_csv(plan: &EditPlan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut rows: Vec<&ComponentScore> = plan.scores.iter().collect();
    rows.sort_by_key(|s| s.id);
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["layer", "block", "index", "g", "lambda"])?;
    for s in rows {
        out.write_record([
            s.id.layer.to_string(),
            s.id.block.to_string(),
            s.id.index.to_string(),
            format_f64(s.g),
            format_f64(s.lambda),
        ])?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
