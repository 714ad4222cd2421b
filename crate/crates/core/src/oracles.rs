// SPDX-License-Identifier: MIT OR Apache-2.0

//! Brute-force verifiers for the edit rule.
//!
//! Each oracle recomputes its quantity with plain loops over raw slices and
//! draws randomness from its own ChaCha stream seeded with [`ORACLE_SEED`],
//! so none of them shares a code path with the editor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::editor::EditPlan;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{forward, Block, CaptureSpec, ComponentId, ModelWeights};

/// Seed of the oracle random stream.
pub const ORACLE_SEED: u64 = 0x0D05_EED0_AC1E;

/// Fresh oracle random stream.
pub fn oracle_rng() -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(ORACLE_SEED)
}

/// Outcome of one oracle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub trials: usize,
    pub max_violation: f64,
    pub pass: bool,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn new(name: impl Into<String>, trials: usize, max_violation: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            trials,
            max_violation,
            pass: max_violation <= tolerance,
            tolerance,
        }
    }
}

// ---------------------------------------------------------------------------
// Raw helpers
// ---------------------------------------------------------------------------

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `M x` for a row-major matrix.
fn apply(m: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.rows()];
    for (r, o) in out.iter_mut().enumerate() {
        for (c, xc) in x.iter().enumerate() {
            *o += m.get(r, c) * xc;
        }
    }
    out
}

/// `M^T y` for a row-major matrix.
fn apply_t(m: &Matrix, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (r, yr) in y.iter().enumerate() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += m.get(r, c) * yr;
        }
    }
    out
}

/// Sample Pearson correlation from centered sums; `None` on zero variance.
fn correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let (a, b) = (x[i] - mx, y[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

// ---------------------------------------------------------------------------
// Semantic invariance
// ---------------------------------------------------------------------------

/// Checks `z^T dW h = 0` for random `h` and random `z` orthogonal to `v`.
///
/// Violation per trial is `|z^T dW h| / (|z| |dW|_F |h|)`, zero when any of
/// the norms vanishes.
pub fn verify_semantic_invariance(delta_w: &Matrix, v: &Vector, n_trials: usize, tol: f64) -> OracleReport {
    verify_semantic_invariance_with_rng(delta_w, v, n_trials, tol, &mut oracle_rng())
}

pub fn verify_semantic_invariance_with_rng(
    delta_w: &Matrix,
    v: &Vector,
    n_trials: usize,
    tol: f64,
    rng: &mut impl Rng,
) -> OracleReport {
    let v = v.as_slice();
    let vv = dot(v, v);
    let fro = norm(delta_w.as_slice());
    let mut worst: f64 = 0.0;
    for _ in 0..n_trials {
        let h = gaussian(rng, delta_w.cols());
        let mut z = gaussian(rng, delta_w.rows());
        if vv > 0.0 {
            let c = dot(&z, v) / vv;
            for (zi, vi) in z.iter_mut().zip(v) {
                *zi -= c * vi;
            }
        }
        let denom = norm(&z) * fro * norm(&h);
        if denom > 0.0 {
            worst = worst.max(dot(&z, &apply(delta_w, &h)).abs() / denom);
        }
    }
    OracleReport::new("semantic_invariance", n_trials, worst, tol)
}

// ---------------------------------------------------------------------------
// Pearson optimality
// ---------------------------------------------------------------------------

const PEARSON_TOL: f64 = 1e-9;

/// `|pearson(k^T h, v^T W h)|` over the samples.
///
/// Returns 0 when `k^T h` has no variance and an error when `v^T W h` has
/// none.
pub fn abs_pearson_for_direction(w: &Matrix, v: &Vector, h_samples: &[Vector], k: &[f64]) -> Result<f64> {
    let wv = apply_t(w, v.as_slice());
    let s: Vec<f64> = h_samples.iter().map(|h| dot(&wv, h.as_slice())).collect();
    let ds: Vec<f64> = h_samples.iter().map(|h| dot(k, h.as_slice())).collect();
    if h_samples.len() < 2 || correlation(&s, &s).is_none() {
        return Err(Error::DegenerateSample(
            "alignment score has zero variance over the samples".into(),
        ));
    }
    Ok(correlation(&ds, &s).map_or(0.0, f64::abs))
}

/// Checks that `k ~ W^T v` attains `|pearson| = 1` and that no random unit
/// probe does better.
pub fn pearson_optimality_oracle(
    w: &Matrix,
    v: &Vector,
    h_samples: &[Vector],
    n_probes: usize,
) -> Result<OracleReport> {
    pearson_optimality_oracle_with_rng(w, v, h_samples, n_probes, &mut oracle_rng())
}

pub fn pearson_optimality_oracle_with_rng(
    w: &Matrix,
    v: &Vector,
    h_samples: &[Vector],
    n_probes: usize,
    rng: &mut impl Rng,
) -> Result<OracleReport> {
    let wv = apply_t(w, v.as_slice());
    let n = norm(&wv);
    if n == 0.0 {
        return Err(Error::DegenerateSample("W^T v is zero".into()));
    }
    let k_hat: Vec<f64> = wv.iter().map(|x| x / n).collect();
    let best = abs_pearson_for_direction(w, v, h_samples, &k_hat)?;
    let mut worst = (1.0 - best).abs();
    for _ in 0..n_probes {
        let mut k = gaussian(rng, w.cols());
        let kn = norm(&k);
        k.iter_mut().for_each(|x| *x /= kn);
        let probe = abs_pearson_for_direction(w, v, h_samples, &k)?;
        worst = worst.max(probe - best);
    }
    Ok(OracleReport::new(
        "pearson_optimality",
        n_probes + 1,
        worst,
        PEARSON_TOL,
    ))
}

// ---------------------------------------------------------------------------
// Scalar elastic net
// ---------------------------------------------------------------------------

/// Minimum grid size accepted by [`elastic_net_scalar_oracle`].
pub const MIN_GRID_POINTS: usize = 1_000;

/// Grid half-width that brackets the closed-form optimum.
pub fn default_halfwidth(g: f64, rho: f64, alpha: f64) -> f64 {
    2.0 * (g.abs() / (rho * (1.0 - alpha)) + 1.0)
}

/// Objective `g l - rho (alpha |l| + (1 - alpha) / 2 l^2)`.
pub fn elastic_net_objective(lambda: f64, g: f64, rho: f64, alpha: f64) -> f64 {
    g * lambda - rho * (alpha * lambda.abs() + 0.5 * (1.0 - alpha) * lambda * lambda)
}

/// Argmax of the scalar objective over `grid_points` uniform points on
/// `[-halfwidth, halfwidth]`. Ties go to the smaller point.
pub fn elastic_net_scalar_oracle(g: f64, rho: f64, alpha: f64, grid_halfwidth: f64, grid_points: usize) -> Result<f64> {
    if rho.is_nan() || rho <= 0.0 {
        return Err(Error::InvalidParameter(format!("budget rho = {rho} must be > 0")));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in [0, 1)")));
    }
    if grid_points < MIN_GRID_POINTS {
        return Err(Error::InvalidParameter(format!(
            "grid needs at least {MIN_GRID_POINTS} points, got {grid_points}"
        )));
    }
    if !(grid_halfwidth > 0.0 && grid_halfwidth.is_finite()) {
        return Err(Error::InvalidParameter(format!("grid half-width {grid_halfwidth}")));
    }
    if rho.is_infinite() {
        return Ok(0.0);
    }
    let step = 2.0 * grid_halfwidth / (grid_points - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for j in 0..grid_points {
        let lambda = -grid_halfwidth + step * j as f64;
        let value = elastic_net_objective(lambda, g, rho, alpha);
        if value > best.0 {
            best = (value, lambda);
        }
    }
    Ok(best.1)
}

/// Grid spacing used by [`elastic_net_scalar_oracle`].
pub fn grid_step(grid_halfwidth: f64, grid_points: usize) -> f64 {
    2.0 * grid_halfwidth / (grid_points - 1) as f64
}

// ---------------------------------------------------------------------------
// Block-output shift
// ---------------------------------------------------------------------------

const SHIFT_TOL: f64 = 1e-9;

/// Applies the plan's single entry by hand and compares the edited block
/// output against `lambda (k_hat^T h) u_hat` at every position.
///
/// Activations upstream of the edited weight (earlier layers, the same
/// layer's component inputs, and the attention block when an MLP neuron is
/// edited) must match bitwise; any mismatch reports an infinite violation.
pub fn component_shift_oracle(w: &ModelWeights, plan: &EditPlan, probes: &[Vec<u32>]) -> Result<OracleReport> {
    if plan.entries.len() != 1 {
        return Err(Error::InvalidParameter(format!(
            "shift oracle needs exactly one plan entry, got {}",
            plan.entries.len()
        )));
    }
    let (&id, entry) = plan.entries.iter().next().expect("one entry");
    let edited = add_rank_one(w, id, entry.lambda, entry.u_hat.as_slice(), entry.k_hat.as_slice())?;
    let d_head = w.config.d_head;

    let mut worst: f64 = 0.0;
    let mut trials = 0;
    for tokens in probes {
        let before = forward(w, tokens, CaptureSpec::ALL)?.trace.expect("captured");
        let after = forward(&edited, tokens, CaptureSpec::ALL)?.trace.expect("captured");
        for t in 0..tokens.len() {
            for layer in 0..id.layer {
                if before.positions[t][layer] != after.positions[t][layer] {
                    worst = f64::INFINITY;
                }
            }
            let (b, a) = (&before.positions[t][id.layer], &after.positions[t][id.layer]);
            let upstream_equal = match id.block {
                Block::Attn => b.resid_pre == a.resid_pre && b.head_inputs == a.head_inputs,
                Block::Mlp => {
                    b.resid_pre == a.resid_pre
                        && b.head_inputs == a.head_inputs
                        && b.attn_out == a.attn_out
                        && b.resid_mid == a.resid_mid
                        && b.neuron_acts == a.neuron_acts
                }
            };
            if !upstream_equal {
                worst = f64::INFINITY;
            }
            let h = before.component_input(t, id, d_head);
            let coeff = entry.lambda * dot(entry.k_hat.as_slice(), h);
            let (ob, oa) = (
                before.block_output(t, id.layer, id.block),
                after.block_output(t, id.layer, id.block),
            );
            for i in 0..ob.len() {
                let expected = coeff * entry.u_hat.get(i);
                worst = worst.max(((oa[i] - ob[i]) - expected).abs());
            }
            trials += 1;
        }
    }
    Ok(OracleReport::new(
        format!("component_shift[{id}]"),
        trials,
        worst,
        SHIFT_TOL,
    ))
}

fn add_rank_one(w: &ModelWeights, id: ComponentId, lambda: f64, u: &[f64], k: &[f64]) -> Result<ModelWeights> {
    let current = w.component_weight(id)?;
    if current.rows() != u.len() || current.cols() != k.len() {
        return Err(Error::dim(
            "component_shift_oracle",
            format!("{}x{}", current.rows(), current.cols()),
            format!("{}x{}", u.len(), k.len()),
        ));
    }
    let updated = Matrix::from_fn(current.rows(), current.cols(), |r, c| {
        current.get(r, c) + lambda * u[r] * k[c]
    });
    w.set_component_weight(id, &updated)
}
