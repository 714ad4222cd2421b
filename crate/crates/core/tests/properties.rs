// SPDX-License-Identifier: MIT OR Apache-2.0

//! Property tests for the linear algebra, forward pass, steering and editing
//! invariants.

mod common;

use common::{bench_experiment, gaussian_matrix, gaussian_vector, random_setup, random_tokens};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use residual_edit::editor::{apply_edit_plan, build_edit_plan, edit_magnitude, EditHyperparams, Variant};
use residual_edit::linalg::{cosine, matvec, outer, pearson, Vector};
use residual_edit::model::{forward, Block, CaptureSpec, ComponentId, ModelConfig, ModelWeights};
use residual_edit::oracles::verify_semantic_invariance;
use residual_edit::steering::{extract_steering_vectors, steered_forward, BlockSet, SteeringHook, SteeringVectorSet};

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

proptest! {
    #[test]
    fn outer_product_acts_as_scaled_projection(
        u in vec_strategy(6), k in vec_strategy(4), x in vec_strategy(4), lambda in -5.0f64..5.0,
    ) {
        let (u, k, x) = (Vector::new(u).unwrap(), Vector::new(k).unwrap(), Vector::new(x).unwrap());
        let got = matvec(&outer(&u, &k, lambda), &x).unwrap();
        let kx = k.dot(&x).unwrap();
        for (g, ui) in got.as_slice().iter().zip(u.as_slice()) {
            prop_assert!(rel_close(*g, lambda * kx * ui, 1e-12));
        }
    }

    #[test]
    fn cosine_ignores_positive_scale(a in vec_strategy(5), b in vec_strategy(5), c in 1e-3f64..1e3) {
        let (a, b) = (Vector::new(a).unwrap(), Vector::new(b).unwrap());
        let lhs = cosine(&a, &b).unwrap();
        let rhs = cosine(&a.scale(c), &b).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        x in vec_strategy(12), y in vec_strategy(12), slope in 0.01f64..100.0, shift in -50.0f64..50.0,
    ) {
        prop_assume!(pearson(&x, &y).is_ok());
        let mapped: Vec<f64> = x.iter().map(|v| slope * v + shift).collect();
        let lhs = pearson(&x, &y).unwrap();
        let rhs = pearson(&mapped, &y).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10);
    }
}

// ---------------------------------------------------------------------------
// Edit magnitude
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dead_zone_is_exact(g in -1.0f64..=1.0, rho in 0.01f64..=2.0, alpha in 0.0f64..0.99) {
        let lambda = edit_magnitude(g, rho, alpha).unwrap();
        prop_assert_eq!(lambda == 0.0, g.abs() <= rho * alpha);
        if lambda != 0.0 {
            prop_assert_eq!(lambda.signum(), g.signum());
        }
    }
}

#[test]
fn sparsity_never_grows_with_threshold() {
    let exp = bench_experiment();
    let plan = exp
        .plan(EditHyperparams::new(1.0, 1.0, 0.0).unwrap(), Variant::Steer2Edit)
        .unwrap();
    for alpha in [0.2, 0.5, 0.8] {
        let mut previous = [usize::MAX; 2];
        for step in 1..=24 {
            let rho = 0.05 * step as f64;
            for (slot, block) in Block::ALL.into_iter().enumerate() {
                let count = plan
                    .scores
                    .iter()
                    .filter(|s| s.id.block == block)
                    .filter(|s| edit_magnitude(s.g, rho, alpha).unwrap() != 0.0)
                    .count();
                assert!(count <= previous[slot], "count rose at rho={rho}, alpha={alpha}");
                previous[slot] = count;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_is_deterministic_and_decomposes(seed in 0u64..1_000, len in 1usize..10) {
        let config = ModelConfig::toy();
        let w = ModelWeights::random(&config, seed, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = random_tokens(&mut rng, len, config.vocab_size);
        let a = forward(&w, &tokens, CaptureSpec::ALL).unwrap();
        let b = forward(&w, &tokens, CaptureSpec::ALL).unwrap();
        prop_assert_eq!(&a.logits, &b.logits);

        let trace = a.trace.unwrap();
        for t in 0..len {
            for layer in 0..config.n_layers {
                let cap = &trace.positions[t][layer];
                for i in 0..config.d_model {
                    // residual recurrence
                    prop_assert!((cap.resid_mid[i] - cap.resid_pre[i] - cap.attn_out[i]).abs() <= 1e-9);
                    prop_assert!((cap.resid_post[i] - cap.resid_mid[i] - cap.mlp_out[i]).abs() <= 1e-9);
                }
                for block in Block::ALL {
                    let mut sum = vec![0.0; config.d_model];
                    for index in 0..config.block_width(block) {
                        let id = ComponentId { layer, block, index };
                        let h = Vector::new(trace.component_input(t, id, config.d_head).to_vec()).unwrap();
                        let term = matvec(&w.component_weight(id).unwrap(), &h).unwrap();
                        sum.iter_mut().zip(term.as_slice()).for_each(|(s, x)| *s += x);
                    }
                    let target = trace.block_output(t, layer, block);
                    for (s, o) in sum.iter().zip(target) {
                        prop_assert!((s - o).abs() <= 1e-9);
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Steering
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn swapping_classes_negates_vectors(seed in 0u64..500) {
        let setup = random_setup(seed);
        let swapped = extract_steering_vectors(&setup.weights, &setup.probes.swapped()).unwrap();
        prop_assert_eq!(swapped, setup.vectors.negated());
    }

    #[test]
    fn zero_strength_steering_is_bitwise_identity(seed in 0u64..500, len in 1usize..10) {
        let setup = random_setup(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = random_tokens(&mut rng, len, setup.weights.config.vocab_size);
        let hook = SteeringHook::new(0.0, setup.vectors.clone(), BlockSet::Both).unwrap();
        let steered = steered_forward(&setup.weights, &tokens, &hook).unwrap();
        let plain = forward(&setup.weights, &tokens, CaptureSpec::NONE).unwrap().logits;
        prop_assert_eq!(steered, plain);
    }
}

// ---------------------------------------------------------------------------
// Edit plans
// ---------------------------------------------------------------------------

fn scaled_block(vectors: &SteeringVectorSet, layer: usize, block: Block, c: f64) -> SteeringVectorSet {
    let mut out = vectors.clone();
    let slot = match block {
        Block::Attn => 0,
        Block::Mlp => 1,
    };
    out.vectors[layer][slot] = vectors.get(layer, block).scale(c);
    out
}

fn close_vec(a: &Vector, b: &Vector, tol: f64) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn plan_is_invariant_to_steering_vector_scale(
        seed in 0u64..500, c in 0.01f64..100.0, layer in 0usize..2, attn in any::<bool>(),
    ) {
        let s = random_setup(seed);
        let block = if attn { Block::Attn } else { Block::Mlp };
        let hyper = EditHyperparams::new(0.3, 0.3, 0.2).unwrap();
        let base = build_edit_plan(&s.weights, &s.vectors, &s.trace, hyper, Variant::Steer2Edit).unwrap();
        let scaled_vectors = scaled_block(&s.vectors, layer, block, c);
        let scaled = build_edit_plan(&s.weights, &scaled_vectors, &s.trace, hyper, Variant::Steer2Edit).unwrap();
        for (a, b) in base.scores.iter().zip(&scaled.scores) {
            prop_assert!((a.g - b.g).abs() <= 1e-10);
            prop_assert!((a.lambda - b.lambda).abs() <= 1e-10);
        }
        prop_assert_eq!(base.entries.keys().collect::<Vec<_>>(), scaled.entries.keys().collect::<Vec<_>>());
        for (id, e) in &base.entries {
            let f = &scaled.entries[id];
            prop_assert!(close_vec(&e.u_hat, &f.u_hat, 1e-10));
            prop_assert!(close_vec(&e.k_hat, &f.k_hat, 1e-10));
        }
    }

    #[test]
    fn nonzero_entries_realize_perfect_correlation(seed in 0u64..500) {
        let s = random_setup(seed);
        let hyper = EditHyperparams::new(0.2, 0.2, 0.1).unwrap();
        let plan = build_edit_plan(&s.weights, &s.vectors, &s.trace, hyper, Variant::Steer2Edit).unwrap();
        let d_head = s.weights.config.d_head;
        let mut checked = 0;
        for (&id, e) in &plan.entries {
            let w = s.weights.component_weight(id).unwrap();
            let v = s.vectors.get(id.layer, id.block);
            let wv = w.transpose_matvec(v).unwrap();
            let (mut shift, mut score) = (Vec::new(), Vec::new());
            for (seq, t) in s.trace.masked() {
                let h = Vector::new(seq.component_input(t, id, d_head).to_vec()).unwrap();
                shift.push(e.lambda * v.norm() * e.k_hat.dot(&h).unwrap());
                score.push(wv.dot(&h).unwrap());
            }
            if let Ok(r) = pearson(&shift, &score) {
                prop_assert!((r - e.lambda.signum()).abs() <= 1e-9, "{id}: r = {r}");
                checked += 1;
            }
        }
        prop_assert!(checked > 0);
    }

    #[test]
    fn every_variant_keeps_edits_inside_the_steering_direction(seed in 0u64..500, variant_ix in 0usize..6) {
        let s = random_setup(seed);
        let variant = [
            Variant::Steer2Edit, Variant::KMean, Variant::KSvd, Variant::GDot, Variant::L0TopK(3), Variant::L2Dense,
        ][variant_ix];
        let hyper = EditHyperparams::new(0.3, 0.5, 0.3).unwrap();
        let plan = build_edit_plan(&s.weights, &s.vectors, &s.trace, hyper, variant).unwrap();
        for (id, e) in &plan.entries {
            prop_assert!((e.u_hat.norm() - 1.0).abs() <= 1e-9);
            prop_assert!((e.k_hat.norm() - 1.0).abs() <= 1e-9);
            let report = verify_semantic_invariance(&e.delta(), s.vectors.get(id.layer, id.block), 100, 1e-10);
            prop_assert!(report.pass, "{id}: {}", report.max_violation);
        }
    }

    #[test]
    fn negated_plan_undoes_the_edit(seed in 0u64..500) {
        let s = random_setup(seed);
        let hyper = EditHyperparams::new(0.2, 0.2, 0.1).unwrap();
        let plan = build_edit_plan(&s.weights, &s.vectors, &s.trace, hyper, Variant::Steer2Edit).unwrap();
        let restored = apply_edit_plan(&apply_edit_plan(&s.weights, &plan).unwrap(), &plan.negated()).unwrap();
        for (a, b) in s.weights.canonical_tensors().iter().zip(restored.canonical_tensors()) {
            prop_assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-7));
        }
    }
}

#[test]
fn random_dense_update_breaks_semantic_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let delta = gaussian_matrix(&mut rng, 16, 8);
    let v = gaussian_vector(&mut rng, 16);
    assert!(!verify_semantic_invariance(&delta, &v, 100, 1e-10).pass);
}
