// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use residual_edit::harness::{Experiment, PipelineConfig};
use residual_edit::linalg::{Matrix, Vector};
use residual_edit::model::{ActivationTrace, CaptureSpec, ModelConfig, ModelWeights, PositionMask};
use residual_edit::steering::{extract_steering_vectors, ProbeDataset, ProbeExample, SteeringVectorSet};

/// The planted-behavior experiment with default settings, built once.
pub fn bench_experiment() -> &'static Experiment {
    static EXP: OnceLock<Experiment> = OnceLock::new();
    EXP.get_or_init(|| Experiment::prepare(&PipelineConfig::default()).expect("default experiment"))
}

/// Random model, random probe set, its steering vectors and response trace.
pub struct RandomSetup {
    pub weights: ModelWeights,
    pub probes: ProbeDataset,
    pub vectors: SteeringVectorSet,
    pub trace: ActivationTrace,
}

pub fn random_tokens(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(2..vocab as u32)).collect()
}

pub fn random_setup(seed: u64) -> RandomSetup {
    let config = ModelConfig::toy();
    let weights = ModelWeights::random(&config, seed, 0.1).expect("random weights");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let example = |rng: &mut ChaCha8Rng| {
        let prompt = random_tokens(rng, 4, config.vocab_size);
        let len = rng.gen_range(1..5);
        ProbeExample {
            prompt,
            response: random_tokens(rng, len, config.vocab_size),
        }
    };
    let probes = ProbeDataset {
        positive: (0..6).map(|_| example(&mut rng)).collect(),
        negative: (0..6).map(|_| example(&mut rng)).collect(),
    };
    let vectors = extract_steering_vectors(&weights, &probes).expect("vectors");
    let sequences: Vec<(Vec<u32>, usize)> = probes
        .positive
        .iter()
        .chain(&probes.negative)
        .map(|e| (e.tokens(), e.prompt.len()))
        .collect();
    let trace =
        ActivationTrace::collect(&weights, &sequences, PositionMask::Response, CaptureSpec::EDITING).expect("trace");
    RandomSetup {
        weights,
        probes,
        vectors,
        trace,
    }
}

pub fn gaussian_vector(rng: &mut impl Rng, n: usize) -> Vector {
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    Vector::new((0..n).map(|_| rng.sample(normal)).collect()).unwrap()
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    Matrix::from_fn(rows, cols, |_, _| rng.sample(normal))
}

/// Relative files under `dir`, sorted.
pub fn list_files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

/// First difference between two directory trees, if any.
pub fn dir_difference(a: &Path, b: &Path) -> Option<String> {
    let (fa, fb) = (list_files(a), list_files(b));
    if fa != fb {
        return Some(format!("file lists differ: {fa:?} vs {fb:?}"));
    }
    fa.into_iter()
        .find(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .map(|f| format!("{f} differs"))
}
