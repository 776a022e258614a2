//! Seeded inputs shared by the benchmarks.

use fusesurv_core::fusion::{FusionConfig, FusionSample};
use fusesurv_core::nn::{Matrix, Parameter};
use fusesurv_core::survival::SurvivalLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Log-risks and labels for `n` subjects, roughly 30% censored.
pub fn survival_batch(n: usize, seed: u64) -> (Vec<f64>, Vec<SurvivalLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..n)
        .map(|_| SurvivalLabel::new(rng.random_range(0.5..120.0), rng.random_bool(0.7)).expect("positive time"))
        .collect();
    (h, y)
}

/// `n` fully observed fusion inputs of the widths in `cfg`.
pub fn fusion_batch(cfg: &FusionConfig, n: usize, seed: u64) -> Vec<FusionSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |d: usize| Some((0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
    (0..n).map(|_| FusionSample::new(v(cfg.clinical_dim), v(cfg.pathology_dim), v(cfg.radiology_dim))).collect()
}

pub fn bag(rows: usize, dim: usize, seed: u64) -> Matrix {
    Parameter::uniform(rows, dim, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).value
}
