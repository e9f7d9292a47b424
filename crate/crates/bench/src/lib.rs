//! Shared fixtures for the benchmarks.

use ridg_core::law::{ConservationLaw, LawKind};
use ridg_core::predictor::{Backend, NewtonConfig, Predictor};

pub fn advection(dim: usize) -> LawKind {
    match dim {
        1 => LawKind::Advection1d,
        2 => LawKind::Advection2d,
        _ => LawKind::Advection3d,
    }
}

pub fn predictor(kind: LawKind, degree: usize) -> Predictor {
    let law = ConservationLaw::new(kind);
    Predictor::build(law, degree, &vec![0.1; law.dim], NewtonConfig::default(), Backend::Qqf).expect("valid predictor")
}

/// Deterministic smooth-looking values in `[-0.5, 0.5]` around `mean`.
pub fn pseudo_state(n: usize, mean: f64, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = (i as f64 + 1.0) * 0.618_033_988_75 + seed as f64 * 0.414_213_562_37;
            mean + 0.5 * (x * 12.9898).sin() / (1.0 + (i % 7) as f64)
        })
        .collect()
}
