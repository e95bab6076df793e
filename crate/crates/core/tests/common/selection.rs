//! Shared top-k selection fixtures.

use attncut::attention::{compute_significance, select_top_k, AttentionConfig, AttentionKind};
use candle_core::{DType, Device, Tensor};

/// Upper 1% point of the χ² distribution with 15 degrees of freedom.
pub const CHI2_15_P99: f64 = 30.5779;

pub fn monotone_maps() -> Vec<Box<dyn Fn(f64) -> f64>> {
    vec![
        Box::new(|v| 3.0 * v + 7.0),
        Box::new(|v| v.powi(3)),
        Box::new(f64::exp),
        Box::new(|v| v.atan()),
        Box::new(|v| (v + 100.0).ln()),
    ]
}

/// Inclusion counts of each of the 16 locations of a 4×4 map over 10,000
/// seeds of the random mechanism with k = 4, and the χ² statistic against
/// the uniform expectation `seeds · k / 16`.
pub fn random_selection_chi2(seeds: u64) -> (Vec<u64>, f64) {
    let features = Tensor::zeros((4, 4, 4), DType::F64, &Device::Cpu).unwrap();
    let cfg = AttentionConfig::with_kind(AttentionKind::Random);
    let mut counts = vec![0u64; 16];
    for seed in 0..seeds {
        let s = compute_significance(&features, &cfg, seed).unwrap();
        for i in select_top_k(&s, 4).indices {
            counts[i] += 1;
        }
    }
    let expected = seeds as f64 * 4.0 / 16.0;
    let chi2 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    (counts, chi2)
}
