//! Synthetic multi-region flow: one sinusoid per node with its own period,
//! phase and level, plus Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::SeriesDataset;
use crate::rng;

#[derive(Clone, Copy, Debug)]
pub struct SinusoidSpec {
    pub nodes: usize,
    pub steps: usize,
    /// Noise standard deviation as a fraction of each node's amplitude.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SinusoidSpec {
    fn default() -> Self {
        Self {
            nodes: 10,
            steps: 500,
            noise: 0.01,
            seed: 0,
        }
    }
}

pub fn sinusoids(spec: SinusoidSpec) -> SeriesDataset {
    let mut rng = rng::derived(spec.seed, 0x5157);
    let params: Vec<(f64, f64, f64, f64)> = (0..spec.nodes)
        .map(|_| {
            let level = rng.random_range(150.0..300.0);
            let amp = rng.random_range(40.0..120.0);
            let period = rng.random_range(24.0..72.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (level, amp, period, phase)
        })
        .collect();
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut values = Vec::with_capacity(spec.steps * spec.nodes);
    for t in 0..spec.steps {
        for &(level, amp, period, phase) in &params {
            let clean = level + amp * (std::f64::consts::TAU * t as f64 / period + phase).sin();
            values.push(clean + spec.noise * amp * unit.sample(&mut rng));
        }
    }
    SeriesDataset::new("synthetic", spec.steps, spec.nodes, values, None).expect("consistent shape")
}
