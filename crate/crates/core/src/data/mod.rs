//! Ingestion, repair, normalization and windowing of flow series.

mod dataset;
mod interpolate;
mod normalize;
pub mod synthetic;
mod window;

pub use dataset::{
    load, read_bin, read_csv, write_bin, write_csv, DataFormat, LoadOptions, SeriesDataset, BIN_MAGIC,
};
pub use interpolate::interpolate;
pub use normalize::NormStats;
pub use window::{make_splits, make_windows, split_windows, Splits, WindowSpec, Windowing};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const TRAIN_FRACTION: f64 = 0.6;

/// A batch of windows. Inputs and targets are normalized; raw targets and
/// the last raw input step are kept for denormalized metrics.
#[derive(Clone, Debug)]
pub struct WindowBatch<T> {
    pub starts: Vec<usize>,
    /// `[b, 1, N, T_in]`
    pub inputs: Tensor<T>,
    /// `[b, T_out, N]`
    pub targets: Tensor<T>,
    /// `[b, T_out, N]` row-major
    pub targets_raw: Vec<f64>,
    /// `[b, N]` row-major
    pub last_raw: Vec<f64>,
}

impl<T> WindowBatch<T> {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// A repaired, normalized series with its window splits.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub name: String,
    pub spec: WindowSpec,
    pub norm: NormStats,
    pub splits: Splits,
    pub missing_ratio: f64,
    steps: usize,
    nodes: usize,
    raw: Vec<f64>,
    normalized: Vec<f64>,
}

impl PreparedData {
    /// Interpolates, fits global normalization on the leading 60% of time
    /// steps (unless `norm` is given, e.g. from a checkpoint), and splits.
    pub fn prepare(ds: &SeriesDataset, spec: WindowSpec, windowing: Windowing, norm: Option<NormStats>) -> Result<Self> {
        let missing_ratio = ds.missing_ratio();
        let repaired = interpolate(ds)?;
        let norm = match norm {
            Some(n) => n,
            None => NormStats::fit(&repaired, TRAIN_FRACTION)?,
        };
        let splits = make_splits(repaired.steps(), spec, windowing)?;
        let raw = repaired.values().to_vec();
        let normalized = raw.iter().map(|&v| norm.apply(v)).collect();
        Ok(Self {
            name: ds.name.clone(),
            spec,
            norm,
            splits,
            missing_ratio,
            steps: repaired.steps(),
            nodes: repaired.nodes(),
            raw,
            normalized,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Every window start over the full series, chronologically.
    pub fn all_windows(&self) -> Vec<usize> {
        (0..=self.steps - self.spec.span()).collect()
    }

    pub fn check_window(&self, start: usize) -> Result<()> {
        if start + self.spec.span() > self.steps {
            return Err(Error::Data(format!(
                "window index {start} out of range (0..={})",
                self.steps - self.spec.span()
            )));
        }
        Ok(())
    }

    pub fn batch<T: Real>(&self, starts: &[usize]) -> WindowBatch<T> {
        let (n, tin, tout) = (self.nodes, self.spec.input_len, self.spec.horizon);
        let b = starts.len();
        let mut inputs = Vec::with_capacity(b * n * tin);
        let mut targets = Vec::with_capacity(b * tout * n);
        let mut targets_raw = Vec::with_capacity(b * tout * n);
        let mut last_raw = Vec::with_capacity(b * n);
        for &s in starts {
            for node in 0..n {
                for t in s..s + tin {
                    inputs.push(T::from_f64_lossy(self.normalized[t * n + node]));
                }
            }
            for t in s + tin..s + tin + tout {
                let row = t * n;
                targets.extend(self.normalized[row..row + n].iter().map(|&v| T::from_f64_lossy(v)));
                targets_raw.extend_from_slice(&self.raw[row..row + n]);
            }
            let last = (s + tin - 1) * n;
            last_raw.extend_from_slice(&self.raw[last..last + n]);
        }
        WindowBatch {
            starts: starts.to_vec(),
            inputs: Tensor::new(&[b, 1, n, tin], inputs).expect("input shape"),
            targets: Tensor::new(&[b, tout, n], targets).expect("target shape"),
            targets_raw,
            last_raw,
        }
    }
}

/// Shuffles training windows in place from a seeded stream.
pub fn shuffle_windows(windows: &mut [usize], rng: &mut crate::rng::SplitMix64) {
    windows.shuffle(rng);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(steps: usize, nodes: usize) -> SeriesDataset {
        let vals = (0..steps * nodes).map(|i| (i / nodes) as f64 + 10.0 * (i % nodes) as f64).collect();
        SeriesDataset::new("ramp", steps, nodes, vals, None).unwrap()
    }

    #[test]
    fn batch_layout() {
        let data = PreparedData::prepare(&ramp(40, 3), WindowSpec::default(), Windowing::default(), None).unwrap();
        let b = data.batch::<f64>(&[2, 5]);
        assert_eq!(b.inputs.shape(), &[2, 1, 3, 12]);
        assert_eq!(b.targets.shape(), &[2, 12, 3]);
        // sample 1, node 2, first input step = t 5
        assert!((data.norm.invert(b.inputs.get(&[1, 0, 2, 0])) - 25.0).abs() < 1e-9);
        // sample 0, horizon 0, node 1 = t 14
        assert_eq!(b.targets_raw[1], 24.0);
        assert_eq!(b.last_raw[3 + 2], 36.0);
    }

    #[test]
    fn out_of_range_window() {
        let data = PreparedData::prepare(&ramp(40, 2), WindowSpec::default(), Windowing::default(), None).unwrap();
        assert!(data.check_window(16).is_ok());
        assert!(data.check_window(17).is_err());
    }
}
