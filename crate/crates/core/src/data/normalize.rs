use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};

/// Global z-score statistics fitted on the leading training span.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Mean and population standard deviation over every cell of the first
    /// `floor(train_fraction · T)` time steps.
    pub fn fit(ds: &SeriesDataset, train_fraction: f64) -> Result<Self> {
        if ds.missing_count() > 0 {
            return Err(Error::Data("normalizer requires an interpolated dataset".into()));
        }
        let span = (ds.steps() as f64 * train_fraction).floor() as usize;
        if span == 0 {
            return Err(Error::Data("training span for normalization is empty".into()));
        }
        let cells = &ds.values()[..span * ds.nodes()];
        let count = cells.len() as f64;
        let mean = cells.iter().sum::<f64>() / count;
        let var = cells.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        let std = var.sqrt();
        if std <= 0.0 || !std.is_finite() {
            return Err(Error::Data("zero std: training span is constant".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}
