use serde::{Deserialize, Serialize};

use crate::data::PreparedData;
use crate::error::{Error, Result};
use crate::model::Esgcn;

/// Cells whose true value is below this magnitude are left out of MAPE.
pub const MAPE_MASK_EPS: f64 = 1e-3;

/// Errors on denormalized values. MAPE is a percentage; it is 0 when no
/// cell passes the mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    abs: f64,
    sq: f64,
    count: usize,
    ape: f64,
    ape_count: usize,
}

impl MetricsAccumulator {
    pub fn push(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
        if truth.abs() >= MAPE_MASK_EPS {
            self.ape += (e / truth).abs();
            self.ape_count += 1;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.count == 0 {
            return Err(Error::Data("no cells to evaluate".into()));
        }
        let n = self.count as f64;
        Ok(MetricsReport {
            rmse: (self.sq / n).sqrt(),
            mae: self.abs / n,
            mape: if self.ape_count == 0 {
                0.0
            } else {
                100.0 * self.ape / self.ape_count as f64
            },
        })
    }
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::shape("metrics", &[pred.len()], &[truth.len()]));
    }
    let mut acc = MetricsAccumulator::default();
    pred.iter().zip(truth).for_each(|(&p, &t)| acc.push(p, t));
    acc.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub windows: usize,
    pub overall: MetricsReport,
    /// One report per forecast step.
    pub per_horizon: Vec<MetricsReport>,
}

fn evaluate_with(
    data: &PreparedData,
    windows: &[usize],
    batch_size: usize,
    mut predict: impl FnMut(&[usize]) -> Result<(Vec<f64>, Vec<f64>)>,
) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let (h, n) = (data.spec.horizon, data.nodes());
    let mut overall = MetricsAccumulator::default();
    let mut per = vec![MetricsAccumulator::default(); h];
    for chunk in windows.chunks(batch_size.max(1)) {
        let (pred, truth) = predict(chunk)?;
        for (i, (&p, &t)) in pred.iter().zip(&truth).enumerate() {
            overall.push(p, t);
            per[(i / n) % h].push(p, t);
        }
    }
    Ok(Evaluation {
        windows: windows.len(),
        overall: overall.finish()?,
        per_horizon: per.iter().map(MetricsAccumulator::finish).collect::<Result<_>>()?,
    })
}

/// Model forecasts, denormalized, against the repaired series.
pub fn evaluate(model: &Esgcn<f32>, data: &PreparedData, windows: &[usize], batch_size: usize) -> Result<Evaluation> {
    evaluate_with(data, windows, batch_size, |chunk| {
        let batch = data.batch::<f32>(chunk);
        let pred = model.predict(&batch.inputs)?;
        let pred = pred.data().iter().map(|&z| data.norm.invert(z as f64)).collect();
        Ok((pred, batch.targets_raw))
    })
}

/// Repeats the last observed value for every forecast step.
pub fn persistence(data: &PreparedData, windows: &[usize]) -> Result<Evaluation> {
    let (h, n) = (data.spec.horizon, data.nodes());
    evaluate_with(data, windows, 64, |chunk| {
        let batch = data.batch::<f32>(chunk);
        let pred = (0..chunk.len())
            .flat_map(|b| {
                let last = &batch.last_raw[b * n..(b + 1) * n];
                (0..h).flat_map(move |_| last.iter().copied())
            })
            .collect();
        Ok((pred, batch.targets_raw))
    })
}

/// Denormalized `[horizon][node]` forecast for the window starting at `start`.
pub fn forecast(model: &Esgcn<f32>, data: &PreparedData, start: usize) -> Result<Vec<Vec<f64>>> {
    data.check_window(start)?;
    let batch = data.batch::<f32>(&[start]);
    let pred = model.predict(&batch.inputs)?;
    Ok(pred
        .data()
        .chunks(data.nodes())
        .map(|row| row.iter().map(|&z| data.norm.invert(z as f64)).collect())
        .collect())
}
