use super::SeriesDataset;
use crate::error::{Error, Result};

/// Fills every missing cell per node: linearly between the nearest observed
/// neighbours, by constant extension before the first and after the last
/// observation. The returned dataset has an all-false mask.
pub fn interpolate(ds: &SeriesDataset) -> Result<SeriesDataset> {
    let (steps, nodes) = (ds.steps(), ds.nodes());
    let mut values = ds.values().to_vec();
    for node in 0..nodes {
        let observed: Vec<usize> = (0..steps).filter(|&t| !ds.is_missing(t, node)).collect();
        let (Some(&first), Some(&last)) = (observed.first(), observed.last()) else {
            return Err(Error::Data(format!("node {node} has no observed values")));
        };
        for t in 0..first {
            values[t * nodes + node] = ds.value(first, node);
        }
        for t in last + 1..steps {
            values[t * nodes + node] = ds.value(last, node);
        }
        for pair in observed.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b - a < 2 {
                continue;
            }
            let (va, vb) = (ds.value(a, node), ds.value(b, node));
            for t in a + 1..b {
                let w = (t - a) as f64 / (b - a) as f64;
                values[t * nodes + node] = va + w * (vb - va);
            }
        }
    }
    Ok(ds.with_values(values, vec![false; steps * nodes]))
}
