//! Training objective: Huber forecasting loss plus the weighted node
//! contrastive term between graph features built from `A` and from `A_r`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Graph, Real, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub delta: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { delta: 1.0, lambda: 0.1 }
    }
}

/// Scalar Huber value of a residual.
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Mean Huber loss over batch, horizon and nodes.
pub fn huber_loss<T: Real>(g: &mut Graph<T>, yhat: Var, y: Var, delta: f64) -> Result<Var> {
    g.huber(yhat, y, T::from_f64_lossy(delta))
}

/// `(1/n) tr(F_gᵀ F_gr)`, averaged over the batch.
pub fn node_contrastive_loss<T: Real>(g: &mut Graph<T>, fg: Var, fgr: Var) -> Result<Var> {
    g.node_contrastive(fg, fgr)
}

/// `L_h + λ·L_n`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, huber: Var, contrastive: Option<Var>, lambda: f64) -> Result<Var> {
    match contrastive {
        Some(ln) => {
            let weighted = g.scale(ln, T::from_f64_lossy(lambda))?;
            g.add(huber, weighted)
        }
        None => Ok(huber),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub huber: Var,
    pub contrastive: Option<Var>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn huber_values() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(-2.0, 1.0), 1.5);
    }

    #[test]
    fn huber_is_continuous_at_the_seam() {
        for delta in [0.5, 1.0, 3.0] {
            let below = huber(delta - 1e-12, delta);
            let above = huber(delta, delta);
            assert!((below - above).abs() < 1e-9);
            // slope matches on both sides
            let h = 1e-7;
            let left = (huber(delta - h, delta) - huber(delta - 2.0 * h, delta)) / h;
            let right = (huber(delta + 2.0 * h, delta) - huber(delta + h, delta)) / h;
            assert!((left - right).abs() < 1e-5);
        }
    }

    #[test]
    fn contrastive_values() {
        let mut g = Graph::<f64>::new();
        let fg = g.constant(Tensor::new(&[1, 1, 1], vec![2.0]).unwrap());
        let fgr = g.constant(Tensor::new(&[1, 1, 1], vec![3.0]).unwrap());
        let ln = node_contrastive_loss(&mut g, fg, fgr).unwrap();
        assert_eq!(g.value(ln).item(), 6.0);

        let zero = g.constant(Tensor::zeros(&[1, 1, 1]));
        let ln = node_contrastive_loss(&mut g, fg, zero).unwrap();
        assert_eq!(g.value(ln).item(), 0.0);

        // unit-norm columns: c = 2, n = 2
        let s = 0.5f64.sqrt();
        let u = g.constant(Tensor::new(&[1, 2, 2], vec![s, 1.0, s, 0.0]).unwrap());
        let ln = node_contrastive_loss(&mut g, u, u).unwrap();
        assert!((g.value(ln).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_combines_terms() {
        let mut g = Graph::<f64>::new();
        let lh = g.constant(Tensor::scalar(1.0));
        let ln = g.constant(Tensor::scalar(2.0));
        let total = total_loss(&mut g, lh, Some(ln), 0.1).unwrap();
        assert!((g.value(total).item() - 1.2).abs() < 1e-12);
        let total = total_loss(&mut g, lh, Some(ln), 0.0).unwrap();
        assert_eq!(g.value(total).item(), 1.0);
    }
}
