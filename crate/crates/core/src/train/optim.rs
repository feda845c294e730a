use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Real, Tensor};

/// `lr0 · decay^floor(epoch / every)`.
pub fn lr_at_epoch(lr0: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    lr0 * decay.powi((epoch / every.max(1)) as i32)
}

/// Adam with bias correction. L2 regularization is coupled: `wd · p` is
/// added to the gradient before the moment update.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Real>(params: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensors()[i].shape() {
                return Err(Error::shape("adam_step", params.tensors()[i].shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(params.names()[i].clone()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (k, (pk, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let pf = pk.to_f64().unwrap();
                let gf = gk.to_f64().unwrap() + self.weight_decay * pf;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gf;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gf * gf;
                let update = lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                *pk = T::from_f64_lossy(pf - update);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| {
            let x = x.to_f64().unwrap();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}
