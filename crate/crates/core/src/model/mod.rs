//! The ESGCN forecaster: W-module feature extractor, ES graph branch and
//! fusion head.

pub mod config;
pub mod es;
pub mod head;
pub mod loss;
pub mod params;
pub mod wmodule;

pub use config::{AttentionOp, ModelConfig, Representative};
pub use es::{EsModule, EsOutput};
pub use head::Head;
pub use loss::{LossConfig, LossTerms};
pub use params::{Bound, ParamId, ParamStore};
pub use wmodule::WModule;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Stage outputs `F_1..F_4`.
    pub stages: [Var; 4],
    pub es: Option<EsOutput>,
    pub fused: Var,
    /// `[b, horizon, n]`, normalized units.
    pub prediction: Var,
}

#[derive(Clone, Debug)]
pub struct Esgcn<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    wmodule: WModule,
    es: Option<EsModule>,
    head: Head,
}

impl<T: Real> Esgcn<T> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derived(seed, 0x5eed_0001);
        let mut params = ParamStore::new();
        let wmodule = WModule::build(&config, &mut params, &mut rng);
        let es = config.es_module.then(|| EsModule::build(&config, &mut params, &mut rng));
        let c = &config.channels;
        let fused_stages: &[usize] = if config.es_module { &c[..3] } else { &c[..] };
        let head = Head::build(
            &mut params,
            &mut rng,
            fused_stages,
            config.es_module.then_some(c[3]),
            c[3],
            config.head_hidden,
            config.horizon,
        );
        Ok(Self {
            config,
            params,
            wmodule,
            es,
            head,
        })
    }

    /// Model with the given named parameters (e.g. from a checkpoint).
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_named(named)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    pub fn cast<U: Real>(&self) -> Esgcn<U> {
        Esgcn {
            config: self.config.clone(),
            params: self.params.cast(),
            wmodule: self.wmodule.clone(),
            es: self.es.clone(),
            head: self.head.clone(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 1 || shape[3] != self.config.t_in || shape[0] == 0 || shape[2] == 0 {
            return Err(Error::invalid(
                "forward",
                format!("expected input [b, 1, n, {}], got {shape:?}", self.config.t_in),
            ));
        }
        Ok(())
    }

    /// Records the forward pass of `input: [b, 1, n, t_in]` using bound
    /// parameters `p`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, input: Var) -> Result<ForwardOutput> {
        self.check_input(g.shape(input))?;
        let cfg = &self.config;
        let stages = self.wmodule.forward(g, p, input, T::from_f64_lossy(cfg.norm_eps))?;
        let (es, fused) = match &self.es {
            Some(es) => {
                let out = es.forward(g, p, stages[3], T::from_f64_lossy(cfg.cos_eps))?;
                let fused = head::fuse(g, p, &self.head, &stages[..3], Some(out.fg))?;
                (Some(out), fused)
            }
            None => (None, head::fuse(g, p, &self.head, &stages, None)?),
        };
        let prediction = head::predict(g, p, &self.head, fused)?;
        Ok(ForwardOutput {
            stages,
            es,
            fused,
            prediction,
        })
    }

    /// Loss terms for a recorded forward pass against `target: [b, h, n]`.
    pub fn objective(&self, g: &mut Graph<T>, out: &ForwardOutput, target: Var, loss: LossConfig) -> Result<LossTerms> {
        let huber = loss::huber_loss(g, out.prediction, target, loss.delta)?;
        let contrastive = match &out.es {
            Some(es) => Some(loss::node_contrastive_loss(g, es.fg, es.fg_reversed)?),
            None => None,
        };
        let total = loss::total_loss(g, huber, contrastive, loss.lambda)?;
        Ok(LossTerms {
            total,
            huber,
            contrastive,
        })
    }

    /// Inference-only prediction, `[b, horizon, n]` in normalized units.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(input.clone());
        let out = self.forward(&mut g, &p, x)?;
        Ok(g.value(out.prediction).clone())
    }

    /// Adjacency pair `(A, A_r)`, each `[b, n, n]`, for `input`.
    pub fn adjacency(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(input.clone());
        let out = self.forward(&mut g, &p, x)?;
        let es = out
            .es
            .ok_or_else(|| Error::invalid("adjacency", "model was built without the ES module"))?;
        Ok((g.value(es.adjacency).clone(), g.value(es.adjacency_reversed).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count() {
        let m = Esgcn::<f32>::new(ModelConfig::default(), 0).unwrap();
        assert_eq!(m.parameter_count(), 176_412);
    }

    #[test]
    fn output_shapes() {
        let cfg = ModelConfig {
            channels: [8; 4],
            head_hidden: 8,
            ..Default::default()
        };
        let m = Esgcn::<f64>::new(cfg, 1).unwrap();
        let x = Tensor::from_fn(&[2, 1, 5, 12], |i| (i as f64 * 0.37).sin());
        let mut g = Graph::new();
        let p = m.params().bind(&mut g);
        let xv = g.constant(x);
        let out = m.forward(&mut g, &p, xv).unwrap();
        let lens: Vec<usize> = out.stages.iter().map(|&s| g.shape(s)[3]).collect();
        assert_eq!(lens, [12, 6, 3, 2]);
        let es = out.es.unwrap();
        assert_eq!(g.shape(es.reduced), &[2, 2, 5, 2]);
        assert_eq!(g.shape(es.correlation), &[2, 5, 5, 2]);
        assert_eq!(g.shape(es.relational), &[2, 8, 5, 5]);
        assert_eq!(g.shape(es.adjacency), &[2, 5, 5]);
        assert_eq!(g.shape(es.fg), &[2, 8, 5]);
        assert_eq!(g.shape(out.fused), &[2, 8, 5]);
        assert_eq!(g.shape(out.prediction), &[2, 12, 5]);
    }

    #[test]
    fn rejects_wrong_input_length() {
        let m = Esgcn::<f64>::new(ModelConfig::default(), 1).unwrap();
        assert!(m.predict(&Tensor::zeros(&[1, 1, 3, 11])).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Esgcn::<f32>::new(ModelConfig::default(), 9).unwrap();
        let b = Esgcn::<f32>::new(ModelConfig::default(), 9).unwrap();
        let c = Esgcn::<f32>::new(ModelConfig::default(), 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }
}
