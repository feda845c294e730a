//! Finite-difference verification of every differentiable operation and of
//! the assembled model, in `f64`.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{AttentionOp, Bound, Esgcn, LossConfig, ModelConfig};
use crate::rng::{self, SplitMix64};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;
type Generate = Box<dyn Fn(&mut SplitMix64) -> Vec<Tensor<f64>>>;

/// A named differentiable expression and a generator for its inputs.
pub struct Case {
    pub name: String,
    /// Random draws to check.
    pub points: usize,
    generate: Generate,
    build: Build,
}

impl Case {
    pub fn new(
        name: impl Into<String>,
        points: usize,
        generate: impl Fn(&mut SplitMix64) -> Vec<Tensor<f64>> + 'static,
        build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            points,
            generate: Box::new(generate),
            build: Box::new(build),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Below this norm, both gradients are compared absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub max_error: f64,
    /// Input tensor index and draw at which `max_error` occurred.
    pub worst_input: usize,
    pub worst_point: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub cases: Vec<CaseReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseReport> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute
/// difference norm when both norms are below `floor`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}

/// Scalarizes `out` with fixed weights so every output element contributes.
fn project(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn evaluate(case: &Case, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let loss = project(&mut g, out, weights)?;
    Ok(g.value(loss).item())
}

/// Largest per-input error at one draw, with the offending input index.
fn check_point(case: &Case, inputs: &[Tensor<f64>], cfg: &GradcheckConfig, rng: &mut SplitMix64) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let weights = Tensor::from_fn(g.shape(out), |_| rng.random_range(0.5..1.5));
    let loss = project(&mut g, out, &weights)?;
    let mut grads = g.backward(loss)?;

    let mut worst = (0.0, 0);
    let mut perturbed = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.take(v).unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut numeric = vec![0.0; inputs[i].len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let x0 = inputs[i].data()[e];
            perturbed[i].data_mut()[e] = x0 + cfg.step;
            let up = evaluate(case, &perturbed, &weights)?;
            perturbed[i].data_mut()[e] = x0 - cfg.step;
            let down = evaluate(case, &perturbed, &weights)?;
            perturbed[i].data_mut()[e] = x0;
            *slot = (up - down) / (2.0 * cfg.step);
        }
        let err = relative_error(analytic.data(), &numeric, cfg.abs_floor);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(worst)
}

pub fn check_case(case: &Case, cfg: &GradcheckConfig) -> Result<CaseReport> {
    let mut rng = rng::derived(cfg.seed, fxhash(&case.name));
    let mut report = CaseReport {
        name: case.name.clone(),
        max_error: 0.0,
        worst_input: 0,
        worst_point: 0,
        passed: true,
    };
    for point in 0..case.points {
        let inputs = (case.generate)(&mut rng);
        let (err, input) = check_point(case, &inputs, cfg, &mut rng)?;
        if err > report.max_error || err.is_nan() {
            report.max_error = err;
            report.worst_input = input;
            report.worst_point = point;
        }
    }
    report.passed = report.max_error <= cfg.tolerance;
    Ok(report)
}

pub fn run(cases: &[Case], cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let cases = cases.iter().map(|c| check_case(c, cfg)).collect::<Result<_>>()?;
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        cases,
    })
}

fn fxhash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn uniform(rng: &mut SplitMix64, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values with magnitude in `[0.1, 1]`, keeping clear of kinks at zero.
fn away_from_zero(rng: &mut SplitMix64, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn positive(rng: &mut SplitMix64, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.5..1.5))
}

/// Random inputs for each op, in the order its builder expects.
fn op_cases(points: usize) -> Vec<Case> {
    vec![
        Case::new(
            "conv_nodewise/stride1",
            points,
            |r| vec![uniform(r, &[2, 2, 3, 5]), uniform(r, &[3, 2, 1, 3]), uniform(r, &[3])],
            |g, v| g.conv_nodewise(v[0], v[1], v[2], 1, 1),
        ),
        Case::new(
            "conv_nodewise/stride2",
            points,
            |r| vec![uniform(r, &[2, 2, 3, 6]), uniform(r, &[3, 2, 1, 3]), uniform(r, &[3])],
            |g, v| g.conv_nodewise(v[0], v[1], v[2], 2, 1),
        ),
        Case::new(
            "channel_map",
            points,
            |r| vec![uniform(r, &[2, 3, 4, 2]), uniform(r, &[5, 3]), uniform(r, &[5])],
            |g, v| g.channel_map(v[0], v[1], Some(v[2])),
        ),
        Case::new(
            "channel_map/rank3",
            points,
            |r| vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 3])],
            |g, v| g.channel_map(v[0], v[1], None),
        ),
        Case::new(
            "layer_norm",
            points,
            |r| vec![uniform(r, &[2, 4, 3, 2]), uniform(r, &[4]), uniform(r, &[4])],
            |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
        ),
        Case::new("tanh", points, |r| vec![uniform(r, &[2, 3, 4])], |g, v| g.tanh(v[0])),
        Case::new("sigmoid", points, |r| vec![uniform(r, &[2, 3, 4])], |g, v| g.sigmoid(v[0])),
        Case::new("relu", points, |r| vec![away_from_zero(r, &[2, 3, 4])], |g, v| g.relu(v[0])),
        Case::new("neg", points, |r| vec![uniform(r, &[3, 4])], |g, v| g.neg(v[0])),
        Case::new(
            "add",
            points,
            |r| vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 3, 4])],
            |g, v| g.add(v[0], v[1]),
        ),
        Case::new(
            "sub",
            points,
            |r| vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 3, 4])],
            |g, v| g.sub(v[0], v[1]),
        ),
        Case::new(
            "mul",
            points,
            |r| vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 3, 4])],
            |g, v| g.mul(v[0], v[1]),
        ),
        Case::new("scale", points, |r| vec![uniform(r, &[2, 3])], |g, v| g.scale(v[0], -1.7)),
        Case::new(
            "select_time",
            points,
            |r| vec![uniform(r, &[2, 3, 4, 5])],
            |g, v| g.select_time(v[0], 2),
        ),
        Case::new(
            "cosine_correlation",
            points,
            |r| vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 3, 4, 2])],
            |g, v| g.cosine_correlation(v[0], v[1], 1e-8),
        ),
        Case::new(
            "relational_features",
            points,
            |r| vec![uniform(r, &[2, 3, 3, 2]), uniform(r, &[2, 4, 3, 2])],
            |g, v| g.relational_features(v[0], v[1]),
        ),
        Case::new(
            "max_over_channel",
            points,
            |r| vec![uniform(r, &[2, 4, 3, 3])],
            |g, v| g.max_over_channel(v[0]),
        ),
        Case::new(
            "mean_over_channel",
            points,
            |r| vec![uniform(r, &[2, 4, 3, 3])],
            |g, v| g.mean_over_channel(v[0]),
        ),
        Case::new(
            "sum_over_channel",
            points,
            |r| vec![uniform(r, &[2, 4, 3, 3])],
            |g, v| g.sum_over_channel(v[0]),
        ),
        Case::new(
            "scalar_affine",
            points,
            |r| vec![uniform(r, &[2, 3, 3]), uniform(r, &[1]), uniform(r, &[1])],
            |g, v| g.scalar_affine(v[0], v[1], v[2]),
        ),
        Case::new(
            "graph_aggregate",
            points,
            |r| vec![uniform(r, &[2, 3, 4, 4]), positive(r, &[2, 4, 4])],
            |g, v| g.graph_aggregate(v[0], v[1]),
        ),
        Case::new(
            "matmul",
            points,
            |r| vec![uniform(r, &[3, 4]), uniform(r, &[4, 2])],
            |g, v| g.matmul(v[0], v[1]),
        ),
        Case::new("trace", points, |r| vec![uniform(r, &[4, 4])], |g, v| g.trace(v[0])),
        Case::new("sum", points, |r| vec![uniform(r, &[2, 3, 4])], |g, v| g.sum(v[0])),
        Case::new("mean", points, |r| vec![uniform(r, &[2, 3, 4])], |g, v| g.mean(v[0])),
        Case::new(
            "huber",
            points,
            // residuals land on both sides of delta = 1 but away from it
            |r| {
                let target = uniform(r, &[2, 3, 4]);
                let offset = Tensor::from_fn(&[2, 3, 4], |_| {
                    let m = if r.random_bool(0.5) {
                        r.random_range(0.05..0.9)
                    } else {
                        r.random_range(1.1..3.0)
                    };
                    if r.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                });
                let pred = Tensor::from_fn(&[2, 3, 4], |i| target.data()[i] + offset.data()[i]);
                vec![pred, target]
            },
            |g, v| g.huber(v[0], v[1], 1.0),
        ),
        Case::new(
            "node_contrastive",
            points,
            |r| vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 3, 4])],
            |g, v| g.node_contrastive(v[0], v[1]),
        ),
    ]
}

/// Total training loss of a small model as a function of its parameters
/// and input.
pub fn model_case(name: &str, config: ModelConfig, nodes: usize, points: usize, seed: u64) -> Result<Case> {
    let model = Esgcn::<f64>::new(config.clone(), seed)?;
    let params: Vec<Tensor<f64>> = model.params().tensors().to_vec();
    let (t_in, horizon) = (config.t_in, config.horizon);
    let loss = LossConfig {
        delta: 1.0,
        lambda: config.lambda,
    };
    let batch = 2;
    let n_params = params.len();
    let generate = move |r: &mut SplitMix64| {
        let mut inputs: Vec<Tensor<f64>> = params
            .iter()
            .map(|p| Tensor::from_fn(p.shape(), |i| p.data()[i] + 0.05 * r.random_range(-1.0..1.0)))
            .collect();
        inputs.push(uniform(r, &[batch, 1, nodes, t_in]));
        inputs.push(Tensor::from_fn(&[batch, horizon, nodes], |_| r.random_range(-2.0..2.0)));
        inputs
    };
    let build = move |g: &mut Graph<f64>, v: &[Var]| {
        let bound = Bound::from_vars(v[..n_params].to_vec());
        let out = model.forward(g, &bound, v[n_params])?;
        let terms = model.objective(g, &out, v[n_params + 1], loss)?;
        Ok(terms.total)
    };
    Ok(Case::new(name, points, generate, build))
}

/// Small configuration used for whole-model checks: 4 nodes, 12 steps,
/// 8 channels.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        channels: [8; 4],
        head_hidden: 8,
        ..Default::default()
    }
}

/// Every op plus the whole model in its main variants.
pub fn registry(points: usize, model_points: usize) -> Result<Vec<Case>> {
    let mut cases = op_cases(points);
    let base = small_model_config();
    let variants = [
        ("model/max", base.clone()),
        (
            "model/avg",
            ModelConfig {
                attention_op: AttentionOp::Avg,
                ..base.clone()
            },
        ),
        (
            "model/max_learned",
            ModelConfig {
                attention_op: AttentionOp::MaxLearned,
                ..base.clone()
            },
        ),
        (
            "model/no_es",
            ModelConfig {
                es_module: false,
                ..base.clone()
            },
        ),
    ];
    for (i, (name, cfg)) in variants.into_iter().enumerate() {
        cases.push(model_case(name, cfg, 4, model_points, 100 + i as u64)?);
    }
    Ok(cases)
}

/// `x²` whose backward deliberately returns `3x`, for exercising the
/// failure path.
struct WrongSquare;

impl CustomOp<f64> for WrongSquare {
    fn name(&self) -> &str {
        "wrong_square"
    }

    fn backward(&self, inputs: &[&Tensor<f64>], _output: &Tensor<f64>, grad: &Tensor<f64>) -> Vec<Tensor<f64>> {
        let x = inputs[0];
        vec![Tensor::from_fn(x.shape(), |i| 3.0 * x.data()[i] * grad.data()[i])]
    }
}

pub fn faulty_case(points: usize) -> Case {
    Case::new(
        "fault/wrong_square",
        points,
        |r| vec![uniform(r, &[3, 4])],
        |g, v| {
            let out = g.value(v[0]).map(|x| x * x);
            g.custom(&[v[0]], out, Box::new(WrongSquare))
        },
    )
}
