use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::conv::{self, ConvGeometry};
use super::kernels::relation::{self, Dims};
use super::kernels::{linear, norm, reduce};
use super::{check_rank, check_same, Real, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// An op whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied here.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &str;

    /// One gradient per input, each shaped like that input.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>>;
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Tanh,
    Sigmoid,
    Relu,
    Neg,
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

enum Op<T: Real> {
    Leaf,
    Conv {
        x: Var,
        kernel: Var,
        bias: Var,
        geo: ConvGeometry,
    },
    ChannelMap {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        batch: usize,
        c_in: usize,
        c_out: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch: usize,
        channels: usize,
        inner: usize,
    },
    Unary {
        x: Var,
        kind: UnaryKind,
    },
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
    },
    Scale {
        x: Var,
        factor: T,
    },
    SelectTime {
        x: Var,
        index: usize,
    },
    Correlate {
        rep: Var,
        feat: Var,
        eps: T,
        dims: Dims,
    },
    Relational {
        corr: Var,
        feat: Var,
        dims: Dims,
    },
    ChannelMax {
        x: Var,
        argmax: Vec<u32>,
        batch: usize,
        channels: usize,
        inner: usize,
    },
    ChannelSum {
        x: Var,
        mean: bool,
        batch: usize,
        channels: usize,
        inner: usize,
    },
    ScalarAffine {
        x: Var,
        weight: Var,
        bias: Var,
    },
    Aggregate {
        rel: Var,
        adj: Var,
        dims: Dims,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Trace {
        x: Var,
        m: usize,
    },
    Sum {
        x: Var,
        mean: bool,
    },
    Huber {
        pred: Var,
        target: Var,
        delta: T,
    },
    Contrastive {
        fg: Var,
        fgr: Var,
        batch: usize,
        nodes: usize,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv2d_nodewise",
            Op::ChannelMap { .. } => "channel_map",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Tanh => "tanh",
                UnaryKind::Sigmoid => "sigmoid",
                UnaryKind::Relu => "relu",
                UnaryKind::Neg => "neg",
            },
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
            },
            Op::Scale { .. } => "scale",
            Op::SelectTime { .. } => "select_time",
            Op::Correlate { .. } => "cosine_correlation",
            Op::Relational { .. } => "relational_features",
            Op::ChannelMax { .. } => "max_over_channel",
            Op::ChannelSum { mean: true, .. } => "mean_over_channel",
            Op::ChannelSum { mean: false, .. } => "sum_over_channel",
            Op::ScalarAffine { .. } => "scalar_affine",
            Op::Aggregate { .. } => "graph_aggregate",
            Op::MatMul { .. } => "matmul",
            Op::Trace { .. } => "trace",
            Op::Sum { mean: false, .. } => "sum",
            Op::Sum { mean: true, .. } => "mean",
            Op::Huber { .. } => "huber",
            Op::Contrastive { .. } => "node_contrastive",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv { x, kernel, bias, .. } => vec![*x, *kernel, *bias],
            Op::ChannelMap { x, weight, bias, .. } => {
                let mut v = vec![*x, *weight];
                v.extend(bias);
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Unary { x, .. }
            | Op::Scale { x, .. }
            | Op::SelectTime { x, .. }
            | Op::ChannelMax { x, .. }
            | Op::ChannelSum { x, .. }
            | Op::Trace { x, .. }
            | Op::Sum { x, .. } => vec![*x],
            Op::Binary { a, b, .. } | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Correlate { rep, feat, .. } => vec![*rep, *feat],
            Op::Relational { corr, feat, .. } => vec![*corr, *feat],
            Op::ScalarAffine { x, weight, bias } => vec![*x, *weight, *bias],
            Op::Aggregate { rel, adj, .. } => vec![*rel, *adj],
            Op::Huber { pred, target, .. } => vec![*pred, *target],
            Op::Contrastive { fg, fgr, .. } => vec![*fg, *fgr],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A dynamic reverse-mode tape. Ops are appended in execution order, so
/// every node's inputs precede it; [`Graph::backward`] walks the nodes once
/// in reverse.
pub struct Graph<T: Real> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to the leaves of the graph it came from.
pub struct Gradients<T> {
    graph: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        assert_eq!(var.graph, self.id, "variable belongs to another graph");
        &self.nodes[var.index].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    fn check(&self, var: Var) -> Result<&Tensor<T>> {
        if var.graph != self.id || var.index >= self.nodes.len() {
            return Err(Error::Backward("variable is not recorded on this graph".into()));
        }
        Ok(&self.nodes[var.index].value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Node-wise `1×3` convolution over time. `x: [b, c_in, n, t]`,
    /// `kernel: [c_out, c_in, 1, 3]`, `bias: [c_out]`.
    pub fn conv_nodewise(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d_nodewise";
        let xs = self.check(x)?.shape().to_vec();
        let ks = self.check(kernel)?.shape().to_vec();
        let bs = self.check(bias)?.shape().to_vec();
        check_rank(OP, &xs, 4)?;
        if ks.len() != 4 || ks[2] != 1 || ks[3] != conv::KERNEL_T || ks[1] != xs[1] {
            return Err(Error::shape(OP, &xs, &ks));
        }
        check_same(OP, &bs, &[ks[0]])?;
        if !(1..=2).contains(&stride) {
            return Err(Error::invalid(OP, format!("stride must be 1 or 2, got {stride}")));
        }
        let t_out = conv::output_len(xs[3], stride, pad)
            .ok_or_else(|| Error::invalid(OP, format!("time extent {} too short for kernel with pad {pad}", xs[3])))?;
        let geo = ConvGeometry {
            batch: xs[0],
            c_in: xs[1],
            c_out: ks[0],
            nodes: xs[2],
            t_in: xs[3],
            t_out,
            stride,
            pad,
        };
        let mut out = Tensor::zeros(&[geo.batch, geo.c_out, geo.nodes, t_out]);
        conv::forward(
            &geo,
            self.value(x).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            out.data_mut(),
        );
        Ok(self.push(out, Op::Conv { x, kernel, bias, geo }))
    }

    /// Linear map over axis 1, shared across every other position.
    /// `x: [b, c_in, ...]`, `weight: [c_out, c_in]`, `bias: [c_out]`.
    pub fn channel_map(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "channel_map";
        let xs = self.check(x)?.shape().to_vec();
        let ws = self.check(weight)?.shape().to_vec();
        if xs.len() < 2 || ws.len() != 2 || ws[1] != xs[1] {
            return Err(Error::shape(OP, &xs, &ws));
        }
        if let Some(b) = bias {
            check_same(OP, self.check(b)?.shape(), &[ws[0]])?;
        }
        let (batch, c_in, c_out) = (xs[0], xs[1], ws[0]);
        let inner: usize = xs[2..].iter().product();
        let mut shape = xs.clone();
        shape[1] = c_out;
        let mut out = Tensor::zeros(&shape);
        linear::channel_map_forward(
            batch,
            c_in,
            c_out,
            inner,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            out.data_mut(),
        );
        Ok(self.push(
            out,
            Op::ChannelMap {
                x,
                weight,
                bias,
                batch,
                c_in,
                c_out,
                inner,
            },
        ))
    }

    /// Layer normalization over axis 1 with per-channel affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        const OP: &str = "layer_norm";
        let xs = self.check(x)?.shape().to_vec();
        if xs.len() < 2 {
            return Err(Error::invalid(OP, format!("need rank >= 2, got {xs:?}")));
        }
        check_same(OP, self.check(gamma)?.shape(), &[xs[1]])?;
        check_same(OP, self.check(beta)?.shape(), &[xs[1]])?;
        if eps <= T::zero() {
            return Err(Error::invalid(OP, "eps must be positive"));
        }
        let (batch, channels) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let mut out = Tensor::zeros(&xs);
        let mut xhat = vec![T::zero(); out.len()];
        let mut inv_std = vec![T::zero(); batch * inner];
        norm::forward(
            batch,
            channels,
            inner,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
            out.data_mut(),
            &mut xhat,
            &mut inv_std,
        );
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
                channels,
                inner,
            },
        ))
    }

    fn unary(&mut self, x: Var, kind: UnaryKind) -> Result<Var> {
        let out = self.check(x)?.map(|v| match kind {
            UnaryKind::Tanh => v.tanh(),
            UnaryKind::Sigmoid => T::one() / (T::one() + (-v).exp()),
            UnaryKind::Relu => v.max(T::zero()),
            UnaryKind::Neg => -v,
        });
        Ok(self.push(out, Op::Unary { x, kind }))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Neg)
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (va, vb) = (self.check(a)?, self.check(b)?);
        let op = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        check_same(op, va.shape(), vb.shape())?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
            })
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(out, Op::Binary { a, b, kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.check(x)?.map(|v| v * factor);
        Ok(self.push(out, Op::Scale { x, factor }))
    }

    /// `[b, c, n, t] -> [b, c, n]` at time `index`.
    pub fn select_time(&mut self, x: Var, index: usize) -> Result<Var> {
        const OP: &str = "select_time";
        let v = self.check(x)?;
        check_rank(OP, v.shape(), 4)?;
        let s = v.shape().to_vec();
        if index >= s[3] {
            return Err(Error::invalid(OP, format!("index {index} out of time extent {}", s[3])));
        }
        let data = v.data().iter().skip(index).step_by(s[3]).copied().collect();
        let out = Tensor::new(&[s[0], s[1], s[2]], data)?;
        Ok(self.push(out, Op::SelectTime { x, index }))
    }

    /// Cosine similarity between every representative `rep: [b, c, n]` and
    /// every spatio-temporal feature `feat: [b, c, n, l]`, giving
    /// `[b, n, n, l]`. Vectors with norm below `eps` correlate as 0.
    pub fn cosine_correlation(&mut self, rep: Var, feat: Var, eps: T) -> Result<Var> {
        const OP: &str = "cosine_correlation";
        let rs = self.check(rep)?.shape().to_vec();
        let fs = self.check(feat)?.shape().to_vec();
        check_rank(OP, &rs, 3)?;
        check_rank(OP, &fs, 4)?;
        check_same(OP, &rs, &fs[..3])?;
        let dims = Dims {
            batch: fs[0],
            channels: fs[1],
            nodes: fs[2],
            steps: fs[3],
        };
        let mut out = Tensor::zeros(&[dims.batch, dims.nodes, dims.nodes, dims.steps]);
        relation::correlate(&dims, self.value(rep).data(), self.value(feat).data(), eps, out.data_mut());
        Ok(self.push(out, Op::Correlate { rep, feat, eps, dims }))
    }

    /// `corr: [b, n, n, l]`, `feat: [b, c, n, l]` → `R: [b, c, n_target, n_source]`.
    pub fn relational_features(&mut self, corr: Var, feat: Var) -> Result<Var> {
        const OP: &str = "relational_features";
        let ss = self.check(corr)?.shape().to_vec();
        let fs = self.check(feat)?.shape().to_vec();
        check_rank(OP, &ss, 4)?;
        check_rank(OP, &fs, 4)?;
        if ss[0] != fs[0] || ss[1] != fs[2] || ss[2] != fs[2] || ss[3] != fs[3] {
            return Err(Error::shape(OP, &ss, &fs));
        }
        let dims = Dims {
            batch: fs[0],
            channels: fs[1],
            nodes: fs[2],
            steps: fs[3],
        };
        let mut out = Tensor::zeros(&[dims.batch, dims.channels, dims.nodes, dims.nodes]);
        relation::relational(&dims, self.value(corr).data(), self.value(feat).data(), out.data_mut());
        Ok(self.push(out, Op::Relational { corr, feat, dims }))
    }

    fn channel_geometry(&self, op: &'static str, x: Var) -> Result<(Vec<usize>, usize, usize, usize)> {
        let s = self.check(x)?.shape().to_vec();
        if s.len() < 2 || s[1] == 0 {
            return Err(Error::invalid(op, format!("need a nonempty channel axis, got {s:?}")));
        }
        let inner = s[2..].iter().product();
        let mut out_shape = vec![s[0]];
        out_shape.extend_from_slice(&s[2..]);
        Ok((out_shape, s[0], s[1], inner))
    }

    /// Max over axis 1; gradient flows to the lowest-index maximizer.
    pub fn max_over_channel(&mut self, x: Var) -> Result<Var> {
        let (shape, batch, channels, inner) = self.channel_geometry("max_over_channel", x)?;
        let mut out = Tensor::zeros(&shape);
        let mut argmax = vec![0u32; batch * inner];
        reduce::channel_max(batch, channels, inner, self.value(x).data(), out.data_mut(), &mut argmax);
        Ok(self.push(
            out,
            Op::ChannelMax {
                x,
                argmax,
                batch,
                channels,
                inner,
            },
        ))
    }

    fn channel_sum(&mut self, x: Var, mean: bool) -> Result<Var> {
        let (shape, batch, channels, inner) = self.channel_geometry("sum_over_channel", x)?;
        let mut out = Tensor::zeros(&shape);
        reduce::channel_mean(batch, channels, inner, self.value(x).data(), out.data_mut());
        if !mean {
            let c = T::from_usize(channels).unwrap();
            out.data_mut().iter_mut().for_each(|v| *v = *v * c);
        }
        Ok(self.push(
            out,
            Op::ChannelSum {
                x,
                mean,
                batch,
                channels,
                inner,
            },
        ))
    }

    pub fn mean_over_channel(&mut self, x: Var) -> Result<Var> {
        self.channel_sum(x, true)
    }

    pub fn sum_over_channel(&mut self, x: Var) -> Result<Var> {
        self.channel_sum(x, false)
    }

    /// `weight · x + bias` with single-element `weight` and `bias`.
    pub fn scalar_affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "scalar_affine";
        let w = self.check(weight)?;
        let b = self.check(bias)?;
        if w.len() != 1 || b.len() != 1 {
            return Err(Error::shape(OP, w.shape(), b.shape()));
        }
        let (w, b) = (w.data()[0], b.data()[0]);
        let out = self.check(x)?.map(|v| w * v + b);
        Ok(self.push(out, Op::ScalarAffine { x, weight, bias }))
    }

    /// `rel: [b, c, n, n]`, `adj: [b, n, n]` → `[b, c, n]` with
    /// `out[b, :, k] = rel[b, :, k, :] · adj[b, k, :]ᵀ`.
    pub fn graph_aggregate(&mut self, rel: Var, adj: Var) -> Result<Var> {
        const OP: &str = "graph_aggregate";
        let rs = self.check(rel)?.shape().to_vec();
        let a_s = self.check(adj)?.shape().to_vec();
        check_rank(OP, &rs, 4)?;
        if rs[2] != rs[3] || a_s != [rs[0], rs[2], rs[3]] {
            return Err(Error::shape(OP, &rs, &a_s));
        }
        let dims = Dims {
            batch: rs[0],
            channels: rs[1],
            nodes: rs[2],
            steps: 0,
        };
        let mut out = Tensor::zeros(&[dims.batch, dims.channels, dims.nodes]);
        relation::aggregate(&dims, self.value(rel).data(), self.value(adj).data(), out.data_mut());
        Ok(self.push(out, Op::Aggregate { rel, adj, dims }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "matmul";
        let as_ = self.check(a)?.shape().to_vec();
        let bs = self.check(b)?.shape().to_vec();
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(Error::shape(OP, &as_, &bs));
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, out.data_mut(), false);
        Ok(self.push(out, Op::MatMul { a, b, m, k, n }))
    }

    pub fn trace(&mut self, x: Var) -> Result<Var> {
        let s = self.check(x)?.shape().to_vec();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::invalid("trace", format!("need a square matrix, got {s:?}")));
        }
        let out = Tensor::scalar(linear::trace(s[0], self.value(x).data()));
        Ok(self.push(out, Op::Trace { x, m: s[0] }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.check(x)?.data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { x, mean: false }))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.check(x)?;
        if v.is_empty() {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let s: T = v.data().iter().copied().sum::<T>() / T::from_usize(v.len()).unwrap();
        Ok(self.push(Tensor::scalar(s), Op::Sum { x, mean: true }))
    }

    /// Mean elementwise Huber loss with threshold `delta`.
    pub fn huber(&mut self, pred: Var, target: Var, delta: T) -> Result<Var> {
        const OP: &str = "huber";
        let (p, y) = (self.check(pred)?, self.check(target)?);
        check_same(OP, p.shape(), y.shape())?;
        if delta <= T::zero() {
            return Err(Error::invalid(OP, "delta must be positive"));
        }
        if p.is_empty() {
            return Err(Error::invalid(OP, "empty tensors"));
        }
        let total: T = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| huber_elem(a - b, delta))
            .sum();
        let out = Tensor::scalar(total / T::from_usize(p.len()).unwrap());
        Ok(self.push(out, Op::Huber { pred, target, delta }))
    }

    /// `(1/(b·n)) Σ_b tr(fg[b]ᵀ · fgr[b])` for `fg, fgr: [b, c, n]`.
    pub fn node_contrastive(&mut self, fg: Var, fgr: Var) -> Result<Var> {
        const OP: &str = "node_contrastive";
        let (a, b) = (self.check(fg)?, self.check(fgr)?);
        check_same(OP, a.shape(), b.shape())?;
        check_rank(OP, a.shape(), 3)?;
        let (batch, nodes) = (a.shape()[0], a.shape()[2]);
        if batch * nodes == 0 {
            return Err(Error::invalid(OP, "empty batch or node axis"));
        }
        let dot: T = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum();
        let out = Tensor::scalar(dot / T::from_usize(batch * nodes).unwrap());
        Ok(self.push(out, Op::Contrastive { fg, fgr, batch, nodes }))
    }

    /// Records a caller-computed value with a custom backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        Ok(self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape; the returned
    /// gradients cover every leaf created with [`Graph::param`] that the
    /// loss depends on.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.check(loss)?;
        if lv.len() != 1 {
            return Err(Error::Backward(format!("loss must be scalar, got shape {:?}", lv.shape())));
        }
        if !self.nodes[loss.index].requires_grad {
            return Err(Error::Backward("loss is detached: it depends on no parameter".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (var, contribution) in self.vjp(node, &g) {
                if contribution.shape() != self.value(var).shape() {
                    return Err(Error::Backward(format!(
                        "{} returned a gradient of shape {:?} for an input of shape {:?}",
                        node.op.name(),
                        contribution.shape(),
                        self.value(var).shape()
                    )));
                }
                accumulate(&mut grads, var, contribution);
            }
        }
        Ok(Gradients { graph: self.id, grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn zeros_like(&self, v: Var) -> Option<Tensor<T>> {
        self.needs(v).then(|| Tensor::zeros(self.value(v).shape()))
    }

    /// Vector-Jacobian product of one node: gradient contributions for each
    /// input that requires a gradient.
    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let mut out = Vec::new();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, kernel, bias, geo } => {
                let (mut dx, mut dk, mut db) = (self.zeros_like(*x), self.zeros_like(*kernel), self.zeros_like(*bias));
                conv::backward(
                    geo,
                    self.value(*x).data(),
                    self.value(*kernel).data(),
                    gd,
                    dx.as_mut().map(Tensor::data_mut),
                    dk.as_mut().map(Tensor::data_mut),
                    db.as_mut().map(Tensor::data_mut),
                );
                push_some(&mut out, [(*x, dx), (*kernel, dk), (*bias, db)]);
            }
            Op::ChannelMap {
                x,
                weight,
                bias,
                batch,
                c_in,
                c_out,
                inner,
            } => {
                let mut dx = self.zeros_like(*x);
                let mut dw = self.zeros_like(*weight);
                let mut db = bias.and_then(|b| self.zeros_like(b));
                linear::channel_map_backward(
                    *batch,
                    *c_in,
                    *c_out,
                    *inner,
                    self.value(*x).data(),
                    self.value(*weight).data(),
                    gd,
                    dx.as_mut().map(Tensor::data_mut),
                    dw.as_mut().map(Tensor::data_mut),
                    db.as_mut().map(Tensor::data_mut),
                );
                push_some(&mut out, [(*x, dx), (*weight, dw)]);
                if let Some(b) = bias {
                    push_some(&mut out, [(*b, db)]);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
                channels,
                inner,
            } => {
                let (mut dx, mut dg, mut db) = (self.zeros_like(*x), self.zeros_like(*gamma), self.zeros_like(*beta));
                norm::backward(
                    *batch,
                    *channels,
                    *inner,
                    self.value(*gamma).data(),
                    xhat,
                    inv_std,
                    gd,
                    dx.as_mut().map(Tensor::data_mut),
                    dg.as_mut().map(Tensor::data_mut),
                    db.as_mut().map(Tensor::data_mut),
                );
                push_some(&mut out, [(*x, dx), (*gamma, dg), (*beta, db)]);
            }
            Op::Unary { x, kind } => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let yv = node.value.data();
                    let d = (0..gd.len())
                        .map(|i| match kind {
                            UnaryKind::Tanh => gd[i] * (T::one() - yv[i] * yv[i]),
                            UnaryKind::Sigmoid => gd[i] * yv[i] * (T::one() - yv[i]),
                            UnaryKind::Relu if xv[i] > T::zero() => gd[i],
                            UnaryKind::Relu => T::zero(),
                            UnaryKind::Neg => -gd[i],
                        })
                        .collect();
                    out.push((*x, retag(g, d)));
                }
            }
            Op::Binary { a, b, kind } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let d = match kind {
                        BinaryKind::Add | BinaryKind::Sub => gd.to_vec(),
                        BinaryKind::Mul => gd.iter().zip(bv).map(|(&g, &y)| g * y).collect(),
                    };
                    out.push((*a, retag(g, d)));
                }
                if self.needs(*b) {
                    let d = match kind {
                        BinaryKind::Add => gd.to_vec(),
                        BinaryKind::Sub => gd.iter().map(|&g| -g).collect(),
                        BinaryKind::Mul => gd.iter().zip(av).map(|(&g, &x)| g * x).collect(),
                    };
                    out.push((*b, retag(g, d)));
                }
            }
            Op::Scale { x, factor } => {
                if self.needs(*x) {
                    out.push((*x, g.map(|v| v * *factor)));
                }
            }
            Op::SelectTime { x, index } => {
                if let Some(mut dx) = self.zeros_like(*x) {
                    let t = dx.shape()[3];
                    for (i, &v) in gd.iter().enumerate() {
                        dx.data_mut()[i * t + index] = v;
                    }
                    out.push((*x, dx));
                }
            }
            Op::Correlate { rep, feat, eps, dims } => {
                let (mut dr, mut df) = (self.zeros_like(*rep), self.zeros_like(*feat));
                relation::correlate_backward(
                    dims,
                    self.value(*rep).data(),
                    self.value(*feat).data(),
                    node.value.data(),
                    *eps,
                    gd,
                    dr.as_mut().map(Tensor::data_mut),
                    df.as_mut().map(Tensor::data_mut),
                );
                push_some(&mut out, [(*rep, dr), (*feat, df)]);
            }
            Op::Relational { corr, feat, dims } => {
                let (mut ds, mut df) = (self.zeros_like(*corr), self.zeros_like(*feat));
                relation::relational_backward(
                    dims,
                    self.value(*corr).data(),
                    self.value(*feat).data(),
                    gd,
                    ds.as_mut().map(Tensor::data_mut),
                    df.as_mut().map(Tensor::data_mut),
                );
                push_some(&mut out, [(*corr, ds), (*feat, df)]);
            }
            Op::ChannelMax {
                x,
                argmax,
                batch,
                channels,
                inner,
            } => {
                if let Some(mut dx) = self.zeros_like(*x) {
                    reduce::channel_max_backward(*batch, *channels, *inner, argmax, gd, dx.data_mut());
                    out.push((*x, dx));
                }
            }
            Op::ChannelSum {
                x,
                mean,
                batch,
                channels,
                inner,
            } => {
                if let Some(mut dx) = self.zeros_like(*x) {
                    reduce::channel_mean_backward(*batch, *channels, *inner, gd, dx.data_mut());
                    if !mean {
                        let c = T::from_usize(*channels).unwrap();
                        dx.data_mut().iter_mut().for_each(|v| *v = *v * c);
                    }
                    out.push((*x, dx));
                }
            }
            Op::ScalarAffine { x, weight, bias } => {
                let xv = self.value(*x).data();
                let w = self.value(*weight).data()[0];
                if self.needs(*x) {
                    out.push((*x, g.map(|v| v * w)));
                }
                if self.needs(*weight) {
                    let s: T = gd.iter().zip(xv).map(|(&g, &x)| g * x).sum();
                    out.push((*weight, Tensor::full(self.value(*weight).shape(), s)));
                }
                if self.needs(*bias) {
                    let s: T = gd.iter().copied().sum();
                    out.push((*bias, Tensor::full(self.value(*bias).shape(), s)));
                }
            }
            Op::Aggregate { rel, adj, dims } => {
                let (mut dr, mut da) = (self.zeros_like(*rel), self.zeros_like(*adj));
                relation::aggregate_backward(
                    dims,
                    self.value(*rel).data(),
                    self.value(*adj).data(),
                    gd,
                    dr.as_mut().map(Tensor::data_mut),
                    da.as_mut().map(Tensor::data_mut),
                );
                push_some(&mut out, [(*rel, dr), (*adj, da)]);
            }
            Op::MatMul { a, b, m, k, n } => {
                if let Some(mut da) = self.zeros_like(*a) {
                    T::gemm(*m, *n, *k, gd, false, self.value(*b).data(), true, da.data_mut(), false);
                    out.push((*a, da));
                }
                if let Some(mut db) = self.zeros_like(*b) {
                    T::gemm(*k, *m, *n, self.value(*a).data(), true, gd, false, db.data_mut(), false);
                    out.push((*b, db));
                }
            }
            Op::Trace { x, m } => {
                if let Some(mut dx) = self.zeros_like(*x) {
                    for i in 0..*m {
                        dx.data_mut()[i * m + i] = gd[0];
                    }
                    out.push((*x, dx));
                }
            }
            Op::Sum { x, mean } => {
                if self.needs(*x) {
                    let shape = self.value(*x).shape();
                    let mut v = gd[0];
                    if *mean {
                        v = v / T::from_usize(self.value(*x).len()).unwrap();
                    }
                    out.push((*x, Tensor::full(shape, v)));
                }
            }
            Op::Huber { pred, target, delta } => {
                let (p, y) = (self.value(*pred).data(), self.value(*target).data());
                let scale = gd[0] / T::from_usize(p.len()).unwrap();
                let d: Vec<T> = p
                    .iter()
                    .zip(y)
                    .map(|(&a, &b)| huber_slope(a - b, *delta) * scale)
                    .collect();
                if self.needs(*target) {
                    out.push((*target, retag(self.value(*target), d.iter().map(|&v| -v).collect())));
                }
                if self.needs(*pred) {
                    out.push((*pred, retag(self.value(*pred), d)));
                }
            }
            Op::Contrastive { fg, fgr, batch, nodes } => {
                let scale = gd[0] / T::from_usize(batch * nodes).unwrap();
                if self.needs(*fg) {
                    out.push((*fg, self.value(*fgr).map(|v| v * scale)));
                }
                if self.needs(*fgr) {
                    out.push((*fgr, self.value(*fg).map(|v| v * scale)));
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let grads = op.backward(&vals, &node.value, g);
                for (v, d) in inputs.iter().zip(grads) {
                    if self.needs(*v) {
                        out.push((*v, d));
                    }
                }
            }
        }
        out
    }
}

fn retag<T: Real>(like: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(like.shape(), data).expect("gradient matches value shape")
}

fn push_some<T, const N: usize>(out: &mut Vec<(Var, Tensor<T>)>, items: [(Var, Option<Tensor<T>>); N]) {
    out.extend(items.into_iter().filter_map(|(v, t)| t.map(|t| (v, t))));
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], var: Var, contribution: Tensor<T>) {
    match &mut grads[var.index] {
        Some(existing) => existing.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

/// Elementwise Huber value for residual `r`.
pub(crate) fn huber_elem<T: Real>(r: T, delta: T) -> T {
    let a = r.abs();
    let half = T::from_f64(0.5).unwrap();
    if a < delta {
        half * r * r
    } else {
        delta * a - half * delta * delta
    }
}

fn huber_slope<T: Real>(r: T, delta: T) -> T {
    if r.abs() < delta {
        r
    } else {
        delta * r.signum()
    }
}
