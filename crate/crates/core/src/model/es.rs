//! Edge-squeeze module: spatio-temporal correlation, relational edge
//! features, squeeze attention into an adaptive adjacency matrix, and the
//! graph convolution over the relational features.

use super::config::{AttentionOp, ModelConfig, Representative};
use super::params::{glorot, Bound, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Real, Tensor, Var};

/// 1×1 convolution `F_4: [b, c, n, l] → [b, c/4, n, l]`.
pub fn reduce_channels<T: Real>(g: &mut Graph<T>, f4: Var, weight: Var, bias: Var) -> Result<Var> {
    let c = g.shape(f4)[1];
    if c % 4 != 0 {
        return Err(Error::invalid("reduce_channels", format!("{c} channels not divisible by 4")));
    }
    g.channel_map(f4, weight, Some(bias))
}

/// `[b, c, n, l] → [b, c, n]` at the representative time step.
pub fn representative<T: Real>(g: &mut Graph<T>, fc: Var, position: Representative) -> Result<Var> {
    let l = g.shape(fc)[3];
    g.select_time(fc, position.index(l))
}

/// `S[b, i, j, t] = cos(F_l[b, :, i], F_c[b, :, j, t])`.
pub fn correlate<T: Real>(g: &mut Graph<T>, fl: Var, fc: Var, eps: T) -> Result<Var> {
    g.cosine_correlation(fl, fc, eps)
}

/// `R[b, :, k, j] = Σ_t S[b, k, j, t] · F_4[b, :, j, t]`.
pub fn relational_features<T: Real>(g: &mut Graph<T>, s: Var, f4: Var) -> Result<Var> {
    g.relational_features(s, f4)
}

#[derive(Clone, Copy, Debug)]
pub enum Squeeze {
    Max,
    Avg,
    /// Channel max, then `weight · m + bias` with scalar parameters.
    MaxLearned { weight: Var, bias: Var },
}

fn squeeze_logits<T: Real>(g: &mut Graph<T>, r: Var, op: Squeeze) -> Result<Var> {
    let m = match op {
        Squeeze::Max | Squeeze::MaxLearned { .. } => g.max_over_channel(r)?,
        Squeeze::Avg => g.mean_over_channel(r)?,
    };
    let m = match op {
        Squeeze::MaxLearned { weight, bias } => g.scalar_affine(m, weight, bias)?,
        _ => m,
    };
    g.tanh(m)
}

/// `ReLU(tanh(squeeze(R)))`, or `ReLU(−tanh(squeeze(R)))` when `reversed`;
/// `[b, c, n, n] → [b, n, n]` with row `k` the target node.
pub fn squeeze_attention<T: Real>(g: &mut Graph<T>, r: Var, op: Squeeze, reversed: bool) -> Result<Var> {
    let t = squeeze_logits(g, r, op)?;
    let t = if reversed { g.neg(t)? } else { t };
    g.relu(t)
}

/// `F_g[b, :, k] = W · (R[b, :, k, :] · A[b, k, :]ᵀ) + B`.
pub fn gcn<T: Real>(g: &mut Graph<T>, r: Var, a: Var, weight: Var, bias: Var) -> Result<Var> {
    let agg = g.graph_aggregate(r, a)?;
    g.channel_map(agg, weight, Some(bias))
}

#[derive(Clone, Copy, Debug)]
pub struct EsOutput {
    pub reduced: Var,
    pub correlation: Var,
    pub relational: Var,
    pub adjacency: Var,
    pub adjacency_reversed: Var,
    pub fg: Var,
    pub fg_reversed: Var,
}

#[derive(Clone, Debug)]
pub struct EsModule {
    reduce_weight: ParamId,
    reduce_bias: ParamId,
    gcn_weight: ParamId,
    gcn_bias: ParamId,
    attention: Option<(ParamId, ParamId)>,
    attention_op: AttentionOp,
    representative: Representative,
}

impl EsModule {
    pub fn build<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut SplitMix64) -> Self {
        let c4 = cfg.channels[3];
        let cr = cfg.reduced_channels();
        let reduce_weight = store.push("es.reduce.weight", glorot(rng, &[cr, c4], c4, cr));
        let reduce_bias = store.push("es.reduce.bias", Tensor::zeros(&[cr]));
        let gcn_weight = store.push("es.gcn.weight", glorot(rng, &[c4, c4], c4, c4));
        let gcn_bias = store.push("es.gcn.bias", Tensor::zeros(&[c4]));
        let attention = (cfg.attention_op == AttentionOp::MaxLearned).then(|| {
            (
                store.push("es.attention.weight", Tensor::full(&[1], T::one())),
                store.push("es.attention.bias", Tensor::zeros(&[1])),
            )
        });
        Self {
            reduce_weight,
            reduce_bias,
            gcn_weight,
            gcn_bias,
            attention,
            attention_op: cfg.attention_op,
            representative: cfg.representative,
        }
    }

    fn squeeze(&self, p: &Bound) -> Squeeze {
        match (self.attention_op, self.attention) {
            (AttentionOp::Avg, _) => Squeeze::Avg,
            (AttentionOp::MaxLearned, Some((w, b))) => Squeeze::MaxLearned { weight: p[w], bias: p[b] },
            _ => Squeeze::Max,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, f4: Var, cos_eps: T) -> Result<EsOutput> {
        let reduced = reduce_channels(g, f4, p[self.reduce_weight], p[self.reduce_bias])?;
        let rep = representative(g, reduced, self.representative)?;
        let correlation = correlate(g, rep, reduced, cos_eps)?;
        let relational = relational_features(g, correlation, f4)?;
        // A and A_r share one squeeze/tanh node
        let logits = squeeze_logits(g, relational, self.squeeze(p))?;
        let adjacency = g.relu(logits)?;
        let negated = g.neg(logits)?;
        let adjacency_reversed = g.relu(negated)?;
        let (w, b) = (p[self.gcn_weight], p[self.gcn_bias]);
        let fg = gcn(g, relational, adjacency, w, b)?;
        let fg_reversed = gcn(g, relational, adjacency_reversed, w, b)?;
        Ok(EsOutput {
            reduced,
            correlation,
            relational,
            adjacency,
            adjacency_reversed,
            fg,
            fg_reversed,
        })
    }
}
