//! Multi-scale fusion and the two-layer prediction head.

use super::params::{glorot, Bound, ParamId, ParamStore};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn build<T: Real>(store: &mut ParamStore<T>, rng: &mut SplitMix64, name: &str, c_in: usize, c_out: usize) -> Self {
        let weight = store.push(format!("{name}.weight"), glorot(rng, &[c_out, c_in], c_in, c_out));
        let bias = store.push(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self { weight, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.channel_map(x, p[self.weight], Some(p[self.bias]))
    }
}

#[derive(Clone, Debug)]
pub struct Head {
    /// One map per fused W-module stage (three, or four without the graph branch).
    pub stage_maps: Vec<Linear>,
    /// Map applied to the graph features, when present.
    pub graph_map: Option<Linear>,
    pub hidden: Linear,
    pub output: Linear,
}

impl Head {
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        stage_channels: &[usize],
        graph_channels: Option<usize>,
        fused: usize,
        hidden: usize,
        horizon: usize,
    ) -> Self {
        let stage_maps = stage_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Linear::build(store, rng, &format!("head.fuse.stage{}", i + 1), c, fused))
            .collect();
        let graph_map = graph_channels.map(|c| Linear::build(store, rng, "head.fuse.graph", c, fused));
        let hidden_l = Linear::build(store, rng, "head.hidden", fused, hidden);
        let output = Linear::build(store, rng, "head.output", hidden, horizon);
        Self {
            stage_maps,
            graph_map,
            hidden: hidden_l,
            output,
        }
    }
}

/// `P = Σ_i map_i(F_i)[..., last] + map_e(F_g)`, giving `[b, c_4, n]`.
///
/// The 1×1 maps act per time step, so slicing the last step before mapping
/// is identical to mapping first and slicing after.
pub fn fuse<T: Real>(g: &mut Graph<T>, p: &Bound, head: &Head, stages: &[Var], fg: Option<Var>) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (map, &f) in head.stage_maps.iter().zip(stages) {
        let t = g.shape(f)[3];
        let last = g.select_time(f, t - 1)?;
        let term = map.forward(g, p, last)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    if let (Some(map), Some(fg)) = (&head.graph_map, fg) {
        let term = map.forward(g, p, fg)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one fused term"))
}

/// `Ŷ[:, :, k] = W_b · ReLU(W_a · P[:, :, k] + B_a) + B_b`, `[b, h, n]`.
pub fn predict<T: Real>(g: &mut Graph<T>, p: &Bound, head: &Head, fused: Var) -> Result<Var> {
    let h = head.hidden.forward(g, p, fused)?;
    let h = g.relu(h)?;
    head.output.forward(g, p, h)
}
