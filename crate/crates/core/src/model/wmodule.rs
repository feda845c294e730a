//! The W-module: four stages of gated node-wise convolution blocks.

use super::config::{ModelConfig, CONV_PAD};
use super::params::{glorot, Bound, ParamId, ParamStore};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::kernels::conv::KERNEL_T;
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl ConvLayer {
    fn build<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Self {
        let weight = store.push(
            format!("{name}.weight"),
            glorot(rng, &[c_out, c_in, 1, KERNEL_T], c_in * KERNEL_T, c_out * KERNEL_T),
        );
        let bias = store.push(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self { weight, bias, stride }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv_nodewise(x, p[self.weight], p[self.bias], self.stride, CONV_PAD)
    }
}

/// Gated node-wise convolution followed by channel layer norm.
#[derive(Clone, Copy, Debug)]
pub struct WBlock {
    pub embed: ConvLayer,
    pub gate: ConvLayer,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl WBlock {
    fn build<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Self {
        let embed = ConvLayer::build(store, rng, &format!("{name}.embed"), c_in, c_out, stride);
        let gate = ConvLayer::build(store, rng, &format!("{name}.gate"), c_in, c_out, stride);
        let gamma = store.push(format!("{name}.norm.gamma"), Tensor::full(&[c_out], T::one()));
        let beta = store.push(format!("{name}.norm.beta"), Tensor::zeros(&[c_out]));
        Self {
            embed,
            gate,
            gamma,
            beta,
        }
    }
}

/// `layer_norm(sigmoid(gate(x)) ∘ tanh(embed(x)))`
pub fn gnc_forward<T: Real>(g: &mut Graph<T>, p: &Bound, block: &WBlock, x: Var, eps: T) -> Result<Var> {
    let embed = block.embed.forward(g, p, x)?;
    let embed = g.tanh(embed)?;
    let gate = block.gate.forward(g, p, x)?;
    let gate = g.sigmoid(gate)?;
    let gated = g.mul(gate, embed)?;
    g.layer_norm(gated, p[block.gamma], p[block.beta], eps)
}

#[derive(Clone, Debug)]
pub struct WModule {
    pub stages: Vec<Vec<WBlock>>,
}

impl WModule {
    pub fn build<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut SplitMix64) -> Self {
        let mut c_in = 1;
        let stages = (0..4)
            .map(|s| {
                (0..cfg.blocks_per_stage[s])
                    .map(|b| {
                        let stride = if b == 0 { cfg.stage_strides[s] } else { 1 };
                        let block = WBlock::build(
                            store,
                            rng,
                            &format!("wmodule.stage{}.block{}", s + 1, b + 1),
                            c_in,
                            cfg.channels[s],
                            stride,
                        );
                        c_in = cfg.channels[s];
                        block
                    })
                    .collect()
            })
            .collect();
        Self { stages }
    }

    /// `x: [b, 1, n, t]` → the four stage outputs `F_1..F_4`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, eps: T) -> Result<[Var; 4]> {
        let mut h = x;
        let mut out = [x; 4];
        for (s, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                h = gnc_forward(g, p, block, h, eps)?;
            }
            out[s] = h;
        }
        Ok(out)
    }
}
