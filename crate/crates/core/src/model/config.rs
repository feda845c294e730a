use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::conv;

/// Channel-axis squeeze applied to relational features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionOp {
    #[default]
    Max,
    Avg,
    /// Channel max followed by a learnable scalar affine map.
    MaxLearned,
}

/// Which time step of the reduced features stands in for each node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representative {
    #[default]
    Last,
    Middle,
    First,
}

impl Representative {
    pub fn index(self, len: usize) -> usize {
        match self {
            Representative::Last => len.saturating_sub(1),
            Representative::Middle => len / 2,
            Representative::First => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output channels of the four W-module stages.
    pub channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    /// Stride of the first block of each stage; later blocks use stride 1.
    pub stage_strides: [usize; 4],
    pub head_hidden: usize,
    pub horizon: usize,
    pub t_in: usize,
    pub attention_op: AttentionOp,
    pub representative: Representative,
    /// Weight of the node contrastive term.
    pub lambda: f64,
    /// When false the graph branch is dropped and the head fuses a mapped
    /// last slice of the fourth stage instead.
    pub es_module: bool,
    pub norm_eps: f64,
    pub cos_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: [64; 4],
            blocks_per_stage: [1, 2, 2, 2],
            stage_strides: [1, 2, 2, 2],
            head_hidden: 64,
            horizon: 12,
            t_in: 12,
            attention_op: AttentionOp::Max,
            representative: Representative::Last,
            lambda: 0.1,
            es_module: true,
            norm_eps: 1e-5,
            cos_eps: 1e-8,
        }
    }
}

pub const CONV_PAD: usize = 1;

/// `v > 0`, false for NaN.
pub(crate) fn positive(v: f64) -> bool {
    v > 0.0
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                path: format!("model.{key}"),
                msg: msg.into(),
            })
        };
        if self.channels.contains(&0) {
            return bad("channels", "all stage channels must be positive");
        }
        if self.es_module && self.channels[3] % 4 != 0 {
            return bad("channels", "fourth-stage channels must be divisible by 4");
        }
        if self.blocks_per_stage.contains(&0) {
            return bad("blocks_per_stage", "every stage needs at least one block");
        }
        if self.stage_strides.iter().any(|s| !(1..=2).contains(s)) {
            return bad("stage_strides", "strides must be 1 or 2");
        }
        if self.head_hidden == 0 {
            return bad("head_hidden", "must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon", "must be positive");
        }
        if self.t_in == 0 {
            return bad("t_in", "must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be a finite value >= 0");
        }
        if !positive(self.norm_eps) {
            return bad("norm_eps", "must be positive");
        }
        if !positive(self.cos_eps) {
            return bad("cos_eps", "must be positive");
        }
        self.stage_lengths()?;
        Ok(())
    }

    /// Time extent of each stage output for an input of `t_in` steps.
    pub fn stage_lengths(&self) -> Result<[usize; 4]> {
        let mut t = self.t_in;
        let mut out = [0; 4];
        for (stage, len) in out.iter_mut().enumerate() {
            for block in 0..self.blocks_per_stage[stage] {
                let stride = if block == 0 { self.stage_strides[stage] } else { 1 };
                t = conv::output_len(t, stride, CONV_PAD).filter(|&t| t > 0).ok_or_else(|| Error::Config {
                    path: "model.t_in".into(),
                    msg: format!("time length collapses to 0 in stage {}", stage + 1),
                })?;
            }
            *len = t;
        }
        Ok(out)
    }

    /// Receptive field (in input steps) of each stage output, before clipping
    /// to the input length.
    pub fn receptive_fields(&self) -> [usize; 4] {
        let (mut field, mut jump) = (1, 1);
        let mut out = [0; 4];
        for (stage, rf) in out.iter_mut().enumerate() {
            for block in 0..self.blocks_per_stage[stage] {
                field += (conv::KERNEL_T - 1) * jump;
                if block == 0 {
                    jump *= self.stage_strides[stage];
                }
            }
            *rf = field;
        }
        out
    }

    pub fn reduced_channels(&self) -> usize {
        self.channels[3] / 4
    }
}
