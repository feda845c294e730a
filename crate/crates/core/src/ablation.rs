//! Named sets of model variants for ablation runs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AttentionOp, ModelConfig, Representative};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationCase {
    pub case: usize,
    pub label: String,
    pub model: ModelConfig,
}

pub const PRESETS: &[&str] = &["table3", "components", "lambda", "attention", "representative"];

/// The eleven component / λ / attention / representative variants, numbered
/// 1–11. Case 1 drops the ES module and the contrastive term; case 2 keeps
/// the ES module without the contrastive term; case 3 is the default model.
pub fn table3(base: &ModelConfig) -> Vec<AblationCase> {
    let full = ModelConfig {
        es_module: true,
        attention_op: AttentionOp::Max,
        representative: Representative::Last,
        lambda: 0.1,
        ..base.clone()
    };
    let mut cases = vec![
        (
            "W-module only".to_string(),
            ModelConfig {
                es_module: false,
                lambda: 0.0,
                ..full.clone()
            },
        ),
        (
            "ES module, no contrastive loss".to_string(),
            ModelConfig {
                lambda: 0.0,
                ..full.clone()
            },
        ),
        ("max, λ=0.1, last".to_string(), full.clone()),
    ];
    for lambda in [0.3, 0.5, 0.7, 0.9] {
        cases.push((format!("max, λ={lambda}, last"), ModelConfig { lambda, ..full.clone() }));
    }
    cases.push((
        "avg, λ=0.1, last".into(),
        ModelConfig {
            attention_op: AttentionOp::Avg,
            ..full.clone()
        },
    ));
    cases.push((
        "max+learned, λ=0.1, last".into(),
        ModelConfig {
            attention_op: AttentionOp::MaxLearned,
            ..full.clone()
        },
    ));
    for rep in [Representative::Middle, Representative::First] {
        cases.push((
            format!("max, λ=0.1, {}", format!("{rep:?}").to_lowercase()),
            ModelConfig {
                representative: rep,
                ..full.clone()
            },
        ));
    }
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (label, model))| AblationCase {
            case: i + 1,
            label,
            model,
        })
        .collect()
}

/// Cases of `table3` belonging to the named preset.
pub fn preset(name: &str, base: &ModelConfig) -> Result<Vec<AblationCase>> {
    let ids: &[usize] = match name {
        "table3" => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
        "components" => &[1, 2, 3],
        "lambda" => &[3, 4, 5, 6, 7],
        "attention" => &[3, 8, 9],
        "representative" => &[3, 10, 11],
        _ => {
            return Err(Error::InvalidArgument {
                op: "ablate",
                msg: format!("unknown preset `{name}` (expected one of {})", PRESETS.join(", ")),
            })
        }
    };
    Ok(table3(base).into_iter().filter(|c| ids.contains(&c.case)).collect())
}
