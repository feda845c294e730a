//! Run configuration: one JSON document with `data`, `model`, `train` and
//! `output` sections. Unknown keys are rejected; every key has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataFormat, LoadOptions, WindowSpec, Windowing};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    /// Inferred from the file extension when absent.
    pub format: Option<DataFormat>,
    /// Treat exact zeros as missing readings.
    pub zeros_as_missing: bool,
    pub windowing: Windowing,
}

impl DataConfig {
    pub fn format_for(&self, path: &Path) -> DataFormat {
        self.format.unwrap_or_else(|| DataFormat::infer(path))
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            zeros_as_missing: self.zeros_as_missing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/esgcn"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config {
                path: if path == "." { "<root>".into() } else { path },
                msg: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            input_len: self.model.t_in,
            horizon: self.model.horizon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let err = RunConfig::from_json(r#"{"model": {"chanels": [8, 8, 8, 8]}}"#).unwrap_err();
        match err {
            Error::Config { path, msg } => {
                assert!(path.starts_with("model"), "{path}");
                assert!(msg.contains("chanels"), "{msg}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn type_errors_name_their_path() {
        let err = RunConfig::from_json(r#"{"train": {"lr0": "fast"}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "train.lr0"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let err = RunConfig::from_json(r#"{"train": {"batch_size": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "train.batch_size"));
    }
}
