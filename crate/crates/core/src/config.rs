//! `key = value` run configuration with layered overrides.
//!
//! A config file holds one `key = value` per line; `#` starts a comment.
//! Values set on the command line take precedence over the file, which
//! takes precedence over the built-in defaults of [`TrainConfig`].

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::network::{BackboneMode, ModelConfig};
use crate::trainer::TrainConfig;

/// Which embedding backbone a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Builtin,
    Precomputed,
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "builtin" => Ok(Self::Builtin),
            "precomputed" => Ok(Self::Precomputed),
            other => Err(Error::Config(format!(
                "backbone must be `builtin` or `precomputed`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Builtin => "builtin",
            Self::Precomputed => "precomputed",
        })
    }
}

pub const KEYS: [&str; 12] = [
    "margin",
    "learning_rate",
    "batch_size",
    "epochs",
    "patience",
    "input_size",
    "normalize",
    "backbone",
    "dropout",
    "pos_ratio",
    "pairs_per_epoch",
    "seed",
];

/// Partially specified run settings. `None` means "not set at this layer".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub margin: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub input_size: Option<usize>,
    pub normalize: Option<bool>,
    pub backbone: Option<BackboneKind>,
    pub dropout: Option<f64>,
    pub pos_ratio: Option<f64>,
    pub pairs_per_epoch: Option<usize>,
    pub seed: Option<u64>,
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value `{value}` for `{key}`"
        ))),
    }
}

impl RunConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "margin" => self.margin = Some(parse_value(key, v)?),
            "learning_rate" => self.learning_rate = Some(parse_value(key, v)?),
            "batch_size" => self.batch_size = Some(parse_value(key, v)?),
            "epochs" => self.epochs = Some(parse_value(key, v)?),
            "patience" => self.patience = Some(parse_value(key, v)?),
            "input_size" => self.input_size = Some(parse_value(key, v)?),
            "normalize" => self.normalize = Some(parse_bool(key, v)?),
            "backbone" => self.backbone = Some(v.parse()?),
            "dropout" => self.dropout = Some(parse_value(key, v)?),
            "pos_ratio" => self.pos_ratio = Some(parse_value(key, v)?),
            "pairs_per_epoch" => self.pairs_per_epoch = Some(parse_value(key, v)?),
            "seed" => self.seed = Some(parse_value(key, v)?),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip_kind(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_kind(&e))))
    }

    /// Layer `over` on top of `self`; keys set in `over` win.
    pub fn merged_with(&self, over: &RunConfig) -> RunConfig {
        RunConfig {
            margin: over.margin.or(self.margin),
            learning_rate: over.learning_rate.or(self.learning_rate),
            batch_size: over.batch_size.or(self.batch_size),
            epochs: over.epochs.or(self.epochs),
            patience: over.patience.or(self.patience),
            input_size: over.input_size.or(self.input_size),
            normalize: over.normalize.or(self.normalize),
            backbone: over.backbone.or(self.backbone),
            dropout: over.dropout.or(self.dropout),
            pos_ratio: over.pos_ratio.or(self.pos_ratio),
            pairs_per_epoch: over.pairs_per_epoch.or(self.pairs_per_epoch),
            seed: over.seed.or(self.seed),
        }
    }

    /// Resolve against the defaults and validate every field.
    ///
    /// `feature_dim` is the width of the precomputed feature file, if one
    /// was supplied; it is required by, and only allowed with, the
    /// precomputed backbone.
    pub fn resolve(&self, feature_dim: Option<usize>) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let kind = self.backbone.unwrap_or(match feature_dim {
            Some(_) => BackboneKind::Precomputed,
            None => BackboneKind::Builtin,
        });
        let backbone = match (kind, feature_dim) {
            (BackboneKind::Builtin, None) => {
                let size = self.input_size.unwrap_or(64);
                if size == 0 {
                    return Err(Error::Config("input_size must be positive".into()));
                }
                BackboneMode::builtin(size)
            }
            (BackboneKind::Builtin, Some(_)) => {
                return Err(Error::Config(
                    "precomputed features were given but backbone = builtin".into(),
                ))
            }
            (BackboneKind::Precomputed, None) => {
                return Err(Error::Config(
                    "backbone = precomputed needs a feature file".into(),
                ))
            }
            (BackboneKind::Precomputed, Some(dim)) => {
                if self.input_size.is_some() {
                    return Err(Error::Config(
                        "input_size only applies to the builtin backbone".into(),
                    ));
                }
                BackboneMode::Precomputed { feature_dim: dim }
            }
        };
        cfg.model = ModelConfig {
            backbone,
            normalize: self.normalize.unwrap_or(cfg.model.normalize),
            dropout: self.dropout.unwrap_or(cfg.model.dropout),
        };
        if let Some(m) = self.margin {
            cfg.loss = LossConfig::new(m)?;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.pos_ratio {
            cfg.pos_ratio = v;
        }
        if self.pairs_per_epoch.is_some() {
            cfg.pairs_per_epoch = self.pairs_per_epoch;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
