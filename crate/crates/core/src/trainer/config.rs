use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{LabelMode, DEFAULT_VOCAB_SIZE, MAX_SEQ_LEN};
use crate::error::{Error, Result};
use crate::model::CheckpointHeader;
use crate::model::ModelDims;
use crate::objectives::LossWeights;
use crate::pairing::PairingStrategy;

/// Preset hyperparameter families. `Paper` keeps the published settings
/// verbatim; `Desk` trains a from-scratch encoder on one CPU core.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    #[default]
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected paper or desk)"
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub lr_model: f64,
    pub lr_disc: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub dropout_model: f64,
    pub dropout_disc: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub pairing: PairingStrategy,
    pub profile: Profile,
    /// Width of every hidden representation.
    pub dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Run the discriminator update on every n-th step.
    pub disc_every_n: u64,
    pub eval_every: u64,
    pub dev_fraction: f64,
    pub label_mode: LabelMode,
}

impl TrainConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let w = LossWeights::PAPER;
        let base = Self {
            alpha: w.alpha,
            beta: w.beta,
            lambda: w.lambda,
            gamma: w.gamma,
            lr_model: 1e-3,
            lr_disc: 1e-3,
            weight_decay: 0.01,
            clip_norm: 1.0,
            dropout_model: 0.2,
            dropout_disc: 0.5,
            batch_size: 35,
            max_steps: 2000,
            seed: 7,
            pairing: PairingStrategy::default(),
            profile,
            dim: 64,
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_len: MAX_SEQ_LEN,
            disc_every_n: 1,
            eval_every: 100,
            dev_fraction: 0.15,
            label_mode: LabelMode::Multiclass,
        };
        match profile {
            Profile::Desk => base,
            Profile::Paper => Self {
                lr_model: 3e-6,
                lr_disc: 3e-4,
                max_steps: 26_500,
                eval_every: 500,
                ..base
            },
        }
    }

    /// Parses a JSON document whose keys mirror the field names. Keys that
    /// are absent take the defaults of the document's `profile` (desk when
    /// that is absent too).
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        let serde_json::Value::Object(overrides) = doc else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let profile = match overrides.get("profile") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Config(format!("profile: {e}")))?,
            None => Profile::default(),
        };
        let mut merged = serde_json::to_value(Self::for_profile(profile))?;
        if let serde_json::Value::Object(fields) = &mut merged {
            fields.extend(overrides);
        }
        let config: Self =
            serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return fail(format!("{name} must be a finite non-negative weight, got {w}"));
            }
        }
        for (name, v) in [
            ("lr_model", self.lr_model),
            ("lr_disc", self.lr_disc),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, v) in [
            ("dropout_model", self.dropout_model),
            ("dropout_disc", self.dropout_disc),
        ] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return fail(format!("dev_fraction must lie in (0, 1), got {}", self.dev_fraction));
        }
        for (name, v) in [
            ("batch_size", self.batch_size as u64),
            ("max_steps", self.max_steps),
            ("dim", self.dim as u64),
            ("vocab_size", self.vocab_size as u64),
            ("max_len", self.max_len as u64),
            ("disc_every_n", self.disc_every_n),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.vocab_size > u32::MAX as usize {
            return fail(format!("vocab_size {} exceeds the token id range", self.vocab_size));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            gamma: self.gamma,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            dim: self.dim,
            vocab_size: self.vocab_size,
            num_classes: self.label_mode.num_classes(),
        }
    }

    pub fn checkpoint_header(&self) -> CheckpointHeader {
        CheckpointHeader {
            dims: self.dims(),
            max_len: self.max_len,
            seed: self.seed,
            label_mode: self.label_mode,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}
