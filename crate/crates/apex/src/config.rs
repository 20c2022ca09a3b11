//! Run configuration: a flat, versioned key-value TOML schema.
//!
//! Unknown keys are hard errors, as are type mismatches; both error
//! messages name the offending key. Every key has a default, so an empty
//! config (plus `config_version`) trains the built-in two-condition toy
//! task.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ApexError, Result};
use crate::losses::LossWeights;
use crate::net::{Activation, NetSpec, ShiftSpec};
use crate::oracle::{GaussianComponent, OracleDist};

pub const CONFIG_VERSION: u32 = 1;

/// Everything a training run needs. Serializes to a flat TOML table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Schema version; must equal [`CONFIG_VERSION`].
    pub config_version: u32,
    /// Master seed; every stream (init, batches, eval) derives from it.
    pub seed: u64,
    /// Data dimension `d`.
    pub data_dim: usize,
    /// Per-condition mixtures; each row is `[weight, stdev, mean...]` with
    /// `2 + data_dim` entries.
    pub dist: Vec<Vec<Vec<f64>>>,
    pub hidden: Vec<usize>,
    pub activation: String,
    pub time_freqs: usize,
    pub embed_dim: usize,
    pub learn_embeddings: bool,
    pub shift_a: f64,
    pub shift_b: f64,
    pub lambda: f64,
    pub lambda_p: f64,
    pub lambda_e: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub optimizer: String,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Reuse the real-trajectory `(z, t)` for the fake trajectory instead
    /// of fresh draws.
    pub fake_reuse_noise: bool,
    /// One-step samples per condition when evaluating after training.
    pub eval_samples: usize,
    /// Step counts for the NFE-gap table.
    pub eval_nfes: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            seed: 0,
            data_dim: 2,
            dist: vec![
                vec![vec![1.0, 0.5, 2.0, 0.0]],
                vec![vec![1.0, 0.5, -2.0, 0.0]],
            ],
            hidden: vec![128, 128],
            activation: "tanh".into(),
            time_freqs: 8,
            embed_dim: 8,
            learn_embeddings: false,
            shift_a: -0.5,
            shift_b: 1.0,
            lambda: 0.5,
            lambda_p: 1.0,
            lambda_e: 1.0,
            t_min: 0.01,
            t_max: 0.99,
            batch_size: 128,
            steps: 20_000,
            optimizer: "adam".into(),
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            fake_reuse_noise: false,
            eval_samples: 4096,
            eval_nfes: vec![1, 2, 5, 20, 50],
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ApexError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ApexError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(ApexError::Config(format!(
                "config_version {} unsupported; expected {CONFIG_VERSION}",
                self.config_version
            )));
        }
        if !(0.0 < self.t_min && self.t_min < self.t_max && self.t_max < 1.0) {
            return Err(ApexError::Config(format!(
                "t_min/t_max must satisfy 0 < t_min < t_max < 1, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        if self.batch_size == 0 {
            return Err(ApexError::Config("batch_size must be >= 1".into()));
        }
        if self.optimizer != "adam" {
            return Err(ApexError::Config(format!(
                "optimizer `{}` unsupported; expected `adam`",
                self.optimizer
            )));
        }
        Activation::parse(&self.activation)?;
        self.weights().validate().map_err(|e| ApexError::Config(e.to_string()))?;
        if self.dist.is_empty() {
            return Err(ApexError::Config("dist must list at least one condition".into()));
        }
        for (k, comps) in self.dist.iter().enumerate() {
            for row in comps {
                if row.len() != 2 + self.data_dim {
                    return Err(ApexError::Config(format!(
                        "dist condition {k}: each row needs 2 + data_dim = {} entries \
                         ([weight, stdev, mean...]), got {}",
                        2 + self.data_dim,
                        row.len()
                    )));
                }
            }
        }
        self.oracle()?;
        Ok(())
    }

    /// Builds the data distribution described by `dist`.
    pub fn oracle(&self) -> Result<OracleDist> {
        let conditions = self
            .dist
            .iter()
            .map(|comps| {
                comps
                    .iter()
                    .map(|row| GaussianComponent {
                        weight: row[0],
                        stdev: row[1],
                        mean: row[2..].to_vec(),
                    })
                    .collect()
            })
            .collect();
        OracleDist::new(conditions)
    }

    pub fn net_spec(&self) -> Result<NetSpec> {
        Ok(NetSpec {
            data_dim: self.data_dim,
            hidden: self.hidden.clone(),
            activation: Activation::parse(&self.activation)?,
            time_freqs: self.time_freqs,
            cond_count: self.dist.len(),
            embed_dim: self.embed_dim,
            learn_embeddings: self.learn_embeddings,
        })
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            lambda_p: self.lambda_p,
            lambda_e: self.lambda_e,
        }
    }

    pub fn shift(&self) -> ShiftSpec {
        ShiftSpec {
            a: self.shift_a,
            b: self.shift_b,
        }
    }
}
