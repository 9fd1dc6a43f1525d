//! Gaussian VAE with MLP encoder/decoder, manual backprop and Adam.

mod adam;
mod checkpoint;
mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{LpathError, Result};

pub use adam::AdamState;
pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use loss::{
    kl_standard, kl_typical, loss_and_grads, loss_with_noise, median_bandwidth, mmd_sq_biased,
    reparameterize, Gradients, LossBreakdown,
};
pub use model::{init_model, Activation, Dense, MlpVae};
pub use train::{evaluate_loss, train, EpochLog, TrainHistory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "typical")]
    Typical,
    #[serde(rename = "standard+mmd")]
    StandardMmd,
    #[serde(rename = "typical+mmd")]
    TypicalMmd,
}

impl Objective {
    pub fn uses_typical_kl(self) -> bool {
        matches!(self, Objective::Typical | Objective::TypicalMmd)
    }

    pub fn uses_mmd(self) -> bool {
        matches!(self, Objective::StandardMmd | Objective::TypicalMmd)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Standard => "standard",
            Objective::Typical => "typical",
            Objective::StandardMmd => "standard+mmd",
            Objective::TypicalMmd => "typical+mmd",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = LpathError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Objective::Standard),
            "typical" => Ok(Objective::Typical),
            "standard+mmd" => Ok(Objective::StandardMmd),
            "typical+mmd" => Ok(Objective::TypicalMmd),
            other => Err(LpathError::InvalidConfig(format!(
                "unknown objective {other:?}; expected standard, typical, standard+mmd or typical+mmd"
            ))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Training hyperparameters. Every field has a default so partial TOML files work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub objective: Objective,
    pub latent_dim: usize,
    pub kl_weight: f64,
    pub mmd_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub val_fraction: f64,
    /// Fixed decoder standard deviation.
    pub decoder_sigma: f64,
    /// Fixed MMD kernel bandwidth; `None` uses the per-batch median heuristic.
    pub mmd_bandwidth: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_sizes: vec![512, 256],
            activation: Activation::Tanh,
            objective: Objective::Standard,
            latent_dim: 100,
            kl_weight: 1.0,
            mmd_weight: 1.0,
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            val_fraction: 0.1,
            decoder_sigma: 0.1,
            mmd_bandwidth: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LpathError::InvalidConfig(msg));
        if self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes entries must be positive".into());
        }
        if self.activation == Activation::Identity {
            return bad("hidden activation must be tanh or relu".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad(format!("kl_weight must be nonnegative, got {}", self.kl_weight));
        }
        if !(self.mmd_weight >= 0.0 && self.mmd_weight.is_finite()) {
            return bad(format!("mmd_weight must be nonnegative, got {}", self.mmd_weight));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0,1), got {}", self.val_fraction));
        }
        if !(self.decoder_sigma > 0.0 && self.decoder_sigma.is_finite()) {
            return bad(format!("decoder_sigma must be positive, got {}", self.decoder_sigma));
        }
        if let Some(h) = self.mmd_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("mmd_bandwidth must be positive, got {h}"));
            }
        }
        Ok(())
    }
}
