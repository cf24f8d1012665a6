//! Trainer hyperparameters, their defaults, validation, and the config hash that
//! guards checkpoint resumption.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::EnvKind;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub env: EnvKind,
    /// Number of sub-policies `N`.
    pub ensemble_n: usize,
    /// Critic subset size `M` in the bootstrap target.
    pub target_m: usize,
    /// Weight of the discriminator regularizer.
    pub alpha: f64,
    /// Clip range of the discriminator probability, `(eps, 1 - eps)`.
    pub clip_eps: f64,
    pub gamma: f64,
    /// Learning rate for actors, critics, and the discriminator.
    pub lr: f64,
    pub hidden: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Polyak coefficient for the target critics.
    pub tau: f64,
    pub behavior_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    /// Actor update every this many gradient steps.
    pub actor_period: u64,
    /// Uniform-random actions for this many initial env steps.
    pub warmup_steps: u64,
    /// The regularized sub-policy is resampled every this many env steps.
    pub recurrent_interval: u64,
    pub total_steps: u64,
    pub eval_period: u64,
    /// Evaluation episodes per sub-policy.
    pub eval_episodes: usize,
    /// Checkpoint every this many env steps; 0 writes only the final one.
    pub checkpoint_period: u64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::FourGoalPointMass,
            ensemble_n: 10,
            target_m: 2,
            alpha: 0.2,
            clip_eps: 0.1,
            gamma: 0.99,
            lr: 3e-4,
            hidden: 64,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            tau: 5e-3,
            behavior_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            actor_period: 2,
            warmup_steps: 25_000,
            recurrent_interval: 50_000,
            total_steps: 1_000_000,
            eval_period: 5_000,
            eval_episodes: 10,
            checkpoint_period: 0,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_int = [
            ("ensemble_n", self.ensemble_n as u64),
            ("target_m", self.target_m as u64),
            ("hidden", self.hidden as u64),
            ("batch_size", self.batch_size as u64),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("actor_period", self.actor_period),
            ("recurrent_interval", self.recurrent_interval),
            ("total_steps", self.total_steps),
            ("eval_period", self.eval_period),
            ("eval_episodes", self.eval_episodes as u64),
        ];
        if let Some((name, _)) = positive_int.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let positive_real = [
            ("lr", self.lr),
            ("gamma", self.gamma),
            ("tau", self.tau),
        ];
        if let Some((name, v)) = positive_real.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        let non_negative = [
            ("alpha", self.alpha),
            ("behavior_noise", self.behavior_noise),
            ("target_noise", self.target_noise),
            ("noise_clip", self.noise_clip),
        ];
        if let Some((name, v)) = non_negative.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
        }
        if self.target_m > self.ensemble_n {
            return Err(Error::Config(format!(
                "target_m = {} exceeds ensemble_n = {}",
                self.target_m, self.ensemble_n
            )));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 0.5) {
            return Err(Error::Config(format!("clip_eps must lie in (0, 0.5), got {}", self.clip_eps)));
        }
        if self.gamma > 1.0 || self.tau > 1.0 {
            return Err(Error::Config("gamma and tau must not exceed 1".into()));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::Config(format!(
                "batch_size {} exceeds buffer_capacity {}",
                self.batch_size, self.buffer_capacity
            )));
        }
        Ok(())
    }

    /// Parses TOML; missing keys take their defaults, unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config fields are all serializable")
    }

    /// SHA-256 over the canonical JSON form, ignoring `total_steps` and
    /// `checkpoint_period` so a run can be resumed with a longer horizon.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.total_steps = 0;
        c.checkpoint_period = 0;
        let json = serde_json::to_vec(&c).expect("config serializes to JSON");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
