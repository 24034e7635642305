use serde::{Deserialize, Serialize};

use crate::checkpoint::Dtype;
use crate::error::{Error, Result};
use crate::exec::ExecMode;

pub const RUN_SCHEMA_VERSION: u32 = 1;

/// Optimisation hyper-parameters and schedule of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub schema_version: u32,
    pub epochs: usize,
    /// Epochs of linear ramp before the base rate.
    pub warmup_epochs: usize,
    pub base_lr: f64,
    /// Zero-based epochs at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Storage width of written checkpoints; arithmetic is always f64.
    #[serde(default)]
    pub precision: Dtype,
    #[serde(default)]
    pub exec: ExecMode,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            schema_version: RUN_SCHEMA_VERSION,
            epochs: 80,
            warmup_epochs: 5,
            base_lr: 0.01,
            decay_epochs: vec![50, 70],
            decay_factor: 0.1,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            precision: Dtype::F64,
            exec: ExecMode::Parallel,
        }
    }
}

impl TrainRunConfig {
    /// 60-epoch schedule for the desk-scale synthetic task.
    pub fn desk() -> Self {
        TrainRunConfig {
            epochs: 60,
            base_lr: 0.003,
            decay_epochs: vec![40, 52],
            batch_size: 16,
            ..TrainRunConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainRunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("run config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RUN_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "run config schema version {} is not {RUN_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        let mut prev = self.warmup_epochs;
        for &d in &self.decay_epochs {
            if d <= prev || d > self.epochs {
                return Err(Error::config(format!(
                    "decay epochs {:?} must increase strictly after warmup {} and not exceed {} epochs",
                    self.decay_epochs, self.warmup_epochs, self.epochs
                )));
            }
            prev = d;
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::config("warmup longer than the run"));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.base_lr) || !finite_nonneg(self.weight_decay) {
            return Err(Error::config("base_lr and weight_decay must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config(format!(
                "decay_factor {} outside (0, 1]",
                self.decay_factor
            )));
        }
        Ok(())
    }
}

/// Learning rate of zero-based `epoch`.
pub fn lr_at(epoch: usize, cfg: &TrainRunConfig) -> f64 {
    if epoch < cfg.warmup_epochs {
        return cfg.base_lr * (epoch + 1) as f64 / cfg.warmup_epochs as f64;
    }
    let decays = cfg.decay_epochs.iter().filter(|&&d| epoch >= d).count();
    cfg.base_lr * cfg.decay_factor.powi(decays as i32)
}
