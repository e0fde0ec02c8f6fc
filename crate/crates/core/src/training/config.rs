use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numerics::AdamWHyperparams;

/// Loss weights, optimizer settings and stage budgets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub lambda_kd: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs_pretrain: usize,
    pub max_epochs_student: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub kd_enabled: bool,
    pub mt_enabled: bool,
    /// Start the student encoder from the MAE checkpoint.
    pub warm_start: bool,
    /// Train the teacher's heads on labeled data before freezing. Off by
    /// default: the frozen teacher keeps its self-supervised encoder and
    /// untrained heads.
    pub teacher_finetune: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_reg: 0.1,
            lambda_kd: 0.05,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            max_epochs_pretrain: 20,
            max_epochs_student: 30,
            patience: 5,
            kd_enabled: true,
            mt_enabled: true,
            warm_start: true,
            teacher_finetune: false,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("lambda_cls", self.lambda_cls),
            ("lambda_reg", self.lambda_reg),
            ("lambda_kd", self.lambda_kd),
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(TrainError::Config(format!("{name} {v} must be >= 0")));
            }
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be >= 1".into()));
        }
        if self.max_epochs_pretrain == 0 || self.max_epochs_student == 0 {
            return Err(TrainError::Config("epoch budgets must be >= 1".into()));
        }
        Ok(())
    }

    pub fn optimizer_hyperparams(&self) -> AdamWHyperparams {
        AdamWHyperparams {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }

    /// The three ablation arms: (name, kd, mt).
    pub fn ablation_grid() -> [(&'static str, bool, bool); 3] {
        [
            ("baseline", true, true),
            ("no_kd", false, true),
            ("no_mt", true, false),
        ]
    }

    pub fn with_arm(&self, kd_enabled: bool, mt_enabled: bool) -> Self {
        Self {
            kd_enabled,
            mt_enabled,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_hyperparameters() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lambda_cls, 1.0);
        assert_eq!(cfg.lambda_reg, 0.1);
        assert_eq!(cfg.lambda_kd, 0.05);
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.weight_decay, 1e-4);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.patience, 5);
        assert!(cfg.kd_enabled && cfg.mt_enabled && cfg.warm_start);
        assert!(!cfg.teacher_finetune);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn zero_learning_rate_is_permitted() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn bad_values_are_rejected() {
        for cfg in [
            TrainConfig {
                lambda_reg: -0.1,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                patience: 0,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
