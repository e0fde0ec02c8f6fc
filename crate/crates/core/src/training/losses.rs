use crate::numerics::{self, NumericsError, Tensor};

use super::config::TrainConfig;
use super::TrainError;

/// Reconstruction loss: mean squared error restricted to the masked cells.
pub fn mae_loss(
    reconstruction: &Tensor,
    target: &Tensor,
    mask: &[bool],
) -> Result<f64, NumericsError> {
    numerics::mse(reconstruction, target, Some(mask))
}

/// Distillation loss: mean over the batch of the squared Euclidean distance
/// between the student and teacher softmax distributions.
pub fn kd_loss(student_logits: &Tensor, teacher_logits: &Tensor) -> Result<f64, NumericsError> {
    if student_logits.shape() != teacher_logits.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "kd_loss",
            lhs: student_logits.shape().to_vec(),
            rhs: teacher_logits.shape().to_vec(),
        });
    }
    let (batch, _) = student_logits.as_matrix_dims("kd_loss")?;
    let p = numerics::softmax(student_logits)?;
    let q = numerics::softmax(teacher_logits)?;
    let total: f64 = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / batch as f64)
}

/// Weighted per-term breakdown of the student loss. Terms that are disabled
/// by the configuration are absent, not zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub total: f64,
    pub ce: f64,
    pub reg: Option<f64>,
    pub kd: Option<f64>,
}

impl LossComponents {
    /// The reported components must re-sum to the reported total.
    pub fn decomposition_gap(&self) -> f64 {
        let sum = self.ce + self.reg.unwrap_or(0.0) + self.kd.unwrap_or(0.0);
        (self.total - sum).abs()
    }
}

/// Composite student loss:
/// lambda_cls * CE + lambda_reg * MSE + lambda_kd * KD, with the regression
/// term gated by `mt_enabled` and the distillation term by `kd_enabled`.
pub fn student_total_loss(
    cls_logits: &Tensor,
    labels: &[u8],
    reg_pred: Option<&Tensor>,
    reg_target: Option<&Tensor>,
    teacher_logits: Option<&Tensor>,
    class_weights: &[f64; 2],
    config: &TrainConfig,
) -> Result<LossComponents, TrainError> {
    let ce =
        config.lambda_cls * numerics::weighted_cross_entropy(cls_logits, labels, class_weights)?;
    let mut total = ce;
    let reg = if config.mt_enabled {
        let (pred, target) = match (reg_pred, reg_target) {
            (Some(p), Some(t)) => (p, t),
            _ => {
                return Err(TrainError::Config(
                    "multitask enabled but regression predictions or targets absent".into(),
                ))
            }
        };
        let term = config.lambda_reg * numerics::mse(pred, target, None)?;
        total += term;
        Some(term)
    } else {
        None
    };
    let kd = if config.kd_enabled {
        let teacher = teacher_logits.ok_or(TrainError::Config(
            "kd enabled but no teacher logits supplied".into(),
        ))?;
        let term = config.lambda_kd * kd_loss(cls_logits, teacher)?;
        total += term;
        Some(term)
    } else {
        None
    };
    Ok(LossComponents { total, ce, reg, kd })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[[f64; 2]]) -> Tensor {
        Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn mae_loss_only_sees_masked_cells() {
        let target = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut recon = target.clone();
        recon.data_mut()[2] = 99.0; // unmasked cell
        let mask = [true, true, false, true];
        assert_eq!(mae_loss(&recon, &target, &mask).unwrap(), 0.0);
    }

    #[test]
    fn mae_loss_unmasked_perturbation_is_bit_exact() {
        let target = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let recon = Tensor::new(vec![4], vec![1.5, 2.0, 3.0, 4.5]).unwrap();
        let mask = [true, false, false, true];
        let base = mae_loss(&recon, &target, &mask).unwrap();
        let mut perturbed = recon.clone();
        perturbed.data_mut()[1] += 7.0;
        perturbed.data_mut()[2] -= 3.0;
        let after = mae_loss(&perturbed, &target, &mask).unwrap();
        assert_eq!(base.to_bits(), after.to_bits());
        // a masked cell does change it
        let mut touched = recon.clone();
        touched.data_mut()[0] += 1e-9;
        assert_ne!(
            mae_loss(&touched, &target, &mask).unwrap().to_bits(),
            base.to_bits()
        );
    }

    #[test]
    fn mae_loss_single_cell_squared_error() {
        let target = Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
        let recon = Tensor::new(vec![3], vec![3.0, 5.0, 5.0]).unwrap();
        let mask = [true, false, false];
        assert_eq!(mae_loss(&recon, &target, &mask).unwrap(), 4.0);
    }

    #[test]
    fn kd_loss_identical_logits_is_zero() {
        let z = logits(&[[0.3, -0.7], [1.5, 0.2]]);
        assert_eq!(kd_loss(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn kd_loss_opposite_certainty_reaches_two() {
        // softmax saturates to [1,0] vs [0,1]: distance 1 + 1 = 2
        let s = logits(&[[60.0, -60.0]]);
        let t = logits(&[[-60.0, 60.0]]);
        let v = kd_loss(&s, &t).unwrap();
        assert!((v - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn kd_loss_is_bounded_by_two() {
        for i in 0..50 {
            let a = (i as f64 * 0.7).sin() * 10.0;
            let b = (i as f64 * 1.3).cos() * 10.0;
            let s = logits(&[[a, -b], [b, a]]);
            let t = logits(&[[-b, a], [a, -a]]);
            let v = kd_loss(&s, &t).unwrap();
            assert!((0.0..=2.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn student_loss_reduces_to_ce_when_other_terms_off() {
        let cfg = TrainConfig {
            lambda_reg: 0.0,
            lambda_kd: 0.0,
            mt_enabled: false,
            kd_enabled: false,
            ..Default::default()
        };
        let z = logits(&[[0.0, 0.0], [2.0, -1.0]]);
        let labels = [1u8, 0];
        let weights = [1.0, 2.0];
        let got = student_total_loss(&z, &labels, None, None, None, &weights, &cfg).unwrap();
        let ce = crate::numerics::weighted_cross_entropy(&z, &labels, &weights).unwrap();
        assert_eq!(got.total, ce);
        assert_eq!(got.reg, None);
        assert_eq!(got.kd, None);
    }

    #[test]
    fn student_loss_all_lambdas_zero_is_zero() {
        let cfg = TrainConfig {
            lambda_cls: 0.0,
            lambda_reg: 0.0,
            lambda_kd: 0.0,
            ..Default::default()
        };
        let z = logits(&[[0.4, -0.4]]);
        let reg = Tensor::new(vec![1, 4], vec![0.1; 4]).unwrap();
        let target = Tensor::new(vec![1, 4], vec![0.7; 4]).unwrap();
        let teacher = logits(&[[1.0, -1.0]]);
        let got = student_total_loss(
            &z,
            &[1],
            Some(&reg),
            Some(&target),
            Some(&teacher),
            &[1.0, 1.0],
            &cfg,
        )
        .unwrap();
        assert_eq!(got.total, 0.0);
    }

    #[test]
    fn components_sum_to_total_within_1e12() {
        let cfg = TrainConfig::default();
        let z = logits(&[[0.3, -0.2], [0.9, 1.4], [-2.0, 0.5]]);
        let reg = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let target = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.2).sin()).collect())
            .unwrap();
        let teacher = logits(&[[0.1, 0.0], [-0.4, 1.0], [2.0, -2.0]]);
        let got = student_total_loss(
            &z,
            &[1, 0, 1],
            Some(&reg),
            Some(&target),
            Some(&teacher),
            &[0.7, 2.3],
            &cfg,
        )
        .unwrap();
        assert!(got.decomposition_gap() <= 1e-12);
        assert!(got.reg.is_some() && got.kd.is_some());
    }

    #[test]
    fn kd_enabled_without_teacher_is_a_config_error() {
        let cfg = TrainConfig {
            mt_enabled: false,
            ..Default::default()
        };
        let z = logits(&[[0.0, 0.0]]);
        let err = student_total_loss(&z, &[0], None, None, None, &[1.0, 1.0], &cfg);
        assert!(matches!(err, Err(TrainError::Config(_))));
    }
}
