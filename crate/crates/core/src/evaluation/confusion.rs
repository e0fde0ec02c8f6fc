use super::{check_scores_labels, EvalError};

/// Counts at a fixed decision threshold; positive = predicted death.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Predict positive iff score >= threshold.
pub fn confusion_at_threshold(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ConfusionCounts, EvalError> {
    check_scores_labels(scores, labels)?;
    if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(EvalError::BadScore(bad));
    }
    let mut counts = ConfusionCounts {
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    Ok(counts)
}

/// Threshold metrics; a zero denominator leaves that metric `None` rather
/// than inventing a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub plr: Option<f64>,
    pub nlr: Option<f64>,
    pub acc: Option<f64>,
}

pub fn binary_metrics(counts: &ConfusionCounts) -> BinaryMetrics {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let sensitivity = ratio(counts.tp, counts.tp + counts.fn_);
    let specificity = ratio(counts.tn, counts.tn + counts.fp);
    let plr = match (sensitivity, specificity) {
        (Some(se), Some(sp)) if sp < 1.0 => Some(se / (1.0 - sp)),
        _ => None,
    };
    let nlr = match (sensitivity, specificity) {
        (Some(se), Some(sp)) if sp > 0.0 => Some((1.0 - se) / sp),
        _ => None,
    };
    BinaryMetrics {
        ppv: ratio(counts.tp, counts.tp + counts.fp),
        npv: ratio(counts.tn, counts.tn + counts.fn_),
        sensitivity,
        specificity,
        plr,
        nlr,
        acc: ratio(counts.tp + counts.tn, counts.total()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_zero_predicts_all_positive() {
        let c = confusion_at_threshold(&[0.1, 0.9, 0.5], &[1, 0, 1], 0.0).unwrap();
        assert_eq!((c.fn_, c.tn), (0, 0));
        assert_eq!((c.tp, c.fp), (2, 1));
    }

    #[test]
    fn threshold_above_one_predicts_all_negative() {
        let c = confusion_at_threshold(&[0.1, 0.9, 0.5], &[1, 0, 1], 1.5).unwrap();
        assert_eq!((c.tp, c.fp), (0, 0));
        assert_eq!((c.fn_, c.tn), (2, 1));
    }

    #[test]
    fn hand_counted_confusion() {
        let c =
            confusion_at_threshold(&[0.9, 0.2, 0.6, 0.4], &[1, 0, 1, 0], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, tn: 2, fp: 0, fn_: 0 });
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            confusion_at_threshold(&[], &[], 0.5),
            Err(EvalError::Empty)
        ));
    }

    #[test]
    fn table_formula_fixture() {
        // TP=70 FN=30 TN=80 FP=20
        let m = binary_metrics(&ConfusionCounts {
            tp: 70,
            fn_: 30,
            tn: 80,
            fp: 20,
        });
        let close = |a: Option<f64>, b: f64| (a.unwrap() - b).abs() <= 1e-9;
        assert!(close(m.sensitivity, 0.7));
        assert!(close(m.specificity, 0.8));
        assert!(close(m.ppv, 70.0 / 90.0)); // 0.7778
        assert!(close(m.npv, 80.0 / 110.0)); // 0.7273
        assert!(close(m.plr, 3.5));
        assert!(close(m.nlr, 0.375));
        assert!(close(m.acc, 0.75));
    }

    #[test]
    fn perfect_classifier_leaves_plr_undefined() {
        let m = binary_metrics(&ConfusionCounts {
            tp: 10,
            tn: 20,
            fp: 0,
            fn_: 0,
        });
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.specificity, Some(1.0));
        assert_eq!(m.ppv, Some(1.0));
        assert_eq!(m.npv, Some(1.0));
        assert_eq!(m.acc, Some(1.0));
        assert_eq!(m.nlr, Some(0.0));
        assert_eq!(m.plr, None);
    }

    #[test]
    fn no_predicted_positives_leaves_ppv_undefined() {
        let m = binary_metrics(&ConfusionCounts {
            tp: 0,
            tn: 5,
            fp: 0,
            fn_: 3,
        });
        assert_eq!(m.ppv, None);
    }
}
