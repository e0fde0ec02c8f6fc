use super::confusion::{binary_metrics, confusion_at_threshold};
use super::{check_scores_labels, class_counts, EvalError};

/// Youden's J (sensitivity + specificity - 1) maximizer over the validation
/// scores. Candidates are the midpoints between adjacent distinct scores
/// (plus the all-positive and all-negative rules), so a perfectly separated
/// validation set yields the midpoint of the separating gap. Ties break
/// toward the lower threshold.
pub fn choose_threshold(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_scores_labels(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(EvalError::Undefined("threshold choice needs both classes"));
    }
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();

    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(distinct[0]); // predict everything positive
    for w in distinct.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(distinct[distinct.len() - 1] + 1.0); // everything negative

    let mut best_threshold = candidates[0];
    let mut best_j = f64::NEG_INFINITY;
    for &t in &candidates {
        let m = binary_metrics(&confusion_at_threshold(scores, labels, t)?);
        let j = match (m.sensitivity, m.specificity) {
            (Some(se), Some(sp)) => se + sp - 1.0,
            _ => continue,
        };
        if j > best_j {
            best_j = j;
            best_threshold = t;
        }
    }
    Ok(best_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores_pick_the_gap_midpoint() {
        let scores = [0.1, 0.2, 0.3, 0.8, 0.9];
        let labels = [0, 0, 0, 1, 1];
        let t = choose_threshold(&scores, &labels).unwrap();
        assert!((t - 0.55).abs() <= 1e-12);
    }

    #[test]
    fn returned_threshold_maximizes_j_over_candidates() {
        let scores = [0.9, 0.1, 0.8, 0.3, 0.55, 0.2, 0.7, 0.45];
        let labels = [1, 0, 1, 0, 1, 0, 0, 1];
        let t = choose_threshold(&scores, &labels).unwrap();
        let j_at = |thr: f64| {
            let m = binary_metrics(&confusion_at_threshold(&scores, &labels, thr).unwrap());
            m.sensitivity.unwrap() + m.specificity.unwrap() - 1.0
        };
        let best = j_at(t);
        for i in 0..=40 {
            let probe = i as f64 / 40.0;
            assert!(best >= j_at(probe) - 1e-12, "probe {probe} beats chosen {t}");
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let scores = [0.4, 0.6, 0.5, 0.2, 0.9];
        let labels = [0, 1, 1, 0, 1];
        assert_eq!(
            choose_threshold(&scores, &labels).unwrap(),
            choose_threshold(&scores, &labels).unwrap()
        );
    }

    #[test]
    fn ties_break_toward_the_lower_threshold() {
        // two thresholds reach J = 1 here: scores {0.2-} all negative and
        // {0.8+} positive, any split between 0.4 and 0.6 works; candidate
        // midpoints make 0.5 the only interior one, but an all-positive rule
        // over [0.2, 0.8] never wins against it
        let scores = [0.2, 0.4, 0.6, 0.8];
        let labels = [0, 0, 1, 1];
        let t = choose_threshold(&scores, &labels).unwrap();
        assert!((t - 0.5).abs() <= 1e-12);
    }
}
