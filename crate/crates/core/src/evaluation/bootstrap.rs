use rand::Rng;

use super::{check_scores_labels, class_counts, EvalError};
use crate::rng;

/// Redraw budget per resample before it is skipped.
const MAX_REDRAWS: usize = 100;

/// Percentile bootstrap CI over stratified patient resamples. Each resample
/// draws the positive and negative index sets separately with replacement
/// (preserving class counts, so both classes are always present). A resample
/// on which the metric is undefined is redrawn up to a capped number of
/// times, then skipped.
pub fn bootstrap_ci_indices<F>(
    labels: &[u8],
    n_resamples: usize,
    seed: u64,
    eval: F,
) -> Result<(f64, f64), EvalError>
where
    F: Fn(&[usize]) -> Option<f64>,
{
    if n_resamples < 100 {
        return Err(EvalError::TooFewResamples(n_resamples));
    }
    let (n_pos, n_neg) = class_counts(labels);
    let pos_ix: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg_ix: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let mut r = rng::substream(seed, "bootstrap");
    let mut values = Vec::with_capacity(n_resamples);
    let mut indices = Vec::with_capacity(labels.len());
    for _ in 0..n_resamples {
        let mut value = None;
        for _attempt in 0..=MAX_REDRAWS {
            indices.clear();
            for _ in 0..n_pos {
                indices.push(pos_ix[r.gen_range(0..n_pos.max(1))]);
            }
            for _ in 0..n_neg {
                indices.push(neg_ix[r.gen_range(0..n_neg.max(1))]);
            }
            value = eval(&indices);
            if value.is_some() {
                break;
            }
        }
        if let Some(v) = value {
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(EvalError::Undefined("metric undefined on every resample"));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((percentile(&values, 2.5), percentile(&values, 97.5)))
}

/// 95% CI for a score/label metric such as AUROC or a thresholded rate.
pub fn bootstrap_ci<F>(
    metric: F,
    scores: &[f64],
    labels: &[u8],
    n_resamples: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError>
where
    F: Fn(&[f64], &[u8]) -> Option<f64>,
{
    check_scores_labels(scores, labels)?;
    bootstrap_ci_indices(labels, n_resamples, seed, |indices| {
        let s: Vec<f64> = indices.iter().map(|&i| scores[i]).collect();
        let y: Vec<u8> = indices.iter().map(|&i| labels[i]).collect();
        metric(&s, &y)
    })
}

/// Linear-interpolation percentile of a sorted slice.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let position = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = position.floor() as usize;
    let hi = position.ceil() as usize;
    let frac = position - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::auroc;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_metric_gives_zero_width_ci() {
        // all scores identical: AUROC is 0.5 on every resample
        let scores = vec![0.5; 40];
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i < 10)).collect();
        let (lo, hi) = bootstrap_ci(
            |s, y| auroc(s, y).ok(),
            &scores,
            &labels,
            200,
            1,
        )
        .unwrap();
        assert_eq!((lo, hi), (0.5, 0.5));
    }

    #[test]
    fn point_estimate_sits_inside_the_ci() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..100 {
            let n = r.gen_range(40..150);
            let labels: Vec<u8> = (0..n).map(|_| u8::from(r.gen::<f64>() < 0.3)).collect();
            if labels.iter().all(|&y| y == 0) || labels.iter().all(|&y| y == 1) {
                continue;
            }
            let scores: Vec<f64> = labels
                .iter()
                .map(|&y| {
                    let base = if y == 1 { 0.6 } else { 0.4 };
                    (base + 0.4 * (r.gen::<f64>() - 0.5)).clamp(0.0, 1.0)
                })
                .collect();
            let point = auroc(&scores, &labels).unwrap();
            let (lo, hi) =
                bootstrap_ci(|s, y| auroc(s, y).ok(), &scores, &labels, 300, trial).unwrap();
            assert!(lo <= hi);
            // percentile CIs can narrowly miss the point estimate; allow slack
            assert!(
                lo - 0.05 <= point && point <= hi + 0.05,
                "trial {trial}: point {point} vs CI ({lo}, {hi})"
            );
        }
    }

    #[test]
    fn same_seed_same_ci() {
        let scores: Vec<f64> = (0..60).map(|i| i as f64 / 60.0).collect();
        let labels: Vec<u8> = (0..60).map(|i| u8::from(i % 3 == 0)).collect();
        let a = bootstrap_ci(|s, y| auroc(s, y).ok(), &scores, &labels, 250, 7).unwrap();
        let b = bootstrap_ci(|s, y| auroc(s, y).ok(), &scores, &labels, 250, 7).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(|s, y| auroc(s, y).ok(), &scores, &labels, 250, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_resamples_is_an_error() {
        assert!(matches!(
            bootstrap_ci(|_, _| Some(0.5), &[0.1, 0.9], &[0, 1], 99, 1),
            Err(EvalError::TooFewResamples(99))
        ));
    }

    #[test]
    fn ci_width_shrinks_with_sample_size() {
        // median width over 20 seeds at n=2000 must undercut n=200
        let width_at = |n: usize, seed: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<u8> = (0..n).map(|_| u8::from(r.gen::<f64>() < 0.25)).collect();
            let scores: Vec<f64> = labels
                .iter()
                .map(|&y| {
                    let base = if y == 1 { 0.62 } else { 0.38 };
                    (base + 0.5 * (r.gen::<f64>() - 0.5)).clamp(0.0, 1.0)
                })
                .collect();
            let (lo, hi) =
                bootstrap_ci(|s, y| auroc(s, y).ok(), &scores, &labels, 200, seed).unwrap();
            hi - lo
        };
        let mut small: Vec<f64> = (0..20).map(|s| width_at(200, s)).collect();
        let mut large: Vec<f64> = (0..20).map(|s| width_at(2000, 100 + s)).collect();
        small.sort_by(|a, b| a.partial_cmp(b).unwrap());
        large.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            large[10] < small[10],
            "median width n=2000 {} !< n=200 {}",
            large[10],
            small[10]
        );
    }
}
