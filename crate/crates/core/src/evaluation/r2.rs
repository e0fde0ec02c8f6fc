use super::EvalError;

/// Coefficient of determination per target dimension plus the unweighted
/// mean over the dims that are defined.
#[derive(Debug, Clone, PartialEq)]
pub struct R2Score {
    pub per_dim: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

/// 1 - SS_res/SS_tot per dimension; a zero-variance target dimension is
/// flagged undefined rather than divided through. `pred` and `target` are
/// row-major [n, dims].
pub fn r2_score(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<R2Score, EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::LengthMismatch {
            scores: pred.len(),
            labels: target.len(),
        });
    }
    if pred.len() < 2 {
        return Err(EvalError::Empty);
    }
    let dims = pred[0].len();
    if dims == 0 || pred.iter().chain(target).any(|row| row.len() != dims) {
        return Err(EvalError::Undefined("inconsistent target dimensions"));
    }
    let n = pred.len() as f64;
    let mut per_dim = Vec::with_capacity(dims);
    for d in 0..dims {
        let mean_t = target.iter().map(|row| row[d]).sum::<f64>() / n;
        let ss_tot: f64 = target.iter().map(|row| (row[d] - mean_t).powi(2)).sum();
        if ss_tot == 0.0 {
            per_dim.push(None);
            continue;
        }
        let ss_res: f64 = pred
            .iter()
            .zip(target)
            .map(|(p, t)| (p[d] - t[d]).powi(2))
            .sum();
        per_dim.push(Some(1.0 - ss_res / ss_tot));
    }
    let defined: Vec<f64> = per_dim.iter().flatten().copied().collect();
    let mean = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(R2Score { per_dim, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[[f64; 2]]) -> Vec<Vec<f64>> {
        data.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn perfect_prediction_is_one() {
        let t = rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]]);
        let r = r2_score(&t, &t).unwrap();
        assert_eq!(r.mean, Some(1.0));
    }

    #[test]
    fn mean_prediction_is_zero() {
        let target = rows(&[[1.0, 10.0], [3.0, 20.0], [5.0, 30.0]]);
        let pred = rows(&[[3.0, 20.0], [3.0, 20.0], [3.0, 20.0]]);
        let r = r2_score(&pred, &target).unwrap();
        assert!((r.mean.unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn worse_than_mean_is_negative() {
        let target = rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let pred = rows(&[[30.0, -10.0], [-20.0, 25.0], [10.0, -30.0]]);
        let r = r2_score(&pred, &target).unwrap();
        assert!(r.mean.unwrap() < -1.0);
    }

    #[test]
    fn zero_variance_dim_is_flagged_not_fabricated() {
        let target = rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]);
        let pred = rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]);
        let r = r2_score(&pred, &target).unwrap();
        assert_eq!(r.per_dim[0], Some(1.0));
        assert_eq!(r.per_dim[1], None);
        assert_eq!(r.mean, Some(1.0));
    }

    #[test]
    fn needs_two_samples() {
        let t = rows(&[[1.0, 2.0]]);
        assert!(matches!(r2_score(&t, &t), Err(EvalError::Empty)));
    }
}
