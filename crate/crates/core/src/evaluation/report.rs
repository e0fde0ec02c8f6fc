use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::auroc::auroc;
use super::bootstrap::{bootstrap_ci, bootstrap_ci_indices};
use super::confusion::{binary_metrics, confusion_at_threshold};
use super::r2::r2_score;
use super::EvalError;
use crate::FORMAT_VERSION;

/// Point estimate with a 95% bootstrap interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MetricValue {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Full evaluation result for one configuration: every thresholded metric,
/// AUROC and R^2 with 95% CIs, plus the provenance needed to compare runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub format_version: u32,
    pub config_name: String,
    pub kd_enabled: bool,
    pub mt_enabled: bool,
    pub n: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Hex fingerprint of the split the scores came from.
    pub split_hash: String,
    pub r2: Option<MetricValue>,
    pub auroc: Option<MetricValue>,
    pub ppv: Option<MetricValue>,
    pub npv: Option<MetricValue>,
    pub plr: Option<MetricValue>,
    pub nlr: Option<MetricValue>,
    pub acc: Option<MetricValue>,
    pub sensitivity: Option<MetricValue>,
    pub specificity: Option<MetricValue>,
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn csv_header() -> String {
        let mut cols = vec!["config".to_string(), "kd".into(), "mt".into()];
        for m in [
            "r2",
            "auroc",
            "ppv",
            "npv",
            "plr",
            "nlr",
            "acc",
            "sensitivity",
            "specificity",
        ] {
            cols.push(m.to_string());
            cols.push(format!("{m}_ci_low"));
            cols.push(format!("{m}_ci_high"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.config_name.clone(),
            self.kd_enabled.to_string(),
            self.mt_enabled.to_string(),
        ];
        for metric in [
            &self.r2,
            &self.auroc,
            &self.ppv,
            &self.npv,
            &self.plr,
            &self.nlr,
            &self.acc,
            &self.sensitivity,
            &self.specificity,
        ] {
            match metric {
                Some(v) => {
                    cols.push(format!("{:.6}", v.point));
                    cols.push(format!("{:.6}", v.ci_low));
                    cols.push(format!("{:.6}", v.ci_high));
                }
                None => cols.extend(["".to_string(), "".into(), "".into()]),
            }
        }
        cols.join(",")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_json()).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Basic internal consistency: every CI brackets its point estimate
    /// (within bootstrap slack) and rates stay in [0, 1].
    pub fn ci_ordering_holds(&self) -> bool {
        let ok = |m: &Option<MetricValue>| m.map_or(true, |v| v.ci_low <= v.ci_high);
        ok(&self.r2)
            && ok(&self.auroc)
            && ok(&self.ppv)
            && ok(&self.npv)
            && ok(&self.plr)
            && ok(&self.nlr)
            && ok(&self.acc)
            && ok(&self.sensitivity)
            && ok(&self.specificity)
    }
}

/// Inputs to a full report: test-split scores and labels, the frozen
/// threshold, and (when the regression branch exists) predictions/targets.
pub struct ReportInputs<'a> {
    pub config_name: String,
    pub kd_enabled: bool,
    pub mt_enabled: bool,
    pub seed: u64,
    pub split_hash: u64,
    pub threshold: f64,
    pub scores: &'a [f64],
    pub labels: &'a [u8],
    pub reg_pred: &'a [Vec<f64>],
    pub reg_target: &'a [Vec<f64>],
    pub n_resamples: usize,
    pub notes: Vec<String>,
}

/// Assemble the Table-2-shaped report: point estimates from the full test
/// split, CIs from stratified percentile bootstrap.
pub fn build_report(inputs: &ReportInputs) -> Result<MetricsReport, EvalError> {
    let ReportInputs {
        scores,
        labels,
        threshold,
        n_resamples,
        ..
    } = inputs;
    let value = |point: Option<f64>, ci: Option<(f64, f64)>| match (point, ci) {
        (Some(point), Some((ci_low, ci_high))) => Some(MetricValue {
            point,
            ci_low,
            ci_high,
        }),
        _ => None,
    };

    let auroc_point = auroc(scores, labels).ok();
    let auroc_ci = bootstrap_ci(
        |s, y| auroc(s, y).ok(),
        scores,
        labels,
        *n_resamples,
        inputs.seed,
    )
    .ok();

    let base = binary_metrics(&confusion_at_threshold(scores, labels, *threshold)?);
    let pick = |f: fn(&super::confusion::BinaryMetrics) -> Option<f64>| f(&base);
    let threshold_ci = |f: fn(&super::confusion::BinaryMetrics) -> Option<f64>, salt: u64| {
        bootstrap_ci(
            |s, y| {
                confusion_at_threshold(s, y, *threshold)
                    .ok()
                    .and_then(|c| f(&binary_metrics(&c)))
            },
            scores,
            labels,
            *n_resamples,
            inputs.seed.wrapping_add(salt),
        )
        .ok()
    };

    let (r2_point, r2_ci) = if inputs.reg_pred.is_empty() {
        (None, None)
    } else {
        let point = r2_score(inputs.reg_pred, inputs.reg_target)?.mean;
        let ci = bootstrap_ci_indices(labels, *n_resamples, inputs.seed.wrapping_add(9), |ix| {
            let p: Vec<Vec<f64>> = ix.iter().map(|&i| inputs.reg_pred[i].clone()).collect();
            let t: Vec<Vec<f64>> = ix.iter().map(|&i| inputs.reg_target[i].clone()).collect();
            r2_score(&p, &t).ok().and_then(|r| r.mean)
        })
        .ok();
        (point, ci)
    };

    Ok(MetricsReport {
        format_version: FORMAT_VERSION,
        config_name: inputs.config_name.clone(),
        kd_enabled: inputs.kd_enabled,
        mt_enabled: inputs.mt_enabled,
        n: scores.len(),
        seed: inputs.seed,
        threshold: *threshold,
        split_hash: format!("{:016x}", inputs.split_hash),
        r2: value(r2_point, r2_ci),
        auroc: value(auroc_point, auroc_ci),
        ppv: value(pick(|m| m.ppv), threshold_ci(|m| m.ppv, 1)),
        npv: value(pick(|m| m.npv), threshold_ci(|m| m.npv, 2)),
        plr: value(pick(|m| m.plr), threshold_ci(|m| m.plr, 3)),
        nlr: value(pick(|m| m.nlr), threshold_ci(|m| m.nlr, 4)),
        acc: value(pick(|m| m.acc), threshold_ci(|m| m.acc, 5)),
        sensitivity: value(pick(|m| m.sensitivity), threshold_ci(|m| m.sensitivity, 6)),
        specificity: value(pick(|m| m.specificity), threshold_ci(|m| m.specificity, 7)),
        notes: inputs.notes.clone(),
    })
}

/// Two-column CSV of ROC points (the figure data file).
pub fn roc_points_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (fpr, tpr) in points {
        out.push_str(&format!("{fpr:.6},{tpr:.6}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricsReport {
        let labels: Vec<u8> = (0..80).map(|i| u8::from(i % 4 == 0)).collect();
        let scores: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let wobble = (i as f64 * 0.37).sin() * 0.25;
                ((if y == 1 { 0.7 } else { 0.3 }) + wobble).clamp(0.0, 1.0)
            })
            .collect();
        let reg_target: Vec<Vec<f64>> = (0..80)
            .map(|i| vec![(i as f64 * 0.11).sin(), (i as f64 * 0.07).cos()])
            .collect();
        let reg_pred: Vec<Vec<f64>> = reg_target
            .iter()
            .map(|row| row.iter().map(|v| v * 0.8 + 0.05).collect())
            .collect();
        build_report(&ReportInputs {
            config_name: "baseline".into(),
            kd_enabled: true,
            mt_enabled: true,
            seed: 5,
            split_hash: 0xabcd,
            threshold: 0.5,
            scores: &scores,
            labels: &labels,
            reg_pred: &reg_pred,
            reg_target: &reg_target,
            n_resamples: 200,
            notes: vec![],
        })
        .unwrap()
    }

    #[test]
    fn report_has_every_metric_with_ordered_cis() {
        let rep = report();
        assert!(rep.ci_ordering_holds());
        for metric in [
            &rep.r2,
            &rep.auroc,
            &rep.ppv,
            &rep.npv,
            &rep.plr,
            &rep.nlr,
            &rep.acc,
            &rep.sensitivity,
            &rep.specificity,
        ] {
            assert!(metric.is_some());
        }
        // rates stay in [0, 1]
        for metric in [&rep.ppv, &rep.npv, &rep.acc, &rep.sensitivity, &rep.specificity] {
            let v = metric.unwrap();
            assert!((0.0..=1.0).contains(&v.point));
        }
    }

    #[test]
    fn csv_row_matches_header_arity() {
        let rep = report();
        let header_cols = MetricsReport::csv_header().split(',').count();
        let row_cols = rep.csv_row().split(',').count();
        assert_eq!(header_cols, row_cols);
        assert_eq!(header_cols, 3 + 9 * 3);
    }

    #[test]
    fn json_round_trip() {
        let rep = report();
        let back = MetricsReport::from_json(&rep.to_json()).unwrap();
        assert_eq!(rep, back);
    }

    #[test]
    fn report_is_deterministic_for_a_seed() {
        assert_eq!(report().to_json(), report().to_json());
    }
}
