use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::schema::{compute_total_vis, PatientRecord, HOURS, N_AGENTS, VIS_FEATURES};
use super::split::SplitIndices;
use super::DataError;
use crate::FORMAT_VERSION;

pub const N_SCORES: usize = 4;
pub const SCORE_NAMES: [&str; N_SCORES] = ["sofa_score_24h", "sapsii", "lods", "oasis"];

/// Static layout: age (1) + gender (2) + marital (5) + insurance (5)
/// + race (34) = 47, plus the 4 severity scores = 51.
pub const STATIC_SCOREFREE_DIMS: usize = 47;
pub const STATIC_FULL_DIMS: usize = 51;

/// Imputation marker written into null categorical fields.
const UNKNOWN_VALUE: &str = "Unknown";

/// Ordered category lists per categorical field. A field whose list contains
/// an "unknown" spelling absorbs unseen or imputed values there; fields
/// without one (gender) fall back to the train-split mode.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncodingManifest {
    pub gender: Vec<String>,
    pub marital_status: Vec<String>,
    pub insurance: Vec<String>,
    pub race: Vec<String>,
}

impl Default for EncodingManifest {
    fn default() -> Self {
        let to_vec = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            gender: to_vec(&["F", "M"]),
            marital_status: to_vec(&["MARRIED", "SINGLE", "DIVORCED", "WIDOWED", "UNKNOWN"]),
            insurance: to_vec(&["Medicare", "Medicaid", "Private", "Other", "Unknown"]),
            race: to_vec(&[
                "AMERICAN INDIAN/ALASKA NATIVE",
                "ASIAN",
                "ASIAN - ASIAN INDIAN",
                "ASIAN - CHINESE",
                "ASIAN - KOREAN",
                "ASIAN - SOUTH EAST ASIAN",
                "BLACK/AFRICAN",
                "BLACK/AFRICAN AMERICAN",
                "BLACK/CAPE VERDEAN",
                "BLACK/CARIBBEAN ISLAND",
                "HISPANIC OR LATINO",
                "HISPANIC/LATINO - CENTRAL AMERICAN",
                "HISPANIC/LATINO - COLUMBIAN",
                "HISPANIC/LATINO - CUBAN",
                "HISPANIC/LATINO - DOMINICAN",
                "HISPANIC/LATINO - GUATEMALAN",
                "HISPANIC/LATINO - HONDURAN",
                "HISPANIC/LATINO - MEXICAN",
                "HISPANIC/LATINO - PUERTO RICAN",
                "HISPANIC/LATINO - SALVADORAN",
                "MULTIPLE RACE/ETHNICITY",
                "NATIVE HAWAIIAN OR OTHER PACIFIC ISLANDER",
                "OTHER",
                "PATIENT DECLINED TO ANSWER",
                "PORTUGUESE",
                "SOUTH AMERICAN",
                "UNABLE TO OBTAIN",
                "WHITE",
                "WHITE - BRAZILIAN",
                "WHITE - EASTERN EUROPEAN",
                "WHITE - OTHER EUROPEAN",
                "WHITE - RUSSIAN",
                "DECLINED CONSENT",
                "Unknown",
            ]),
        }
    }
}

impl EncodingManifest {
    pub fn fields(&self) -> [(&'static str, &Vec<String>); 4] {
        [
            ("gender", &self.gender),
            ("marital_status", &self.marital_status),
            ("insurance", &self.insurance),
            ("race", &self.race),
        ]
    }

    /// Names of all 51 static dims in vector order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = vec!["admission_age".to_string()];
        for (field, cats) in self.fields() {
            for c in cats {
                names.push(format!("{field}_{c}"));
            }
        }
        for s in SCORE_NAMES {
            names.push(s.to_string());
        }
        names
    }

    /// Index of the category absorbing unknown values, if the field has one.
    pub fn unknown_slot(categories: &[String]) -> Option<usize> {
        categories
            .iter()
            .position(|c| c.eq_ignore_ascii_case("unknown"))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let total: usize = self.fields().iter().map(|(_, c)| c.len()).sum();
        if 1 + total != STATIC_SCOREFREE_DIMS {
            return Err(DataError::Generator(format!(
                "manifest encodes {} static dims, expected {STATIC_SCOREFREE_DIMS}",
                1 + total
            )));
        }
        Ok(())
    }
}

/// Per-categorical train statistics: the mode, and whether the manifest has
/// an unknown slot for the field.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CategoricalStats {
    pub mode: String,
    pub has_unknown_slot: bool,
}

/// Normalization and imputation parameters, fit exclusively on the train
/// split and applied unchanged to validation and test.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreprocessStats {
    pub format_version: u32,
    /// Mean of log1p(dose) per VIS column (6 agents + total).
    pub vis_log1p_mean: Vec<f64>,
    /// Std of log1p(dose) per VIS column; constant columns recorded below
    /// carry 1.0 here.
    pub vis_log1p_std: Vec<f64>,
    /// Columns whose train std was zero and was replaced by 1.
    pub degenerate_vis_columns: Vec<usize>,
    pub age_median: f64,
    pub age_mean: f64,
    pub age_std: f64,
    pub score_median: Vec<f64>,
    pub score_mean: Vec<f64>,
    pub score_std: Vec<f64>,
    /// Static dims (by name) whose train std was zero and was replaced by 1.
    pub degenerate_static_dims: Vec<String>,
    pub categorical: BTreeMap<String, CategoricalStats>,
}

fn median(sorted: &mut Vec<f64>) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fit imputation medians/modes and normalization moments on the train
/// records only. Raw records may still contain nulls.
pub fn fit_preprocess_stats(
    train: &[&PatientRecord],
    manifest: &EncodingManifest,
) -> Result<PreprocessStats, DataError> {
    manifest.validate()?;
    if train.is_empty() {
        return Err(DataError::CannotFit {
            what: "preprocess statistics".into(),
        });
    }

    // Imputation medians come first so normalization moments can be taken
    // over the imputed values, matching what apply-time sees.
    let mut ages: Vec<f64> = train.iter().filter_map(|r| r.admission_age).collect();
    let age_median = median(&mut ages).ok_or(DataError::CannotFit {
        what: "admission_age median".into(),
    })?;
    let mut score_median = Vec::with_capacity(N_SCORES);
    for (idx, name) in SCORE_NAMES.iter().enumerate() {
        let mut vals: Vec<f64> = train.iter().filter_map(|r| r.score(idx)).collect();
        score_median.push(median(&mut vals).ok_or(DataError::CannotFit {
            what: format!("{name} median"),
        })?);
    }

    let mut categorical = BTreeMap::new();
    for (field, cats) in manifest.fields() {
        let has_unknown_slot = EncodingManifest::unknown_slot(cats).is_some();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for rec in train {
            let value = match field {
                "gender" => rec.gender.as_deref(),
                "marital_status" => rec.marital_status.as_deref(),
                "insurance" => rec.insurance.as_deref(),
                "race" => rec.race.as_deref(),
                _ => unreachable!(),
            };
            if let Some(v) = value {
                *counts.entry(v).or_insert(0) += 1;
            }
        }
        // ties break toward the lexicographically first category
        let mode = counts
            .iter()
            .max_by_key(|(_, &c)| c)
            .map(|(v, _)| v.to_string());
        let mode = match mode {
            Some(m) => m,
            None if has_unknown_slot => UNKNOWN_VALUE.to_string(),
            None => {
                return Err(DataError::CannotFit {
                    what: format!("{field} mode"),
                })
            }
        };
        categorical.insert(
            field.to_string(),
            CategoricalStats {
                mode,
                has_unknown_slot,
            },
        );
    }

    // Normalization moments over imputed train values.
    let mut vis_cols: Vec<Vec<f64>> = vec![Vec::new(); VIS_FEATURES];
    for rec in train {
        for hour in 0..HOURS {
            let mut doses = [0.0; N_AGENTS];
            for a in 0..N_AGENTS {
                let dose = rec.agent(a)[hour].unwrap_or(0.0);
                if dose < 0.0 {
                    return Err(DataError::Domain(dose));
                }
                doses[a] = dose;
                vis_cols[a].push(dose.ln_1p());
            }
            vis_cols[N_AGENTS].push(compute_total_vis(&doses)?.ln_1p());
        }
    }
    let mut vis_log1p_mean = Vec::with_capacity(VIS_FEATURES);
    let mut vis_log1p_std = Vec::with_capacity(VIS_FEATURES);
    let mut degenerate_vis_columns = Vec::new();
    for (col, values) in vis_cols.iter().enumerate() {
        let (mean, std) = mean_std(values);
        vis_log1p_mean.push(mean);
        if std > 0.0 {
            vis_log1p_std.push(std);
        } else {
            vis_log1p_std.push(1.0);
            degenerate_vis_columns.push(col);
        }
    }

    let mut degenerate_static_dims = Vec::new();
    let imputed_ages: Vec<f64> = train
        .iter()
        .map(|r| r.admission_age.unwrap_or(age_median))
        .collect();
    let (age_mean, mut age_std) = mean_std(&imputed_ages);
    if age_std <= 0.0 {
        age_std = 1.0;
        degenerate_static_dims.push("admission_age".to_string());
    }
    let mut score_mean = Vec::with_capacity(N_SCORES);
    let mut score_std = Vec::with_capacity(N_SCORES);
    for (idx, name) in SCORE_NAMES.iter().enumerate() {
        let vals: Vec<f64> = train
            .iter()
            .map(|r| r.score(idx).unwrap_or(score_median[idx]))
            .collect();
        let (mean, std) = mean_std(&vals);
        score_mean.push(mean);
        if std > 0.0 {
            score_std.push(std);
        } else {
            score_std.push(1.0);
            degenerate_static_dims.push(name.to_string());
        }
    }

    Ok(PreprocessStats {
        format_version: FORMAT_VERSION,
        vis_log1p_mean,
        vis_log1p_std,
        degenerate_vis_columns,
        age_median,
        age_mean,
        age_std,
        score_median,
        score_mean,
        score_std,
        degenerate_static_dims,
        categorical,
    })
}

/// Fill nulls: doses become 0 (no drug use), severity scores and age take the
/// train-split median, categoricals take the "Unknown" category. Idempotent.
pub fn impute(records: &[PatientRecord], stats: &PreprocessStats) -> Vec<PatientRecord> {
    let mut out = records.to_vec();
    for rec in &mut out {
        for a in 0..N_AGENTS {
            for cell in rec.agent_mut(a).iter_mut() {
                if cell.is_none() {
                    *cell = Some(0.0);
                }
            }
        }
        if rec.admission_age.is_none() {
            rec.admission_age = Some(stats.age_median);
        }
        for s in 0..N_SCORES {
            let slot = rec.score_mut(s);
            if slot.is_none() {
                *slot = Some(stats.score_median[s]);
            }
        }
        for field in [
            &mut rec.gender,
            &mut rec.marital_status,
            &mut rec.insurance,
            &mut rec.race,
        ] {
            if field.is_none() {
                *field = Some(UNKNOWN_VALUE.to_string());
            }
        }
    }
    out
}

/// Raw (pre-normalization) 48x7 dose matrix: 6 agent columns plus the
/// computed total-score column.
#[derive(Debug, Clone, PartialEq)]
pub struct VisSeries {
    values: Vec<f64>,
}

impl VisSeries {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, hour: usize, feature: usize) -> f64 {
        self.values[hour * VIS_FEATURES + feature]
    }

    /// Max deviation of the stored total column from the weighted agent sum.
    pub fn total_consistency_gap(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for hour in 0..HOURS {
            let mut doses = [0.0; N_AGENTS];
            doses.copy_from_slice(&self.values[hour * VIS_FEATURES..hour * VIS_FEATURES + N_AGENTS]);
            let expected = compute_total_vis(&doses).unwrap_or(f64::NAN);
            worst = worst.max((self.at(hour, N_AGENTS) - expected).abs());
        }
        worst
    }
}

/// Build the 48x7 matrix from an imputed record; errors on remaining nulls.
pub fn build_vis_series(rec: &PatientRecord) -> Result<VisSeries, DataError> {
    let mut values = vec![0.0; HOURS * VIS_FEATURES];
    for hour in 0..HOURS {
        let mut doses = [0.0; N_AGENTS];
        for a in 0..N_AGENTS {
            doses[a] = rec.agent(a)[hour].ok_or_else(|| DataError::Validation {
                patient_id: rec.patient_id.clone(),
                message: format!("null dose in {} at hour {hour} after imputation",
                    super::schema::AGENTS[a]),
            })?;
        }
        let total = compute_total_vis(&doses)?;
        for a in 0..N_AGENTS {
            values[hour * VIS_FEATURES + a] = doses[a];
        }
        values[hour * VIS_FEATURES + N_AGENTS] = total;
    }
    Ok(VisSeries { values })
}

/// Normalize one series cell-wise: (log1p(x) - mean) / std with train moments.
pub fn apply_normalizer(series: &VisSeries, stats: &PreprocessStats) -> Result<Vec<f64>, DataError> {
    let mut out = Vec::with_capacity(series.values.len());
    for (i, &x) in series.values.iter().enumerate() {
        if x < 0.0 {
            return Err(DataError::Domain(x));
        }
        let col = i % VIS_FEATURES;
        out.push((x.ln_1p() - stats.vis_log1p_mean[col]) / stats.vis_log1p_std[col]);
    }
    Ok(out)
}

/// Encoded static features: the full 51-dim vector (with z-scored severity
/// scores) and the 47-dim score-free variant.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticVector {
    pub full: Vec<f64>,
    pub score_free: Vec<f64>,
}

fn one_hot_into(
    out: &mut Vec<f64>,
    field: &str,
    value: &str,
    categories: &[String],
    stats: &PreprocessStats,
) {
    let mut ix = categories.iter().position(|c| c == value);
    if ix.is_none() {
        ix = EncodingManifest::unknown_slot(categories);
        if ix.is_none() {
            // no unknown slot: fall back to the train mode
            let mode = &stats.categorical[field].mode;
            ix = categories.iter().position(|c| c == mode);
        }
        log::warn!("{field} value {value:?} not in manifest; mapped to fallback category");
    }
    let ix = ix.unwrap_or(0);
    let base = out.len();
    out.resize(base + categories.len(), 0.0);
    out[base + ix] = 1.0;
}

/// One-hot encode an imputed record against the manifest, z-scoring age and
/// the four severity scores with train statistics.
pub fn encode_static(
    rec: &PatientRecord,
    manifest: &EncodingManifest,
    stats: &PreprocessStats,
) -> Result<StaticVector, DataError> {
    let missing = |field: &str| DataError::Validation {
        patient_id: rec.patient_id.clone(),
        message: format!("{field} is null after imputation"),
    };
    let age = rec.admission_age.ok_or_else(|| missing("admission_age"))?;
    let mut score_free = Vec::with_capacity(STATIC_FULL_DIMS);
    score_free.push((age - stats.age_mean) / stats.age_std);
    one_hot_into(
        &mut score_free,
        "gender",
        rec.gender.as_deref().ok_or_else(|| missing("gender"))?,
        &manifest.gender,
        stats,
    );
    one_hot_into(
        &mut score_free,
        "marital_status",
        rec.marital_status
            .as_deref()
            .ok_or_else(|| missing("marital_status"))?,
        &manifest.marital_status,
        stats,
    );
    one_hot_into(
        &mut score_free,
        "insurance",
        rec.insurance.as_deref().ok_or_else(|| missing("insurance"))?,
        &manifest.insurance,
        stats,
    );
    one_hot_into(
        &mut score_free,
        "race",
        rec.race.as_deref().ok_or_else(|| missing("race"))?,
        &manifest.race,
        stats,
    );
    debug_assert_eq!(score_free.len(), STATIC_SCOREFREE_DIMS);

    let mut full = score_free.clone();
    for s in 0..N_SCORES {
        let v = rec.score(s).ok_or_else(|| missing(SCORE_NAMES[s]))?;
        full.push((v - stats.score_mean[s]) / stats.score_std[s]);
    }
    Ok(StaticVector { full, score_free })
}

/// Recover the categorical values from an encoded vector (argmax per group).
pub fn decode_static(
    vector: &[f64],
    manifest: &EncodingManifest,
) -> Result<BTreeMap<String, String>, DataError> {
    if vector.len() < STATIC_SCOREFREE_DIMS {
        return Err(DataError::Generator(format!(
            "static vector has {} dims, expected at least {STATIC_SCOREFREE_DIMS}",
            vector.len()
        )));
    }
    let mut out = BTreeMap::new();
    let mut offset = 1; // skip age
    for (field, cats) in manifest.fields() {
        let group = &vector[offset..offset + cats.len()];
        let armax = group
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        out.insert(field.to_string(), cats[armax].clone());
        offset += cats.len();
    }
    Ok(out)
}

/// Fully preprocessed cohort: normalized dose matrices, encoded statics,
/// z-scored regression targets and labels, in cohort order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreprocessedCohort {
    pub format_version: u32,
    pub patient_ids: Vec<String>,
    /// Normalized 48x7 matrices, one row-major block per patient.
    pub vis: Vec<Vec<f64>>,
    pub static_full: Vec<Vec<f64>>,
    pub static_score_free: Vec<Vec<f64>>,
    /// Z-scored severity targets, 4 per patient.
    pub reg_targets: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
}

impl PreprocessedCohort {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Run the full pipeline: fit stats on the train split, impute, normalize and
/// encode every record with those train statistics.
pub fn preprocess(
    records: &[PatientRecord],
    splits: &SplitIndices,
    manifest: &EncodingManifest,
) -> Result<(PreprocessedCohort, PreprocessStats), DataError> {
    let train_records: Vec<&PatientRecord> =
        splits.train.iter().map(|&i| &records[i]).collect();
    let stats = fit_preprocess_stats(&train_records, manifest)?;
    let imputed = impute(records, &stats);

    let mut cohort = PreprocessedCohort {
        format_version: FORMAT_VERSION,
        patient_ids: Vec::with_capacity(records.len()),
        vis: Vec::with_capacity(records.len()),
        static_full: Vec::with_capacity(records.len()),
        static_score_free: Vec::with_capacity(records.len()),
        reg_targets: Vec::with_capacity(records.len()),
        labels: Vec::with_capacity(records.len()),
        feature_names: manifest.feature_names(),
    };
    for rec in &imputed {
        let series = build_vis_series(rec)?;
        debug_assert!(series.total_consistency_gap() <= 1e-9);
        cohort.vis.push(apply_normalizer(&series, &stats)?);
        let statics = encode_static(rec, manifest, &stats)?;
        cohort
            .reg_targets
            .push(statics.full[STATIC_SCOREFREE_DIMS..].to_vec());
        cohort.static_full.push(statics.full);
        cohort.static_score_free.push(statics.score_free);
        cohort.patient_ids.push(rec.patient_id.clone());
        cohort.labels.push(rec.mortality);
    }
    Ok((cohort, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_cohort, stratified_split, GeneratorConfig};

    fn rec_with(
        id: &str,
        sofa: Option<f64>,
        marital: Option<&str>,
        mortality: u8,
    ) -> PatientRecord {
        let mut rec = PatientRecord::blank(id, mortality);
        rec.gender = Some("F".into());
        rec.admission_age = Some(60.0);
        rec.marital_status = marital.map(|s| s.to_string());
        rec.insurance = Some("Medicare".into());
        rec.race = Some("WHITE".into());
        rec.sofa_score_24h = sofa;
        rec.sapsii = Some(30.0);
        rec.lods = Some(4.0);
        rec.oasis = Some(25.0);
        rec
    }

    fn stats_for(train: &[PatientRecord]) -> PreprocessStats {
        let refs: Vec<&PatientRecord> = train.iter().collect();
        fit_preprocess_stats(&refs, &EncodingManifest::default()).unwrap()
    }

    #[test]
    fn impute_fills_doses_scores_and_categoricals() {
        // train medians: sofa values {4, 6, 8} -> 6
        let train = vec![
            rec_with("a", Some(4.0), Some("MARRIED"), 0),
            rec_with("b", Some(6.0), Some("MARRIED"), 0),
            rec_with("c", Some(8.0), Some("SINGLE"), 1),
        ];
        let stats = stats_for(&train);
        let mut target = rec_with("d", None, None, 0);
        target.dopamine[5] = None;
        let imputed = impute(&[target], &stats);
        assert_eq!(imputed[0].dopamine[5], Some(0.0));
        assert_eq!(imputed[0].sofa_score_24h, Some(6.0));
        assert_eq!(imputed[0].marital_status.as_deref(), Some("Unknown"));
    }

    #[test]
    fn impute_is_idempotent() {
        let train = vec![
            rec_with("a", Some(4.0), Some("MARRIED"), 0),
            rec_with("b", Some(6.0), None, 1),
        ];
        let stats = stats_for(&train);
        let once = impute(&train, &stats);
        let twice = impute(&once, &stats);
        assert_eq!(once, twice);
    }

    #[test]
    fn all_null_score_on_train_cannot_fit() {
        let train = vec![
            rec_with("a", None, Some("MARRIED"), 0),
            rec_with("b", None, Some("SINGLE"), 1),
        ];
        let refs: Vec<&PatientRecord> = train.iter().collect();
        let err = fit_preprocess_stats(&refs, &EncodingManifest::default());
        assert!(matches!(err, Err(DataError::CannotFit { .. })));
    }

    #[test]
    fn normalizer_hand_values() {
        // with mean 0 and std 1: x = 0 -> 0, x = e-1 -> 1
        let stats = PreprocessStats {
            format_version: FORMAT_VERSION,
            vis_log1p_mean: vec![0.0; VIS_FEATURES],
            vis_log1p_std: vec![1.0; VIS_FEATURES],
            degenerate_vis_columns: vec![],
            age_median: 60.0,
            age_mean: 60.0,
            age_std: 10.0,
            score_median: vec![6.0, 38.0, 5.0, 30.0],
            score_mean: vec![6.0, 38.0, 5.0, 30.0],
            score_std: vec![1.0; 4],
            degenerate_static_dims: vec![],
            categorical: BTreeMap::new(),
        };
        let mut rec = rec_with("a", Some(6.0), Some("MARRIED"), 0);
        for a in 0..N_AGENTS {
            for cell in rec.agent_mut(a).iter_mut() {
                *cell = Some(0.0);
            }
        }
        rec.dopamine[0] = Some(std::f64::consts::E - 1.0);
        let series = build_vis_series(&rec).unwrap();
        let normalized = apply_normalizer(&series, &stats).unwrap();
        assert!((normalized[0] - 1.0).abs() <= 1e-12);
        assert_eq!(normalized[1], 0.0);
    }

    #[test]
    fn constant_train_column_gets_unit_std_and_zero_output() {
        // dobutamine identically zero on train: degenerate column
        let train = vec![
            rec_with("a", Some(4.0), Some("MARRIED"), 0),
            rec_with("b", Some(6.0), Some("MARRIED"), 1),
        ];
        let stats = stats_for(&impute(&train, &stats_for(&train)));
        assert!(stats.degenerate_vis_columns.contains(&1));
        assert_eq!(stats.vis_log1p_std[1], 1.0);
        let imputed = impute(&train, &stats);
        let series = build_vis_series(&imputed[0]).unwrap();
        let normalized = apply_normalizer(&series, &stats).unwrap();
        // column 1 constant on train: outputs (log1p(0) - 0) / 1 = 0
        assert!(normalized.iter().skip(1).step_by(VIS_FEATURES).all(|&v| v == 0.0));
    }

    #[test]
    fn vis_series_total_column_matches_weighted_sum() {
        let cfg = GeneratorConfig {
            n_patients: 25,
            missingness_rate: 0.3,
            ..Default::default()
        };
        let cohort = generate_synthetic_cohort(&cfg).unwrap();
        let stats = stats_for(&cohort);
        for rec in impute(&cohort, &stats) {
            let series = build_vis_series(&rec).unwrap();
            assert!(series.total_consistency_gap() <= 1e-9);
        }
    }

    #[test]
    fn encode_static_layout_and_group_sums() {
        let train = vec![
            rec_with("a", Some(4.0), Some("MARRIED"), 0),
            rec_with("b", Some(6.0), Some("SINGLE"), 1),
        ];
        let stats = stats_for(&train);
        let manifest = EncodingManifest::default();
        let rec = impute(&[rec_with("x", Some(5.0), Some("SINGLE"), 0)], &stats)
            .pop()
            .unwrap();
        let encoded = encode_static(&rec, &manifest, &stats).unwrap();
        assert_eq!(encoded.full.len(), STATIC_FULL_DIMS);
        assert_eq!(encoded.score_free.len(), STATIC_SCOREFREE_DIMS);
        // gender "F" with ordering [F, M] -> [1, 0]
        assert_eq!(&encoded.full[1..3], &[1.0, 0.0]);
        // each one-hot group sums to exactly 1
        let mut offset = 1;
        for (_, cats) in manifest.fields() {
            let sum: f64 = encoded.full[offset..offset + cats.len()].iter().sum();
            assert_eq!(sum, 1.0);
            offset += cats.len();
        }
        // score-free equals full minus the 4 score dims
        assert_eq!(encoded.score_free[..], encoded.full[..STATIC_SCOREFREE_DIMS]);
    }

    #[test]
    fn encode_maps_unseen_to_unknown_and_decode_round_trips() {
        let train = vec![
            rec_with("a", Some(4.0), Some("MARRIED"), 0),
            rec_with("b", Some(6.0), Some("SINGLE"), 1),
        ];
        let stats = stats_for(&train);
        let manifest = EncodingManifest::default();

        let mut rec = impute(&[rec_with("x", Some(5.0), Some("MARRIED"), 0)], &stats)
            .pop()
            .unwrap();
        rec.marital_status = Some("PARTNERED".into()); // not in manifest
        let encoded = encode_static(&rec, &manifest, &stats).unwrap();
        let decoded = decode_static(&encoded.full, &manifest).unwrap();
        assert_eq!(decoded["marital_status"], "UNKNOWN");

        // in-manifest values decode exactly
        let rec = impute(&[rec_with("y", Some(5.0), Some("DIVORCED"), 0)], &stats)
            .pop()
            .unwrap();
        let encoded = encode_static(&rec, &manifest, &stats).unwrap();
        let decoded = decode_static(&encoded.full, &manifest).unwrap();
        assert_eq!(decoded["marital_status"], "DIVORCED");
        assert_eq!(decoded["gender"], "F");
        assert_eq!(decoded["insurance"], "Medicare");
        assert_eq!(decoded["race"], "WHITE");
    }

    #[test]
    fn gender_without_unknown_slot_falls_back_to_mode() {
        let mut a = rec_with("a", Some(4.0), Some("MARRIED"), 0);
        a.gender = Some("M".into());
        let train = vec![a, rec_with("b", Some(6.0), Some("SINGLE"), 1)];
        let stats = stats_for(&train);
        assert!(!stats.categorical["gender"].has_unknown_slot);
        let manifest = EncodingManifest::default();
        let mut rec = impute(&[rec_with("x", Some(5.0), Some("MARRIED"), 0)], &stats)
            .pop()
            .unwrap();
        rec.gender = Some("Unknown".into());
        let encoded = encode_static(&rec, &manifest, &stats).unwrap();
        // mode between one F and one M ties toward "F"; the group still sums to 1
        let group: f64 = encoded.full[1..3].iter().sum();
        assert_eq!(group, 1.0);
    }

    #[test]
    fn preprocess_fits_on_train_split_only() {
        // skewed split: all high doses in test; train stats must ignore them
        let cfg = GeneratorConfig {
            n_patients: 60,
            missingness_rate: 0.05,
            ..Default::default()
        };
        let cohort = generate_synthetic_cohort(&cfg).unwrap();
        let labels: Vec<u8> = cohort.iter().map(|r| r.mortality).collect();
        let splits = stratified_split(&labels, [0.72, 0.08, 0.20], 7).unwrap();
        let manifest = EncodingManifest::default();
        let (_, stats) = preprocess(&cohort, &splits, &manifest).unwrap();

        // refit on the test indices: moments must be allowed to differ
        let test_records: Vec<&PatientRecord> =
            splits.test.iter().map(|&i| &cohort[i]).collect();
        let test_stats = fit_preprocess_stats(&test_records, &manifest).unwrap();
        assert_ne!(stats.vis_log1p_mean, test_stats.vis_log1p_mean);
    }

    #[test]
    fn preprocess_output_dimensions() {
        let cfg = GeneratorConfig {
            n_patients: 30,
            ..Default::default()
        };
        let cohort = generate_synthetic_cohort(&cfg).unwrap();
        let labels: Vec<u8> = cohort.iter().map(|r| r.mortality).collect();
        let splits = stratified_split(&labels, [0.72, 0.08, 0.20], 7).unwrap();
        let (pre, _) = preprocess(&cohort, &splits, &EncodingManifest::default()).unwrap();
        assert_eq!(pre.len(), 30);
        assert!(pre.vis.iter().all(|v| v.len() == HOURS * VIS_FEATURES));
        assert!(pre.static_full.iter().all(|v| v.len() == STATIC_FULL_DIMS));
        assert!(pre
            .static_score_free
            .iter()
            .all(|v| v.len() == STATIC_SCOREFREE_DIMS));
        assert!(pre.reg_targets.iter().all(|v| v.len() == N_SCORES));
        assert_eq!(pre.feature_names.len(), STATIC_FULL_DIMS);
        assert_eq!(pre.feature_names[0], "admission_age");
        assert_eq!(pre.feature_names[47], "sofa_score_24h");
        assert_eq!(pre.feature_names[50], "oasis");
    }
}
