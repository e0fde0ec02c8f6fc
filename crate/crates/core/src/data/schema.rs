use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

pub const HOURS: usize = 48;
pub const N_AGENTS: usize = 6;
/// 6 agents plus the total-score column.
pub const VIS_FEATURES: usize = 7;

pub const AGENTS: [&str; N_AGENTS] = [
    "dopamine",
    "dobutamine",
    "epinephrine",
    "milrinone",
    "vasopressin",
    "norepinephrine",
];

/// Potency weight per agent, aligned with [`AGENTS`].
pub const VIS_WEIGHTS: [f64; N_AGENTS] = [1.0, 1.0, 100.0, 10.0, 10_000.0, 100.0];

/// Weighted sum of the six agent doses:
/// dopamine + dobutamine + 100 epinephrine + 10 milrinone
/// + 10000 vasopressin + 100 norepinephrine.
pub fn compute_total_vis(doses: &[f64; N_AGENTS]) -> Result<f64, DataError> {
    for (name, &d) in AGENTS.iter().zip(doses) {
        if !d.is_finite() || d < 0.0 {
            return Err(DataError::Validation {
                patient_id: String::new(),
                message: format!("{name} dose {d} must be finite and nonnegative"),
            });
        }
    }
    Ok(doses
        .iter()
        .zip(&VIS_WEIGHTS)
        .map(|(d, w)| d * w)
        .sum())
}

/// One patient as stored in the line-delimited cohort file. Doses are hourly
/// over 48 hours, nullable per cell; static fields are nullable except the
/// mortality label.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub patient_id: String,
    pub dopamine: Vec<Option<f64>>,
    pub dobutamine: Vec<Option<f64>>,
    pub epinephrine: Vec<Option<f64>>,
    pub milrinone: Vec<Option<f64>>,
    pub vasopressin: Vec<Option<f64>>,
    pub norepinephrine: Vec<Option<f64>>,
    pub gender: Option<String>,
    pub admission_age: Option<f64>,
    pub marital_status: Option<String>,
    pub insurance: Option<String>,
    pub race: Option<String>,
    pub sofa_score_24h: Option<f64>,
    pub sapsii: Option<f64>,
    pub lods: Option<f64>,
    pub oasis: Option<f64>,
    pub mortality: u8,
}

impl PatientRecord {
    /// Empty record with all-null doses; useful as a construction base.
    pub fn blank(patient_id: impl Into<String>, mortality: u8) -> Self {
        Self {
            patient_id: patient_id.into(),
            dopamine: vec![None; HOURS],
            dobutamine: vec![None; HOURS],
            epinephrine: vec![None; HOURS],
            milrinone: vec![None; HOURS],
            vasopressin: vec![None; HOURS],
            norepinephrine: vec![None; HOURS],
            gender: None,
            admission_age: None,
            marital_status: None,
            insurance: None,
            race: None,
            sofa_score_24h: None,
            sapsii: None,
            lods: None,
            oasis: None,
            mortality,
        }
    }

    pub fn agent(&self, idx: usize) -> &[Option<f64>] {
        match idx {
            0 => &self.dopamine,
            1 => &self.dobutamine,
            2 => &self.epinephrine,
            3 => &self.milrinone,
            4 => &self.vasopressin,
            5 => &self.norepinephrine,
            _ => panic!("agent index {idx} out of range"),
        }
    }

    pub fn agent_mut(&mut self, idx: usize) -> &mut Vec<Option<f64>> {
        match idx {
            0 => &mut self.dopamine,
            1 => &mut self.dobutamine,
            2 => &mut self.epinephrine,
            3 => &mut self.milrinone,
            4 => &mut self.vasopressin,
            5 => &mut self.norepinephrine,
            _ => panic!("agent index {idx} out of range"),
        }
    }

    pub fn score(&self, idx: usize) -> Option<f64> {
        match idx {
            0 => self.sofa_score_24h,
            1 => self.sapsii,
            2 => self.lods,
            3 => self.oasis,
            _ => panic!("score index {idx} out of range"),
        }
    }

    pub fn score_mut(&mut self, idx: usize) -> &mut Option<f64> {
        match idx {
            0 => &mut self.sofa_score_24h,
            1 => &mut self.sapsii,
            2 => &mut self.lods,
            3 => &mut self.oasis,
            _ => panic!("score index {idx} out of range"),
        }
    }

    fn fail(&self, message: String) -> DataError {
        DataError::Validation {
            patient_id: self.patient_id.clone(),
            message,
        }
    }

    /// Schema validation: 48 hourly rows per agent, nonnegative doses and
    /// scores, age in [18, 120], binary mortality.
    pub fn validate(&self) -> Result<(), DataError> {
        for (idx, name) in AGENTS.iter().enumerate() {
            let col = self.agent(idx);
            if col.len() != HOURS {
                return Err(self.fail(format!(
                    "{name} has {} hourly rows, expected {HOURS}",
                    col.len()
                )));
            }
            for (hour, cell) in col.iter().enumerate() {
                if let Some(d) = cell {
                    if !d.is_finite() || *d < 0.0 {
                        return Err(
                            self.fail(format!("{name} dose {d} at hour {hour} is invalid"))
                        );
                    }
                }
            }
        }
        if let Some(age) = self.admission_age {
            if !(18.0..=120.0).contains(&age) {
                return Err(self.fail(format!("admission_age {age} outside [18, 120]")));
            }
        }
        for (idx, name) in super::SCORE_NAMES.iter().enumerate() {
            if let Some(s) = self.score(idx) {
                if !s.is_finite() || s < 0.0 {
                    return Err(self.fail(format!("{name} value {s} is invalid")));
                }
            }
        }
        if self.mortality > 1 {
            return Err(self.fail(format!("mortality {} is not binary", self.mortality)));
        }
        Ok(())
    }

    pub fn has_nulls(&self) -> bool {
        (0..N_AGENTS).any(|a| self.agent(a).iter().any(Option::is_none))
            || self.gender.is_none()
            || self.admission_age.is_none()
            || self.marital_status.is_none()
            || self.insurance.is_none()
            || self.race.is_none()
            || (0..super::N_SCORES).any(|s| self.score(s).is_none())
    }
}

/// Serialize a cohort to line-delimited JSON, one patient per line.
pub fn write_cohort_string(records: &[PatientRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("record serialization cannot fail"));
        out.push('\n');
    }
    out
}

pub fn write_cohort(path: &Path, records: &[PatientRecord]) -> Result<(), DataError> {
    let body = write_cohort_string(records);
    let mut file = fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(body.as_bytes()).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parse a line-delimited cohort, validating every record. Errors carry the
/// 1-based line number.
pub fn read_cohort_str(text: &str) -> Result<Vec<PatientRecord>, DataError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PatientRecord =
            serde_json::from_str(line).map_err(|source| DataError::Parse {
                line: i + 1,
                source,
            })?;
        rec.validate()?;
        records.push(rec);
    }
    Ok(records)
}

pub fn read_cohort(path: &Path) -> Result<Vec<PatientRecord>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_cohort_str(&text)
}
