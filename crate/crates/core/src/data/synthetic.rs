use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::schema::{PatientRecord, HOURS, N_AGENTS};
use super::DataError;
use crate::rng;

/// Synthetic cohort parameters. `signal_strength` scales every association
/// between the latent severity and the outcome; at 0 the label is pure noise.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub signal_strength: f64,
    pub missingness_rate: f64,
    /// Target marginal mortality rate; an ICU-plausible imbalance by default.
    pub positive_rate: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 500,
            signal_strength: 1.0,
            missingness_rate: 0.1,
            positive_rate: 0.22,
            seed: 7,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn pick<'a>(rng: &mut ChaCha8Rng, table: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let mut draw = rng.gen::<f64>() * total;
    for (value, w) in table {
        draw -= w;
        if draw <= 0.0 {
            return value;
        }
    }
    table.last().unwrap().0
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Latent-severity weight at signal strength 1; drives both the label and
/// the observable severity scores / dose trajectories.
const SEVERITY_LOGIT_WEIGHT: f64 = 4.5;
const SINGLE_LOGIT_WEIGHT: f64 = 0.9;
const MEDICAID_LOGIT_WEIGHT: f64 = 0.7;

const MARITAL_TABLE: [(&str, f64); 4] = [
    ("MARRIED", 0.45),
    ("SINGLE", 0.30),
    ("DIVORCED", 0.10),
    ("WIDOWED", 0.15),
];
const INSURANCE_TABLE: [(&str, f64); 4] = [
    ("Medicare", 0.45),
    ("Medicaid", 0.15),
    ("Private", 0.30),
    ("Other", 0.10),
];
const RACE_TABLE: [(&str, f64); 8] = [
    ("WHITE", 0.55),
    ("BLACK/AFRICAN AMERICAN", 0.13),
    ("HISPANIC OR LATINO", 0.08),
    ("ASIAN", 0.05),
    ("OTHER", 0.07),
    ("WHITE - OTHER EUROPEAN", 0.04),
    ("UNABLE TO OBTAIN", 0.04),
    ("PATIENT DECLINED TO ANSWER", 0.04),
];

/// (onset intercept on the severity logit, base dose level)
const AGENT_PROFILES: [(f64, f64, f64); N_AGENTS] = [
    // (receive intercept, receive slope on u, base dose)
    (-2.2, 0.3, 5.0),   // dopamine
    (-2.4, 0.5, 5.0),   // dobutamine
    (-2.0, 0.8, 0.05),  // epinephrine
    (-2.8, 0.3, 0.4),   // milrinone
    (-1.2, 1.0, 0.03),  // vasopressin
    (0.5, 0.9, 0.12),   // norepinephrine
];

/// Generate a schema-valid cohort. Mortality follows a logistic model over a
/// latent severity that also drives the severity scores and dose
/// trajectories; marital status SINGLE and Medicaid insurance carry small
/// direct effects. Deterministic per (seed, patient index): the draw order
/// inside a patient is part of the file format.
pub fn generate_synthetic_cohort(cfg: &GeneratorConfig) -> Result<Vec<PatientRecord>, DataError> {
    if cfg.n_patients < 20 {
        return Err(DataError::Generator(format!(
            "n_patients {} below the minimum of 20",
            cfg.n_patients
        )));
    }
    for (name, v) in [
        ("signal_strength", cfg.signal_strength),
        ("missingness_rate", cfg.missingness_rate),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(DataError::Generator(format!("{name} {v} must be >= 0")));
        }
    }
    if cfg.missingness_rate > 1.0 {
        return Err(DataError::Generator(format!(
            "missingness_rate {} outside [0, 1]",
            cfg.missingness_rate
        )));
    }
    if !(0.0 < cfg.positive_rate && cfg.positive_rate < 1.0) {
        return Err(DataError::Generator(format!(
            "positive_rate {} outside (0, 1)",
            cfg.positive_rate
        )));
    }

    let s = cfg.signal_strength;
    // Intercept calibrated so the marginal positive rate stays near the
    // target: E[sigmoid(a + b*u)] ~ sigmoid(a / sqrt(1 + pi b^2 / 8)),
    // with a shift correction for the mean static effects.
    let b = s * SEVERITY_LOGIT_WEIGHT;
    let static_mean = s * (SINGLE_LOGIT_WEIGHT * 0.30 + MEDICAID_LOGIT_WEIGHT * 0.15);
    let intercept =
        logit(cfg.positive_rate) * (1.0 + std::f64::consts::PI * b * b / 8.0).sqrt() - static_mean;

    let mut cohort = Vec::with_capacity(cfg.n_patients);
    for i in 0..cfg.n_patients {
        let mut r = rng::substream_indexed(cfg.seed, "data", &[i as u64]);
        let u = normal(&mut r);

        let gender = if r.gen::<bool>() { "M" } else { "F" };
        let age = (62.0 + 15.0 * normal(&mut r) + 3.0 * u).clamp(18.0, 100.0);
        let marital = pick(&mut r, &MARITAL_TABLE);
        let insurance = pick(&mut r, &INSURANCE_TABLE);
        let race = pick(&mut r, &RACE_TABLE);

        let sofa = (6.0 + 3.2 * u + 0.8 * normal(&mut r)).round().clamp(0.0, 24.0);
        let sapsii = (38.0 + 11.0 * u + 3.0 * normal(&mut r)).round().clamp(0.0, 160.0);
        let lods = (5.0 + 2.2 * u + 0.8 * normal(&mut r)).round().clamp(0.0, 22.0);
        let oasis = (30.0 + 7.0 * u + 2.5 * normal(&mut r)).round().clamp(0.0, 80.0);

        let mut rec = PatientRecord::blank(format!("synth-{i:06}"), 0);
        rec.gender = Some(gender.to_string());
        rec.admission_age = Some((age * 10.0).round() / 10.0);
        rec.marital_status = Some(marital.to_string());
        rec.insurance = Some(insurance.to_string());
        rec.race = Some(race.to_string());
        rec.sofa_score_24h = Some(sofa);
        rec.sapsii = Some(sapsii);
        rec.lods = Some(lods);
        rec.oasis = Some(oasis);

        for (agent, (recv_a, recv_b, base)) in AGENT_PROFILES.iter().enumerate() {
            let received = r.gen::<f64>() < sigmoid(recv_a + recv_b * u);
            // fixed draw count per agent whether or not it is received
            let onset = r.gen_range(0..12usize);
            let duration = r.gen_range(6..=HOURS);
            let level = base * (1.0 + 0.5 * u + 0.3 * normal(&mut r)).max(0.1);
            let col = rec.agent_mut(agent);
            for (hour, cell) in col.iter_mut().enumerate() {
                let wobble = 1.0 + 0.2 * normal(&mut r);
                if received && hour >= onset && hour < onset + duration {
                    // ramp up over the first 4 hours, then taper
                    let ramp = ((hour - onset + 1) as f64 / 4.0).min(1.0);
                    let taper = 1.0 - 0.5 * (hour - onset) as f64 / HOURS as f64;
                    *cell = Some(round3((level * ramp * taper * wobble).max(0.0)));
                } else {
                    *cell = Some(0.0);
                }
            }
        }

        let logit_i = intercept
            + s * (SEVERITY_LOGIT_WEIGHT * u
                + SINGLE_LOGIT_WEIGHT * f64::from(marital == "SINGLE")
                + MEDICAID_LOGIT_WEIGHT * f64::from(insurance == "Medicaid"));
        rec.mortality = u8::from(r.gen::<f64>() < sigmoid(logit_i));

        // inject missingness last so the draw count above is label-stable
        if cfg.missingness_rate > 0.0 {
            for a in 0..N_AGENTS {
                for cell in rec.agent_mut(a).iter_mut() {
                    if r.gen::<f64>() < cfg.missingness_rate {
                        *cell = None;
                    }
                }
            }
            if r.gen::<f64>() < cfg.missingness_rate {
                rec.admission_age = None;
            }
            for score in 0..super::N_SCORES {
                if r.gen::<f64>() < cfg.missingness_rate {
                    *rec.score_mut(score) = None;
                }
            }
            if r.gen::<f64>() < cfg.missingness_rate {
                rec.gender = None;
            }
            if r.gen::<f64>() < cfg.missingness_rate {
                rec.marital_status = None;
            }
            if r.gen::<f64>() < cfg.missingness_rate {
                rec.insurance = None;
            }
            if r.gen::<f64>() < cfg.missingness_rate {
                rec.race = None;
            }
        }

        rec.validate()?;
        cohort.push(rec);
    }
    Ok(cohort)
}
