use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::{rng, FORMAT_VERSION};

/// Disjoint covering train/validation/test index lists, stratified by label.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitIndices {
    pub format_version: u32,
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn splits(&self) -> [&Vec<usize>; 3] {
        [&self.train, &self.validation, &self.test]
    }

    /// Fingerprint over the three index lists; lets downstream reports prove
    /// they share one split.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for split in self.splits() {
            eat(split.len() as u64);
            for &ix in split.iter() {
                eat(ix as u64);
            }
        }
        h
    }
}

/// Largest-remainder apportionment of `total` across the fractions; exact sum,
/// each bucket within one of its proportional target. Ties go to the earlier
/// bucket (train, validation, test).
fn apportion(total: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let targets: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut sizes: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let mut leftover = total - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &s in &order {
        if leftover == 0 {
            break;
        }
        sizes[s] += 1;
        leftover -= 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

/// Stratified train/validation/test split. Split sizes follow the fractions
/// within one patient; each split's positive count follows the global
/// proportion within one patient. Deterministic given the seed.
pub fn stratified_split(
    labels: &[u8],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitIndices, DataError> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(DataError::BadFractions(fractions));
    }
    let mut positives: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        match y {
            0 => negatives.push(i),
            1 => positives.push(i),
            other => {
                return Err(DataError::Stratification(format!(
                    "label {other} at index {i} is not binary"
                )))
            }
        }
    }
    for (name, class) in [("negative", &negatives), ("positive", &positives)] {
        if !class.is_empty() && class.len() < 3 {
            return Err(DataError::Stratification(format!(
                "{name} class has {} members, fewer than the 3 splits",
                class.len()
            )));
        }
    }

    let total_sizes = apportion(labels.len(), &fractions);
    let pos_sizes = apportion(positives.len(), &fractions);
    for s in 0..3 {
        if pos_sizes[s] > total_sizes[s] {
            return Err(DataError::Stratification(format!(
                "split {s} cannot hold {} positives in {} slots",
                pos_sizes[s], total_sizes[s]
            )));
        }
    }

    let mut shuffle_rng = rng::substream(seed, "split");
    positives.shuffle(&mut shuffle_rng);
    negatives.shuffle(&mut shuffle_rng);

    let mut splits: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut pos_cursor = 0usize;
    let mut neg_cursor = 0usize;
    for s in 0..3 {
        let n_pos = pos_sizes[s];
        let n_neg = total_sizes[s] - n_pos;
        if neg_cursor + n_neg > negatives.len() {
            return Err(DataError::Stratification(format!(
                "split {s} needs {n_neg} negatives but only {} remain",
                negatives.len() - neg_cursor
            )));
        }
        splits[s].extend_from_slice(&positives[pos_cursor..pos_cursor + n_pos]);
        splits[s].extend_from_slice(&negatives[neg_cursor..neg_cursor + n_neg]);
        splits[s].sort_unstable();
        pos_cursor += n_pos;
        neg_cursor += n_neg;
    }
    let [train, validation, test] = splits;
    Ok(SplitIndices {
        format_version: FORMAT_VERSION,
        seed,
        train,
        validation,
        test,
    })
}

/// Class weights from the train labels: |train| / (2 * count_c).
pub fn compute_class_weights(train_labels: &[u8]) -> Result<[f64; 2], DataError> {
    let n = train_labels.len() as f64;
    let pos = train_labels.iter().filter(|&&y| y == 1).count() as f64;
    let neg = n - pos;
    if neg == 0.0 {
        return Err(DataError::DegenerateClass(0));
    }
    if pos == 0.0 {
        return Err(DataError::DegenerateClass(1));
    }
    Ok([n / (2.0 * neg), n / (2.0 * pos)])
}
