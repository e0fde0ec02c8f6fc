use rand::seq::SliceRandom;

use super::config::{EncoderConfig, MaskGranularity};
use super::ModelError;
use crate::rng;

/// Per-sample boolean masks over the 48x7 input cells, drawn uniformly
/// without replacement. Sample `i`'s mask depends only on (seed, i).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    seed: u64,
    cells: usize,
    masks: Vec<Vec<bool>>,
}

impl MaskPlan {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn batch_size(&self) -> usize {
        self.masks.len()
    }

    pub fn sample(&self, i: usize) -> &[bool] {
        &self.masks[i]
    }

    /// Flattened batch mask aligned with a [B, seq, features] tensor.
    pub fn flat(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.masks.len() * self.cells);
        for m in &self.masks {
            out.extend_from_slice(m);
        }
        out
    }

    pub fn masked_per_sample(&self) -> usize {
        self.masks.first().map_or(0, |m| m.iter().filter(|&&b| b).count())
    }

    /// Plan covering samples `[start, start+len)` of this plan.
    pub fn subset(&self, start: usize, len: usize) -> MaskPlan {
        MaskPlan {
            seed: self.seed,
            cells: self.cells,
            masks: self.masks[start..start + len].to_vec(),
        }
    }
}

/// Draw a mask plan for a batch. Cell granularity picks
/// ceil(mask_ratio * seq * features) individual cells; timestep granularity
/// picks ceil(mask_ratio * seq) whole hours.
pub fn make_mask(
    batch_size: usize,
    config: &EncoderConfig,
    seed: u64,
) -> Result<MaskPlan, ModelError> {
    config.validate()?;
    let cells = config.seq_len * config.n_features;
    let mut masks = Vec::with_capacity(batch_size);
    for i in 0..batch_size {
        let mut r = rng::substream_indexed(seed, "mask", &[i as u64]);
        let mut mask = vec![false; cells];
        match config.mask_granularity {
            MaskGranularity::Cell => {
                let k = (config.mask_ratio * cells as f64).ceil() as usize;
                let mut all: Vec<usize> = (0..cells).collect();
                let (chosen, _) = all.partial_shuffle(&mut r, k);
                for &c in chosen.iter() {
                    mask[c] = true;
                }
            }
            MaskGranularity::Timestep => {
                let k = (config.mask_ratio * config.seq_len as f64).ceil() as usize;
                let mut rows: Vec<usize> = (0..config.seq_len).collect();
                let (chosen, _) = rows.partial_shuffle(&mut r, k);
                for &row in chosen.iter() {
                    for f in 0..config.n_features {
                        mask[row * config.n_features + f] = true;
                    }
                }
            }
        }
        masks.push(mask);
    }
    Ok(MaskPlan {
        seed,
        cells,
        masks,
    })
}

/// Zero the masked cells of a flattened [B, seq, features] batch.
pub fn apply_mask(x: &[f64], plan: &MaskPlan) -> Vec<f64> {
    let mut out = x.to_vec();
    let cells = plan.cells;
    for (i, mask) in plan.masks.iter().enumerate() {
        let block = &mut out[i * cells..(i + 1) * cells];
        for (v, &masked) in block.iter_mut().zip(mask) {
            if masked {
                *v = 0.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ratio_masks_exactly_seventeen_cells() {
        let plan = make_mask(4, &EncoderConfig::default(), 11).unwrap();
        for i in 0..4 {
            assert_eq!(plan.sample(i).iter().filter(|&&b| b).count(), 17);
        }
    }

    #[test]
    fn full_coverage_ratio_is_a_config_error() {
        let cfg = EncoderConfig {
            mask_ratio: 1.0,
            ..Default::default()
        };
        assert!(matches!(make_mask(1, &cfg, 0), Err(ModelError::Config(_))));
    }

    #[test]
    fn same_seed_same_plan() {
        let cfg = EncoderConfig::default();
        let a = make_mask(3, &cfg, 5).unwrap();
        let b = make_mask(3, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = make_mask(3, &cfg, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mask_is_independent_of_batch_size() {
        let cfg = EncoderConfig::default();
        let small = make_mask(2, &cfg, 5).unwrap();
        let large = make_mask(8, &cfg, 5).unwrap();
        assert_eq!(small.sample(1), large.sample(1));
    }

    #[test]
    fn tiny_ratio_still_masks_one_cell() {
        let cfg = EncoderConfig {
            mask_ratio: 1e-6,
            ..Default::default()
        };
        let plan = make_mask(1, &cfg, 3).unwrap();
        assert_eq!(plan.masked_per_sample(), 1);
    }

    #[test]
    fn timestep_mode_masks_whole_rows() {
        let cfg = EncoderConfig {
            mask_granularity: MaskGranularity::Timestep,
            ..Default::default()
        };
        let plan = make_mask(1, &cfg, 3).unwrap();
        let mask = plan.sample(0);
        for row in 0..cfg.seq_len {
            let cells: Vec<bool> =
                (0..cfg.n_features).map(|f| mask[row * cfg.n_features + f]).collect();
            assert!(cells.iter().all(|&b| b) || cells.iter().all(|&b| !b));
        }
        assert_eq!(mask.iter().filter(|&&b| b).count(), 21);
    }

    #[test]
    fn apply_mask_zeroes_only_masked_cells() {
        let cfg = EncoderConfig::default();
        let plan = make_mask(2, &cfg, 9).unwrap();
        let x: Vec<f64> = (0..2 * 336).map(|i| i as f64 + 1.0).collect();
        let masked = apply_mask(&x, &plan);
        for i in 0..2 {
            for c in 0..336 {
                let ix = i * 336 + c;
                if plan.sample(i)[c] {
                    assert_eq!(masked[ix], 0.0);
                } else {
                    assert_eq!(masked[ix], x[ix]);
                }
            }
        }
    }
}
