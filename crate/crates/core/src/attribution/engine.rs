use std::ops::Range;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::AttributionError;

/// One attribution player: a named block of contiguous input dims that is
/// revealed atomically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Player {
    pub name: String,
    pub dims: Range<usize>,
}

impl Player {
    pub fn single(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dims: dim..dim + 1,
        }
    }

    pub fn group(name: impl Into<String>, dims: Range<usize>) -> Self {
        Self {
            name: name.into(),
            dims,
        }
    }
}

/// Anything that can score a batch of input vectors.
pub trait CoalitionModel {
    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>, AttributionError>;
}

impl<F> CoalitionModel for F
where
    F: Fn(&[f64]) -> f64,
{
    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>, AttributionError> {
        Ok(inputs.iter().map(|v| self(v)).collect())
    }
}

/// Per-player Shapley estimates for one instance.
#[derive(Debug, Clone)]
pub struct ShapleyEstimate {
    /// One value per player, aligned with the player list.
    pub per_player: Vec<f64>,
    pub model_output: f64,
    pub background_output: f64,
}

impl ShapleyEstimate {
    /// |sum of attributions - (f(x) - f(background))|.
    pub fn local_accuracy_gap(&self) -> f64 {
        let total: f64 = self.per_player.iter().sum();
        (total - (self.model_output - self.background_output)).abs()
    }
}

const EVAL_CHUNK: usize = 512;

/// Permutation-sampling Shapley values: for each sampled permutation of the
/// players, reveal them one by one from the background toward `x` and credit
/// each player its marginal change in the model output. Each permutation's
/// marginals telescope to f(x) - f(background), so local accuracy holds up
/// to float rounding at any sample count.
pub fn sample_shapley(
    model: &dyn CoalitionModel,
    x: &[f64],
    background: &[f64],
    players: &[Player],
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ShapleyEstimate, AttributionError> {
    if x.len() != background.len() {
        return Err(AttributionError::Config(format!(
            "instance has {} dims, background {}",
            x.len(),
            background.len()
        )));
    }
    if players.is_empty() || n_samples == 0 {
        return Err(AttributionError::Config(
            "need at least one player and one sample".into(),
        ));
    }
    for p in players {
        if p.dims.end > x.len() || p.dims.is_empty() {
            return Err(AttributionError::Config(format!(
                "player {} dims {:?} out of range",
                p.name, p.dims
            )));
        }
    }

    let m = players.len();
    let mut orders: Vec<Vec<usize>> = Vec::with_capacity(n_samples);
    let mut coalition_vectors: Vec<Vec<f64>> = Vec::with_capacity(n_samples * m);
    let mut order: Vec<usize> = (0..m).collect();
    for _ in 0..n_samples {
        order.shuffle(rng);
        let mut current = background.to_vec();
        for &p in &order {
            current[players[p].dims.clone()]
                .copy_from_slice(&x[players[p].dims.clone()]);
            coalition_vectors.push(current.clone());
        }
        orders.push(order.clone());
    }

    let background_output = model.evaluate(std::slice::from_ref(&background.to_vec()))?[0];
    let mut values = Vec::with_capacity(coalition_vectors.len());
    for chunk in coalition_vectors.chunks(EVAL_CHUNK) {
        values.extend(model.evaluate(chunk)?);
    }

    let mut per_player = vec![0.0; m];
    for (s, order) in orders.iter().enumerate() {
        let mut previous = background_output;
        for (step, &p) in order.iter().enumerate() {
            let v = values[s * m + step];
            per_player[p] += v - previous;
            previous = v;
        }
    }
    for phi in per_player.iter_mut() {
        *phi /= n_samples as f64;
    }
    // the full coalition equals x in every permutation
    let model_output = values[m - 1];
    Ok(ShapleyEstimate {
        per_player,
        model_output,
        background_output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn players_1d(n: usize) -> Vec<Player> {
        (0..n).map(|i| Player::single(format!("f{i}"), i)).collect()
    }

    #[test]
    fn linear_model_matches_analytic_shapley() {
        // f(x) = w . x: every permutation credits player i exactly
        // w_i (x_i - b_i), so the estimate is exact regardless of samples
        let w = [0.5, -1.5, 2.0, 0.25];
        let f = move |v: &[f64]| v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let x = [1.0, 2.0, -0.5, 3.0];
        let bg = [0.2, 0.0, 0.5, -1.0];
        let mut r = substream(1, "shap");
        let est = sample_shapley(&f, &x, &bg, &players_1d(4), 2000, &mut r).unwrap();
        for i in 0..4 {
            let analytic = w[i] * (x[i] - bg[i]);
            let rel = (est.per_player[i] - analytic).abs() / analytic.abs().max(1e-12);
            assert!(rel <= 0.02, "player {i}: {} vs {analytic}", est.per_player[i]);
        }
        assert!(est.local_accuracy_gap() <= 1e-12);
    }

    #[test]
    fn duplicated_features_receive_equal_attribution() {
        // nonlinear symmetric use of dims 0 and 1
        let f = |v: &[f64]| (v[0] + v[1]).tanh() + 0.3 * v[2];
        let x = [0.8, 0.8, 1.0];
        let bg = [0.1, 0.1, 0.0];
        let mut r = substream(2, "shap");
        let est = sample_shapley(&f, &x, &bg, &players_1d(3), 4000, &mut r).unwrap();
        let diff = (est.per_player[0] - est.per_player[1]).abs();
        assert!(diff <= 0.02, "symmetric players differ by {diff}");
    }

    #[test]
    fn null_player_gets_exactly_zero() {
        let f = |v: &[f64]| v[0] * 2.0; // ignores dims 1, 2
        let x = [1.0, 5.0, -3.0];
        let bg = [0.0, 0.0, 0.0];
        let mut r = substream(3, "shap");
        let est = sample_shapley(&f, &x, &bg, &players_1d(3), 500, &mut r).unwrap();
        assert_eq!(est.per_player[1], 0.0);
        assert_eq!(est.per_player[2], 0.0);
    }

    #[test]
    fn group_players_toggle_atomically() {
        // f pays 1 only when dims 1 and 2 are BOTH set; as one player the
        // group receives the whole credit
        let f = |v: &[f64]| if v[1] > 0.5 && v[2] > 0.5 { 1.0 } else { 0.0 };
        let x = [0.0, 1.0, 1.0];
        let bg = [0.0, 0.0, 0.0];
        let players = vec![Player::single("a", 0), Player::group("bc", 1..3)];
        let mut r = substream(4, "shap");
        let est = sample_shapley(&f, &x, &bg, &players, 200, &mut r).unwrap();
        assert_eq!(est.per_player[0], 0.0);
        assert!((est.per_player[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn fixed_seed_reproduces_attributions() {
        let f = |v: &[f64]| (v[0] * v[1] - v[2]).sin();
        let x = [0.5, 1.5, 0.2];
        let bg = [0.0, 0.5, 0.0];
        let run = |seed: u64| {
            let mut r = substream(seed, "shap");
            sample_shapley(&f, &x, &bg, &players_1d(3), 300, &mut r)
                .unwrap()
                .per_player
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn doubling_samples_tightens_the_estimate() {
        // median absolute deviation from a 10x-sample reference, over 20
        // interacting features, shrinks when samples double
        let f = |v: &[f64]| {
            let mut total = 0.0;
            for i in 0..v.len() {
                let j = (i + 1) % v.len();
                total += (v[i] * 0.7 + v[i] * v[j] * 0.4).tanh();
            }
            total
        };
        let x: Vec<f64> = (0..20).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 + 0.2).collect();
        let bg = vec![0.0; 20];
        let players = players_1d(20);
        let run = |n: usize, seed: u64| {
            let mut r = substream(seed, "shap");
            sample_shapley(&f, &x, &bg, &players, n, &mut r).unwrap().per_player
        };
        let reference = run(5000, 100);
        let mad = |est: &[f64]| {
            let mut devs: Vec<f64> = est
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .collect();
            devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            devs[devs.len() / 2]
        };
        let coarse = mad(&run(500, 7));
        let fine = mad(&run(1000, 7));
        assert!(
            fine < coarse,
            "MAD did not shrink: {fine} (n=1000) vs {coarse} (n=500)"
        );
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let f = |_: &[f64]| 0.0;
        let mut r = substream(1, "shap");
        assert!(sample_shapley(&f, &[1.0], &[1.0, 2.0], &players_1d(1), 10, &mut r).is_err());
        assert!(sample_shapley(&f, &[1.0], &[1.0], &[], 10, &mut r).is_err());
        let bad = vec![Player::single("oob", 5)];
        assert!(sample_shapley(&f, &[1.0], &[1.0], &bad, 10, &mut r).is_err());
    }
}
