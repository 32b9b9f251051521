//! Constrained ensemble exploration.
//!
//! A randomly re-initialized affine map `R -> R^{D_x}` traces a line through
//! the state box; candidates sampled on that line are scored by ensemble
//! disagreement and the most contested one is sent to validation.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::estimators::EstimatorEnsemble;
use crate::validation::{clamp_to_box, StateCodec};

/// Untrained single-layer perceptron simulating a hyper-line.
#[derive(Debug, Clone, PartialEq)]
pub struct LineGenerator {
    direction: Vec<f64>,
    offset: Vec<f64>,
    codec: Option<StateCodec>,
}

impl LineGenerator {
    /// Draws a fresh line: offset uniform in the box, direction uniform on the
    /// sphere scaled by 0.5.
    pub fn random<R: Rng>(state_dim: usize, rng: &mut R) -> Self {
        let mut g = Self {
            direction: vec![0.0; state_dim],
            offset: vec![0.0; state_dim],
            codec: None,
        };
        g.reinit(rng);
        g
    }

    pub fn from_parts(direction: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        check_dim("line offset", direction.len(), offset.len())?;
        if direction.iter().all(|&d| d == 0.0) {
            return Err(Error::State("line direction must be nonzero".into()));
        }
        Ok(Self {
            direction,
            offset,
            codec: None,
        })
    }

    /// Candidates are passed through `codec` before clamping.
    pub fn with_codec(mut self, codec: Option<StateCodec>) -> Self {
        self.codec = codec;
        self
    }

    pub fn reinit<R: Rng>(&mut self, rng: &mut R) {
        let dim = self.direction.len();
        loop {
            let d: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                self.direction = d.iter().map(|v| 0.5 * v / norm).collect();
                break;
            }
        }
        self.offset = (0..dim).map(|_| rng.random::<f64>()).collect();
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Affine image of a scalar input, before codec and clamping.
    pub fn map(&self, v: f64) -> Vec<f64> {
        self.offset
            .iter()
            .zip(&self.direction)
            .map(|(b, d)| b + v * d)
            .collect()
    }

    /// Candidate states for the given scalar inputs.
    pub fn candidates_from(&self, inputs: &[f64]) -> Array2<f64> {
        let dim = self.direction.len();
        let mut out = Array2::zeros((inputs.len(), dim));
        for (row, &v) in inputs.iter().enumerate() {
            let mut x = self.map(v);
            if let Some(c) = self.codec {
                x = c.apply(&x);
            }
            clamp_to_box(&mut x);
            out.row_mut(row).assign(&ndarray::ArrayView1::from(&x[..]));
        }
        out
    }

    /// `n` candidates from inputs uniform on `[-1, 1]`.
    pub fn sample_candidates<R: Rng>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let inputs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        self.candidates_from(&inputs)
    }
}

/// Index of the first maximum; `None` for an empty slice.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Picks the candidate the ensemble disagrees on most (lowest index on ties).
pub fn select_exploration_state(cands: &Array2<f64>, ens: &EstimatorEnsemble) -> Result<(usize, f64)> {
    if cands.nrows() == 0 {
        return Err(Error::State("no exploration candidates".into()));
    }
    let scores = ens.disagreement(cands.view())?;
    let i = argmax_first(&scores).expect("nonempty");
    Ok((i, scores[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_line() {
        let a = LineGenerator::random(5, &mut ChaCha8Rng::seed_from_u64(3));
        let b = LineGenerator::random(5, &mut ChaCha8Rng::seed_from_u64(3));
        let c = LineGenerator::random(5, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_ne!(a.direction(), c.direction());
        let norm = a.direction().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_line() {
        let g = LineGenerator::from_parts(vec![1.0, 0.0, 0.0], vec![0.0; 3]).unwrap();
        let c = g.candidates_from(&[0.0, 1.0]);
        assert_eq!(c.row(0).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(c.row(1).to_vec(), vec![1.0, 0.0, 0.0]);
        assert!(LineGenerator::from_parts(vec![0.0; 2], vec![0.5; 2]).is_err());
    }

    #[test]
    fn candidates_stay_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let g = LineGenerator::random(4, &mut rng);
            let c = g.sample_candidates(64, &mut rng);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let g = LineGenerator::random(4, &mut rng);
        assert_eq!(g.sample_candidates(1, &mut rng).nrows(), 1);
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax_first(&[0.1, 0.5, 0.2]), Some(1));
        assert_eq!(argmax_first(&[0.3, 0.3, 0.3]), Some(0));
        assert_eq!(argmax_first(&[0.7]), Some(0));
        assert_eq!(argmax_first(&[]), None);
    }
}
