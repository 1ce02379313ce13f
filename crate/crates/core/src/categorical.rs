//! Probability vectors over a finite set.
//!
//! Used for posteriors and priors over a finite parameter space as well as
//! target/behavior policies over the action set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on |sum - 1| accepted at construction.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// A probability vector: nonnegative weights summing to 1 within
/// [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Categorical {
    weights: Vec<f64>,
}

impl Categorical {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut sum = 0.0;
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::NegativeArgument {
                    name: "probability",
                    value: w,
                });
            }
            sum += w;
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution {
                sum,
                tolerance: SUM_TOLERANCE,
            });
        }
        Ok(Self { weights })
    }

    /// Normalize an arbitrary nonnegative vector with positive sum.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut sum = 0.0;
        for &w in raw {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::NegativeArgument {
                    name: "weight",
                    value: w,
                });
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution {
                sum,
                tolerance: SUM_TOLERANCE,
            });
        }
        let mut weights: Vec<f64> = raw.iter().map(|&w| w / sum).collect();
        // Float division can leave the sum a few ulps off; absorb the
        // residual into the largest entry so the invariant holds exactly
        // enough for downstream constructors.
        let total: f64 = weights.iter().sum();
        let residual = 1.0 - total;
        if residual != 0.0 {
            let argmax = weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            weights[argmax] += residual;
        }
        Self::new(weights)
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0, "uniform distribution needs at least one atom");
        let w = 1.0 / len as f64;
        let mut weights = vec![w; len];
        let total: f64 = weights.iter().sum();
        weights[0] += 1.0 - total;
        Self { weights }
    }

    pub fn point_mass(len: usize, index: usize) -> Self {
        assert!(index < len, "point mass index out of range");
        let mut weights = vec![0.0; len];
        weights[index] = 1.0;
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, index: usize) -> f64 {
        self.weights[index]
    }

    /// Draw an index by inverse CDF over the weights.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

impl TryFrom<Vec<f64>> for Categorical {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights)
    }
}

impl From<Categorical> for Vec<f64> {
    fn from(dist: Categorical) -> Self {
        dist.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn rejects_negative_weight() {
        assert!(Categorical::new(vec![0.5, -0.5, 1.0]).is_err());
    }

    #[test]
    fn rejects_bad_sum() {
        assert!(Categorical::new(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn normalized_fixes_sum() {
        let c = Categorical::normalized(&[1.0, 2.0, 3.0]).unwrap();
        assert!((c.weights().iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        assert!((c.get(2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_sums_to_one() {
        for len in [1, 2, 3, 7, 100] {
            let c = Categorical::uniform(len);
            assert!((c.weights().iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        }
    }

    #[test]
    fn sampling_matches_weights() {
        let c = Categorical::new(vec![0.25, 0.75]).unwrap();
        let mut rng = stream_rng(11, 0);
        let n = 100_000;
        let ones = (0..n).filter(|_| c.sample(&mut rng) == 1).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.75).abs() < 3.0 * (0.25f64 * 0.75 / n as f64).sqrt());
    }

    #[test]
    fn point_mass_always_samples_its_atom() {
        let c = Categorical::point_mass(4, 2);
        let mut rng = stream_rng(3, 0);
        for _ in 0..100 {
            assert_eq!(c.sample(&mut rng), 2);
        }
    }
}
