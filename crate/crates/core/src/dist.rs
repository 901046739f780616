//! Finite probability distributions over a state's action list.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that weights sum to one.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("degenerate distribution: no strictly positive weight")]
    DegenerateDistribution,
    #[error("domain mismatch: {0} vs {1} entries")]
    DomainMismatch(usize, usize),
    #[error("weights do not form a distribution (sum {0})")]
    NotNormalized(f64),
}

/// A distribution over a state's actions, indexed by local action index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Wraps weights that already form a distribution.
    pub fn new(weights: Vec<f64>) -> Result<Self, DistError> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(0.0..=1.0 + SUM_TOLERANCE).contains(w))
            || (sum - 1.0).abs() > SUM_TOLERANCE
        {
            return Err(DistError::NotNormalized(sum));
        }
        Ok(Distribution(weights))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over an empty set");
        Distribution(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, at: usize) -> Self {
        let mut w = vec![0.0; n];
        w[at] = 1.0;
        Distribution(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, action: usize) -> f64 {
        self.0[action]
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
    }

    /// Inverse-CDF sampling over the canonical order. Zero-weight entries are
    /// never returned, even under rounding at the tail.
    pub fn sample(&self, u: f64) -> usize {
        sample_weights(&self.0, u)
    }
}

/// Clamps negative entries to zero and rescales to sum one.
pub fn normalize(raw: &[f64]) -> Result<Distribution, DistError> {
    let mut out = raw.to_vec();
    normalize_in_place(&mut out)?;
    Ok(Distribution(out))
}

pub(crate) fn normalize_in_place(weights: &mut [f64]) -> Result<(), DistError> {
    let mut sum = 0.0;
    for w in weights.iter_mut() {
        // NaN is treated like a negative weight.
        if !(*w > 0.0) {
            *w = 0.0;
        }
        sum += *w;
    }
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(DistError::DegenerateDistribution);
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    Ok(())
}

/// Total variation distance `½ Σ |p(a) − q(a)|`.
pub fn tv_distance(p: &Distribution, q: &Distribution) -> Result<f64, DistError> {
    tv_weights(p.weights(), q.weights())
}

pub(crate) fn tv_weights(p: &[f64], q: &[f64]) -> Result<f64, DistError> {
    if p.len() != q.len() {
        return Err(DistError::DomainMismatch(p.len(), q.len()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

pub fn sample_weights(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = Some(i);
        if u < acc {
            return i;
        }
    }
    last_positive.expect("sampling from a distribution without support")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_keeps_normalized_input() {
        let d = normalize(&[0.5, 0.5]).unwrap();
        assert_eq!(d.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn normalize_clamps_negatives() {
        let d = normalize(&[0.6, -0.1]).unwrap();
        assert_eq!(d.weights(), &[1.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_empty_support() {
        assert_eq!(normalize(&[-1.0, -2.0]), Err(DistError::DegenerateDistribution));
        assert_eq!(normalize(&[0.0, 0.0]), Err(DistError::DegenerateDistribution));
    }

    #[test]
    fn tv_examples() {
        let a = Distribution::new(vec![1.0, 0.0]).unwrap();
        let b = Distribution::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        let p = Distribution::new(vec![0.75, 0.25]).unwrap();
        let q = Distribution::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(tv_distance(&p, &q).unwrap(), 0.5);
    }

    #[test]
    fn tv_domain_mismatch() {
        let a = Distribution::uniform(2);
        let b = Distribution::uniform(3);
        assert_eq!(tv_distance(&a, &b), Err(DistError::DomainMismatch(2, 3)));
    }

    #[test]
    fn sampling_skips_zero_weights() {
        let w = [0.0, 0.5, 0.0, 0.5];
        assert_eq!(sample_weights(&w, 0.0), 1);
        assert_eq!(sample_weights(&w, 0.49), 1);
        assert_eq!(sample_weights(&w, 0.5), 3);
        // rounding at the tail falls back to the last supported action
        assert_eq!(sample_weights(&[0.3, 0.3, 0.0], 0.999_999), 1);
    }
}
