use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};

/// A point `x = (q, p)` of phase space `R^d x R^d`.
///
/// `q` is the position, `p` the momentum (the mass is the identity, so
/// momentum and velocity coincide). Both components always have the same
/// dimension `d >= 1` and finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseVector {
    q: Vec<f64>,
    p: Vec<f64>,
}

impl PhaseVector {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.len() != p.len() {
            return Err(KfpError::invalid(
                "phase vector",
                format!("q and p must share a dimension >= 1, got {} and {}", q.len(), p.len()),
            ));
        }
        if !q.iter().chain(p.iter()).all(|v| v.is_finite()) {
            return Err(KfpError::invalid("phase vector", "non-finite component"));
        }
        Ok(PhaseVector { q, p })
    }

    /// One-dimensional convenience constructor.
    pub fn new_1d(q: f64, p: f64) -> Self {
        PhaseVector { q: vec![q], p: vec![p] }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub(crate) fn from_parts_unchecked(q: Vec<f64>, p: Vec<f64>) -> Self {
        PhaseVector { q, p }
    }

    /// Flattens to `(q_1..q_d, p_1..p_d)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim());
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.p);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 || flat.is_empty() {
            return Err(KfpError::invalid("flat vector", "length must be even and positive"));
        }
        let d = flat.len() / 2;
        PhaseVector::new(flat[..d].to_vec(), flat[d..].to_vec())
    }

    /// Momentum flip `(q, p) -> (q, -p)`.
    pub fn flip_momentum(&self) -> Self {
        PhaseVector {
            q: self.q.clone(),
            p: self.p.iter().map(|v| -v).collect(),
        }
    }

    /// Euclidean distance in phase space.
    pub fn distance(&self, other: &Self) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}
