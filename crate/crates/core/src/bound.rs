//! Explicit Gaussian upper bound on the transition density of the Langevin
//! process with bounded force, as the series
//!
//! ```text
//! p_t(x, y) <= alpha^{-d} sum_{j>=0} (K sqrt(pi t))^j / Gamma((j+1)/2) * p_hat^(alpha)_t(x, y)
//! K = ||F|| c_alpha (1 + sqrt(gamma_- T)) / sigma
//! ```
//!
//! evaluated with a certified truncation tail: once the two-step term ratio
//! `term(j+2)/term(j) = 2 K^2 pi t / (j+1)` falls below 1, the even and odd
//! tails are each dominated by a geometric series. For the absorbed process
//! the same bound holds with `||F||` the sup norm over the position domain
//! only. All products are carried in log space; the coefficients
//! `(K sqrt(pi t))^j` overflow long before the Gamma denominator wins.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{KfpError, Result};
use crate::kernel::GaussianKernelSpec;
use crate::phase::PhaseVector;

/// Parameters of the series bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametrixBoundSpec {
    pub kernel: GaussianKernelSpec,
    /// `||F||_inf` (whole space) or `||F||_{L^inf(D)}` (absorbed process).
    pub f_sup: f64,
    /// Horizon `T`; the bound is valid for `t` in `(0, T]`.
    pub horizon: f64,
    /// Gradient domination constant `c_alpha` for `kernel.alpha` and
    /// `kernel.dim` (see [`crate::kernel::gradient_bound_constant`]).
    pub c_alpha: f64,
}

/// A certified evaluation of the series bound at one `(t, x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    /// Upper bound including the truncation tail: partial sum + tail, times
    /// `alpha^{-d} p_hat^(alpha)_t(x, y)`.
    pub value: f64,
    /// Contribution of the certified tail bound to `value`.
    pub truncation_tail: f64,
    /// Index of the last term included in the partial sum.
    pub terms_used: usize,
}

const TERM_CAP: usize = 100_000;

impl ParametrixBoundSpec {
    pub fn new(kernel: GaussianKernelSpec, f_sup: f64, horizon: f64, c_alpha: f64) -> Result<Self> {
        if !(f_sup >= 0.0) || !f_sup.is_finite() {
            return Err(KfpError::invalid("f_sup", format!("must be >= 0, got {f_sup}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(KfpError::invalid("horizon", format!("must be > 0, got {horizon}")));
        }
        if !(c_alpha > 0.0) || !c_alpha.is_finite() {
            return Err(KfpError::invalid("c_alpha", format!("must be > 0, got {c_alpha}")));
        }
        Ok(ParametrixBoundSpec { kernel, f_sup, horizon, c_alpha })
    }

    /// Negative part of the friction, `gamma_- = max(-gamma, 0)`.
    pub fn gamma_minus(&self) -> f64 {
        (-self.kernel.gamma).max(0.0)
    }

    /// Base factor `K = ||F|| c_alpha (1 + sqrt(gamma_- T)) / sigma`.
    pub fn base_factor(&self) -> f64 {
        self.f_sup * self.c_alpha * (1.0 + (self.gamma_minus() * self.horizon).sqrt()) / self.kernel.sigma
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t > 0.0 && t <= self.horizon) {
            return Err(KfpError::invalid(
                "t",
                format!("must lie in (0, {}], got {t}", self.horizon),
            ));
        }
        Ok(())
    }

    fn log_term(&self, j: usize, t: f64) -> f64 {
        let base = self.base_factor() * (std::f64::consts::PI * t).sqrt();
        let log_base = if base == 0.0 {
            if j == 0 {
                0.0
            } else {
                return f64::NEG_INFINITY;
            }
        } else {
            j as f64 * base.ln()
        };
        log_base - ln_gamma((j as f64 + 1.0) / 2.0)
    }

    /// Dimensionless series coefficient
    /// `(||F|| c_alpha (1 + sqrt(gamma_- T)) sqrt(pi t) / sigma)^j / Gamma((j+1)/2)`.
    pub fn series_term(&self, j: usize, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.log_term(j, t).exp())
    }

    /// Sums the series with a certified geometric tail bound so the result is
    /// a true upper bound; the relative tail contribution is at most
    /// `rel_tail_tol`.
    pub fn series_sum(&self, t: f64, rel_tail_tol: f64) -> Result<(f64, f64, usize)> {
        self.check_time(t)?;
        if !(rel_tail_tol > 0.0 && rel_tail_tol < 1.0) {
            return Err(KfpError::invalid("rel_tail_tol", "must lie in (0, 1)"));
        }
        let base = self.base_factor() * (std::f64::consts::PI * t).sqrt();
        if base == 0.0 {
            // Zero force: the series collapses to the j = 0 coefficient.
            return Ok((self.log_term(0, t).exp(), 0.0, 0));
        }
        let b2 = 2.0 * base * base; // term(j+2)/term(j) = b2 / (j+1)
        // Log-sum-exp against a running maximum to survive huge coefficients.
        let mut log_terms: Vec<f64> = Vec::with_capacity(64);
        let mut log_max = f64::NEG_INFINITY;
        let mut j = 0usize;
        loop {
            let lt = self.log_term(j, t);
            log_max = log_max.max(lt);
            log_terms.push(lt);
            // The two-step ratio decreases in j, so once the ratio at the
            // split point is < 1 both parity chains after index j are each
            // dominated by a geometric series with that first-hop ratio.
            let ratio = if j >= 1 { b2 / j as f64 } else { f64::INFINITY };
            if ratio < 0.5 && j >= 2 {
                let tail_even = log_terms[j].exp_shifted(log_max) * ratio / (1.0 - ratio);
                let tail_odd = log_terms[j - 1].exp_shifted(log_max) * ratio / (1.0 - ratio);
                let partial: f64 = log_terms.iter().map(|lt| lt.exp_shifted(log_max)).sum();
                let tail = tail_even + tail_odd;
                if tail <= rel_tail_tol * partial {
                    let scale = log_max.exp();
                    if !scale.is_finite() {
                        return Err(KfpError::numerical(
                            "series_sum",
                            format!("series maximum overflows: log max term {log_max}"),
                        ));
                    }
                    return Ok(((partial + tail) * scale, tail * scale, j));
                }
            }
            j += 1;
            if j > TERM_CAP {
                return Err(KfpError::numerical(
                    "series_sum",
                    format!("tail tolerance {rel_tail_tol} unreachable within {TERM_CAP} terms"),
                ));
            }
        }
    }

    /// Evaluates the full density bound
    /// `alpha^{-d} (partial sum + tail) p_hat^(alpha)_t(x, y)`.
    pub fn evaluate_bound(
        &self,
        t: f64,
        x: &PhaseVector,
        y: &PhaseVector,
        rel_tail_tol: f64,
    ) -> Result<BoundValue> {
        let (sum, tail, terms_used) = self.series_sum(t, rel_tail_tol)?;
        let log_kernel = self.kernel.log_density_alpha(t, x, y)?;
        let log_prefactor = -(self.kernel.dim as f64) * self.kernel.alpha.ln();
        let scale = (log_prefactor + log_kernel).exp();
        Ok(BoundValue {
            value: sum * scale,
            truncation_tail: tail * scale,
            terms_used,
        })
    }
}

/// Shifted exponential `exp(self - offset)`, used by the log-sum-exp above.
trait ExpShifted {
    fn exp_shifted(self, offset: f64) -> f64;
}

impl ExpShifted for f64 {
    #[inline]
    fn exp_shifted(self, offset: f64) -> f64 {
        (self - offset).exp()
    }
}
