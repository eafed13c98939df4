//! Small dense linear algebra, quadrature and statistics helpers.
//!
//! These power the self-check routes of [`crate::checks`]: the dense LU
//! quadratic form is the independent algebraic route against which the
//! sum-of-squares decomposition is verified, and the tensor Gauss-Legendre
//! rule evaluates the mass and Chapman-Kolmogorov integrals.

use crate::error::{KfpError, Result};

/// In-place LU decomposition with partial pivoting. Returns the pivot
/// permutation and the parity sign, or an error on (numerical) singularity.
fn lu_decompose(a: &mut [Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = a.len();
    let mut piv: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for k in 0..n {
        let (imax, vmax) = (k..n)
            .map(|i| (i, a[i][k].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if vmax == 0.0 {
            return Err(KfpError::numerical("lu", "singular matrix"));
        }
        if imax != k {
            a.swap(imax, k);
            piv.swap(imax, k);
            sign = -sign;
        }
        for i in (k + 1)..n {
            let f = a[i][k] / a[k][k];
            a[i][k] = f;
            for j in (k + 1)..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    Ok((piv, sign))
}

/// Determinant of a small dense matrix by LU elimination.
pub fn lu_det(matrix: &[Vec<f64>]) -> Result<f64> {
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let (_, sign) = lu_decompose(&mut a)?;
    Ok(sign * (0..a.len()).map(|i| a[i][i]).product::<f64>())
}

/// Solves `A x = b` for a small dense `A`.
pub fn lu_solve(matrix: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let (piv, _) = lu_decompose(&mut a)?;
    let mut x: Vec<f64> = piv.iter().map(|&i| b[i]).collect();
    for i in 0..n {
        for j in 0..i {
            x[i] = x[i] - a[i][j] * x[j];
        }
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            x[i] = x[i] - a[i][j] * x[j];
        }
        x[i] /= a[i][i];
    }
    Ok(x)
}

/// Quadratic form `delta . C^{-1} delta` via an equilibrated dense solve.
///
/// The covariance blocks scale like `t^3` against `t`, so the raw system is
/// badly conditioned for small `t`; symmetric diagonal scaling restores an
/// O(1) condition number without touching the algebraic route.
pub fn inverse_quadratic_form(cov: &[Vec<f64>], delta: &[f64]) -> Result<f64> {
    let n = cov.len();
    let scale: Vec<f64> = (0..n).map(|i| 1.0 / cov[i][i].sqrt()).collect();
    if !scale.iter().all(|s| s.is_finite()) {
        return Err(KfpError::numerical("inverse_quadratic_form", "non-positive diagonal"));
    }
    let scaled: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| cov[i][j] * scale[i] * scale[j]).collect())
        .collect();
    let rhs: Vec<f64> = (0..n).map(|i| delta[i] * scale[i]).collect();
    let w = lu_solve(&scaled, &rhs)?;
    Ok(rhs.iter().zip(&w).map(|(r, w)| r * w).sum())
}

const GL_NODES_16: [f64; 8] = [
    0.09501250983763744,
    0.28160355077925891,
    0.45801677765722739,
    0.61787624440264375,
    0.75540440835500303,
    0.86563120238783174,
    0.94457502307323258,
    0.98940093499164993,
];
const GL_WEIGHTS_16: [f64; 8] = [
    0.18945061045506850,
    0.18260341504492359,
    0.16915651939500254,
    0.14959598881657673,
    0.12462897125553387,
    0.09515851168249278,
    0.06225352393864789,
    0.02715245941175409,
];

/// Composite 16-point Gauss-Legendre rule on `[a, b]` with `panels` panels.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for (x, w) in GL_NODES_16.iter().zip(&GL_WEIGHTS_16) {
            s += w * (f(mid + half * x) + f(mid - half * x));
        }
        total += s * half;
    }
    total
}

/// Tensor quadrature of `f(u, v)` over `[a0,b0] x [a1,b1]`.
pub fn integrate_2d<F: Fn(f64, f64) -> f64 + Sync>(
    f: &F,
    a0: f64,
    b0: f64,
    a1: f64,
    b1: f64,
    panels: usize,
) -> f64 {
    integrate_1d(&|u| integrate_1d(&|v| f(u, v), a1, b1, panels), a0, b0, panels)
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Merges per-shard statistics in a fixed order (shard index), so parallel
/// reductions stay bit-reproducible.
pub fn merge_stats(shards: &[RunningStats]) -> RunningStats {
    let mut out = RunningStats::default();
    for s in shards {
        if s.n == 0 {
            continue;
        }
        if out.n == 0 {
            out = *s;
            continue;
        }
        let n1 = out.n as f64;
        let n2 = s.n as f64;
        let d = s.mean - out.mean;
        let n = n1 + n2;
        out.mean += d * n2 / n;
        out.m2 += s.m2 + d * d * n1 * n2 / n;
        out.n += s.n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lu_solves_and_dets() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        assert_relative_eq!(lu_det(&a).unwrap(), 5.0, max_relative = 1e-14);
        let x = lu_solve(&a, &[3.0, 5.0]).unwrap();
        assert_relative_eq!(x[0], 0.8, max_relative = 1e-13);
        assert_relative_eq!(x[1], 1.4, max_relative = 1e-13);
    }

    #[test]
    fn quadratic_form_matches_hand_inverse() {
        let c = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
        // inverse = 1/1.75 [[1, -0.5], [-0.5, 2]]
        let d = [1.0, -1.0];
        let expected = (1.0 + 0.5 + 0.5 + 2.0) / 1.75;
        assert_relative_eq!(inverse_quadratic_form(&c, &d).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn gauss_legendre_integrates_gaussian_mass() {
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let m = integrate_1d(&f, -10.0, 10.0, 20);
        assert_relative_eq!(m, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn running_stats_match_direct_formulas() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let mut s = RunningStats::default();
        for x in xs {
            s.push(x);
        }
        assert_relative_eq!(s.mean(), 3.75, max_relative = 1e-15);
        assert_relative_eq!(s.variance(), 9.583333333333334, max_relative = 1e-12);
        let halves = [
            {
                let mut a = RunningStats::default();
                a.push(1.0);
                a.push(2.0);
                a
            },
            {
                let mut b = RunningStats::default();
                b.push(4.0);
                b.push(8.0);
                b
            },
        ];
        let merged = merge_stats(&halves);
        assert_relative_eq!(merged.mean(), s.mean(), max_relative = 1e-14);
        assert_relative_eq!(merged.variance(), s.variance(), max_relative = 1e-14);
    }
}
