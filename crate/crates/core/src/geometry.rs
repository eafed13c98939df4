//! Position domain `O`, its boundary geometry and the classification of
//! phase-space points against the partition of `∂D = ∂O x R^d` into
//! outgoing (`p . n > 0`), tangential (`p . n = 0`) and incoming
//! (`p . n < 0`) boundary sets.
//!
//! Only intervals (d = 1) and balls ship: both have exact closed-form signed
//! distances and normals and satisfy the uniform interior/exterior sphere
//! condition, so boundary statistics test the dynamics rather than the
//! geometry.

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::phase::PhaseVector;

/// Geometry of the open position domain `O`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// `O = (a, b)` in dimension 1.
    Interval { a: f64, b: f64 },
    /// Euclidean ball of the given center and radius.
    Ball { center: Vec<f64>, radius: f64 },
}

/// Which stratum of `closure(D)` a phase point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryClass {
    Interior,
    Exterior,
    /// Outgoing momentum: `p . n(q) > tol`.
    GammaPlus,
    /// Tangential momentum: `|p . n(q)| <= tol`.
    GammaZero,
    /// Incoming momentum: `p . n(q) < -tol`.
    GammaMinus,
}

/// Result of classifying a phase point against the boundary partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryClassification {
    pub class: BoundaryClass,
    /// `p . n(q)` at the (nearest) boundary point; 0 for deep interior/exterior.
    pub normal_dot: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Interval { a, b } => {
                if !(a < b) || !a.is_finite() || !b.is_finite() {
                    return Err(KfpError::invalid("domain", format!("interval needs a < b, got [{a}, {b}]")));
                }
            }
            DomainSpec::Ball { center, radius } => {
                if center.is_empty() || !center.iter().all(|c| c.is_finite()) {
                    return Err(KfpError::invalid("domain", "ball center must be finite and non-empty"));
                }
                if !(radius > &0.0) || !radius.is_finite() {
                    return Err(KfpError::invalid("domain", format!("ball radius must be > 0, got {radius}")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Interval { .. } => 1,
            DomainSpec::Ball { center, .. } => center.len(),
        }
    }

    /// Radius of the uniform interior sphere condition.
    pub fn interior_sphere_radius(&self) -> f64 {
        match self {
            DomainSpec::Interval { a, b } => 0.5 * (b - a),
            DomainSpec::Ball { radius, .. } => *radius,
        }
    }

    /// Relative tolerance used for boundary membership tests.
    pub fn geom_tol(&self) -> f64 {
        1e-12 * self.length_scale()
    }

    pub fn length_scale(&self) -> f64 {
        match self {
            DomainSpec::Interval { a, b } => (b - a).abs().max(a.abs()).max(b.abs()).max(1.0),
            DomainSpec::Ball { center, radius } => {
                radius.max(center.iter().fold(0.0f64, |m, c| m.max(c.abs()))).max(1.0)
            }
        }
    }

    /// Signed Euclidean distance to `∂O`: positive inside, negative outside,
    /// zero on the boundary. 1-Lipschitz.
    pub fn signed_distance(&self, q: &[f64]) -> f64 {
        match self {
            DomainSpec::Interval { a, b } => (q[0] - a).min(b - q[0]),
            DomainSpec::Ball { center, radius } => radius - dist(q, center),
        }
    }

    /// Unit outward normal at the boundary point nearest to `q`.
    ///
    /// Total function; see [`DomainSpec::outward_normal`] for the checked
    /// variant restricted to boundary points. For a ball center the normal
    /// is ill-defined and the first axis direction is returned.
    pub fn normal_at_nearest(&self, q: &[f64]) -> Vec<f64> {
        match self {
            DomainSpec::Interval { a, b } => {
                // nearest endpoint; outward is -1 at a, +1 at b
                if (q[0] - a).abs() <= (b - q[0]).abs() {
                    vec![-1.0]
                } else {
                    vec![1.0]
                }
            }
            DomainSpec::Ball { center, .. } => {
                let r = dist(q, center);
                if r == 0.0 {
                    let mut n = vec![0.0; center.len()];
                    n[0] = 1.0;
                    return n;
                }
                q.iter().zip(center).map(|(qi, ci)| (qi - ci) / r).collect()
            }
        }
    }

    /// Unit outward normal `n(q)` for `q` on `∂O` (within `geom_tol`).
    ///
    /// Satisfies `grad signed_distance(q) = -n(q)`.
    pub fn outward_normal(&self, q: &[f64]) -> Result<Vec<f64>> {
        if self.signed_distance(q).abs() > self.geom_tol() {
            return Err(KfpError::invalid(
                "q",
                format!("not on the boundary: signed distance {}", self.signed_distance(q)),
            ));
        }
        Ok(self.normal_at_nearest(q))
    }

    /// Classifies `x` against the partition of `closure(D)`.
    ///
    /// Interior/exterior are decided by the sign of the signed distance
    /// beyond `geom_tol`; on the boundary band the momentum component along
    /// the outward normal decides between the three boundary strata, with
    /// `tol` the half-width of the tangential band (0 for analysis, a
    /// positive band for statistics).
    pub fn classify(&self, x: &PhaseVector, tol: f64) -> BoundaryClassification {
        let sd = self.signed_distance(x.q());
        let geom_tol = self.geom_tol();
        if sd > geom_tol {
            return BoundaryClassification { class: BoundaryClass::Interior, normal_dot: 0.0 };
        }
        if sd < -geom_tol {
            return BoundaryClassification { class: BoundaryClass::Exterior, normal_dot: 0.0 };
        }
        let n = self.normal_at_nearest(x.q());
        let s: f64 = x.p().iter().zip(&n).map(|(p, n)| p * n).sum();
        let class = if s > tol {
            BoundaryClass::GammaPlus
        } else if s < -tol {
            BoundaryClass::GammaMinus
        } else {
            BoundaryClass::GammaZero
        };
        BoundaryClassification { class, normal_dot: s }
    }

    /// Bounding box of `O` (used by grid and cover constructions).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            DomainSpec::Interval { a, b } => (vec![*a], vec![*b]),
            DomainSpec::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn interval_signed_distance() {
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        assert_eq!(dom.signed_distance(&[0.0]), 1.0);
        assert_eq!(dom.signed_distance(&[1.0]), 0.0);
        assert_eq!(dom.signed_distance(&[1.5]), -0.5);
    }

    #[test]
    fn ball_signed_distance() {
        let dom = DomainSpec::Ball { center: vec![0.0, 0.0], radius: 2.0 };
        assert_relative_eq!(dom.signed_distance(&[3.0, 0.0]), -1.0, max_relative = 1e-15);
        assert_relative_eq!(dom.signed_distance(&[0.0, 0.0]), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn interval_normals() {
        let dom = DomainSpec::Interval { a: -2.0, b: 3.0 };
        assert_eq!(dom.outward_normal(&[3.0]).unwrap(), vec![1.0]);
        assert_eq!(dom.outward_normal(&[-2.0]).unwrap(), vec![-1.0]);
        assert!(dom.outward_normal(&[0.0]).is_err());
    }

    #[test]
    fn ball_normal_is_radial() {
        let dom = DomainSpec::Ball { center: vec![0.0, 0.0, 0.0], radius: 2.0 };
        let n = dom.outward_normal(&[2.0, 0.0, 0.0]).unwrap();
        assert_eq!(n, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn eikonal_via_finite_differences() {
        // grad signed_distance = -n(q) at boundary points, |grad| = 1 nearby.
        let dom = DomainSpec::Ball { center: vec![0.2, -0.1], radius: 1.5 };
        let q = [0.2 + 1.5 / 2f64.sqrt(), -0.1 + 1.5 / 2f64.sqrt()];
        let n = dom.outward_normal(&q).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let g = (dom.signed_distance(&qp) - dom.signed_distance(&qm)) / (2.0 * h);
            assert_relative_eq!(g, -n[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn classify_examples() {
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let plus = dom.classify(&PhaseVector::new_1d(1.0, 0.5), 0.0);
        assert_eq!(plus.class, BoundaryClass::GammaPlus);
        assert_relative_eq!(plus.normal_dot, 0.5);
        let minus = dom.classify(&PhaseVector::new_1d(-1.0, 0.5), 0.0);
        assert_eq!(minus.class, BoundaryClass::GammaMinus);
        assert_relative_eq!(minus.normal_dot, -0.5);

        let ball = DomainSpec::Ball { center: vec![0.0, 0.0], radius: 1.0 };
        let tangent = ball.classify(
            &PhaseVector::new(vec![1.0, 0.0], vec![0.0, 3.0]).unwrap(),
            0.0,
        );
        assert_eq!(tangent.class, BoundaryClass::GammaZero);
    }

    proptest! {
        #[test]
        fn signed_distance_is_lipschitz(
            q1 in -3.0f64..3.0, q2 in -3.0f64..3.0,
        ) {
            let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
            let lhs = (dom.signed_distance(&[q1]) - dom.signed_distance(&[q2])).abs();
            prop_assert!(lhs <= (q1 - q2).abs() + 1e-12);
        }

        #[test]
        fn classification_invariant_under_momentum_scaling(
            p in prop::array::uniform2(-2.0f64..2.0),
            scale in 0.01f64..100.0,
        ) {
            let dom = DomainSpec::Ball { center: vec![0.0, 0.0], radius: 1.0 };
            let x = PhaseVector::new(vec![1.0, 0.0], p.to_vec()).unwrap();
            let xs = PhaseVector::new(vec![1.0, 0.0], p.iter().map(|v| v * scale).collect()).unwrap();
            prop_assert_eq!(dom.classify(&x, 0.0).class, dom.classify(&xs, 0.0).class);
        }
    }
}
