//! Feynman-Kac Monte Carlo solver for the kinetic Fokker-Planck
//! initial-boundary value problem, adjoint-process simulation, kernel
//! density estimation of the absorbed transition density, and duality
//! (reversibility) checks.
//!
//! The solution of the problem with initial datum `f` on `D ∪ Γ⁻` and
//! boundary datum `g` on `Γ⁺ ∪ Γ⁰` is represented as
//!
//! ```text
//! u(t, x) = E[ 1{tau > t} f(X_t) + 1{tau <= t} g(X_tau) ]
//! ```
//!
//! and estimated by averaging over absorbed paths. The adjoint process
//! (generator `L* - d gamma`) is simulated by running the ordinary dynamics
//! with reversed friction from the momentum-flipped start and flipping the
//! momentum in every output; its absorbed density is tied to the forward one
//! by `p~^D_t(x, y) = e^{-d gamma t} p^D_t(y, x)`.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::force::ForceField;
use crate::geometry::{BoundaryClass, DomainSpec};
use crate::kernel::GaussianKernelSpec;
use crate::numeric::{merge_stats, RunningStats};
use crate::phase::PhaseVector;
use crate::rng::{substream, StreamDomain};
use crate::sde::{simulate_absorbed, AbsorbedPathRecord, PathStatus, SimConfig};

/// Data of the initial-boundary value problem at one evaluation point.
pub struct FKProblem<'a> {
    /// Initial datum on `D ∪ Γ⁻`.
    pub f: &'a (dyn Fn(&PhaseVector) -> f64 + Sync),
    /// Boundary datum on `Γ⁺ ∪ Γ⁰`.
    pub g: &'a (dyn Fn(&PhaseVector) -> f64 + Sync),
    /// Declared sup norms, used for the a-priori estimate bound.
    pub f_sup: f64,
    pub g_sup: f64,
    pub t: f64,
    pub x: PhaseVector,
}

/// Monte Carlo estimate with its sampling error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FKEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: u64,
    pub dt: f64,
}

/// Runs `n` independent paths on a worker pool, reducing per-path values
/// through shard statistics merged in index order (bit-reproducible for any
/// worker count).
pub fn monte_carlo_mean<F>(
    n_paths: u64,
    workers: usize,
    seed: u64,
    domain: StreamDomain,
    path_value: F,
) -> Result<FKEstimate>
where
    F: Fn(u64, &mut ChaCha8Rng) -> Result<f64> + Sync,
{
    if n_paths == 0 {
        return Err(KfpError::invalid("n_paths", "must be >= 1"));
    }
    let shard_size: u64 = 4096;
    let n_shards = n_paths.div_ceil(shard_size);
    let run = || -> Result<Vec<RunningStats>> {
        (0..n_shards)
            .into_par_iter()
            .map(|s| {
                let lo = s * shard_size;
                let hi = ((s + 1) * shard_size).min(n_paths);
                let mut stats = RunningStats::default();
                for idx in lo..hi {
                    let mut rng = substream(seed, domain, idx);
                    stats.push(path_value(idx, &mut rng)?);
                }
                Ok(stats)
            })
            .collect()
    };
    let shards = with_pool(workers, run)??;
    let stats = merge_stats(&shards);
    Ok(FKEstimate {
        value: stats.mean(),
        std_error: stats.std_error(),
        n_paths,
        dt: 0.0,
    })
}

pub(crate) fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        Ok(job())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| KfpError::numerical("thread_pool", e.to_string()))?;
        Ok(pool.install(job))
    }
}

/// Estimates `u(t, x)` by the Feynman-Kac representation.
pub fn estimate_u(
    problem: &FKProblem,
    force: &ForceField,
    spec: &GaussianKernelSpec,
    dom: &DomainSpec,
    n_paths: u64,
    config: &SimConfig,
) -> Result<FKEstimate> {
    if !(problem.t > 0.0) {
        return Err(KfpError::invalid("t", "must be > 0"));
    }
    let mut cfg = *config;
    cfg.horizon = problem.t;
    let mut est = monte_carlo_mean(n_paths, cfg.workers, cfg.seed, StreamDomain::Paths, |_, rng| {
        let rec = simulate_absorbed(force, spec, dom, &problem.x, &cfg, rng)?;
        Ok(match &rec.status {
            PathStatus::Survived { final_state } => (problem.f)(final_state),
            PathStatus::Absorbed { exit_state, .. } => (problem.g)(exit_state),
        })
    })?;
    est.dt = cfg.dt;
    Ok(est)
}

fn flip_record(mut rec: AbsorbedPathRecord, dom: &DomainSpec) -> AbsorbedPathRecord {
    rec.status = match rec.status {
        PathStatus::Survived { final_state } => PathStatus::Survived {
            final_state: final_state.flip_momentum(),
        },
        PathStatus::Absorbed { tau, exit_state, .. } => {
            let exit = exit_state.flip_momentum();
            let n = dom.normal_at_nearest(exit.q());
            let s: f64 = exit.p().iter().zip(&n).map(|(p, n)| p * n).sum();
            let class = if s > 0.0 {
                BoundaryClass::GammaPlus
            } else if s < 0.0 {
                BoundaryClass::GammaMinus
            } else {
                BoundaryClass::GammaZero
            };
            PathStatus::Absorbed {
                tau,
                exit_state: exit,
                class: crate::geometry::BoundaryClassification { class, normal_dot: s },
            }
        }
    };
    if let Some(states) = rec.states.take() {
        rec.states = Some(states.into_iter().map(|(t, s)| (t, s.flip_momentum())).collect());
    }
    rec
}

/// Simulates the absorbed adjoint process started at `x`.
///
/// The adjoint dynamics `dq = -p dt, dp = (-F(q) + gamma p) dt + sigma dB`
/// coincides, after the momentum flip `(q, p) -> (q, -p)`, with the ordinary
/// Langevin dynamics with friction `-gamma` started at the flipped point and
/// sharing the first exit time. Exits therefore land in `Γ⁻ ∪ Γ⁰`.
pub fn simulate_adjoint_absorbed<R: rand::Rng + ?Sized>(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    dom: &DomainSpec,
    x: &PhaseVector,
    config: &SimConfig,
    rng: &mut R,
) -> Result<AbsorbedPathRecord> {
    let diamond = GaussianKernelSpec::new(spec.dim, -spec.gamma, spec.sigma, spec.alpha)?;
    let rec = simulate_absorbed(force, &diamond, dom, &x.flip_momentum(), config, rng)?;
    Ok(flip_record(rec, dom))
}

/// Kernel density estimate of the absorbed transition density at fixed
/// `(t, x)`, evaluated at `points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub points: Vec<PhaseVector>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub bandwidth: Vec<f64>,
    /// Surviving samples entering the sum.
    pub n_samples: u64,
    /// All launched paths; the estimate is normalized by this count so its
    /// mass approximates the survival probability.
    pub n_total: u64,
}

/// Per-coordinate bandwidths for phase-space KDE: a Silverman-style factor on
/// the exact free-kernel standard deviations, `sqrt(c_qq)` for positions and
/// `sqrt(c_pp)` for momenta. The kinetic scaling (`t^3` against `t`) makes
/// isotropic bandwidths useless.
pub fn kde_bandwidth(
    spec: &GaussianKernelSpec,
    t: f64,
    n_samples: u64,
    multiplier: f64,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(KfpError::invalid("n_samples", "must be >= 1"));
    }
    let m = spec.moments(t)?;
    let dd = 2 * spec.dim;
    let exponent = -1.0 / (dd as f64 + 4.0);
    let factor = (4.0 / (dd as f64 + 2.0)).powf(-exponent) * (n_samples as f64).powf(exponent);
    let mut h = Vec::with_capacity(dd);
    for _ in 0..spec.dim {
        h.push(multiplier * factor * m.c_qq.sqrt());
    }
    for _ in 0..spec.dim {
        h.push(multiplier * factor * m.c_pp.sqrt());
    }
    Ok(h)
}

/// Gaussian-product KDE over surviving endpoints, normalized by the total
/// path count.
pub fn estimate_density_kde(
    samples: &[PhaseVector],
    n_total: u64,
    points: &[PhaseVector],
    bandwidth: &[f64],
) -> Result<DensityEstimate> {
    if samples.is_empty() {
        return Err(KfpError::invalid("samples", "no surviving samples"));
    }
    let d = samples[0].dim();
    if bandwidth.len() != 2 * d || bandwidth.iter().any(|h| !(h > &0.0)) {
        return Err(KfpError::invalid("bandwidth", "need 2d positive entries"));
    }
    if n_total < samples.len() as u64 {
        return Err(KfpError::invalid("n_total", "fewer total paths than samples"));
    }
    let log_norm: f64 = bandwidth
        .iter()
        .map(|h| (h * (2.0 * std::f64::consts::PI).sqrt()).ln())
        .sum();
    let stride = 2 * d;
    let flat: Vec<f64> = samples.iter().flat_map(|s| s.to_flat()).collect();
    let results: Vec<(f64, f64)> = points
        .par_iter()
        .map(|pt| {
            let flat_pt = pt.to_flat();
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for chunk in flat.chunks_exact(stride) {
                let mut expo = 0.0;
                for i in 0..stride {
                    let z = (flat_pt[i] - chunk[i]) / bandwidth[i];
                    expo += z * z;
                }
                let k = (-0.5 * expo - log_norm).exp();
                sum += k;
                sum_sq += k * k;
            }
            let n = n_total as f64;
            let mean = sum / n;
            // Variance over all n_total contributions, absorbed paths counting 0.
            let var = (sum_sq / n - mean * mean).max(0.0);
            (mean, (var / n).sqrt())
        })
        .collect();
    Ok(DensityEstimate {
        points: points.to_vec(),
        values: results.iter().map(|r| r.0).collect(),
        std_errors: results.iter().map(|r| r.1).collect(),
        bandwidth: bandwidth.to_vec(),
        n_samples: samples.len() as u64,
        n_total,
    })
}

/// Simulates `n` forward (or adjoint) paths to time `t` and returns the
/// surviving endpoints.
pub fn surviving_endpoints(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    dom: &DomainSpec,
    x: &PhaseVector,
    t: f64,
    n_paths: u64,
    config: &SimConfig,
    adjoint: bool,
) -> Result<Vec<PhaseVector>> {
    let mut cfg = *config;
    cfg.horizon = t;
    let domain = if adjoint { StreamDomain::PathsAdjoint } else { StreamDomain::Paths };
    let shard_size: u64 = 4096;
    let n_shards = n_paths.div_ceil(shard_size);
    let shards = with_pool(cfg.workers, || -> Result<Vec<Vec<PhaseVector>>> {
        (0..n_shards)
            .into_par_iter()
            .map(|s| {
                let lo = s * shard_size;
                let hi = ((s + 1) * shard_size).min(n_paths);
                let mut out = Vec::new();
                for idx in lo..hi {
                    let mut rng = substream(cfg.seed, domain, idx);
                    let rec = if adjoint {
                        simulate_adjoint_absorbed(force, spec, dom, x, &cfg, &mut rng)?
                    } else {
                        simulate_absorbed(force, spec, dom, x, &cfg, &mut rng)?
                    };
                    if let PathStatus::Survived { final_state } = rec.status {
                        out.push(final_state);
                    }
                }
                Ok(out)
            })
            .collect()
    })??;
    Ok(shards.into_iter().flatten().collect())
}

/// Result of the duality check between the adjoint and forward absorbed
/// densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReversibilityEstimate {
    /// `p~^D_t(x, y) / (e^{-d gamma t} p^D_t(y, x))`; 1 under exact duality.
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub forward_density: f64,
    pub forward_se: f64,
    pub adjoint_density: f64,
    pub adjoint_se: f64,
}

/// Estimates the duality ratio with a bootstrap confidence interval.
///
/// The forward density `p^D_t(y, x)` is a KDE at `x` over paths started at
/// `y`; the adjoint density `p~^D_t(x, y)` is a KDE at `y` over adjoint paths
/// started at `x`. The two estimators use independent substream families.
pub fn reversibility_ratio(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    dom: &DomainSpec,
    t: f64,
    x: &PhaseVector,
    y: &PhaseVector,
    n_paths: u64,
    bandwidth_multiplier: f64,
    config: &SimConfig,
) -> Result<ReversibilityEstimate> {
    for (name, pt) in [("x", x), ("y", y)] {
        if dom.signed_distance(pt.q()) <= dom.geom_tol() {
            return Err(KfpError::invalid("x", format!("{name} must be interior")));
        }
    }
    let h = kde_bandwidth(spec, t, n_paths, bandwidth_multiplier)?;
    let fwd_samples = surviving_endpoints(force, spec, dom, y, t, n_paths, config, false)?;
    let adj_samples = surviving_endpoints(force, spec, dom, x, t, n_paths, config, true)?;
    if fwd_samples.is_empty() || adj_samples.is_empty() {
        return Err(KfpError::numerical("reversibility", "no surviving paths"));
    }
    let fwd = estimate_density_kde(&fwd_samples, n_paths, std::slice::from_ref(x), &h)?;
    let adj = estimate_density_kde(&adj_samples, n_paths, std::slice::from_ref(y), &h)?;
    let (fwd_v, fwd_se) = (fwd.values[0], fwd.std_errors[0]);
    let (adj_v, adj_se) = (adj.values[0], adj.std_errors[0]);
    for (name, v, se) in [("forward", fwd_v, fwd_se), ("adjoint", adj_v, adj_se)] {
        if v <= 3.0 * se {
            return Err(KfpError::numerical(
                "reversibility",
                format!("{name} density indistinguishable from zero: {v} +- {se}"),
            ));
        }
    }
    let factor = (-(spec.dim as f64) * spec.gamma * t).exp();
    let ratio = adj_v / (factor * fwd_v);
    // Percentile bootstrap over per-path kernel contributions. The kernel
    // sums are recomputed from per-sample weights; absorbed paths contribute
    // zero and are represented implicitly through the survivor count.
    let contrib = |samples: &[PhaseVector], pt: &PhaseVector| -> Vec<f64> {
        let flat_pt = pt.to_flat();
        let log_norm: f64 = h.iter().map(|b| (b * (2.0 * std::f64::consts::PI).sqrt()).ln()).sum();
        let stride = flat_pt.len();
        let flat: Vec<f64> = samples.iter().flat_map(|s| s.to_flat()).collect();
        flat.chunks_exact(stride)
            .map(|chunk| {
                let expo: f64 = flat_pt
                    .iter()
                    .zip(chunk)
                    .zip(&h)
                    .map(|((a, b), bw)| {
                        let z = (a - b) / bw;
                        z * z
                    })
                    .sum();
                (-0.5 * expo - log_norm).exp()
            })
            .collect()
    };
    let fwd_contrib = contrib(&fwd_samples, x);
    let adj_contrib = contrib(&adj_samples, y);
    let boots = 400;
    let mut ratios = Vec::with_capacity(boots);
    let mut rng = substream(config.seed, StreamDomain::Bootstrap, 0);
    for _ in 0..boots {
        let f_mean = bootstrap_zero_padded_mean(&fwd_contrib, n_paths, &mut rng);
        let a_mean = bootstrap_zero_padded_mean(&adj_contrib, n_paths, &mut rng);
        if f_mean > 0.0 {
            ratios.push(a_mean / (factor * f_mean));
        }
    }
    ratios.sort_by(f64::total_cmp);
    let lo = ratios[(0.025 * ratios.len() as f64) as usize];
    let hi = ratios[((0.975 * ratios.len() as f64) as usize).min(ratios.len() - 1)];
    Ok(ReversibilityEstimate {
        ratio,
        ci_low: lo,
        ci_high: hi,
        forward_density: fwd_v,
        forward_se: fwd_se,
        adjoint_density: adj_v,
        adjoint_se: adj_se,
    })
}

/// Bootstrap mean of `n_total` contributions of which only the surviving
/// ones (in `contrib`) are nonzero: binomially resample the survivor count,
/// then resample that many kernel weights.
fn bootstrap_zero_padded_mean(contrib: &[f64], n_total: u64, rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let n_surv = contrib.len() as u64;
    let p_surv = n_surv as f64 / n_total as f64;
    // Normal approximation of the binomial survivor count (n_total is large).
    let z: f64 = crate::rng::NormalSource::draw(rng);
    let mean = n_total as f64 * p_surv;
    let sd = (n_total as f64 * p_surv * (1.0 - p_surv)).sqrt();
    let resampled = (mean + sd * z).round().max(0.0) as u64;
    let mut sum = 0.0;
    for _ in 0..resampled {
        sum += contrib[rng.random_range(0..contrib.len())];
    }
    sum / n_total as f64
}

/// One row of a boundary-approach scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    /// Distance of the scanned point to `∂O`.
    pub distance: f64,
    pub estimate: f64,
    pub std_error: f64,
}

/// Survival probabilities `P(tau > t)` along a sequence of starts
/// approaching the outgoing boundary: the estimates must decay to zero.
pub fn scan_survival_to_boundary(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    dom: &DomainSpec,
    t: f64,
    starts: &[PhaseVector],
    n_paths: u64,
    config: &SimConfig,
) -> Result<Vec<ScanRow>> {
    let one = |_: &PhaseVector| 1.0;
    let zero = |_: &PhaseVector| 0.0;
    starts
        .iter()
        .map(|x| {
            let problem = FKProblem {
                f: &one,
                g: &zero,
                f_sup: 1.0,
                g_sup: 0.0,
                t,
                x: x.clone(),
            };
            let est = estimate_u(&problem, force, spec, dom, n_paths, config)?;
            Ok(ScanRow {
                distance: dom.signed_distance(x.q()).abs(),
                estimate: est.value,
                std_error: est.std_error,
            })
        })
        .collect()
}

/// KDE values of `p^D_t(x, .)` along a sequence of targets approaching the
/// boundary; one simulation batch from `x` serves every target.
pub fn scan_density_to_boundary(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    dom: &DomainSpec,
    t: f64,
    x: &PhaseVector,
    targets: &[PhaseVector],
    n_paths: u64,
    bandwidth_multiplier: f64,
    config: &SimConfig,
) -> Result<Vec<ScanRow>> {
    let samples = surviving_endpoints(force, spec, dom, x, t, n_paths, config, false)?;
    if samples.is_empty() {
        return Err(KfpError::numerical("scan_density", "no surviving paths"));
    }
    let h = kde_bandwidth(spec, t, n_paths, bandwidth_multiplier)?;
    let est = estimate_density_kde(&samples, n_paths, targets, &h)?;
    Ok(targets
        .iter()
        .zip(est.values.iter().zip(&est.std_errors))
        .map(|(y, (v, se))| ScanRow {
            distance: dom.signed_distance(y.q()).abs(),
            estimate: *v,
            std_error: *se,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::Scheme;
    use approx::assert_relative_eq;

    fn setup() -> (ForceField, GaussianKernelSpec, DomainSpec, SimConfig) {
        (
            ForceField::Linear { stiffness: 1.0 },
            GaussianKernelSpec::new(1, 1.0, 1.0, 1.0).unwrap(),
            DomainSpec::Interval { a: -1.0, b: 1.0 },
            SimConfig::new(Scheme::Splitting, 0.01, 1.0).unwrap().with_seed(123),
        )
    }

    #[test]
    fn constant_data_gives_exact_one() {
        let (force, spec, dom, config) = setup();
        let one = |_: &PhaseVector| 1.0;
        let problem = FKProblem {
            f: &one,
            g: &one,
            f_sup: 1.0,
            g_sup: 1.0,
            t: 0.3,
            x: PhaseVector::new_1d(0.0, 0.0),
        };
        let est = estimate_u(&problem, &force, &spec, &dom, 2000, &config).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn survival_definition_collapse() {
        // f = 1, g = 0 estimates P(tau > t); complementary data sums to 1.
        let (force, spec, dom, config) = setup();
        let one = |_: &PhaseVector| 1.0;
        let zero = |_: &PhaseVector| 0.0;
        let x = PhaseVector::new_1d(0.8, 0.8);
        let surv = estimate_u(
            &FKProblem { f: &one, g: &zero, f_sup: 1.0, g_sup: 0.0, t: 0.5, x: x.clone() },
            &force,
            &spec,
            &dom,
            4000,
            &config,
        )
        .unwrap();
        let absorbed = estimate_u(
            &FKProblem { f: &zero, g: &one, f_sup: 0.0, g_sup: 1.0, t: 0.5, x },
            &force,
            &spec,
            &dom,
            4000,
            &config,
        )
        .unwrap();
        assert_relative_eq!(surv.value + absorbed.value, 1.0, epsilon = 1e-12);
        assert!(surv.value < 1.0 && surv.value > 0.0);
    }

    #[test]
    fn estimate_is_reproducible_across_worker_counts() {
        let (force, spec, dom, mut config) = setup();
        let one = |_: &PhaseVector| 1.0;
        let zero = |_: &PhaseVector| 0.0;
        let x = PhaseVector::new_1d(0.5, 0.5);
        let mut run = |workers| {
            config.workers = workers;
            estimate_u(
                &FKProblem { f: &one, g: &zero, f_sup: 1.0, g_sup: 0.0, t: 0.4, x: x.clone() },
                &force,
                &spec,
                &dom,
                3000,
                &config,
            )
            .unwrap()
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn adjoint_deterministic_flow_reverses() {
        // sigma ~ 0: the adjoint flow runs the reversed ODE, so flowing
        // forward for t and then adjointly for t returns to the start.
        let force = ForceField::Linear { stiffness: 0.7 };
        let spec = GaussianKernelSpec::new(1, 0.4, 1e-300, 1.0).unwrap();
        let dom = DomainSpec::Interval { a: -10.0, b: 10.0 };
        let config = SimConfig::new(Scheme::Splitting, 1e-4, 0.5).unwrap();
        let x = PhaseVector::new_1d(0.3, 0.8);
        let mut rng = substream(7, StreamDomain::Checks, 0);
        let fwd = simulate_absorbed(&force, &spec, &dom, &x, &config, &mut rng).unwrap();
        let mid = fwd.terminal_state().clone();
        let back = simulate_adjoint_absorbed(&force, &spec, &dom, &mid, &config, &mut rng).unwrap();
        let end = back.terminal_state();
        assert_relative_eq!(end.q()[0], x.q()[0], epsilon = 1e-3);
        assert_relative_eq!(end.p()[0], -x.p()[0], epsilon = 1e-3);
    }

    #[test]
    fn kde_mass_matches_survival_counting() {
        let (force, spec, dom, config) = setup();
        let x = PhaseVector::new_1d(0.0, 0.0);
        let n = 4000u64;
        let samples = surviving_endpoints(&force, &spec, &dom, &x, 0.4, n, &config, false).unwrap();
        let h = kde_bandwidth(&spec, 0.4, n, 1.0).unwrap();
        // integrate the KDE over a wide box: total mass = survivors / total
        let grid: Vec<PhaseVector> = (0..80)
            .flat_map(|i| {
                (0..80).map(move |j| {
                    PhaseVector::new_1d(-1.4 + 2.8 * i as f64 / 79.0, -4.0 + 8.0 * j as f64 / 79.0)
                })
            })
            .collect();
        let est = estimate_density_kde(&samples, n, &grid, &h).unwrap();
        let cell = (2.8 / 79.0) * (8.0 / 79.0);
        let mass: f64 = est.values.iter().sum::<f64>() * cell;
        let survival = samples.len() as f64 / n as f64;
        assert_relative_eq!(mass, survival, max_relative = 0.05);
    }

    #[test]
    fn kde_rejects_empty_samples() {
        assert!(estimate_density_kde(&[], 10, &[PhaseVector::new_1d(0.0, 0.0)], &[0.1, 0.1]).is_err());
    }
}
