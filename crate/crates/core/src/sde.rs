//! Time integration of the Langevin SDE with absorption at the boundary of
//! the position cylinder: Euler-Maruyama, the exact-flow splitting scheme,
//! the position-noise perturbed scheme, exit detection with Hermite
//! refinement, synchronously coupled pairs, and Girsanov reweighting of the
//! driftless process.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::force::ForceField;
use crate::geometry::{BoundaryClass, BoundaryClassification, DomainSpec};
use crate::kernel::{FreeStepSampler, GaussianKernelSpec};
use crate::phase::PhaseVector;
use crate::rng::NormalSource;

/// Integration schemes.
///
/// `Splitting` is the default: the friction/noise block is the exact free
/// kernel, so only the force kicks carry discretisation bias. `Perturbed`
/// adds `sqrt(2 eps) dW` to the position update on top of the splitting
/// step; as `eps -> 0` it recovers the unperturbed scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    EulerMaruyama,
    Splitting,
    Perturbed { eps: f64 },
}

impl Scheme {
    /// Standard normal draws consumed per step and coordinate.
    fn draws_per_coordinate(&self) -> usize {
        match self {
            Scheme::EulerMaruyama => 1,
            Scheme::Splitting => 2,
            Scheme::Perturbed { .. } => 3,
        }
    }
}

/// Simulation controls shared by all path drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub horizon: f64,
    /// Time tolerance for the refined exit time.
    pub exit_refine_tol: f64,
    pub seed: u64,
    pub workers: usize,
    /// Store every k-th state in the returned record (None: endpoints only).
    pub thin_stride: Option<usize>,
    /// Record per-step standardized noise increments (needed by Girsanov
    /// weights; exact Brownian increments for the driftless dynamics).
    pub record_increments: bool,
}

impl SimConfig {
    pub fn new(scheme: Scheme, dt: f64, horizon: f64) -> Result<Self> {
        let cfg = SimConfig {
            scheme,
            dt,
            horizon,
            exit_refine_tol: (dt * 1e-6).min(1e-10).max(f64::MIN_POSITIVE),
            seed: 0,
            workers: 0,
            thin_stride: None,
            record_increments: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(KfpError::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(KfpError::invalid("horizon", format!("must be > 0, got {}", self.horizon)));
        }
        if !(self.exit_refine_tol > 0.0 && self.exit_refine_tol <= self.dt) {
            return Err(KfpError::invalid(
                "exit_refine_tol",
                format!("must lie in (0, dt], got {}", self.exit_refine_tol),
            ));
        }
        if let Scheme::Perturbed { eps } = self.scheme {
            if !(eps >= 0.0) || !eps.is_finite() {
                return Err(KfpError::invalid("scheme.eps", format!("must be >= 0, got {eps}")));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_exit_tol(mut self, tol: f64) -> Self {
        self.exit_refine_tol = tol;
        self
    }

    pub fn with_thinning(mut self, stride: usize) -> Self {
        self.thin_stride = Some(stride.max(1));
        self
    }

    pub fn recording_increments(mut self) -> Self {
        self.record_increments = true;
        self
    }
}

/// Terminal status of an absorbed-path simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathStatus {
    Absorbed {
        tau: f64,
        exit_state: PhaseVector,
        class: BoundaryClassification,
    },
    Survived { final_state: PhaseVector },
}

/// One simulated trajectory of the absorbed process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbedPathRecord {
    pub status: PathStatus,
    /// Thinned `(time, state)` samples; includes the start.
    pub states: Option<Vec<(f64, PhaseVector)>>,
    /// Standardized momentum noise increments per step (the Brownian
    /// increments when the generating dynamics is driftless).
    pub increments: Option<Vec<Vec<f64>>>,
    /// Step start states aligned with `increments`.
    pub step_states: Option<Vec<PhaseVector>>,
    pub step_dt: f64,
    pub girsanov_log_weight: Option<f64>,
}

impl AbsorbedPathRecord {
    pub fn tau(&self) -> Option<f64> {
        match &self.status {
            PathStatus::Absorbed { tau, .. } => Some(*tau),
            PathStatus::Survived { .. } => None,
        }
    }

    pub fn terminal_state(&self) -> &PhaseVector {
        match &self.status {
            PathStatus::Absorbed { exit_state, .. } => exit_state,
            PathStatus::Survived { final_state } => final_state,
        }
    }
}

/// One-step integrator with the per-step coefficients cached.
pub struct Integrator {
    scheme: Scheme,
    dt: f64,
    sqrt_dt: f64,
    gamma: f64,
    sigma: f64,
    sigma_sqrt_dt: f64,
    sqrt_2eps_dt: f64,
    free: Option<FreeStepSampler>,
    force: ForceField,
    force_buf: Vec<f64>,
    p_before: Vec<f64>,
}

impl Integrator {
    pub fn new(force: &ForceField, spec: &GaussianKernelSpec, scheme: Scheme, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(KfpError::invalid("dt", format!("must be > 0, got {dt}")));
        }
        let free = match scheme {
            Scheme::EulerMaruyama => None,
            Scheme::Splitting | Scheme::Perturbed { .. } => Some(FreeStepSampler::new(spec, dt)?),
        };
        let eps = match scheme {
            Scheme::Perturbed { eps } => eps,
            _ => 0.0,
        };
        Ok(Integrator {
            scheme,
            dt,
            sqrt_dt: dt.sqrt(),
            gamma: spec.gamma,
            sigma: spec.sigma,
            sigma_sqrt_dt: spec.sigma * dt.sqrt(),
            sqrt_2eps_dt: (2.0 * eps * dt).sqrt(),
            free,
            force: force.clone(),
            force_buf: vec![0.0; spec.dim],
            p_before: vec![0.0; spec.dim],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `(q, p)` by one step, optionally recording the standardized
    /// momentum noise increment into `incr`.
    #[inline]
    pub fn step_in_place<S: NormalSource + ?Sized>(
        &mut self,
        q: &mut [f64],
        p: &mut [f64],
        source: &mut S,
        mut incr: Option<&mut [f64]>,
    ) {
        match self.scheme {
            Scheme::EulerMaruyama => {
                self.force.eval_into(q, &mut self.force_buf);
                for i in 0..q.len() {
                    let xi = source.draw();
                    let dp = (self.force_buf[i] - self.gamma * p[i]) * self.dt + self.sigma_sqrt_dt * xi;
                    q[i] += p[i] * self.dt;
                    p[i] += dp;
                    if let Some(rec) = incr.as_deref_mut() {
                        rec[i] = self.sqrt_dt * xi;
                    }
                }
            }
            Scheme::Splitting | Scheme::Perturbed { .. } => {
                // Strang arrangement: half force kick, exact free flow, half kick.
                let half = 0.5 * self.dt;
                if incr.is_some() {
                    self.p_before.copy_from_slice(p);
                }
                self.force.eval_into(q, &mut self.force_buf);
                for i in 0..p.len() {
                    p[i] += half * self.force_buf[i];
                }
                self.free.as_ref().unwrap().step_in_place(q, p, source);
                self.force.eval_into(q, &mut self.force_buf);
                for i in 0..p.len() {
                    p[i] += half * self.force_buf[i];
                }
                if let Scheme::Perturbed { .. } = self.scheme {
                    for qi in q.iter_mut() {
                        *qi += self.sqrt_2eps_dt * source.draw();
                    }
                }
                if let Some(rec) = incr {
                    // For the driftless dynamics (zero force and friction) the
                    // momentum update is p' = p + sigma dB, so the Brownian
                    // increment is exactly recoverable from the difference.
                    for i in 0..p.len() {
                        rec[i] = (p[i] - self.p_before[i]) / self.sigma;
                    }
                }
            }
        }
    }
}

/// One step of the chosen scheme from `x` (allocating convenience wrapper).
pub fn integrate_step<R: Rng + ?Sized>(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    scheme: Scheme,
    x: &PhaseVector,
    dt: f64,
    rng: &mut R,
) -> Result<PhaseVector> {
    if x.dim() != spec.dim {
        return Err(KfpError::invalid("x", "dimension mismatch with kernel spec"));
    }
    let mut integ = Integrator::new(force, spec, scheme, dt)?;
    let mut q = x.q().to_vec();
    let mut p = x.p().to_vec();
    integ.step_in_place(&mut q, &mut p, rng, None);
    Ok(PhaseVector::from_parts_unchecked(q, p))
}

/// Cubic Hermite interpolation of the position path over one step, matching
/// position and momentum at both ends.
struct HermiteSegment<'a> {
    h: f64,
    q0: &'a [f64],
    p0: &'a [f64],
    q1: &'a [f64],
    p1: &'a [f64],
}

impl HermiteSegment<'_> {
    fn position(&self, s: f64, out: &mut [f64]) {
        let h = self.h;
        let u = s / h;
        let u2 = u * u;
        let u3 = u2 * u;
        let b0 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let b1 = u3 - 2.0 * u2 + u;
        let b2 = -2.0 * u3 + 3.0 * u2;
        let b3 = u3 - u2;
        for i in 0..out.len() {
            out[i] = b0 * self.q0[i] + b1 * h * self.p0[i] + b2 * self.q1[i] + b3 * h * self.p1[i];
        }
    }

    fn velocity(&self, s: f64, out: &mut [f64]) {
        let h = self.h;
        let u = s / h;
        let u2 = u * u;
        let d0 = (6.0 * u2 - 6.0 * u) / h;
        let d1 = 3.0 * u2 - 4.0 * u + 1.0;
        let d2 = (-6.0 * u2 + 6.0 * u) / h;
        let d3 = 3.0 * u2 - 2.0 * u;
        for i in 0..out.len() {
            out[i] = d0 * self.q0[i] + d1 * self.p0[i] + d2 * self.q1[i] + d3 * self.p1[i];
        }
    }
}

/// Localizes the boundary crossing inside a bracketing step by bisection on
/// the Hermite-interpolated position path.
///
/// Preconditions: the signed distance is `>= 0` at the segment start and
/// `< 0` at its end. Returns the crossing time and the interpolated state,
/// with the crossing time localized to within `tol`.
pub fn refine_exit(
    start: (&PhaseVector, f64),
    end: (&PhaseVector, f64),
    dom: &DomainSpec,
    tol: f64,
) -> Result<(f64, PhaseVector)> {
    let (x0, t0) = start;
    let (x1, t1) = end;
    let h = t1 - t0;
    if !(h > 0.0) {
        return Err(KfpError::invalid("bracket", "end time must exceed start time"));
    }
    let sd0 = dom.signed_distance(x0.q());
    let sd1 = dom.signed_distance(x1.q());
    if sd0 < 0.0 || sd1 >= 0.0 {
        return Err(KfpError::invalid(
            "bracket",
            format!("not a crossing bracket: sd0 = {sd0}, sd1 = {sd1}"),
        ));
    }
    let seg = HermiteSegment { h, q0: x0.q(), p0: x0.p(), q1: x1.q(), p1: x1.p() };
    let d = x0.dim();
    let mut qbuf = vec![0.0; d];
    let (mut lo, mut hi) = (0.0f64, h);
    for _ in 0..128 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        seg.position(mid, &mut qbuf);
        if dom.signed_distance(&qbuf) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Report the first localized point past the boundary so the exit state
    // sits on the outer edge of the band.
    let s = hi;
    let mut q = vec![0.0; d];
    let mut p = vec![0.0; d];
    seg.position(s, &mut q);
    seg.velocity(s, &mut p);
    Ok((t0 + s, PhaseVector::from_parts_unchecked(q, p)))
}

/// Classifies a refined exit state using the normal at the nearest boundary
/// point (the exit position sits within the refinement band of `∂O`).
fn classify_exit(dom: &DomainSpec, state: &PhaseVector) -> BoundaryClassification {
    let n = dom.normal_at_nearest(state.q());
    let s: f64 = state.p().iter().zip(&n).map(|(p, n)| p * n).sum();
    let class = if s > 0.0 {
        BoundaryClass::GammaPlus
    } else if s < 0.0 {
        BoundaryClass::GammaMinus
    } else {
        BoundaryClass::GammaZero
    };
    BoundaryClassification { class, normal_dot: s }
}

/// Interior probes of the Hermite interpolant used to catch within-step
/// boundary grazes that re-enter before the endpoint.
const GRAZE_PROBES: usize = 4;

struct PathDriver<'a> {
    force: &'a ForceField,
    spec: &'a GaussianKernelSpec,
    dom: &'a DomainSpec,
    config: &'a SimConfig,
}

impl PathDriver<'_> {
    fn graze_crossing(&self, seg: &HermiteSegment, qbuf: &mut [f64]) -> bool {
        for k in 1..=GRAZE_PROBES {
            let s = seg.h * k as f64 / (GRAZE_PROBES + 1) as f64;
            seg.position(s, qbuf);
            if self.dom.signed_distance(qbuf) < 0.0 {
                return true;
            }
        }
        false
    }

    /// Integrates from `(t_start, q, p)` for `duration` at step `dt`,
    /// returning the first detected exit. `depth` bounds the re-integration
    /// recursion for grazing steps.
    #[allow(clippy::too_many_arguments)]
    fn run<R: Rng + ?Sized>(
        &self,
        q: &mut Vec<f64>,
        p: &mut Vec<f64>,
        t_start: f64,
        duration: f64,
        dt: f64,
        depth: u32,
        rng: &mut R,
        sink: &mut RecordSink,
    ) -> Result<Option<(f64, PhaseVector, BoundaryClassification)>> {
        let d = q.len();
        let n_steps = (duration / dt).round().max(1.0) as u64;
        let mut integ =
            Integrator::new(self.force, self.spec, self.config.scheme, duration / n_steps as f64)?;
        let step = integ.dt();
        let mut q_prev = vec![0.0; d];
        let mut p_prev = vec![0.0; d];
        let mut qbuf = vec![0.0; d];
        let mut incr = vec![0.0; d];
        let want_incr = sink.wants_increments();
        for k in 0..n_steps {
            let t0 = t_start + k as f64 * step;
            q_prev.copy_from_slice(q);
            p_prev.copy_from_slice(p);
            integ.step_in_place(q, p, rng, if want_incr { Some(&mut incr) } else { None });
            if !q.iter().chain(p.iter()).all(|v| v.is_finite()) {
                return Err(KfpError::NonFiniteState { t: t0 + step });
            }
            sink.push_step(&q_prev, &p_prev, &incr, want_incr);
            let sd_end = self.dom.signed_distance(q);
            if sd_end < 0.0 {
                let x_prev = PhaseVector::from_parts_unchecked(q_prev.clone(), p_prev.clone());
                let x_new = PhaseVector::from_parts_unchecked(q.clone(), p.clone());
                let (tau, exit) = refine_exit(
                    (&x_prev, t0),
                    (&x_new, t0 + step),
                    self.dom,
                    self.config.exit_refine_tol,
                )?;
                let class = classify_exit(self.dom, &exit);
                return Ok(Some((tau, exit, class)));
            }
            // Endpoint inside: probe the interpolant for a graze that
            // re-entered, and re-integrate the step tenfold finer if found.
            // Skipped while recording increments, which require one fixed dt.
            if depth < 1 && !want_incr {
                let seg = HermiteSegment { h: step, q0: &q_prev, p0: &p_prev, q1: q, p1: p };
                if self.graze_crossing(&seg, &mut qbuf) {
                    q.copy_from_slice(&q_prev);
                    p.copy_from_slice(&p_prev);
                    if let Some(hit) = self.run(q, p, t0, step, step / 10.0, depth + 1, rng, sink)? {
                        return Ok(Some(hit));
                    }
                }
            }
            sink.maybe_store(t0 + step, q, p);
        }
        Ok(None)
    }
}

/// Accumulates the optional per-step records.
struct RecordSink {
    thin_stride: Option<usize>,
    states: Vec<(f64, PhaseVector)>,
    step_states: Vec<PhaseVector>,
    increments: Vec<Vec<f64>>,
    record_increments: bool,
    counter: usize,
}

impl RecordSink {
    fn new(config: &SimConfig, start: &PhaseVector) -> Self {
        let mut states = Vec::new();
        if config.thin_stride.is_some() {
            states.push((0.0, start.clone()));
        }
        RecordSink {
            thin_stride: config.thin_stride,
            states,
            step_states: Vec::new(),
            increments: Vec::new(),
            record_increments: config.record_increments,
            counter: 0,
        }
    }

    fn wants_increments(&self) -> bool {
        self.record_increments
    }

    fn push_step(&mut self, q: &[f64], p: &[f64], incr: &[f64], recorded: bool) {
        if recorded {
            self.step_states
                .push(PhaseVector::from_parts_unchecked(q.to_vec(), p.to_vec()));
            self.increments.push(incr.to_vec());
        }
    }

    fn maybe_store(&mut self, t: f64, q: &[f64], p: &[f64]) {
        if let Some(stride) = self.thin_stride {
            self.counter += 1;
            if self.counter % stride == 0 {
                self.states
                    .push((t, PhaseVector::from_parts_unchecked(q.to_vec(), p.to_vec())));
            }
        }
    }
}

/// Simulates the absorbed Langevin process started at `x`.
///
/// Starts on the outgoing or tangential boundary are absorbed immediately
/// with `tau = 0`; incoming-boundary and interior starts integrate until the
/// first step whose endpoint leaves the position domain (or a within-step
/// graze is confirmed by re-integration), then the exit is refined to
/// `exit_refine_tol` and classified. Exterior starts are rejected.
pub fn simulate_absorbed<R: Rng + ?Sized>(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    dom: &DomainSpec,
    x: &PhaseVector,
    config: &SimConfig,
    rng: &mut R,
) -> Result<AbsorbedPathRecord> {
    config.validate()?;
    if x.dim() != spec.dim || x.dim() != dom.dim() {
        return Err(KfpError::invalid("x", "dimension mismatch"));
    }
    let start = dom.classify(x, 0.0);
    match start.class {
        BoundaryClass::Exterior => {
            return Err(KfpError::invalid("x", "start lies outside the closed domain"));
        }
        BoundaryClass::GammaPlus | BoundaryClass::GammaZero => {
            return Ok(AbsorbedPathRecord {
                status: PathStatus::Absorbed { tau: 0.0, exit_state: x.clone(), class: start },
                states: None,
                increments: None,
                step_states: None,
                step_dt: config.dt,
                girsanov_log_weight: None,
            });
        }
        _ => {}
    }
    let driver = PathDriver { force, spec, dom, config };
    let mut q = x.q().to_vec();
    let mut p = x.p().to_vec();
    let mut sink = RecordSink::new(config, x);
    let hit = driver.run(&mut q, &mut p, 0.0, config.horizon, config.dt, 0, rng, &mut sink)?;
    let status = match hit {
        Some((tau, exit_state, class)) => PathStatus::Absorbed { tau, exit_state, class },
        None => PathStatus::Survived {
            final_state: PhaseVector::from_parts_unchecked(q, p),
        },
    };
    Ok(AbsorbedPathRecord {
        status,
        states: (config.thin_stride.is_some()).then_some(sink.states),
        increments: config.record_increments.then_some(sink.increments),
        step_states: config.record_increments.then_some(sink.step_states),
        step_dt: config.dt,
        girsanov_log_weight: None,
    })
}

/// Replays a fixed list of standard normal draws, so two coupled states see
/// the identical noise increments.
struct ReplayNormals<'a> {
    draws: &'a [f64],
    next: usize,
}

impl NormalSource for ReplayNormals<'_> {
    #[inline]
    fn draw(&mut self) -> f64 {
        let v = self.draws[self.next];
        self.next += 1;
        v
    }
}

/// Whole-space simulation (no absorption) of a pair driven by the identical
/// noise, for coupling statistics. States are recorded at `thin_stride`
/// (default every step).
pub fn simulate_pair_coupled<R: Rng + ?Sized>(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    x: &PhaseVector,
    y: &PhaseVector,
    config: &SimConfig,
    rng: &mut R,
) -> Result<(Vec<(f64, PhaseVector)>, Vec<(f64, PhaseVector)>)> {
    config.validate()?;
    if x.dim() != spec.dim || y.dim() != spec.dim {
        return Err(KfpError::invalid("x", "dimension mismatch"));
    }
    let d = spec.dim;
    let n_steps = (config.horizon / config.dt).round().max(1.0) as u64;
    let dt = config.horizon / n_steps as f64;
    let mut integ_x = Integrator::new(force, spec, config.scheme, dt)?;
    let mut integ_y = Integrator::new(force, spec, config.scheme, dt)?;
    let stride = config.thin_stride.unwrap_or(1) as u64;
    let mut qx = x.q().to_vec();
    let mut px = x.p().to_vec();
    let mut qy = y.q().to_vec();
    let mut py = y.p().to_vec();
    let mut path_x = vec![(0.0, x.clone())];
    let mut path_y = vec![(0.0, y.clone())];
    let mut noise = vec![0.0; config.scheme.draws_per_coordinate() * d];
    for k in 0..n_steps {
        for z in noise.iter_mut() {
            *z = rng.draw();
        }
        integ_x.step_in_place(&mut qx, &mut px, &mut ReplayNormals { draws: &noise, next: 0 }, None);
        integ_y.step_in_place(&mut qy, &mut py, &mut ReplayNormals { draws: &noise, next: 0 }, None);
        if !qx.iter().chain(px.iter()).chain(qy.iter()).chain(py.iter()).all(|v| v.is_finite()) {
            return Err(KfpError::NonFiniteState { t: (k + 1) as f64 * dt });
        }
        if (k + 1) % stride == 0 || k + 1 == n_steps {
            let t = (k + 1) as f64 * dt;
            path_x.push((t, PhaseVector::from_parts_unchecked(qx.clone(), px.clone())));
            path_y.push((t, PhaseVector::from_parts_unchecked(qy.clone(), py.clone())));
        }
    }
    Ok((path_x, path_y))
}

/// Girsanov log-weight of a stored driftless path (zero force and friction)
/// against the `(force, gamma)` dynamics:
///
/// ```text
/// log E_T = sum_k Z_k . dB_k - (1/2) sum_k |Z_k|^2 dt,
/// Z_k = (F(q_k) - gamma p_k) / sigma
/// ```
///
/// with left-point (Ito) evaluation of the integrand; the discretization
/// bias is O(dt).
pub fn girsanov_weight(
    path: &AbsorbedPathRecord,
    force: &ForceField,
    spec: &GaussianKernelSpec,
) -> Result<f64> {
    let (Some(increments), Some(states)) = (&path.increments, &path.step_states) else {
        return Err(KfpError::invalid("path", "stored Brownian increments required"));
    };
    if increments.len() != states.len() {
        return Err(KfpError::invalid("path", "increment/state length mismatch"));
    }
    let d = spec.dim;
    let dt = path.step_dt;
    let mut f_buf = vec![0.0; d];
    let mut log_w = 0.0;
    for (state, db) in states.iter().zip(increments) {
        force.eval_into(state.q(), &mut f_buf);
        let mut dot = 0.0;
        let mut norm2 = 0.0;
        for i in 0..d {
            let z = (f_buf[i] - spec.gamma * state.p()[i]) / spec.sigma;
            dot += z * db[i];
            norm2 += z * z;
        }
        log_w += dot - 0.5 * norm2 * dt;
    }
    Ok(log_w)
}

/// Streaming Girsanov driver: simulates the driftless process (optionally
/// absorbed at `dom`) and accumulates the reweighting against the target
/// `(force, gamma)` dynamics on the fly, without storing the path.
pub fn simulate_free_weighted<R: Rng + ?Sized>(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    dom: Option<&DomainSpec>,
    x: &PhaseVector,
    config: &SimConfig,
    rng: &mut R,
) -> Result<AbsorbedPathRecord> {
    config.validate()?;
    let d = spec.dim;
    let free_spec = GaussianKernelSpec::new(d, 0.0, spec.sigma, spec.alpha)?;
    let zero = ForceField::Zero;
    let n_steps = (config.horizon / config.dt).round().max(1.0) as u64;
    let dt = config.horizon / n_steps as f64;
    let mut integ = Integrator::new(&zero, &free_spec, config.scheme, dt)?;
    let mut q = x.q().to_vec();
    let mut p = x.p().to_vec();
    let mut q_prev = vec![0.0; d];
    let mut p_prev = vec![0.0; d];
    let mut incr = vec![0.0; d];
    let mut f_buf = vec![0.0; d];
    let mut log_w = 0.0;
    for k in 0..n_steps {
        let t0 = k as f64 * dt;
        q_prev.copy_from_slice(&q);
        p_prev.copy_from_slice(&p);
        integ.step_in_place(&mut q, &mut p, rng, Some(&mut incr));
        force.eval_into(&q_prev, &mut f_buf);
        for i in 0..d {
            let z = (f_buf[i] - spec.gamma * p_prev[i]) / spec.sigma;
            log_w += z * incr[i] - 0.5 * z * z * dt;
        }
        if let Some(dom) = dom {
            if dom.signed_distance(&q) < 0.0 {
                let x_prev = PhaseVector::from_parts_unchecked(q_prev.clone(), p_prev.clone());
                let x_new = PhaseVector::from_parts_unchecked(q.clone(), p.clone());
                let (tau, exit) =
                    refine_exit((&x_prev, t0), (&x_new, t0 + dt), dom, config.exit_refine_tol)?;
                let class = classify_exit(dom, &exit);
                return Ok(AbsorbedPathRecord {
                    status: PathStatus::Absorbed { tau, exit_state: exit, class },
                    states: None,
                    increments: None,
                    step_states: None,
                    step_dt: dt,
                    girsanov_log_weight: Some(log_w),
                });
            }
        }
    }
    Ok(AbsorbedPathRecord {
        status: PathStatus::Survived {
            final_state: PhaseVector::from_parts_unchecked(q, p),
        },
        states: None,
        increments: None,
        step_states: None,
        step_dt: dt,
        girsanov_log_weight: Some(log_w),
    })
}

/// Unabsorbed probe from a boundary (or interior) start: does the position
/// leave the closed domain within the horizon? Used for tangential-start
/// escape statistics where the absorbed simulator returns `tau = 0`
/// immediately.
pub fn probe_leaves_closure<R: Rng + ?Sized>(
    force: &ForceField,
    spec: &GaussianKernelSpec,
    dom: &DomainSpec,
    x: &PhaseVector,
    config: &SimConfig,
    rng: &mut R,
) -> Result<bool> {
    config.validate()?;
    let n_steps = (config.horizon / config.dt).round().max(1.0) as u64;
    let dt = config.horizon / n_steps as f64;
    let mut integ = Integrator::new(force, spec, config.scheme, dt)?;
    let mut q = x.q().to_vec();
    let mut p = x.p().to_vec();
    let tol = dom.geom_tol();
    for _ in 0..n_steps {
        integ.step_in_place(&mut q, &mut p, rng, None);
        if q.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(KfpError::NonFiniteState { t: 0.0 });
        }
        if dom.signed_distance(&q) < -tol {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamDomain};
    use approx::assert_relative_eq;

    fn spec_1d(gamma: f64, sigma: f64) -> GaussianKernelSpec {
        GaussianKernelSpec::new(1, gamma, sigma, 1.0).unwrap()
    }

    #[test]
    fn deterministic_free_flight() {
        // F = 0, sigma -> 0, gamma = 0: q' = q + p dt, p' = p for both schemes.
        let spec = spec_1d(0.0, 1e-300);
        let x = PhaseVector::new_1d(0.2, 1.5);
        for scheme in [Scheme::EulerMaruyama, Scheme::Splitting] {
            let mut rng = substream(0, StreamDomain::Checks, 1);
            let y = integrate_step(&ForceField::Zero, &spec, scheme, &x, 0.1, &mut rng).unwrap();
            assert_relative_eq!(y.q()[0], 0.35, epsilon = 1e-12);
            assert_relative_eq!(y.p()[0], 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn pure_transport_exit_time() {
        // sigma ~ 0, F = 0, gamma = 0, x = (0, 1) on (-1, 1): tau = 1.
        let spec = spec_1d(0.0, 1e-300);
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let config = SimConfig::new(Scheme::Splitting, 1e-3, 2.0)
            .unwrap()
            .with_exit_tol(1e-9);
        let mut rng = substream(0, StreamDomain::Checks, 2);
        let rec = simulate_absorbed(
            &ForceField::Zero,
            &spec,
            &dom,
            &PhaseVector::new_1d(0.0, 1.0),
            &config,
            &mut rng,
        )
        .unwrap();
        match rec.status {
            PathStatus::Absorbed { tau, ref exit_state, class } => {
                assert_relative_eq!(tau, 1.0, epsilon = 1e-6);
                assert_relative_eq!(exit_state.q()[0], 1.0, epsilon = 1e-6);
                assert_eq!(class.class, BoundaryClass::GammaPlus);
            }
            _ => panic!("expected absorption"),
        }
    }

    #[test]
    fn outgoing_boundary_start_is_absorbed_immediately() {
        let spec = spec_1d(0.0, 1.0);
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let config = SimConfig::new(Scheme::Splitting, 1e-2, 1.0).unwrap();
        let mut rng = substream(0, StreamDomain::Checks, 3);
        let rec = simulate_absorbed(
            &ForceField::Zero,
            &spec,
            &dom,
            &PhaseVector::new_1d(1.0, 0.5),
            &config,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rec.tau(), Some(0.0));
        // incoming start is allowed
        let rec2 = simulate_absorbed(
            &ForceField::Zero,
            &spec,
            &dom,
            &PhaseVector::new_1d(1.0, -0.5),
            &config,
            &mut rng,
        )
        .unwrap();
        assert_ne!(rec2.tau(), Some(0.0));
        // exterior start is rejected
        assert!(simulate_absorbed(
            &ForceField::Zero,
            &spec,
            &dom,
            &PhaseVector::new_1d(1.5, 0.0),
            &config,
            &mut rng,
        )
        .is_err());
    }

    #[test]
    fn refine_exit_linear_path() {
        // Constant velocity: crossing of q(t) = 0.9 + t at b = 1 is t = 0.1.
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let x0 = PhaseVector::new_1d(0.9, 1.0);
        let x1 = PhaseVector::new_1d(1.1, 1.0);
        let (tau, exit) = refine_exit((&x0, 0.0), (&x1, 0.2), &dom, 1e-10).unwrap();
        assert_relative_eq!(tau, 0.1, epsilon = 1e-8);
        assert_relative_eq!(exit.q()[0], 1.0, epsilon = 1e-8);
        assert!(refine_exit((&x1, 0.0), (&x0, 0.2), &dom, 1e-10).is_err());
    }

    #[test]
    fn refine_exit_quadratic_path() {
        // Constant acceleration 2: q(t) = 0.5 + t^2 crosses 1 at sqrt(0.5).
        // The cubic Hermite through the exact endpoint data reproduces
        // quadratics exactly.
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let x0 = PhaseVector::new_1d(0.5, 0.0);
        let x1 = PhaseVector::new_1d(1.5, 2.0);
        let (tau, _) = refine_exit((&x0, 0.0), (&x1, 1.0), &dom, 1e-12).unwrap();
        assert_relative_eq!(tau, 0.5f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn coupled_pair_with_equal_starts_is_identical() {
        let spec = spec_1d(0.7, 1.0);
        let x = PhaseVector::new_1d(0.1, -0.4);
        let config = SimConfig::new(Scheme::Splitting, 0.01, 0.5).unwrap();
        let mut rng = substream(3, StreamDomain::PathsCoupled, 0);
        let (px, py) = simulate_pair_coupled(
            &ForceField::Linear { stiffness: 1.0 },
            &spec,
            &x,
            &x,
            &config,
            &mut rng,
        )
        .unwrap();
        for ((_, a), (_, b)) in px.iter().zip(&py) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn coupled_difference_is_deterministic_without_friction() {
        // gamma = 0, F = 0: noise cancels; p-difference constant, q-difference
        // linear in t.
        let spec = spec_1d(0.0, 1.0);
        let x = PhaseVector::new_1d(0.0, 0.0);
        let y = PhaseVector::new_1d(0.3, -0.2);
        let config = SimConfig::new(Scheme::Splitting, 0.01, 1.0).unwrap();
        let mut rng = substream(4, StreamDomain::PathsCoupled, 0);
        let (px, py) =
            simulate_pair_coupled(&ForceField::Zero, &spec, &x, &y, &config, &mut rng).unwrap();
        for ((t, a), (_, b)) in px.iter().zip(&py) {
            let dq = b.q()[0] - a.q()[0];
            let dp = b.p()[0] - a.p()[0];
            assert_relative_eq!(dp, -0.2, epsilon = 1e-10);
            assert_relative_eq!(dq, 0.3 - 0.2 * t, epsilon = 1e-9);
        }
    }

    #[test]
    fn girsanov_weight_vanishes_for_trivial_target() {
        // Target F = 0, gamma = 0: Z = 0, so the log-weight is exactly 0.
        let spec = spec_1d(0.0, 1.0);
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let config = SimConfig::new(Scheme::Splitting, 0.01, 0.3)
            .unwrap()
            .recording_increments();
        let mut rng = substream(5, StreamDomain::Paths, 0);
        let rec = simulate_absorbed(
            &ForceField::Zero,
            &spec,
            &dom,
            &PhaseVector::new_1d(0.0, 0.0),
            &config,
            &mut rng,
        )
        .unwrap();
        let w = girsanov_weight(&rec, &ForceField::Zero, &spec).unwrap();
        assert_eq!(w, 0.0);
        // paths without stored increments are rejected
        let mut config2 = config;
        config2.record_increments = false;
        let rec2 = simulate_absorbed(
            &ForceField::Zero,
            &spec,
            &dom,
            &PhaseVector::new_1d(0.0, 0.0),
            &config2,
            &mut rng,
        )
        .unwrap();
        assert!(girsanov_weight(&rec2, &ForceField::Zero, &spec).is_err());
    }

    #[test]
    fn absorbed_record_is_bit_identical_per_stream() {
        let spec = spec_1d(1.0, 1.0);
        let dom = DomainSpec::Interval { a: -1.0, b: 1.0 };
        let config = SimConfig::new(Scheme::Splitting, 1e-3, 1.0).unwrap();
        let force = ForceField::Linear { stiffness: 1.0 };
        let x = PhaseVector::new_1d(0.4, 0.3);
        let run = || {
            let mut rng = substream(11, StreamDomain::Paths, 17);
            simulate_absorbed(&force, &spec, &dom, &x, &config, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }
}
