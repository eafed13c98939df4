//! Constructive Harnack chain machinery on the position cylinder: the cubic
//! connecting path between phase points, admissible-chain construction over a
//! compact set `K = {d_∂(q) >= delta, |p| <= k}`, scaled space-time box
//! membership verification, and the chained Harnack constant
//! `C_{K,T}^{n_eps}`.
//!
//! The base inequality transports a nonnegative solution of the kinetic
//! equation between two small boxes `Q^-` and `Q^+` of the unit cylinder
//! `Q = (-1, 0] x B(0,1) x B(0,1)` under the scaling map
//! `h_{r,z0}(t, q, p) = (r^2 t + t0, q0 - r^2 t p0 + r^3 q, p0 - r p)`.
//! Chaining it along an admissible path costs one factor of the base
//! constant per link; everything here is the bookkeeping that makes the
//! number of links and the box memberships explicit and checkable.

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::geometry::DomainSpec;
use crate::phase::PhaseVector;

/// Universal constant of the connecting-path bounds, validated by the
/// maximization oracle over random endpoint draws (the true suprema sit
/// near 6; 8 leaves slack).
pub const PATH_CONSTANT: f64 = 8.0;

/// Cubic vector polynomial `phi` on `[0, Delta]` joining two phase points
/// with matching positions and velocities at both ends:
///
/// ```text
/// phi(t) = q + (q'-q)(3 t^2/D^2 - 2 t^3/D^3) + D (p'-p)(t^3/D^3 - t^2/D^2)
///        + D p (t/D + 2 t^3/D^3 - 3 t^2/D^2)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackPath {
    pub delta: f64,
    pub x: PhaseVector,
    pub y: PhaseVector,
    /// Monomial coefficients per coordinate: `phi_i(t) = a0 + a1 t + a2 t^2 + a3 t^3`.
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
}

/// Builds the cubic bridge from `x` to `y` over a window of length `delta`.
pub fn hermite_bridge(x: &PhaseVector, y: &PhaseVector, delta: f64) -> Result<HarnackPath> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(KfpError::invalid("delta", format!("must be > 0, got {delta}")));
    }
    if x.dim() != y.dim() {
        return Err(KfpError::invalid("endpoints", "dimension mismatch"));
    }
    let d = x.dim();
    let mut a0 = vec![0.0; d];
    let mut a1 = vec![0.0; d];
    let mut a2 = vec![0.0; d];
    let mut a3 = vec![0.0; d];
    for i in 0..d {
        let (q, p) = (x.q()[i], x.p()[i]);
        let (q1, p1) = (y.q()[i], y.p()[i]);
        a0[i] = q;
        a1[i] = p;
        a2[i] = 3.0 * (q1 - q) / (delta * delta) - (p1 + 2.0 * p) / delta;
        a3[i] = -2.0 * (q1 - q) / (delta * delta * delta) + (p1 + p) / (delta * delta);
    }
    Ok(HarnackPath { delta, x: x.clone(), y: y.clone(), a0, a1, a2, a3 })
}

impl HarnackPath {
    pub fn dim(&self) -> usize {
        self.a0.len()
    }

    pub fn position(&self, t: f64, out: &mut [f64]) {
        for i in 0..self.a0.len() {
            out[i] = self.a0[i] + t * (self.a1[i] + t * (self.a2[i] + t * self.a3[i]));
        }
    }

    pub fn velocity(&self, t: f64, out: &mut [f64]) {
        for i in 0..self.a0.len() {
            out[i] = self.a1[i] + t * (2.0 * self.a2[i] + 3.0 * t * self.a3[i]);
        }
    }

    pub fn acceleration(&self, t: f64, out: &mut [f64]) {
        for i in 0..self.a0.len() {
            out[i] = 2.0 * self.a2[i] + 6.0 * t * self.a3[i];
        }
    }

    /// Exact increment `phi(u + h) - phi(u) - h phi'(u)`, evaluated without
    /// the catastrophic cancellation of the naive difference.
    pub fn position_increment_beyond_linear(&self, u: f64, h: f64, out: &mut [f64]) {
        for i in 0..self.a0.len() {
            out[i] = h * h * (self.a2[i] + self.a3[i] * (3.0 * u + h));
        }
    }

    /// Exact velocity increment `phi'(u + h) - phi'(u)`.
    pub fn velocity_increment(&self, u: f64, h: f64, out: &mut [f64]) {
        for i in 0..self.a0.len() {
            out[i] = h * (2.0 * self.a2[i] + 3.0 * self.a3[i] * (2.0 * u + h));
        }
    }

    /// Budget `B = |q' - q| + Delta |p' - p| + Delta |p|` controlling the
    /// connecting-path bounds.
    pub fn budget(&self) -> f64 {
        let dq = norm_diff(self.y.q(), self.x.q());
        let dp = norm_diff(self.y.p(), self.x.p());
        let p = norm(self.x.p());
        dq + self.delta * dp + self.delta * p
    }

    /// Checks the endpoint identities and the three suprema bounds with the
    /// constant `c`, reporting the attained values on a dense grid.
    pub fn chemin_report(&self, c: f64, grid: usize) -> CheminReport {
        let d = self.dim();
        let mut buf = vec![0.0; d];
        let b = self.budget();
        let mut sup_dev = 0.0f64;
        let mut sup_speed = 0.0f64;
        let mut sup_accel = 0.0f64;
        for k in 0..=grid {
            let t = self.delta * k as f64 / grid as f64;
            self.position(t, &mut buf);
            sup_dev = sup_dev.max(norm_diff(&buf, self.x.q()));
            self.velocity(t, &mut buf);
            sup_speed = sup_speed.max(norm(&buf));
            self.acceleration(t, &mut buf);
            sup_accel = sup_accel.max(norm(&buf));
        }
        let mut q_end = vec![0.0; d];
        let mut p_end = vec![0.0; d];
        self.position(self.delta, &mut q_end);
        self.velocity(self.delta, &mut p_end);
        let endpoint_error = norm_diff(&q_end, self.y.q()).max(norm_diff(&p_end, self.y.p()));
        let dl = self.delta;
        CheminReport {
            budget: b,
            endpoint_error,
            sup_deviation: sup_dev,
            sup_speed,
            sup_acceleration: sup_accel,
            bounds_hold: sup_dev <= c * b
                && sup_speed <= c * b / dl
                && sup_accel <= c * b / (dl * dl),
        }
    }
}

/// Attained suprema of one connecting path against the `C`-bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheminReport {
    pub budget: f64,
    pub endpoint_error: f64,
    pub sup_deviation: f64,
    pub sup_speed: f64,
    pub sup_acceleration: f64,
    pub bounds_hold: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Parameters of the chain construction over
/// `K = {(q, p) : d_∂(q) >= boundary_margin, |p| <= momentum_bound}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackChainParams {
    pub domain: DomainSpec,
    pub momentum_bound: f64,
    pub boundary_margin: f64,
    /// Chain horizon `T`.
    pub horizon: f64,
    /// Time shift `epsilon` from which the chained inequality is valid.
    pub eps_shift: f64,
    /// Base box radius `R` in `(0, 1)`.
    pub box_r: f64,
    /// Base box time offset `Delta` in `(0, 1)`, with `Delta + R^2 < 1`.
    pub box_delta: f64,
    /// Base Harnack constant `C > 1` (external input).
    pub base_constant: f64,
}

impl HarnackChainParams {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.domain.dim() != 1 {
            return Err(KfpError::invalid(
                "domain",
                "chain construction ships for 1-d position domains",
            ));
        }
        if !(self.momentum_bound > 0.0) {
            return Err(KfpError::invalid("momentum_bound", "must be > 0"));
        }
        if !(self.boundary_margin > 0.0) {
            return Err(KfpError::invalid("boundary_margin", "must be > 0"));
        }
        let (lo, hi) = self.domain.bounding_box();
        if 2.0 * self.boundary_margin >= hi[0] - lo[0] {
            return Err(KfpError::invalid("boundary_margin", "margin swallows the domain"));
        }
        if !(self.horizon > 0.0) || !(self.eps_shift > 0.0) {
            return Err(KfpError::invalid("horizon", "horizon and eps_shift must be > 0"));
        }
        if !(self.box_r > 0.0 && self.box_r < 1.0 && self.box_delta > 0.0 && self.box_delta < 1.0) {
            return Err(KfpError::invalid("box_r", "box parameters must lie in (0, 1)"));
        }
        if self.box_delta + self.box_r * self.box_r >= 1.0 {
            return Err(KfpError::invalid("box_delta", "need box_delta + box_r^2 < 1"));
        }
        if !(self.base_constant > 1.0) {
            return Err(KfpError::invalid("base_constant", "must be > 1"));
        }
        Ok(())
    }

    fn contains(&self, x: &PhaseVector) -> bool {
        self.domain.signed_distance(x.q()) >= self.boundary_margin - 1e-12
            && norm(x.p()) <= self.momentum_bound + 1e-12
    }
}

/// A built chain: cover, graph walk, composed path, and the scaled-box data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnackChain {
    pub params: HarnackChainParams,
    /// `delta_K = d(K, ∂D) ∧ rho` (interior sphere radius).
    pub delta_k: f64,
    /// Cover scale `eps = delta_K / 2`; ball radius is `eps / (8 C)`.
    pub eps_cover: f64,
    pub cover_radius: f64,
    pub nodes: Vec<PhaseVector>,
    /// Node indices of the graph walk (exactly `nodes.len() - 1` edges).
    pub walk: Vec<usize>,
    /// Composed path: entry leg, walk bridges, exit leg.
    pub segments: Vec<HarnackPath>,
    pub segment_delta: f64,
    /// A-priori speed/acceleration bound `M_{K,T}` of the composed path.
    pub m_kt: f64,
    /// Scaled-box radius `r_eps` satisfying the three smallness conditions.
    pub r_eps: f64,
    /// Sampling step `alpha_eps = r_eps^2 (box_delta + box_r^2 / 2)`, with
    /// `horizon / alpha_eps` an exact positive integer.
    pub alpha_eps: f64,
    pub n_eps: u64,
}

/// Builds the cover of `K' = {d_∂ >= delta_K, |p| <= k}`, the graph walk
/// from (the node nearest) `x` to (the node nearest) `y` padded with loops
/// to exactly `N - 1` edges, and the composed piecewise-cubic path.
pub fn build_admissible_chain(
    params: &HarnackChainParams,
    x: &PhaseVector,
    y: &PhaseVector,
) -> Result<HarnackChain> {
    params.validate()?;
    if !params.contains(x) || !params.contains(y) {
        return Err(KfpError::invalid("x", "endpoints must lie in the compact set K"));
    }
    let c = PATH_CONSTANT;
    let delta_k = params.boundary_margin.min(params.domain.interior_sphere_radius());
    let eps_cover = 0.5 * delta_k;
    let cover_radius = eps_cover / (8.0 * c);
    let k = params.momentum_bound;

    // Lattice cover of K': spacing so each cell's half-diagonal fits in one ball.
    let (lo, hi) = params.domain.bounding_box();
    let (q_lo, q_hi) = (lo[0] + delta_k, hi[0] - delta_k);
    let spacing = cover_radius * 2f64.sqrt();
    let nq = (((q_hi - q_lo) / spacing).ceil() as usize + 1).max(2);
    let np = ((2.0 * k / spacing).ceil() as usize + 1).max(2);
    let mut nodes = Vec::with_capacity(nq * np);
    for i in 0..nq {
        let q = q_lo + (q_hi - q_lo) * i as f64 / (nq - 1) as f64;
        for j in 0..np {
            let p = -k + 2.0 * k * j as f64 / (np - 1) as f64;
            nodes.push(PhaseVector::new_1d(q, p));
        }
    }
    let n = nodes.len();

    // Adjacency: |z_i - z_j| <= eps / (4C) = 2 cover_radius; on the lattice
    // that is the 8-neighborhood.
    let adj_limit = 2.0 * cover_radius * (1.0 + 1e-12);
    let neighbor = |i: usize, j: usize| nodes[i].distance(&nodes[j]) <= adj_limit;
    let idx = |iq: usize, ip: usize| iq * np + ip;

    let nearest = |pt: &PhaseVector| -> Result<usize> {
        let (mut best, mut best_d) = (0usize, f64::INFINITY);
        for (i, z) in nodes.iter().enumerate() {
            let d = z.distance(pt);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > cover_radius * (1.0 + 1e-9) {
            return Err(KfpError::numerical(
                "chain_cover",
                format!("point at distance {best_d} from the cover (radius {cover_radius})"),
            ));
        }
        Ok(best)
    };
    let start = nearest(x)?;
    let goal = nearest(y)?;

    // BFS on the lattice graph.
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    seen[start] = true;
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        if u == goal {
            break;
        }
        let (iq, ip) = (u / np, u % np);
        for dq in -1i64..=1 {
            for dp in -1i64..=1 {
                if dq == 0 && dp == 0 {
                    continue;
                }
                let (jq, jp) = (iq as i64 + dq, ip as i64 + dp);
                if jq < 0 || jp < 0 || jq >= nq as i64 || jp >= np as i64 {
                    continue;
                }
                let v = idx(jq as usize, jp as usize);
                if !seen[v] && neighbor(u, v) {
                    seen[v] = true;
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
    }
    if !seen[goal] {
        return Err(KfpError::numerical(
            "chain_cover",
            "cover graph is disconnected at the sampled resolution",
        ));
    }
    let mut walk = vec![goal];
    let mut u = goal;
    while u != start {
        u = prev[u];
        walk.push(u);
    }
    walk.reverse();
    if walk.len() > n {
        return Err(KfpError::numerical("chain_cover", "walk longer than the cover"));
    }
    // Pad with loops at the walk node of smallest momentum so the walk has
    // exactly n - 1 edges (n nodes in the cover, walk of n slots).
    let pad_at = walk
        .iter()
        .enumerate()
        .min_by(|a, b| norm(nodes[*a.1].p()).total_cmp(&norm(nodes[*b.1].p())))
        .map(|(i, _)| i)
        .unwrap();
    let pad_node = walk[pad_at];
    let missing = n - walk.len();
    for _ in 0..missing {
        walk.insert(pad_at, pad_node);
    }
    debug_assert_eq!(walk.len(), n);

    // Total path: entry leg + (n - 1) walk bridges + exit leg, each of
    // length Delta = T / (n + 1).
    let segment_delta = params.horizon / (n + 1) as f64;
    let m_k = k + 1.0;
    if segment_delta > (eps_cover / (2.0 * m_k * c)).min(1.0) {
        return Err(KfpError::numerical(
            "chain_cover",
            format!("segment window {segment_delta} too long for the cover scale"),
        ));
    }
    let mut segments = Vec::with_capacity(n + 1);
    segments.push(hermite_bridge(x, &nodes[walk[0]], segment_delta)?);
    for w in walk.windows(2) {
        segments.push(hermite_bridge(&nodes[w[0]], &nodes[w[1]], segment_delta)?);
    }
    segments.push(hermite_bridge(&nodes[*walk.last().unwrap()], y, segment_delta)?);

    // A-priori bound on sup(|phi'| + |phi''|) from the path constant.
    let max_budget = segments.iter().map(|s| s.budget()).fold(0.0f64, f64::max);
    let m_kt = c * max_budget * (1.0 / segment_delta + 1.0 / (segment_delta * segment_delta));

    // Scaled-box radius: the three smallness conditions, strictly.
    let shrink = 1.0 - 1e-9;
    let window = params.box_delta + 0.5 * params.box_r * params.box_r;
    let r_kt = (delta_k / (1.0 + m_kt)).sqrt().min(0.5);
    let r_max = r_kt
        .min(shrink * 2.0 * params.box_r.powi(3) / (m_kt * window * window))
        .min(shrink * params.box_r / (m_kt * window))
        .min(shrink * (params.eps_shift / (1.0 - window)).sqrt());
    if !(r_max > 0.0) {
        return Err(KfpError::numerical("chain_cover", "no admissible scaled-box radius"));
    }
    let alpha_max = r_max * r_max * window;
    let n_eps = (params.horizon / alpha_max).ceil().max(1.0) as u64;
    let alpha_eps = params.horizon / n_eps as f64;
    let r_eps = (alpha_eps / window).sqrt();

    Ok(HarnackChain {
        params: params.clone(),
        delta_k,
        eps_cover,
        cover_radius,
        nodes,
        walk,
        segments,
        segment_delta,
        m_kt,
        r_eps,
        alpha_eps,
        n_eps,
    })
}

impl HarnackChain {
    pub fn total_time(&self) -> f64 {
        self.segment_delta * self.segments.len() as f64
    }

    /// Segment index and local time of a global path time `s`.
    fn locate(&self, s: f64) -> (usize, f64) {
        let mut k = (s / self.segment_delta).floor() as usize;
        if k >= self.segments.len() {
            k = self.segments.len() - 1;
        }
        (k, s - k as f64 * self.segment_delta)
    }

    pub fn position_at(&self, s: f64, out: &mut [f64]) {
        let (k, u) = self.locate(s);
        self.segments[k].position(u, out);
    }

    pub fn velocity_at(&self, s: f64, out: &mut [f64]) {
        let (k, u) = self.locate(s);
        self.segments[k].velocity(u, out);
    }
}

/// Verification report of a built chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainReport {
    /// Largest junction/endpoint mismatch of the composed path.
    pub endpoint_error: f64,
    /// Attained `sup (|phi'| + |phi''|)` over the dense grid.
    pub speed_accel_sup: f64,
    /// Declared a-priori bound `M_{K,T}`.
    pub m_kt: f64,
    /// Smallest boundary distance of the path over the dense grid.
    pub min_boundary_distance: f64,
    /// Required clearance `delta_K / 2`.
    pub required_clearance: f64,
    pub h_violations: u64,
    pub step2: Step2Report,
    /// Empirically fitted minimal constant `sup_K u(t) / inf_K u(t + T)` of a
    /// caller-provided nonnegative solution, for comparison against the
    /// chained constant (no ordering asserted).
    pub fitted_constant: Option<f64>,
}

/// Scaled-box membership of consecutive path samples,
/// `Phi(s_{j+1}) in Q^-_{K,T,r}(Phi(s_j))` for `j = 0 .. n_eps - 1`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Step2Report {
    pub n_eps: u64,
    /// `t_hat = -alpha / r^2`, constant across links.
    pub t_hat: f64,
    pub t_window_ok: bool,
    /// Largest `|q_hat_j|` against the limit `R^3`.
    pub q_hat_max: f64,
    /// Largest `|p_hat_j|` against the limit `R`.
    pub p_hat_max: f64,
    pub violations: u64,
}

/// H-membership checks of the composed path: junction continuity, the
/// speed/acceleration bound, and the boundary clearance, on a grid of at
/// least `grid_total` points.
pub fn verify_h_membership(chain: &HarnackChain, grid_total: usize) -> (f64, f64, f64, u64) {
    let d = chain.segments[0].dim();
    let per_segment = (grid_total / chain.segments.len()).max(4);
    let mut buf_q = vec![0.0; d];
    let mut buf_v = vec![0.0; d];
    let mut buf_a = vec![0.0; d];
    let mut sup = 0.0f64;
    let mut min_dist = f64::INFINITY;
    let mut violations = 0u64;
    for seg in &chain.segments {
        for g in 0..=per_segment {
            let u = seg.delta * g as f64 / per_segment as f64;
            seg.position(u, &mut buf_q);
            seg.velocity(u, &mut buf_v);
            seg.acceleration(u, &mut buf_a);
            let speed_accel = norm(&buf_v) + norm(&buf_a);
            sup = sup.max(speed_accel);
            let dist = chain.params.domain.signed_distance(&buf_q);
            min_dist = min_dist.min(dist);
            if speed_accel > chain.m_kt || dist <= 0.5 * chain.delta_k {
                violations += 1;
            }
        }
    }
    // Junction continuity: each segment must end exactly where the next starts.
    let mut endpoint_error = 0.0f64;
    let mut q_end = vec![0.0; d];
    let mut v_end = vec![0.0; d];
    for w in chain.segments.windows(2) {
        w[0].position(w[0].delta, &mut q_end);
        w[0].velocity(w[0].delta, &mut v_end);
        endpoint_error = endpoint_error
            .max(norm_diff(&q_end, w[1].x.q()))
            .max(norm_diff(&v_end, w[1].x.p()));
    }
    (endpoint_error, sup, min_dist, violations)
}

/// Step-2 membership sweep over all `n_eps` links. Increments are evaluated
/// through exact per-segment polynomial differences, so the `O(alpha^2)`
/// quantities survive in floating point.
pub fn verify_step2(chain: &HarnackChain) -> Result<Step2Report> {
    let params = &chain.params;
    let alpha = chain.alpha_eps;
    let r = chain.r_eps;
    let d = chain.segments[0].dim();
    if alpha >= chain.segment_delta {
        return Err(KfpError::numerical(
            "step2",
            "sampling step exceeds the segment window; increments would span several knots",
        ));
    }
    let t_hat = -(alpha / (r * r));
    let t_window_ok = -params.box_delta - params.box_r * params.box_r < t_hat
        && t_hat <= -params.box_delta + 1e-12;
    let r3 = r * r * r;
    let q_limit = params.box_r.powi(3);
    let p_limit = params.box_r;
    let mut q_hat_max = 0.0f64;
    let mut p_hat_max = 0.0f64;
    let mut violations = if t_window_ok { 0u64 } else { chain.n_eps };
    let mut dq = vec![0.0; d];
    let mut dv = vec![0.0; d];
    let mut dq2 = vec![0.0; d];
    let mut dv2 = vec![0.0; d];
    for j in 0..chain.n_eps {
        let s = j as f64 * alpha;
        let (k, u) = chain.locate(s);
        let seg = &chain.segments[k];
        let room = seg.delta - u;
        let (q_hat, p_hat) = if room >= alpha || k + 1 >= chain.segments.len() {
            // Entirely inside one segment.
            let h = alpha.min(room.max(0.0));
            seg.position_increment_beyond_linear(u, h, &mut dq);
            seg.velocity_increment(u, h, &mut dv);
            (norm(&dq) / r3, norm(&dv) / r)
        } else {
            // Straddles one knot: split at the segment boundary. The
            // composed path is C^1 at knots, so the velocity there is shared.
            let h1 = room;
            let h2 = alpha - room;
            let next = &chain.segments[k + 1];
            seg.position_increment_beyond_linear(u, h1, &mut dq);
            next.position_increment_beyond_linear(0.0, h2, &mut dq2);
            seg.velocity_increment(u, h1, &mut dv);
            next.velocity_increment(0.0, h2, &mut dv2);
            let mut q_tot = 0.0;
            let mut p_tot = 0.0;
            for i in 0..d {
                let q_inc = dq[i] + dq2[i] + h2 * dv[i];
                let p_inc = dv[i] + dv2[i];
                q_tot += q_inc * q_inc;
                p_tot += p_inc * p_inc;
            }
            (q_tot.sqrt() / r3, p_tot.sqrt() / r)
        };
        q_hat_max = q_hat_max.max(q_hat);
        p_hat_max = p_hat_max.max(p_hat);
        if q_hat >= q_limit || p_hat >= p_limit {
            violations += 1;
        }
    }
    Ok(Step2Report {
        n_eps: chain.n_eps,
        t_hat,
        t_window_ok,
        q_hat_max,
        p_hat_max,
        violations,
    })
}

/// Full chain verification: H-membership on a dense grid, the scaled-box
/// sweep, and optionally the empirically fitted minimal Harnack constant of
/// a caller-supplied nonnegative solution `u(t, z)`.
pub fn verify_chain_membership(
    chain: &HarnackChain,
    grid_total: usize,
    solution_sampler: Option<&dyn Fn(f64, &PhaseVector) -> f64>,
) -> Result<ChainReport> {
    let (endpoint_error, sup, min_dist, h_violations) = verify_h_membership(chain, grid_total);
    let step2 = verify_step2(chain)?;
    let fitted_constant = solution_sampler.map(|u| {
        let params = &chain.params;
        let t_late = params.horizon + params.eps_shift;
        let t_early = t_late - params.horizon;
        let (lo, hi) = params.domain.bounding_box();
        let (q_lo, q_hi) = (lo[0] + chain.delta_k, hi[0] - chain.delta_k);
        let k = params.momentum_bound;
        let m = 20usize;
        let mut sup_early = f64::NEG_INFINITY;
        let mut inf_late = f64::INFINITY;
        for i in 0..=m {
            let q = q_lo + (q_hi - q_lo) * i as f64 / m as f64;
            for j in 0..=m {
                let p = -k + 2.0 * k * j as f64 / m as f64;
                let z = PhaseVector::new_1d(q, p);
                sup_early = sup_early.max(u(t_early, &z));
                inf_late = inf_late.min(u(t_late, &z));
            }
        }
        sup_early / inf_late
    });
    Ok(ChainReport {
        endpoint_error,
        speed_accel_sup: sup,
        m_kt: chain.m_kt,
        min_boundary_distance: min_dist,
        required_clearance: 0.5 * chain.delta_k,
        h_violations,
        step2,
        fitted_constant,
    })
}

/// The chained constant `C_{K,T}^{n_eps}`, kept in log form because the link
/// count can be large.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnackConstant {
    pub log_value: f64,
    /// `exp(log_value)`; `inf` when the power overflows.
    pub value: f64,
    pub n_links: u64,
}

/// Chained Harnack constant for a configured base constant `C > 1`.
pub fn harnack_constant(base_constant: f64, chain: &HarnackChain) -> Result<HarnackConstant> {
    if !(base_constant > 1.0) {
        return Err(KfpError::invalid("base_constant", format!("must be > 1, got {base_constant}")));
    }
    let log_value = chain.n_eps as f64 * base_constant.ln();
    Ok(HarnackConstant {
        log_value,
        value: log_value.exp(),
        n_links: chain.n_eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn bridge_matches_reference_values() {
        // x = (0,0), y = (1,0), Delta = 1: phi(t) = 3t^2 - 2t^3.
        let path = hermite_bridge(&PhaseVector::new_1d(0.0, 0.0), &PhaseVector::new_1d(1.0, 0.0), 1.0)
            .unwrap();
        let mut q = [0.0];
        let mut v = [0.0];
        path.position(0.5, &mut q);
        path.velocity(0.5, &mut v);
        assert_relative_eq!(q[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(v[0], 1.5, max_relative = 1e-15);
    }

    #[test]
    fn loop_path_keeps_endpoint_identities() {
        // x = y with p != 0: not constant, but endpoints and derivatives match.
        let x = PhaseVector::new_1d(0.3, 0.7);
        let path = hermite_bridge(&x, &x, 0.5).unwrap();
        let rep = path.chemin_report(PATH_CONSTANT, 400);
        assert!(rep.endpoint_error < 1e-14);
        let mut q = [0.0];
        path.position(0.25, &mut q);
        assert!((q[0] - 0.3).abs() > 1e-3, "loop with momentum must move");
    }

    #[test]
    fn zero_momentum_loop_is_constant() {
        let x = PhaseVector::new_1d(-0.2, 0.0);
        let path = hermite_bridge(&x, &x, 0.5).unwrap();
        let mut q = [0.0];
        path.position(0.33, &mut q);
        assert_eq!(q[0], -0.2);
    }

    proptest! {
        #[test]
        fn chemin_bounds_hold_for_random_endpoints(
            q0 in -2.0f64..2.0, p0 in -3.0f64..3.0,
            q1 in -2.0f64..2.0, p1 in -3.0f64..3.0,
            delta in 0.01f64..10.0,
        ) {
            let path = hermite_bridge(
                &PhaseVector::new_1d(q0, p0),
                &PhaseVector::new_1d(q1, p1),
                delta,
            ).unwrap();
            let rep = path.chemin_report(PATH_CONSTANT, 500);
            prop_assert!(rep.bounds_hold, "report {rep:?}");
            prop_assert!(rep.endpoint_error < 1e-10 * (1.0 + delta * delta));
        }
    }

    fn small_params() -> HarnackChainParams {
        HarnackChainParams {
            domain: DomainSpec::Interval { a: -1.0, b: 1.0 },
            momentum_bound: 0.02,
            boundary_margin: 0.9,
            horizon: 1.0,
            eps_shift: 0.1,
            box_r: 0.5,
            box_delta: 0.25,
            base_constant: 10.0,
        }
    }

    #[test]
    fn chain_of_loops_for_identical_endpoints() {
        let params = small_params();
        let x = PhaseVector::new_1d(0.0, 0.0);
        let chain = build_admissible_chain(&params, &x, &x).unwrap();
        let (endpoint_error, _, min_dist, violations) = verify_h_membership(&chain, 10_000);
        assert!(endpoint_error < 1e-12);
        assert!(violations == 0);
        assert!(min_dist > 0.5 * chain.delta_k);
    }

    #[test]
    fn shrinking_horizon_grows_the_speed_bound() {
        let params = small_params();
        let x = PhaseVector::new_1d(-0.05, 0.01);
        let y = PhaseVector::new_1d(0.05, -0.01);
        let chain_t1 = build_admissible_chain(&params, &x, &y).unwrap();
        let mut fast = params.clone();
        fast.horizon = 0.1;
        let chain_t01 = build_admissible_chain(&fast, &x, &y).unwrap();
        assert!(chain_t01.m_kt > 10.0 * chain_t1.m_kt);
    }

    #[test]
    fn chain_endpoints_must_lie_in_k() {
        let params = small_params();
        let inside = PhaseVector::new_1d(0.0, 0.0);
        let outside = PhaseVector::new_1d(0.5, 0.0); // boundary margin violated
        assert!(build_admissible_chain(&params, &inside, &outside).is_err());
    }

    #[test]
    fn step2_membership_and_tightness_in_r() {
        let params = small_params();
        let x = PhaseVector::new_1d(-0.04, 0.0);
        let y = PhaseVector::new_1d(0.04, 0.01);
        let chain = build_admissible_chain(&params, &x, &y).unwrap();
        let report = verify_step2(&chain).unwrap();
        assert_eq!(report.violations, 0, "{report:?}");
        assert!(report.t_window_ok);
        assert!(report.q_hat_max < 0.125 && report.p_hat_max < 0.5);

        // Doubling r beyond the admissible radius must break membership:
        // p_hat scales like 1/r at fixed alpha... rebuild with r doubled and
        // alpha fixed through a manual tweak.
        let mut loose = chain.clone();
        loose.r_eps *= 8.0;
        let report2 = verify_step2(&loose).unwrap();
        assert!(report2.violations > 0 || !report2.t_window_ok);
    }

    #[test]
    fn chained_constant_power() {
        let params = small_params();
        let x = PhaseVector::new_1d(0.0, 0.0);
        let mut chain = build_admissible_chain(&params, &x, &x).unwrap();
        chain.n_eps = 10;
        let c = harnack_constant(2.0, &chain).unwrap();
        assert_relative_eq!(c.value, 1024.0, max_relative = 1e-12);
        assert!(harnack_constant(1.0, &chain).is_err());
    }
}
