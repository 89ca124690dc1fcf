//! Blown-up n-body flow. In McGehee coordinates v = r^{1/2}ṙ, u = r^{3/2}M̂ẋ
//! with dt = r^{3/2}dτ:
//!
//!   v′ = ½v² + ⟨M̂⁻¹u,u⟩ − Û,  u′ = −½uv + Û_x − ½⟨(M̂⁻¹)_x u,u⟩,
//!   r′ = rv,  x′ = M̂⁻¹u,
//!
//! with energy identity ½(⟨M̂⁻¹u,u⟩ + v²) − Û = rH₀. The hyperbolic variant
//! uses v = ṙ, u = rM̂ẋ, dt = r dτ:
//!
//!   v′ = ⟨M̂⁻¹u,u⟩ − Û/r,  u′ = −uv + Û_x/r − ½⟨(M̂⁻¹)_x u,u⟩,
//!   r′ = rv,  x′ = M̂⁻¹u,
//!
//! with ½(⟨M̂⁻¹u,u⟩ + v²) − Û/r = H₀.
//!
//! The integrated state is (v, u, ln r, x, t); x lives in a graph chart that
//! is recentred whenever it leaves the chart's validity radius.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::nbody::{kinetic_form, m_hat_inv, Chart, MassSystem};
use crate::ode::{Integrator, Step, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlowupKind {
    #[serde(rename = "mcgehee")]
    McGehee,
    Hyperbolic,
}

impl BlowupKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlowupKind::McGehee => "mcgehee",
            BlowupKind::Hyperbolic => "hyperbolic",
        }
    }

    /// dt/dτ at radius r.
    pub fn dt_dtau(self, r: f64) -> f64 {
        match self {
            BlowupKind::McGehee => r * r.sqrt(),
            BlowupKind::Hyperbolic => r,
        }
    }

    /// Exponent e with v = r^e ṙ and u = r^{e+1} M̂ẋ.
    fn weight(self) -> f64 {
        match self {
            BlowupKind::McGehee => 0.5,
            BlowupKind::Hyperbolic => 0.0,
        }
    }
}

impl std::str::FromStr for BlowupKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcgehee" => Ok(BlowupKind::McGehee),
            "hyperbolic" | "hyperbolic-mcgehee" => Ok(BlowupKind::Hyperbolic),
            _ => Err(Error::InvalidInput(format!("unknown coordinate kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupState {
    pub kind: BlowupKind,
    pub v: f64,
    pub u: Vector,
    pub r: f64,
    pub x: Vector,
    pub tau: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub v: f64,
    pub u: Vector,
    pub r: f64,
    pub x: Vector,
    /// dt/dτ.
    pub t: f64,
}

fn check_state(chart: &Chart, state: &BlowupState) -> Result<()> {
    if !(state.r > 0.0) || !state.r.is_finite() {
        return Err(Error::InvalidState(format!("radius {} is not positive", state.r)));
    }
    let m = chart.dim();
    if state.u.len() != m || state.x.len() != m {
        return Err(Error::InvalidInput(format!(
            "state has |u| = {}, |x| = {} for a chart of dimension {m}",
            state.u.len(),
            state.x.len()
        )));
    }
    Ok(())
}

fn derivative(sys: &MassSystem, chart: &Chart, kind: BlowupKind, v: f64, u: &Vector, r: f64, x: &Vector) -> Result<StateDerivative> {
    let nc = chart.eval_unchecked(sys, x, false)?;
    let kf = kinetic_form(x, u);
    let minv_u = m_hat_inv(x) * u;
    let (dv, du) = match kind {
        BlowupKind::McGehee => (
            0.5 * v * v + kf.value - nc.u_val,
            u * (-0.5 * v) + &nc.u_grad - &kf.grad_x * 0.5,
        ),
        BlowupKind::Hyperbolic => (kf.value - nc.u_val / r, u * (-v) + &nc.u_grad / r - &kf.grad_x * 0.5),
    };
    Ok(StateDerivative { v: dv, u: du, r: r * v, x: minv_u, t: kind.dt_dtau(r) })
}

/// τ-derivative of the state; x must lie within the chart's validity radius.
pub fn rhs(sys: &MassSystem, chart: &Chart, state: &BlowupState) -> Result<StateDerivative> {
    check_state(chart, state)?;
    let nrm = state.x.norm();
    if nrm > chart.validity_radius {
        return Err(Error::ChartDomain { norm: nrm, radius: chart.validity_radius });
    }
    derivative(sys, chart, state.kind, state.v, &state.u, state.r, &state.x)
}

/// Left minus right side of the energy identity for the state's kind.
pub fn energy_residual(sys: &MassSystem, chart: &Chart, state: &BlowupState, h0: f64) -> Result<f64> {
    check_state(chart, state)?;
    let uval = chart.eval_unchecked(sys, &state.x, false)?.u_val;
    let q = kinetic_form(&state.x, &state.u).value;
    Ok(match state.kind {
        BlowupKind::McGehee => 0.5 * (q + state.v * state.v) - uval - state.r * h0,
        BlowupKind::Hyperbolic => 0.5 * (q + state.v * state.v) - uval / state.r - h0,
    })
}

/// H₀ implied by the state.
pub fn energy_constant(sys: &MassSystem, chart: &Chart, state: &BlowupState) -> Result<f64> {
    let e = energy_residual(sys, chart, state, 0.0)?;
    Ok(match state.kind {
        BlowupKind::McGehee => e / state.r,
        BlowupKind::Hyperbolic => e,
    })
}

/// Blow-up coordinates of a Cartesian state (q, q̇) in a given chart.
pub fn from_cartesian_in(
    sys: &MassSystem,
    chart: &Chart,
    kind: BlowupKind,
    q: &Vector,
    qdot: &Vector,
    tau: f64,
    t: f64,
) -> Result<BlowupState> {
    let (r, s) = sys.normalize(q)?;
    let x = chart.from_ambient(sys, &s)?;
    let rdot = sys.m_inner(&s, qdot);
    let sdot = (qdot - &s * rdot) / r;
    // M̂ẋ = Jᵀ M ṡ for the chart Jacobian J.
    let m_xdot = chart.jacobian(&x).transpose() * sys.m_apply(&sdot);
    let e = kind.weight();
    Ok(BlowupState { kind, v: r.powf(e) * rdot, u: m_xdot * r.powf(e + 1.0), r, x, tau, t })
}

/// Blow-up coordinates in a chart centred at q.
pub fn from_cartesian(sys: &MassSystem, kind: BlowupKind, q: &Vector, qdot: &Vector) -> Result<(Chart, BlowupState)> {
    let chart = Chart::at(sys, q)?;
    let state = from_cartesian_in(sys, &chart, kind, q, qdot, 0.0, 0.0)?;
    Ok((chart, state))
}

pub fn to_cartesian(sys: &MassSystem, chart: &Chart, state: &BlowupState) -> Result<(Vector, Vector)> {
    check_state(chart, state)?;
    let e = state.kind.weight();
    let s = chart.to_ambient(&state.x);
    let xdot = m_hat_inv(&state.x) * &state.u / state.r.powf(e + 1.0);
    let sdot = chart.jacobian(&state.x) * xdot;
    let rdot = state.v / state.r.powf(e);
    let _ = sys;
    Ok((&s * state.r, &s * rdot + sdot * state.r))
}

/// Express the state in a chart centred at its current configuration.
pub fn recenter(sys: &MassSystem, chart: &Chart, state: &BlowupState) -> Result<(Chart, BlowupState)> {
    let (q, qdot) = to_cartesian(sys, chart, state)?;
    let mut new_chart = Chart::at(sys, &q)?;
    new_chart.validity_radius = chart.validity_radius;
    let mut st = from_cartesian_in(sys, &new_chart, state.kind, &q, &qdot, state.tau, state.t)?;
    // Keep v exactly; only the fibre part changes representation.
    st.v = state.v;
    st.r = state.r;
    Ok((new_chart, st))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub tol: Tolerances,
    /// Accepted steps between energy projections; 0 disables projection.
    pub projection_interval: usize,
    /// Residual that triggers a projection before the interval is up.
    pub projection_threshold: f64,
    pub divergence_bound: f64,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { tol: Tolerances::default(), projection_interval: 100, projection_threshold: 1e-10, divergence_bound: 1e6, max_steps: 2_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: BlowupState,
    /// Index into [`Trajectory::charts`].
    pub chart: usize,
    pub energy_residual: f64,
}

#[derive(Debug, Clone)]
struct Segment {
    chart: usize,
    steps: Vec<Step>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: BlowupKind,
    pub h0: f64,
    pub charts: Vec<Chart>,
    /// Initial state and the state after every accepted step.
    pub samples: Vec<Sample>,
    pub max_energy_residual: f64,
    pub projections: usize,
    pub recenterings: usize,
    segments: Vec<Segment>,
}

fn pack(s: &BlowupState) -> Vec<f64> {
    let mut y = Vec::with_capacity(2 * s.u.len() + 3);
    y.push(s.v);
    y.extend(s.u.iter());
    y.push(s.r.ln());
    y.extend(s.x.iter());
    y.push(s.t);
    y
}

fn unpack(kind: BlowupKind, tau: f64, y: &[f64]) -> BlowupState {
    let m = (y.len() - 3) / 2;
    BlowupState {
        kind,
        v: y[0],
        u: Vector::from_column_slice(&y[1..=m]),
        r: y[m + 1].exp(),
        x: Vector::from_column_slice(&y[m + 2..2 * m + 2]),
        tau,
        t: y[2 * m + 2],
    }
}

/// Re-satisfy the energy identity: adjust v, or r when v is near zero.
fn project(sys: &MassSystem, chart: &Chart, s: &mut BlowupState, h0: f64) -> Result<()> {
    let uval = chart.eval_unchecked(sys, &s.x, false)?.u_val;
    let q = kinetic_form(&s.x, &s.u).value;
    let scale = uval.abs().max(1.0);
    let (target_v2, r_from) = match s.kind {
        BlowupKind::McGehee => (2.0 * (uval + s.r * h0) - q, (h0 != 0.0).then(|| (0.5 * (q + s.v * s.v) - uval) / h0)),
        BlowupKind::Hyperbolic => {
            (2.0 * (uval / s.r + h0) - q, Some(uval / (0.5 * (q + s.v * s.v) - h0)).filter(|r| *r > 0.0))
        }
    };
    if target_v2 > 0.0 && s.v * s.v > 1e-6 * scale {
        s.v = s.v.signum() * target_v2.sqrt();
    } else if let Some(r) = r_from.filter(|r| *r > 0.0 && (r / s.r - 1.0).abs() < 1e-6) {
        s.r = r;
    }
    Ok(())
}

enum SegmentEnd {
    Done,
    Exit(BlowupState),
}

impl Trajectory {
    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has its initial sample")
    }

    pub fn span(&self) -> (f64, f64) {
        (self.first().state.tau, self.last().state.tau)
    }

    /// Dense state at τ with the index of the chart its x refers to.
    pub fn state_at(&self, tau: f64) -> Result<(BlowupState, usize)> {
        for seg in &self.segments {
            if let Some(step) = seg.steps.iter().find(|s| s.contains(tau)) {
                return Ok((unpack(self.kind, tau, &step.eval(tau)), seg.chart));
            }
        }
        if tau == self.first().state.tau {
            return Ok((self.first().state.clone(), self.first().chart));
        }
        let (a, b) = self.span();
        Err(Error::InvalidInput(format!("τ = {tau} outside the integrated span [{a}, {b}]")))
    }

    /// Cartesian (q, q̇) at every sample.
    pub fn cartesian(&self, sys: &MassSystem) -> Result<Vec<(f64, Vector, Vector)>> {
        self.samples
            .iter()
            .map(|s| to_cartesian(sys, &self.charts[s.chart], &s.state).map(|(q, qd)| (s.state.t, q, qd)))
            .collect()
    }

    /// β = |t − T| at every sample for a trajectory running into total
    /// collision (McGehee kind, v < 0 at the end). The part of the time to
    /// collision beyond the last sample is taken from the exponential tail
    /// r ≈ r_end·e^{v_end(τ − τ_end)}. β is a difference of absolute times,
    /// so it carries an absolute error of order ε·|t|.
    pub fn collision_beta(&self) -> Result<Vec<(f64, f64)>> {
        let end = &self.last().state;
        if self.kind != BlowupKind::McGehee || !(end.v < 0.0) {
            return Err(Error::Precondition("collision time needs a McGehee trajectory shrinking at its end".into()));
        }
        let forward = self.span().1 >= self.span().0;
        if !forward {
            return Err(Error::Precondition("collision time needs a forward-in-τ trajectory".into()));
        }
        let tail = end.r.powf(1.5) / (1.5 * end.v.abs());
        Ok(self.samples.iter().map(|s| (s.state.tau, end.t - s.state.t + tail)).collect())
    }
}

/// Integrate from `state0` to `tau_end`.
pub fn integrate(sys: &MassSystem, chart: &Chart, state0: &BlowupState, tau_end: f64, opts: &FlowOptions) -> Result<Trajectory> {
    check_state(chart, state0)?;
    let kind = state0.kind;
    let h0 = energy_constant(sys, chart, state0)?;
    let res0 = energy_residual(sys, chart, state0, h0)?;
    let mut traj = Trajectory {
        kind,
        h0,
        charts: vec![chart.clone()],
        samples: vec![Sample { state: state0.clone(), chart: 0, energy_residual: res0 }],
        max_energy_residual: res0.abs(),
        projections: 0,
        recenterings: 0,
        segments: Vec::new(),
    };
    let mut current = state0.clone();
    if current.x.norm() > chart.validity_radius {
        let (c, s) = recenter(sys, chart, &current)?;
        traj.charts[0] = c;
        current = s;
        traj.samples[0].state = current.clone();
    }
    let mut total_steps = 0usize;
    loop {
        let ci = traj.charts.len() - 1;
        let chart = traj.charts[ci].clone();
        let (end, steps) = run_segment(sys, &chart, ci, current.clone(), tau_end, opts, &mut traj, &mut total_steps)?;
        traj.segments.push(Segment { chart: ci, steps });
        match end {
            SegmentEnd::Done => break,
            SegmentEnd::Exit(state) => {
                let (c, s) = recenter(sys, &chart, &state)?;
                traj.charts.push(c);
                traj.recenterings += 1;
                current = s;
            }
        }
    }
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn run_segment(
    sys: &MassSystem,
    chart: &Chart,
    ci: usize,
    start: BlowupState,
    tau_end: f64,
    opts: &FlowOptions,
    traj: &mut Trajectory,
    total_steps: &mut usize,
) -> Result<(SegmentEnd, Vec<Step>)> {
    let kind = start.kind;
    let m = chart.dim();
    let f = |_tau: f64, y: &[f64], dy: &mut [f64]| {
        let s = unpack(kind, 0.0, y);
        match derivative(sys, chart, kind, s.v, &s.u, s.r, &s.x) {
            Ok(d) => {
                dy[0] = d.v;
                dy[1..=m].copy_from_slice(d.u.as_slice());
                // (ln r)′ = v.
                dy[m + 1] = s.v;
                dy[m + 2..2 * m + 2].copy_from_slice(d.x.as_slice());
                dy[2 * m + 2] = d.t;
            }
            Err(_) => dy.iter_mut().for_each(|d| *d = f64::NAN),
        }
    };
    let mut integ = Integrator::new(&f, start.tau, pack(&start), opts.tol);
    let mut steps = Vec::new();
    while integ.t() != tau_end {
        if *total_steps >= opts.max_steps {
            return Err(Error::Integration(format!("step budget of {} exhausted at τ = {}", opts.max_steps, integ.t())));
        }
        let step = integ.step_towards(tau_end)?;
        *total_steps += 1;
        let mut state = unpack(kind, integ.t(), integ.y());
        if !state.v.is_finite() || state.u.iter().any(|c| !c.is_finite()) {
            return Err(Error::Divergence(format!("non-finite state at τ = {}", state.tau)));
        }
        let big = state.v.abs().max(state.u.amax());
        if big > opts.divergence_bound {
            return Err(Error::Divergence(format!("|v|, |u| reached {big:.3e} at τ = {}", state.tau)));
        }
        let mut res = energy_residual(sys, chart, &state, traj.h0)?;
        if opts.projection_interval > 0
            && (total_steps.is_multiple_of(opts.projection_interval) || res.abs() > opts.projection_threshold)
        {
            project(sys, chart, &mut state, traj.h0)?;
            integ.set_state(pack(&state));
            traj.projections += 1;
            res = energy_residual(sys, chart, &state, traj.h0)?;
        }
        traj.max_energy_residual = traj.max_energy_residual.max(res.abs());
        steps.push(step);
        traj.samples.push(Sample { state: state.clone(), chart: ci, energy_residual: res });
        if m > 0 && state.x.norm() > chart.validity_radius && integ.t() != tau_end {
            return Ok((SegmentEnd::Exit(state), steps));
        }
    }
    Ok((SegmentEnd::Done, steps))
}

/// c₀ + c₁e^{−ρs} fitted on the tail, s measured from the start of the
/// tail window in the direction of integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub limit: f64,
    pub amplitude: f64,
    pub rate: f64,
    pub rms: f64,
    /// Last sample minus the fitted limit.
    pub end_gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub kind: BlowupKind,
    pub h0: f64,
    pub tail: (f64, f64),
    pub samples: usize,
    pub v_abs: TailFit,
    pub u_norm: TailFit,
    /// r^{3/2}|ṡ|_M (McGehee) or r|ṡ|_M (hyperbolic), i.e. ⟨M̂⁻¹u,u⟩^{1/2}.
    pub scaled_sdot: TailFit,
    pub converged: bool,
}

fn linear_fit(s: &[f64], y: &[f64], rho: f64) -> (f64, f64, f64) {
    let n = s.len() as f64;
    let e: Vec<f64> = s.iter().map(|si| (-rho * si).exp()).collect();
    let (se, see) = (e.iter().sum::<f64>(), e.iter().map(|x| x * x).sum::<f64>());
    let (sy, sey) = (y.iter().sum::<f64>(), e.iter().zip(y).map(|(a, b)| a * b).sum::<f64>());
    let det = n * see - se * se;
    let (c0, c1) = if det.abs() <= 1e-14 * n * see.max(1e-300) {
        (sy / n, 0.0)
    } else {
        ((see * sy - se * sey) / det, (n * sey - se * sy) / det)
    };
    let sse: f64 = e.iter().zip(y).map(|(ei, yi)| (yi - c0 - c1 * ei).powi(2)).sum();
    (c0, c1, (sse / n).sqrt())
}

pub fn fit_tail(s: &[f64], y: &[f64]) -> TailFit {
    let len = s.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let rms_of = |rho: f64| linear_fit(s, y, rho).2;
    // Log grid over ρ·len ∈ [1e-2, 1e3], then golden refinement in log ρ.
    let grid: Vec<f64> = (0..=50).map(|i| 1e-2 * 10f64.powf(5.0 * i as f64 / 50.0) / len).collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| rms_of(grid[a]).total_cmp(&rms_of(grid[b])))
        .unwrap_or(0);
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)].ln(), grid[(best + 1).min(grid.len() - 1)].ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if rms_of(a.exp()) < rms_of(b.exp()) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let rate = (0.5 * (lo + hi)).exp();
    let (limit, amplitude, rms) = linear_fit(s, y, rate);
    let end_gap = y.last().copied().unwrap_or(limit) - limit;
    let scale = limit.abs().max(1.0);
    let converged = end_gap.abs() <= 1e-6 * scale && rms <= 1e-4 * scale;
    TailFit { limit, amplitude, rate, rms, end_gap, converged }
}

/// Fit the tail limits of |v|, |u| and ⟨M̂⁻¹u,u⟩^{1/2} on the last 20% of the
/// τ-span, sampled uniformly from the dense output.
pub fn asymptotic_diagnostics(traj: &Trajectory) -> Result<AsymptoticReport> {
    const TAIL_POINTS: usize = 200;
    let (a, b) = traj.span();
    if a == b {
        return Err(Error::Precondition("trajectory has zero length".into()));
    }
    let start = b - 0.2 * (b - a);
    let tail: Vec<BlowupState> = (0..=TAIL_POINTS)
        .map(|i| traj.state_at(start + (b - start) * i as f64 / TAIL_POINTS as f64).map(|s| s.0))
        .collect::<Result<_>>()?;
    let s: Vec<f64> = tail.iter().map(|x| (x.tau - start).abs()).collect();
    let series = |f: &dyn Fn(&BlowupState) -> f64| -> Vec<f64> { tail.iter().map(f).collect() };
    let v_abs = fit_tail(&s, &series(&|st| st.v.abs()));
    let u_norm = fit_tail(&s, &series(&|st| st.u.norm()));
    let scaled_sdot = fit_tail(&s, &series(&|st| kinetic_form(&st.x, &st.u).value.max(0.0).sqrt()));
    Ok(AsymptoticReport {
        kind: traj.kind,
        h0: traj.h0,
        tail: (start, b),
        samples: tail.len(),
        converged: v_abs.converged && u_norm.converged,
        v_abs,
        u_norm,
        scaled_sdot,
    })
}

/// ⟨M̂⁻¹u,u⟩ via the chart Jacobian, for cross-checking M̂ = JᵀMJ.
pub fn chart_metric(sys: &MassSystem, chart: &Chart, x: &Vector) -> Mat {
    let j = chart.jacobian(x);
    j.transpose() * sys.mass_matrix() * j
}
