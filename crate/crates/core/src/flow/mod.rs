//! Adaptive integration of the Hamiltonian flow with dense output, collision
//! and escape detection, and sphere hits.

mod dopri;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use dopri::Segment;
use dopri::{StepOutcome, Stepper};

use crate::error::{Error, Result};
use crate::hamiltonian::{dot, norm, HamiltonianSystem, PhasePoint};

/// Integrator tolerances, termination radii and budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowOptions {
    pub tol_rel: f64,
    pub tol_abs: f64,
    /// Collision radius.
    pub r_min: f64,
    /// Escape radius.
    pub r_max: f64,
    /// Hard cap on accepted steps per trajectory.
    pub max_steps: u64,
    /// Hits with `|⟨p, q̂⟩| / (1 + ‖p‖)` below this are tangential.
    pub tangency_threshold: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            tol_rel: 1e-12,
            tol_abs: 1e-12,
            r_min: 1e-6,
            r_max: 1e3,
            max_steps: 5_000_000,
            tangency_threshold: 1e-8,
        }
    }
}

impl FlowOptions {
    /// Tolerances at the edge of double precision, for finite differences
    /// of flow maps.
    pub fn tight() -> Self {
        Self {
            tol_rel: 1e-14,
            tol_abs: 1e-14,
            ..Self::default()
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol_rel = tol;
        self.tol_abs = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok_tol = |t: f64| t > 0.0 && t < 1.0;
        if !ok_tol(self.tol_rel) || !ok_tol(self.tol_abs) {
            return Err(Error::InvalidParameter(format!(
                "tolerances must lie in (0, 1): tol_rel = {}, tol_abs = {}",
                self.tol_rel, self.tol_abs
            )));
        }
        if !(self.r_min > 0.0) || !(self.r_max > self.r_min) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < r_min < r_max, got {} and {}",
                self.r_min, self.r_max
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps = 0".into()));
        }
        if !(self.tangency_threshold >= 0.0) {
            return Err(Error::InvalidParameter("negative tangency threshold".into()));
        }
        Ok(())
    }
}

/// Default energy drift tolerance `1e-8 (1 + |E|)`.
pub fn default_energy_tolerance(energy: f64) -> f64 {
    1e-8 * (1.0 + energy.abs())
}

/// Why an integration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    TimeLimit,
    Collision,
    EscapeRadius,
    StepUnderflow,
    /// An observer ended the run (internal drivers only).
    Stopped,
}

/// Time direction of an integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// A crossing of the sphere `‖q‖ = 1/m` with non-positive radial momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct HitEvent {
    pub m: u32,
    pub time: f64,
    pub point: PhasePoint,
    /// `⟨p, q̂⟩` at the hit.
    pub margin: f64,
}

/// A dense-output trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: PhasePoint,
    pub segments: Vec<Segment>,
    pub events: Vec<HitEvent>,
    pub termination: Termination,
    pub final_time: f64,
    pub final_point: PhasePoint,
    /// Largest `|H(x(t)) - H(x(0))|` over step endpoints.
    pub energy_drift: f64,
    pub steps: u64,
}

impl Trajectory {
    /// State at time `t` within the integrated range.
    pub fn eval(&self, t: f64) -> Option<PhasePoint> {
        let seg = self.segments.iter().find(|s| {
            let (lo, hi) = if s.t0 <= s.t_end {
                (s.t0, s.t_end)
            } else {
                (s.t_end, s.t0)
            };
            lo <= t && t <= hi
        })?;
        PhasePoint::from_slice(&seg.eval(t)).ok()
    }
}

pub(crate) enum Control {
    Continue,
    Stop,
}

pub(crate) trait Observer {
    fn observe(&mut self, sys: &HamiltonianSystem, seg: &Segment) -> Result<Control>;
}

pub(crate) struct RunSummary {
    pub termination: Termination,
    pub t_final: f64,
    pub y_final: Vec<f64>,
    pub energy_drift: f64,
    pub steps: u64,
}

/// Brent's method on a bracketing interval.
pub(crate) fn brent(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64) -> f64 {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 1e-300;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol * xm.signum() };
        fb = f(b);
    }
    b
}

fn radius_of(y: &[f64]) -> f64 {
    norm(&y[..y.len() / 2])
}

fn radial_action_of(y: &[f64]) -> f64 {
    let n = y.len() / 2;
    dot(&y[..n], &y[n..])
}

/// Time in the segment where `‖q‖` crosses `level`, given opposite signs of
/// `‖q‖ - level` at the segment ends.
fn radius_crossing(seg: &Segment, level: f64) -> f64 {
    let g = |t: f64| radius_of(&seg.eval(t)) - level;
    brent(g, seg.t0, seg.t_end, g(seg.t0), g(seg.t_end))
}

/// Crossing of the collision radius, moved to the inside so the reported
/// point satisfies `‖q‖ ≤ r_min`.
fn collision_time(seg: &Segment, r_min: f64) -> f64 {
    let g = |t: f64| radius_of(&seg.eval(t)) - r_min;
    let mut a = radius_crossing(seg, r_min);
    if g(a) <= 0.0 {
        return a;
    }
    let mut b = seg.t_end;
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if g(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    b
}

/// Integrates from `y0` over the signed duration `duration`, feeding every
/// accepted segment to `obs`.
pub(crate) fn run(
    sys: &HamiltonianSystem,
    y0: &[f64],
    duration: f64,
    opts: &FlowOptions,
    obs: &mut dyn Observer,
) -> Result<RunSummary> {
    opts.validate()?;
    if !duration.is_finite() {
        return Err(Error::InvalidParameter(format!("duration {duration}")));
    }
    let singular = sys.potential().is_singular();
    let r0 = radius_of(y0);
    if singular && r0 <= opts.r_min {
        return Err(Error::SingularStart { radius: r0 });
    }
    let h0 = sys.h_raw(y0);
    let mut drift = 0.0f64;
    if duration == 0.0 {
        return Ok(RunSummary {
            termination: Termination::TimeLimit,
            t_final: 0.0,
            y_final: y0.to_vec(),
            energy_drift: 0.0,
            steps: 0,
        });
    }
    let dir = duration.signum();
    let mut stepper = Stepper::new(sys, y0, 0.0, dir, opts.tol_rel, opts.tol_abs);
    let mut radii = [r0, f64::INFINITY, f64::INFINITY];
    loop {
        if stepper.accepted >= opts.max_steps {
            return Err(Error::BudgetExhausted(format!(
                "{} integration steps without termination",
                opts.max_steps
            )));
        }
        let seg = match stepper.step(duration) {
            StepOutcome::Accepted(seg) => seg,
            StepOutcome::Underflow => {
                let decreasing = radii[0] < radii[1] && radii[1] < radii[2];
                let termination = if singular && decreasing {
                    Termination::Collision
                } else {
                    Termination::StepUnderflow
                };
                return Ok(RunSummary {
                    termination,
                    t_final: stepper.t,
                    y_final: stepper.y.clone(),
                    energy_drift: drift,
                    steps: stepper.accepted,
                });
            }
        };
        let y1 = &stepper.y;
        let r1 = radius_of(y1);
        radii = [r1, radii[0], radii[1]];

        let cut = if singular && r1 < opts.r_min {
            Some((collision_time(&seg, opts.r_min), Termination::Collision))
        } else if r1 > opts.r_max && dir * radial_action_of(y1) > 0.0 {
            Some((radius_crossing(&seg, opts.r_max), Termination::EscapeRadius))
        } else {
            None
        };
        if let Some((tc, termination)) = cut {
            let seg = seg.truncated(tc);
            let yc = seg.end();
            drift = drift.max((sys.h_raw(&yc) - h0).abs());
            obs.observe(sys, &seg)?;
            return Ok(RunSummary {
                termination,
                t_final: tc,
                y_final: yc,
                energy_drift: drift,
                steps: stepper.accepted,
            });
        }
        drift = drift.max((sys.h_raw(y1) - h0).abs());
        if let Control::Stop = obs.observe(sys, &seg)? {
            return Ok(RunSummary {
                termination: Termination::Stopped,
                t_final: stepper.t,
                y_final: stepper.y.clone(),
                energy_drift: drift,
                steps: stepper.accepted,
            });
        }
        if stepper.t == duration {
            return Ok(RunSummary {
                termination: Termination::TimeLimit,
                t_final: stepper.t,
                y_final: stepper.y.clone(),
                energy_drift: drift,
                steps: stepper.accepted,
            });
        }
    }
}

/// Earliest crossing inside `seg` (in integration order) of `‖q‖ = radius`
/// with `⟨p, q⟩ ≤ 0` at the crossing. `g_start` replaces `‖q‖ - radius` at
/// the segment start, which lets a caller starting on the sphere declare
/// which side it is leaving towards.
pub(crate) fn sphere_crossing(seg: &Segment, radius: f64, g_start: f64) -> Option<f64> {
    let (ta, tb) = (seg.t0, seg.t_end);
    if ta == tb {
        return None;
    }
    let vr = |t: f64| radial_action_of(&seg.eval(t));
    let g = |t: f64| radius_of(&seg.eval(t)) - radius;
    let vra = radial_action_of(seg.start());
    let vrb = vr(tb);
    let mut cuts = vec![ta];
    if vra != 0.0 && vrb != 0.0 && vra.signum() != vrb.signum() {
        cuts.push(brent(vr, ta, tb, vra, vrb));
    }
    cuts.push(tb);
    let mut ga = g_start;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let gb = g(b);
        if (ga > 0.0 && gb <= 0.0) || (ga < 0.0 && gb >= 0.0) {
            let root = brent(g, a, b, ga, gb);
            if vr(root) <= 0.0 {
                return Some(root);
            }
        }
        ga = gb;
    }
    None
}

/// Polishes a sphere crossing with Newton steps on fresh Runge–Kutta steps
/// from the segment start.
pub(crate) fn refine_crossing(
    sys: &HamiltonianSystem,
    seg: &Segment,
    radius: f64,
    t_guess: f64,
) -> (f64, Vec<f64>) {
    let mut t = t_guess;
    let mut y = seg.restep(sys, t);
    for _ in 0..8 {
        let r = radius_of(&y);
        let gval = r - radius;
        if gval.abs() <= 4.0 * f64::EPSILON * radius {
            break;
        }
        let rate = radial_action_of(&y) / r;
        if rate == 0.0 {
            break;
        }
        t -= gval / rate;
        y = seg.restep(sys, t);
    }
    (t, y)
}

fn make_hit(m: u32, t: f64, y: Vec<f64>, opts: &FlowOptions) -> Result<HitEvent> {
    let point = PhasePoint::from_slice(&y)?;
    let margin = point.radial_momentum();
    if margin.abs() / (1.0 + norm(&point.p)) < opts.tangency_threshold {
        return Err(Error::TangentialHit { margin });
    }
    Ok(HitEvent {
        m,
        time: t,
        point,
        margin,
    })
}

struct TrajectoryRecorder {
    segments: Vec<Segment>,
    watch: Vec<(u32, f64)>,
    g_start: Vec<f64>,
    events: Vec<HitEvent>,
    opts: FlowOptions,
}

impl Observer for TrajectoryRecorder {
    fn observe(&mut self, sys: &HamiltonianSystem, seg: &Segment) -> Result<Control> {
        for (i, &(m, radius)) in self.watch.iter().enumerate() {
            let g0 = if self.segments.is_empty() {
                self.g_start[i]
            } else {
                radius_of(seg.start()) - radius
            };
            if let Some(t) = sphere_crossing(seg, radius, g0) {
                let (t, y) = refine_crossing(sys, seg, radius, t);
                if let Ok(hit) = make_hit(m, t, y, &self.opts) {
                    self.events.push(hit);
                }
            }
        }
        self.segments.push(seg.clone());
        Ok(Control::Continue)
    }
}

/// Side indicator of `y` relative to the sphere of the given radius; points
/// on the sphere count as already past it in the direction of motion.
pub(crate) fn start_side(y: &[f64], radius: f64, dir: f64) -> f64 {
    let g = radius_of(y) - radius;
    if g.abs() > 1e-12 * radius {
        g
    } else if dir * radial_action_of(y) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Integrates from `x0` for `t_max` (negative `t_max` runs backward).
pub fn integrate(
    sys: &HamiltonianSystem,
    x0: &PhasePoint,
    t_max: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    integrate_watching(sys, x0, t_max, opts, &[])
}

/// As [`integrate`], also recording hits of the spheres `‖q‖ = 1/m` for every
/// `m` in `watch`.
pub fn integrate_watching(
    sys: &HamiltonianSystem,
    x0: &PhasePoint,
    t_max: f64,
    opts: &FlowOptions,
    watch: &[u32],
) -> Result<Trajectory> {
    if x0.n() != sys.n() || x0.p.len() != sys.n() {
        return Err(Error::DimensionMismatch {
            expected: sys.n(),
            actual: x0.n(),
        });
    }
    if t_max == 0.0 || !t_max.is_finite() {
        return Err(Error::InvalidParameter(format!("t_max = {t_max}")));
    }
    if watch.contains(&0) {
        return Err(Error::InvalidParameter("surface index m = 0".into()));
    }
    let y0 = x0.to_vec();
    let watch: Vec<(u32, f64)> = watch.iter().map(|&m| (m, 1.0 / m as f64)).collect();
    let g_start = watch
        .iter()
        .map(|&(_, r)| start_side(&y0, r, t_max.signum()))
        .collect();
    let mut rec = TrajectoryRecorder {
        segments: Vec::new(),
        watch,
        g_start,
        events: Vec::new(),
        opts: *opts,
    };
    let summary = run(sys, &y0, t_max, opts, &mut rec)?;
    Ok(Trajectory {
        initial: x0.clone(),
        segments: rec.segments,
        events: rec.events,
        termination: summary.termination,
        final_time: summary.t_final,
        final_point: PhasePoint::from_slice(&summary.y_final)?,
        energy_drift: summary.energy_drift,
        steps: summary.steps,
    })
}

/// The collision time and point, when the trajectory ended in a collision.
pub fn detect_collision(traj: &Trajectory) -> Option<(f64, PhasePoint)> {
    (traj.termination == Termination::Collision)
        .then(|| (traj.final_time, traj.final_point.clone()))
}

struct FirstHit {
    radius: f64,
    g_start: f64,
    first: bool,
    found: Option<(Segment, f64)>,
}

impl Observer for FirstHit {
    fn observe(&mut self, _sys: &HamiltonianSystem, seg: &Segment) -> Result<Control> {
        let g0 = if self.first {
            self.g_start
        } else {
            radius_of(seg.start()) - self.radius
        };
        self.first = false;
        if let Some(t) = sphere_crossing(seg, self.radius, g0) {
            self.found = Some((seg.clone(), t));
            return Ok(Control::Stop);
        }
        Ok(Control::Continue)
    }
}

/// First hit of the sphere `‖q‖ = 1/m` with `⟨p, q⟩ ≤ 0` after leaving `y0`,
/// without conditions on the start point.
pub(crate) fn first_hit(
    sys: &HamiltonianSystem,
    y0: &[f64],
    m: u32,
    duration: f64,
    opts: &FlowOptions,
) -> Result<HitEvent> {
    let radius = 1.0 / m as f64;
    let mut obs = FirstHit {
        radius,
        g_start: start_side(y0, radius, duration.signum()),
        first: true,
        found: None,
    };
    let summary = run(sys, y0, duration, opts, &mut obs)?;
    if let Some((seg, t)) = obs.found {
        let (t, y) = refine_crossing(sys, &seg, radius, t);
        return make_hit(m, t, y, opts);
    }
    match summary.termination {
        Termination::Collision => Err(Error::CollisionBeforeHit {
            time: summary.t_final,
        }),
        Termination::TimeLimit => Err(Error::NoHit(format!(
            "time limit {duration} reached"
        ))),
        Termination::EscapeRadius => Err(Error::NoHit("escaped".into())),
        Termination::StepUnderflow => Err(Error::NoHit("step size underflow".into())),
        Termination::Stopped => Err(Error::NoHit("stopped".into())),
    }
}

/// First time `τ` (in the given direction) with `‖q(τ)‖ = 1/m` and
/// `⟨p(τ), q(τ)⟩ ≤ 0`. The start must lie on `H = energy` (to
/// `1e-8 (1 + |E|)`) and not inside the sphere.
pub fn hit_surface(
    sys: &HamiltonianSystem,
    x0: &PhasePoint,
    energy: f64,
    m: u32,
    direction: Direction,
    t_max: f64,
    opts: &FlowOptions,
) -> Result<HitEvent> {
    if m == 0 {
        return Err(Error::InvalidParameter("surface index m = 0".into()));
    }
    if !(t_max > 0.0) {
        return Err(Error::InvalidParameter(format!("t_max = {t_max}")));
    }
    let h = sys.eval_h(x0)?;
    if (h - energy).abs() > default_energy_tolerance(energy) {
        return Err(Error::EnergyMismatch {
            expected: energy,
            actual: h,
        });
    }
    let radius = 1.0 / m as f64;
    let r0 = x0.radius();
    if r0 < radius * (1.0 - 1e-12) {
        return Err(Error::StartInsideSurface {
            radius: r0,
            target: radius,
        });
    }
    first_hit(sys, &x0.to_vec(), m, direction.sign() * t_max, opts)
}

/// `Φ_t(x)`; fails when the flow ends before `t`.
pub fn time_t_map(
    sys: &HamiltonianSystem,
    x: &PhasePoint,
    t: f64,
    opts: &FlowOptions,
) -> Result<PhasePoint> {
    struct Nothing;
    impl Observer for Nothing {
        fn observe(&mut self, _: &HamiltonianSystem, _: &Segment) -> Result<Control> {
            Ok(Control::Continue)
        }
    }
    let summary = run(sys, &x.to_vec(), t, opts, &mut Nothing)?;
    if summary.termination != Termination::TimeLimit {
        return Err(Error::EscapeTimeExceeded(summary.t_final));
    }
    PhasePoint::from_slice(&summary.y_final)
}

/// Central-difference Jacobian of `Φ_t` at `x` with step `h`.
pub fn flow_jacobian(
    sys: &HamiltonianSystem,
    x: &PhasePoint,
    t: f64,
    h: f64,
    opts: &FlowOptions,
) -> Result<DMatrix<f64>> {
    let x0 = x.to_vec();
    let d = x0.len();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = time_t_map(sys, &PhasePoint::from_slice(&xp)?, t, opts)?.to_vec();
        let fm = time_t_map(sys, &PhasePoint::from_slice(&xm)?, t, opts)?.to_vec();
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}
