//! Monte Carlo transition measures: the fraction of sampled points of `Σ_E`
//! whose forward orbit crosses every surface `ℋ_m`, `m₀ ≤ m ≤ M`, inward.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, brent, Control, FlowOptions, Observer, Segment, Termination};
use crate::hamiltonian::{dot, norm, HamiltonianSystem, PhasePoint};
use crate::measures::MeasureEstimate;
use crate::sections::SurfaceFamily;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionOptions {
    pub flow: FlowOptions,
    /// Integration budget per sample.
    pub t_max: f64,
    /// First surface index; the smallest index with a relative interior
    /// when unset.
    pub m0: Option<u32>,
    /// Deepest surface index `M`.
    pub depth: u32,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        Self {
            flow: FlowOptions::default(),
            t_max: 100.0,
            m0: None,
            depth: 32,
        }
    }
}

/// How the orbit of one sample ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fate {
    /// Crossed every surface up to the deepest index.
    Transition,
    /// The set of crossed surfaces can no longer grow.
    Decided,
    Collision,
    Escape,
    /// Budget exhausted before the orbit was decided.
    Censored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub fate: Fate,
    /// Largest `d` such that all of `m₀..=d` were crossed, `m₀ - 1` if none.
    pub reached: u32,
}

/// Depth-`M` estimate with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub depth: u32,
    pub fraction: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Fraction of samples censored without having reached this depth.
    pub censored: f64,
    pub transitions: u64,
    pub samples: u64,
}

impl TransitionRow {
    /// The fraction as a Monte Carlo estimate; `std_error` is the Wilson
    /// half-width over the normal quantile.
    pub fn estimate(&self, seed: u64) -> MeasureEstimate {
        MeasureEstimate::monte_carlo(
            self.fraction,
            0.5 * (self.ci_hi - self.ci_lo) / Z95,
            self.samples,
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub energy: f64,
    pub m0: u32,
    pub depth: u32,
    pub seed: u64,
    /// One row per depth `m₀..=M`, nonincreasing in the fraction.
    pub rows: Vec<TransitionRow>,
    pub outcomes: Vec<SampleOutcome>,
}

impl TransitionReport {
    pub fn row(&self, depth: u32) -> Option<&TransitionRow> {
        self.rows.iter().find(|r| r.depth == depth)
    }

    pub fn count(&self, fate: Fate) -> usize {
        self.outcomes.iter().filter(|o| o.fate == fate).count()
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// When the set of crossed radii stops growing.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Rule {
    /// Radial potential, bounded radial motion: one full apocenter to
    /// pericenter sweep covers every radius the orbit will ever cross.
    Periodic,
    /// Radial potential with `E ≥ 0` and no barrier at large radius: once
    /// moving outward the orbit never turns back.
    Outgoing,
    /// No structural rule; only collision, escape or full coverage decide.
    None,
}

fn rule_for(sys: &HamiltonianSystem, energy: f64) -> Rule {
    if !sys.is_radial() {
        return Rule::None;
    }
    let pot = sys.potential();
    if energy < 0.0 {
        Rule::Periodic
    } else if pot.c() == 0.0 || pot.alpha() <= 2.0 {
        Rule::Outgoing
    } else {
        Rule::Periodic
    }
}

struct Tracker {
    m0: u32,
    hit: Vec<bool>,
    rule: Rule,
    /// Sign of `⟨p, q⟩` at the last segment end.
    sign: f64,
    seen_apocenter: bool,
    /// The orbit includes its initial point, so a start on a surface counts.
    started: bool,
    fate: Option<Fate>,
}

impl Tracker {
    fn new(m0: u32, depth: u32, rule: Rule, y0: &[f64]) -> Self {
        let sign = radial_action(y0).signum();
        let mut t = Self {
            m0,
            hit: vec![false; (depth - m0 + 1) as usize],
            rule,
            sign,
            seen_apocenter: false,
            started: false,
            fate: None,
        };
        if rule == Rule::Outgoing && sign > 0.0 {
            t.fate = Some(Fate::Decided);
        }
        t
    }

    /// Marks every surface with radius in `[r_in, r_out)`, or in
    /// `[r_in, r_out]` on the first inward piece.
    fn mark(&mut self, r_out: f64, r_in: f64, first: bool) {
        if r_in >= r_out {
            return;
        }
        let lo = if first {
            (1.0 / r_out).ceil() as u64
        } else {
            (1.0 / r_out).floor() as u64 + 1
        };
        let lo = lo.max(self.m0 as u64);
        let hi = if r_in > 0.0 {
            (1.0 / r_in).floor().min(u32::MAX as f64) as u64
        } else {
            u64::MAX
        };
        let last = self.m0 as u64 + self.hit.len() as u64 - 1;
        for m in lo..=hi.min(last) {
            self.hit[(m - self.m0 as u64) as usize] = true;
        }
    }

    fn reached(&self) -> u32 {
        let k = self.hit.iter().take_while(|&&h| h).count() as u32;
        self.m0 + k - 1
    }

    fn turning(&mut self, new_sign: f64) {
        if new_sign == 0.0 || new_sign == self.sign {
            return;
        }
        let pericenter = new_sign > 0.0;
        match self.rule {
            Rule::Periodic if pericenter && self.seen_apocenter => {
                self.fate = Some(Fate::Decided)
            }
            Rule::Periodic if !pericenter => self.seen_apocenter = true,
            Rule::Outgoing if pericenter => self.fate = Some(Fate::Decided),
            _ => {}
        }
        self.sign = new_sign;
    }
}

fn radial_action(y: &[f64]) -> f64 {
    let n = y.len() / 2;
    dot(&y[..n], &y[n..])
}

fn radius(y: &[f64]) -> f64 {
    norm(&y[..y.len() / 2])
}

impl Observer for Tracker {
    fn observe(&mut self, _sys: &HamiltonianSystem, seg: &Segment) -> Result<Control> {
        let ya = seg.start();
        let yb = seg.end();
        let (va, vb) = (radial_action(ya), radial_action(&yb));
        let mut cuts = vec![(seg.t0, radius(ya))];
        if va != 0.0 && vb != 0.0 && va.signum() != vb.signum() {
            let tc = brent(|t| radial_action(&seg.eval(t)), seg.t0, seg.t_end, va, vb);
            cuts.push((tc, radius(&seg.eval(tc))));
        }
        cuts.push((seg.t_end, radius(&yb)));
        for (i, w) in cuts.windows(2).enumerate() {
            self.mark(w[0].1, w[1].1, i == 0 && !self.started);
        }
        self.started = true;
        self.turning(vb.signum());
        if self.hit.iter().all(|&h| h) {
            self.fate = Some(Fate::Transition);
        }
        Ok(if self.fate.is_some() {
            Control::Stop
        } else {
            Control::Continue
        })
    }
}

fn follow(
    sys: &HamiltonianSystem,
    x: &PhasePoint,
    m0: u32,
    rule: Rule,
    opts: &TransitionOptions,
) -> Result<SampleOutcome> {
    let y0 = x.to_vec();
    let mut tracker = Tracker::new(m0, opts.depth, rule, &y0);
    if tracker.fate.is_none() {
        let run = flow::run(sys, &y0, opts.t_max, &opts.flow, &mut tracker);
        let ended = match run {
            Ok(summary) => match summary.termination {
                Termination::Collision => Some(Fate::Collision),
                Termination::EscapeRadius => Some(Fate::Escape),
                Termination::Stopped => None,
                Termination::TimeLimit | Termination::StepUnderflow => Some(Fate::Censored),
            },
            Err(Error::BudgetExhausted(_)) => Some(Fate::Censored),
            Err(e) => return Err(e),
        };
        if tracker.hit.iter().all(|&h| h) {
            tracker.fate = Some(Fate::Transition);
        } else if let Some(f) = ended {
            tracker.fate = Some(f);
        }
    }
    Ok(SampleOutcome {
        fate: tracker.fate.unwrap_or(Fate::Censored),
        reached: tracker.reached(),
    })
}

/// Depth-`M` transition fractions over the given samples of `Σ_E`, for every
/// depth from `m₀` to `opts.depth`. Orbits ending in a collision count with
/// the surfaces crossed on the way in. `seed` is recorded in the report.
pub fn estimate_transition_measure(
    sys: &HamiltonianSystem,
    energy: f64,
    samples: &[PhasePoint],
    seed: u64,
    opts: &TransitionOptions,
) -> Result<TransitionReport> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    if !(opts.t_max > 0.0) {
        return Err(Error::InvalidParameter(format!("t_max = {}", opts.t_max)));
    }
    let family = SurfaceFamily::new(sys.clone(), energy, 1, opts.depth.max(1))?;
    let m0 = match opts.m0 {
        Some(m) => m,
        None => family
            .first_regular()
            .ok_or(Error::EmptySurface { m: opts.depth })?,
    };
    if m0 == 0 || m0 > opts.depth {
        return Err(Error::InvalidParameter(format!(
            "surface range [{m0}, {}]",
            opts.depth
        )));
    }
    let tol = flow::default_energy_tolerance(energy);
    for x in samples {
        let h = sys.eval_h(x)?;
        if (h - energy).abs() > tol {
            return Err(Error::EnergyMismatch {
                expected: energy,
                actual: h,
            });
        }
    }
    let rule = rule_for(sys, energy);
    let outcomes: Vec<SampleOutcome> = samples
        .par_iter()
        .map(|x| follow(sys, x, m0, rule, opts))
        .collect::<Result<_>>()?;
    let n = outcomes.len() as u64;
    let rows = (m0..=opts.depth)
        .map(|d| {
            let k = outcomes.iter().filter(|o| o.reached >= d).count() as u64;
            let cens = outcomes
                .iter()
                .filter(|o| o.fate == Fate::Censored && o.reached < d)
                .count();
            let (ci_lo, ci_hi) = wilson_interval(k, n);
            TransitionRow {
                depth: d,
                fraction: k as f64 / n as f64,
                ci_lo,
                ci_hi,
                censored: cens as f64 / n as f64,
                transitions: k,
                samples: n,
            }
        })
        .collect();
    Ok(TransitionReport {
        energy,
        m0,
        depth: opts.depth,
        seed,
        rows,
        outcomes,
    })
}
