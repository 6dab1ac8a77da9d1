//! Injective piecewise-affine maps of the half-line or the circle, with
//! families of interval-union surfaces and a grid estimate of the set of
//! points whose orbits meet every surface.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::MeasureEstimate;

/// Floating comparisons in this module use this guard.
const GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// `[0, ∞)`.
    HalfLine,
    /// `[0, 1)` with images reduced mod 1.
    Circle,
}

/// `x ↦ slope · x + offset` on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub offset: f64,
}

impl Piece {
    pub fn new(lo: f64, hi: f64, slope: f64, offset: f64) -> Self {
        Self {
            lo,
            hi,
            slope,
            offset,
        }
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.lo && x < self.hi
    }

    fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.offset
    }

    /// Image as a half-open interval, ignoring the circle reduction.
    fn image(&self) -> (f64, f64) {
        let a = self.apply(self.lo);
        let b = if self.hi.is_finite() {
            self.apply(self.hi)
        } else {
            self.slope.signum() * f64::INFINITY
        };
        (a.min(b), a.max(b))
    }
}

/// The surfaces `ℋ_m`, `m ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurfaceSpec {
    /// `ℋ_m = [offset + shift · m, offset + shift · m + width · ratio^m)`.
    Translates {
        shift: f64,
        offset: f64,
        width: f64,
        ratio: f64,
    },
    /// `ℋ_m` is the `m`-th entry (1-based); missing entries are empty.
    Explicit { sets: Vec<Vec<(f64, f64)>> },
    Empty,
}

impl SurfaceSpec {
    /// Intervals of `ℋ_m`.
    pub fn intervals(&self, m: u32) -> Vec<(f64, f64)> {
        match self {
            SurfaceSpec::Translates {
                shift,
                offset,
                width,
                ratio,
            } => {
                let a = offset + shift * m as f64;
                vec![(a, a + width * ratio.powi(m as i32))]
            }
            SurfaceSpec::Explicit { sets } => sets
                .get(m as usize - 1)
                .cloned()
                .unwrap_or_default(),
            SurfaceSpec::Empty => Vec::new(),
        }
    }

    /// Lebesgue measure `μ(ℋ_m)`.
    pub fn measure(&self, m: u32) -> f64 {
        union_length(&self.intervals(m))
    }
}

fn union_length(intervals: &[(f64, f64)]) -> f64 {
    let mut v: Vec<(f64, f64)> = intervals.iter().copied().filter(|(a, b)| b > a).collect();
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in v {
        match cur {
            Some((ca, cb)) if a <= cb => cur = Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    if let Some((a, b)) = cur {
        total += b - a;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSystem {
    pub domain: Domain,
    pub pieces: Vec<Piece>,
    pub surfaces: SurfaceSpec,
}

impl DiscreteSystem {
    /// Validates that the pieces are disjoint, lie in the domain and have
    /// pairwise disjoint images.
    pub fn new(domain: Domain, mut pieces: Vec<Piece>, surfaces: SurfaceSpec) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidParameter("map without pieces".into()));
        }
        pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let top = match domain {
            Domain::HalfLine => f64::INFINITY,
            Domain::Circle => 1.0,
        };
        for p in &pieces {
            if !(p.lo >= 0.0 && p.hi > p.lo && p.hi <= top) {
                return Err(Error::InvalidParameter(format!(
                    "piece [{}, {}) outside the domain",
                    p.lo, p.hi
                )));
            }
            if !(p.slope != 0.0 && p.slope.is_finite() && p.offset.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "piece on [{}, {}) has slope {} and offset {}",
                    p.lo, p.hi, p.slope, p.offset
                )));
            }
        }
        if pieces.windows(2).any(|w| w[1].lo < w[0].hi - GUARD) {
            return Err(Error::InvalidParameter("overlapping pieces".into()));
        }
        let mut images: Vec<(f64, f64)> = Vec::new();
        for p in &pieces {
            let (a, b) = p.image();
            match domain {
                Domain::HalfLine => {
                    if a < -GUARD {
                        return Err(Error::InvalidParameter(format!(
                            "piece [{}, {}) maps below zero",
                            p.lo, p.hi
                        )));
                    }
                    images.push((a, b));
                }
                Domain::Circle => {
                    if b - a > 1.0 + GUARD {
                        return Err(Error::InvalidParameter(
                            "a piece wraps more than once around the circle".into(),
                        ));
                    }
                    let s = a.rem_euclid(1.0);
                    let e = s + (b - a);
                    if e > 1.0 {
                        images.push((s, 1.0));
                        images.push((0.0, e - 1.0));
                    } else {
                        images.push((s, e));
                    }
                }
            }
        }
        images.sort_by(|x, y| x.0.total_cmp(&y.0));
        if images.windows(2).any(|w| w[1].0 < w[0].1 - GUARD) {
            return Err(Error::InvalidParameter(
                "map is not injective: piece images overlap".into(),
            ));
        }
        Ok(Self {
            domain,
            pieces,
            surfaces,
        })
    }

    /// `T(x)`, or `None` where no piece is defined.
    pub fn apply(&self, x: f64) -> Option<f64> {
        let i = self.pieces.partition_point(|p| p.lo <= x);
        let p = self.pieces[..i].last().filter(|p| p.contains(x))?;
        let y = p.apply(x);
        Some(match self.domain {
            Domain::HalfLine => y,
            Domain::Circle => {
                let r = y.rem_euclid(1.0);
                // rem_euclid can round up to the modulus
                if r >= 1.0 {
                    0.0
                } else {
                    r
                }
            }
        })
    }

    pub fn in_domain(&self, x: f64) -> bool {
        match self.domain {
            Domain::HalfLine => x >= 0.0 && x.is_finite(),
            Domain::Circle => (0.0..1.0).contains(&x),
        }
    }

    /// Threshold beyond which a half-line orbit moves monotonically upward
    /// and never meets a surface with index at most `depth` again.
    fn escape_threshold(&self, depth: u32) -> Option<f64> {
        if self.domain != Domain::HalfLine {
            return None;
        }
        let mut x = self
            .pieces
            .iter()
            .filter(|p| p.hi.is_finite())
            .map(|p| p.hi)
            .fold(0.0, f64::max);
        for m in 1..=depth {
            for (_, b) in self.surfaces.intervals(m) {
                x = x.max(b);
            }
        }
        let last = self.pieces.last()?;
        let ok = last.hi.is_infinite() && last.lo <= x && last.slope >= 1.0 && last.apply(x) >= x;
        ok.then_some(x)
    }
}

/// The first `steps` points of the forward orbit, starting with `x`; shorter
/// if the orbit leaves the region where the map is defined.
pub fn forward_orbit(sys: &DiscreteSystem, x: f64, steps: usize) -> Result<Vec<f64>> {
    if !sys.in_domain(x) {
        return Err(Error::InvalidParameter(format!("{x} is outside the domain")));
    }
    let mut out = Vec::with_capacity(steps);
    let mut cur = Some(x);
    while out.len() < steps {
        let Some(y) = cur else { break };
        out.push(y);
        cur = sys.apply(y);
    }
    Ok(out)
}

/// Result of [`check_measure_preservation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreservationCheck {
    /// `max_I |μ(T(I)) - μ(I)|` over the grid cells.
    pub max_distortion: f64,
    pub resolution: f64,
    pub preserving: bool,
}

/// Compares the length of every grid cell of width `resolution` with the
/// length of its image. On the half-line the grid covers the finite
/// breakpoints plus one unit.
pub fn check_measure_preservation(sys: &DiscreteSystem, resolution: f64) -> Result<PreservationCheck> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidParameter(format!("resolution {resolution}")));
    }
    let lo = sys.pieces[0].lo;
    let hi = match sys.domain {
        Domain::Circle => 1.0,
        Domain::HalfLine => {
            sys.pieces
                .iter()
                .flat_map(|p| [p.lo, p.hi])
                .filter(|v| v.is_finite())
                .fold(lo, f64::max)
                + 1.0
        }
    };
    let cells = ((hi - lo) / resolution).ceil() as usize;
    let max_distortion = (0..cells)
        .into_par_iter()
        .map(|i| {
            let a = lo + i as f64 * resolution;
            let b = (a + resolution).min(hi);
            let mut covered = 0.0;
            let mut image = 0.0;
            for p in &sys.pieces {
                let len = (b.min(p.hi) - a.max(p.lo)).max(0.0);
                covered += len;
                image += p.slope.abs() * len;
            }
            (image - covered).abs()
        })
        .reduce(|| 0.0, f64::max);
    Ok(PreservationCheck {
        max_distortion,
        resolution,
        preserving: max_distortion <= GUARD * (1.0 + hi - lo),
    })
}

/// Options for [`estimate_transition_measure_discrete`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscreteOptions {
    /// Grid points (cell midpoints) over the window.
    pub grid: usize,
    /// Window `[lo, hi)` the grid covers; the measure reported is Lebesgue
    /// measure inside it.
    pub window: (f64, f64),
    /// Iterations per grid point before it is censored.
    pub max_steps: usize,
}

impl Default for DiscreteOptions {
    fn default() -> Self {
        Self {
            grid: 1_000_000,
            window: (0.0, 1.0),
            max_steps: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteRow {
    pub depth: u32,
    pub estimate: MeasureEstimate,
    /// Measure of censored grid cells that had not met `m₀..=depth`.
    pub censored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteReport {
    pub m0: u32,
    pub depth: u32,
    pub resolution: f64,
    /// One row per depth `m₀..=M`.
    pub rows: Vec<DiscreteRow>,
}

impl DiscreteReport {
    pub fn final_estimate(&self) -> MeasureEstimate {
        self.rows.last().map(|r| r.estimate).expect("at least one row")
    }
}

/// Sorted surface intervals tagged with their index, for membership queries.
struct SurfaceIndex {
    items: Vec<(f64, f64, u32)>,
    max_len: f64,
}

impl SurfaceIndex {
    fn new(spec: &SurfaceSpec, m0: u32, depth: u32) -> Self {
        let mut items: Vec<(f64, f64, u32)> = (m0..=depth)
            .flat_map(|m| spec.intervals(m).into_iter().map(move |(a, b)| (a, b, m)))
            .filter(|(a, b, _)| b > a)
            .collect();
        items.sort_by(|x, y| x.0.total_cmp(&y.0));
        let max_len = items.iter().map(|(a, b, _)| b - a).fold(0.0, f64::max);
        Self { items, max_len }
    }

    fn mark(&self, x: f64, m0: u32, hit: &mut [bool]) {
        let end = self.items.partition_point(|it| it.0 <= x);
        for it in self.items[..end].iter().rev() {
            if it.0 < x - self.max_len {
                break;
            }
            if x < it.1 {
                hit[(it.2 - m0) as usize] = true;
            }
        }
    }
}

/// Grid estimate of the measure of window points whose orbit meets `ℋ_m`
/// for every `m₀ ≤ m ≤ depth`.
pub fn estimate_transition_measure_discrete(
    sys: &DiscreteSystem,
    m0: u32,
    depth: u32,
    opts: &DiscreteOptions,
) -> Result<DiscreteReport> {
    if m0 == 0 || depth < m0 {
        return Err(Error::InvalidParameter(format!("surface range [{m0}, {depth}]")));
    }
    let (w_lo, w_hi) = opts.window;
    if opts.grid == 0 || !(w_hi > w_lo) {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    let h = (w_hi - w_lo) / opts.grid as f64;
    let index = SurfaceIndex::new(&sys.surfaces, m0, depth);
    let escape = sys.escape_threshold(depth);
    let width = (depth - m0 + 1) as usize;
    // per grid point: how far the consecutive run of met surfaces reaches,
    // and whether the orbit was cut by the step budget
    let results: Vec<(u32, bool)> = (0..opts.grid)
        .into_par_iter()
        .map(|i| {
            let x0 = w_lo + (i as f64 + 0.5) * h;
            if !sys.in_domain(x0) {
                return (m0 - 1, false);
            }
            let mut hit = vec![false; width];
            let mut x = x0;
            let mut censored = true;
            for step in 0..opts.max_steps {
                index.mark(x, m0, &mut hit);
                if hit.iter().all(|&b| b) {
                    censored = false;
                    break;
                }
                if escape.is_some_and(|e| x >= e) {
                    censored = false;
                    break;
                }
                match sys.apply(x) {
                    Some(y) => x = y,
                    None => {
                        censored = false;
                        break;
                    }
                }
                // a return to the start closes a periodic orbit
                if step > 0 && (x - x0).abs() <= GUARD {
                    censored = false;
                    break;
                }
            }
            let reached = m0 + hit.iter().take_while(|&&b| b).count() as u32 - 1;
            (reached, censored)
        })
        .collect();
    let rows = (m0..=depth)
        .map(|d| {
            let yes = results.iter().filter(|r| r.0 >= d).count();
            let cens = results.iter().filter(|r| r.1 && r.0 < d).count();
            DiscreteRow {
                depth: d,
                estimate: MeasureEstimate::quadrature(yes as f64 * h, opts.grid as u64),
                censored: cens as f64 * h,
            }
        })
        .collect();
    Ok(DiscreteReport {
        m0,
        depth,
        resolution: h,
        rows,
    })
}
