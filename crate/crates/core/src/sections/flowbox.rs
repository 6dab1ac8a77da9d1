//! The flow-box identity: the Liouville volume of the tube swept by a
//! transversal patch `K` over `(-t, t)` equals `2t ∫_K f 𝒱` with
//! `𝒱 = ι_X Ω`, for any `f` transported along the flow.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sphere;
use crate::error::{Error, Result};
use crate::flow::{self, brent, Control, FlowOptions, Observer, Segment};
use crate::forms::{interior_product, liouville_volume};
use crate::hamiltonian::{dot, HamiltonianSystem, PhasePoint};
use crate::measures::quadrature::product_rule;
use crate::measures::MeasureEstimate;
use crate::rng;

/// A chart on a hypersurface of phase space, given with a defining
/// function that vanishes on it.
pub trait SurfacePatch: Sync {
    /// Dimension `2n` of the ambient phase space.
    fn phase_dim(&self) -> usize;

    fn chart_dim(&self) -> usize {
        self.phase_dim() - 1
    }

    fn embed(&self, u: &[f64]) -> Result<Vec<f64>>;

    fn level(&self, x: &[f64]) -> f64;

    fn coordinates(&self, x: &[f64]) -> Vec<f64>;

    /// Coordinate tangent vectors `∂x/∂u_j`, by central differences unless
    /// overridden.
    fn tangents(&self, u: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..u.len())
            .map(|j| {
                let h = 1e-6 * (1.0 + u[j].abs());
                let mut up = u.to_vec();
                let mut um = u.to_vec();
                up[j] += h;
                um[j] -= h;
                let xp = self.embed(&up)?;
                let xm = self.embed(&um)?;
                Ok(xp.iter().zip(&xm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
            })
            .collect()
    }
}

/// The hyperplane `x_index = value`; coordinates are the other components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePatch {
    pub n: usize,
    pub index: usize,
    pub value: f64,
}

impl SurfacePatch for PlanePatch {
    fn phase_dim(&self) -> usize {
        2 * self.n
    }

    fn embed(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.chart_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.chart_dim(),
                actual: u.len(),
            });
        }
        let mut x = u.to_vec();
        x.insert(self.index, self.value);
        Ok(x)
    }

    fn level(&self, x: &[f64]) -> f64 {
        x[self.index] - self.value
    }

    fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        let mut u = x.to_vec();
        u.remove(self.index);
        u
    }

    fn tangents(&self, u: &[f64]) -> Result<Vec<Vec<f64>>> {
        let dim = self.phase_dim();
        Ok((0..u.len())
            .map(|j| {
                let mut e = vec![0.0; dim];
                e[if j < self.index { j } else { j + 1 }] = 1.0;
                e
            })
            .collect())
    }
}

/// The full sphere bundle `‖q‖ = radius` in phase space, all momenta.
/// Coordinates: angles of `q̂`, tangential momenta `w`, radial momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePatch {
    pub n: usize,
    pub radius: f64,
}

impl SurfacePatch for SpherePatch {
    fn phase_dim(&self) -> usize {
        2 * self.n
    }

    fn embed(&self, u: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if u.len() != 2 * n - 1 {
            return Err(Error::DimensionMismatch {
                expected: 2 * n - 1,
                actual: u.len(),
            });
        }
        let (phi, rest) = u.split_at(n - 1);
        let (w, pr) = rest.split_at(n - 1);
        let qhat = sphere::unit_from_angles(phi);
        let frame = sphere::tangent_frame(phi);
        let mut x: Vec<f64> = qhat.iter().map(|v| self.radius * v).collect();
        let mut p: Vec<f64> = qhat.iter().map(|v| pr[0] * v).collect();
        for (wi, e) in w.iter().zip(&frame) {
            p.iter_mut().zip(e).for_each(|(pk, ek)| *pk += wi * ek);
        }
        x.extend(p);
        Ok(x)
    }

    fn level(&self, x: &[f64]) -> f64 {
        dot(&x[..self.n], &x[..self.n]).sqrt() - self.radius
    }

    fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let (q, p) = x.split_at(n);
        let r = dot(q, q).sqrt();
        let qhat: Vec<f64> = q.iter().map(|v| v / r).collect();
        let phi = sphere::angles_from_unit(&qhat);
        let frame = sphere::tangent_frame(&phi);
        let mut u = phi;
        u.extend(frame.iter().map(|e| dot(e, p)));
        u.push(dot(&qhat, p));
        u
    }
}

/// An axis-aligned box in chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ChartBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                actual: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter("chart box with empty side".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (a, b))| *a <= *x && *x <= *b)
    }

    fn dim(&self) -> usize {
        self.lo.len()
    }
}

/// How the tube volume is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TubeMethod {
    /// Product Gauss rule in `(s, u)` over the flow-out parameterization,
    /// with finite-difference flow derivatives.
    Quadrature { nodes: usize },
    /// Uniform sampling of a bounding box of the tube; each sample is traced
    /// back to the patch to evaluate the transported integrand.
    MonteCarlo { samples: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowboxOptions {
    /// Gauss nodes per chart dimension for the patch integral.
    pub patch_nodes: usize,
    pub flow: FlowOptions,
}

impl Default for FlowboxOptions {
    fn default() -> Self {
        Self {
            patch_nodes: 8,
            flow: FlowOptions::default().with_tolerance(1e-11),
        }
    }
}

/// Both sides of the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowboxResult {
    /// Liouville volume of the tube weighted by the transported `f`.
    pub lhs: MeasureEstimate,
    /// `2t ∫_K f 𝒱`.
    pub rhs: MeasureEstimate,
}

impl FlowboxResult {
    /// `|lhs - rhs|` in units of the combined standard error; infinite when
    /// both errors vanish and the sides differ.
    pub fn z_score(&self) -> f64 {
        let se = (self.lhs.std_error.powi(2) + self.rhs.std_error.powi(2)).sqrt();
        let d = (self.lhs.value - self.rhs.value).abs();
        if se == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }
}

/// `|ι_X Ω|` on the coordinate tangent vectors of the patch at `u`.
pub fn patch_density(sys: &HamiltonianSystem, patch: &dyn SurfacePatch, u: &[f64]) -> Result<f64> {
    let x = PhasePoint::from_slice(&patch.embed(u)?)?;
    let xh = sys.vector_field(&x)?;
    let form = interior_product(&xh, &liouville_volume(sys.n())?)?;
    let t = patch.tangents(u)?;
    let refs: Vec<&[f64]> = t.iter().map(|v| v.as_slice()).collect();
    Ok(form.evaluate(&refs)?.abs())
}

fn check_patch(sys: &HamiltonianSystem, patch: &dyn SurfacePatch, k: &ChartBox) -> Result<()> {
    if patch.phase_dim() != 2 * sys.n() {
        return Err(Error::DimensionMismatch {
            expected: 2 * sys.n(),
            actual: patch.phase_dim(),
        });
    }
    if k.dim() != patch.chart_dim() {
        return Err(Error::DimensionMismatch {
            expected: patch.chart_dim(),
            actual: k.dim(),
        });
    }
    Ok(())
}

/// `2t ∫_K f 𝒱` by a product Gauss rule.
pub fn patch_integral(
    sys: &HamiltonianSystem,
    patch: &dyn SurfacePatch,
    k: &ChartBox,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    t: f64,
    nodes: usize,
) -> Result<MeasureEstimate> {
    check_patch(sys, patch, k)?;
    let rule = product_rule(&k.lo, &k.hi, nodes);
    let parts: Result<Vec<f64>> = rule
        .par_iter()
        .map(|(u, w)| {
            let fu = f(u);
            if fu == 0.0 {
                return Ok(0.0);
            }
            Ok(w * fu * patch_density(sys, patch, u)?)
        })
        .collect();
    let total: f64 = parts?.iter().sum();
    Ok(MeasureEstimate::quadrature(2.0 * t * total, rule.len() as u64))
}

/// Samples the flow-out of `K` over `[-t, t]` and checks that the tube is
/// a flow box: every sampled line exists for the whole window and crosses
/// the patch exactly once, at `s = 0`. Returns the sampled tube points.
fn survey_tube(
    sys: &HamiltonianSystem,
    patch: &dyn SurfacePatch,
    k: &ChartBox,
    t: f64,
    opts: &FlowOptions,
) -> Result<Vec<Vec<f64>>> {
    let per = 4usize;
    let steps = 16usize;
    let d = k.dim();
    let total = per.pow(d as u32);
    let lines: Result<Vec<Vec<Vec<f64>>>> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let u: Vec<f64> = (0..d)
                .map(|i| {
                    let j = rem % per;
                    rem /= per;
                    k.lo[i] + (k.hi[i] - k.lo[i]) * j as f64 / (per - 1) as f64
                })
                .collect();
            let x0 = PhasePoint::from_slice(&patch.embed(&u)?)?;
            let mut pts = Vec::with_capacity(2 * steps + 1);
            let mut levels = Vec::with_capacity(2 * steps + 1);
            for i in 0..=2 * steps {
                let s = -t + 2.0 * t * i as f64 / (2 * steps) as f64;
                let x = if s == 0.0 {
                    x0.to_vec()
                } else {
                    flow::time_t_map(sys, &x0, s, opts)?.to_vec()
                };
                levels.push(patch.level(&x));
                pts.push(x);
            }
            // the level must be strictly monotone along the line
            let sgn = (levels[2 * steps] - levels[0]).signum();
            if sgn == 0.0 || levels.windows(2).any(|w| (w[1] - w[0]) * sgn <= 0.0) {
                return Err(Error::TubeEscapesChart(format!(
                    "flow line from chart point {u:?} is not transversal over the window"
                )));
            }
            Ok(pts)
        })
        .collect();
    Ok(lines?.into_iter().flatten().collect())
}

struct LevelCrossing<'a> {
    patch: &'a dyn SurfacePatch,
    prev: f64,
    found: Option<Vec<f64>>,
}

impl Observer for LevelCrossing<'_> {
    fn observe(&mut self, _sys: &HamiltonianSystem, seg: &Segment) -> Result<Control> {
        let end = self.patch.level(&seg.end());
        if self.prev == 0.0 || self.prev.signum() != end.signum() {
            let f = |s: f64| self.patch.level(&seg.eval(s));
            let root = brent(f, seg.t0, seg.t_end, self.prev, end);
            self.found = Some(seg.eval(root));
            return Ok(Control::Stop);
        }
        self.prev = end;
        Ok(Control::Continue)
    }
}

/// Point where the orbit of `x` meets the patch within `|s| < t`, if any.
fn trace_to_patch(
    sys: &HamiltonianSystem,
    patch: &dyn SurfacePatch,
    x: &[f64],
    t: f64,
    opts: &FlowOptions,
) -> Result<Option<Vec<f64>>> {
    for dir in [1.0, -1.0] {
        let mut obs = LevelCrossing {
            patch,
            prev: patch.level(x),
            found: None,
        };
        let run = flow::run(sys, x, dir * t, opts, &mut obs);
        match run {
            Ok(_) => {}
            Err(Error::SingularStart { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
        if obs.found.is_some() {
            return Ok(obs.found);
        }
    }
    Ok(None)
}

fn tube_quadrature(
    sys: &HamiltonianSystem,
    patch: &dyn SurfacePatch,
    k: &ChartBox,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    t: f64,
    nodes: usize,
    opts: &FlowOptions,
) -> Result<MeasureEstimate> {
    let d = k.dim();
    let mut lo = vec![-t];
    lo.extend_from_slice(&k.lo);
    let mut hi = vec![t];
    hi.extend_from_slice(&k.hi);
    let rule = product_rule(&lo, &hi, nodes);
    let flow_at = |u: &[f64], s: f64| -> Result<Vec<f64>> {
        let x = PhasePoint::from_slice(&patch.embed(u)?)?;
        if s == 0.0 {
            return Ok(x.to_vec());
        }
        Ok(flow::time_t_map(sys, &x, s, opts)?.to_vec())
    };
    let parts: Result<Vec<f64>> = rule
        .par_iter()
        .map(|(node, w)| {
            let s = node[0];
            let u = &node[1..];
            let fu = f(u);
            if fu == 0.0 {
                return Ok(0.0);
            }
            let x = flow_at(u, s)?;
            let xh = sys.vector_field(&PhasePoint::from_slice(&x)?)?;
            let mut m = Vec::with_capacity((d + 1) * (d + 1));
            let mut cols = vec![xh];
            for j in 0..d {
                let h = 1e-4 * (k.hi[j] - k.lo[j]).max(1e-3);
                let mut up = u.to_vec();
                let mut um = u.to_vec();
                up[j] += h;
                um[j] -= h;
                let xp = flow_at(&up, s)?;
                let xm = flow_at(&um, s)?;
                cols.push(xp.iter().zip(&xm).map(|(a, b)| (a - b) / (2.0 * h)).collect());
            }
            for r in 0..=d {
                for c in &cols {
                    m.push(c[r]);
                }
            }
            Ok(w * fu * crate::forms::small_det(m, d + 1).abs())
        })
        .collect();
    let total: f64 = parts?.iter().sum();
    Ok(MeasureEstimate::quadrature(total, rule.len() as u64))
}

fn tube_monte_carlo(
    sys: &HamiltonianSystem,
    patch: &dyn SurfacePatch,
    k: &ChartBox,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    t: f64,
    samples: u64,
    seed: u64,
    opts: &FlowOptions,
) -> Result<MeasureEstimate> {
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let pts = survey_tube(sys, patch, k, t, opts)?;
    let dim = patch.phase_dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut rate: f64 = 0.0;
    for x in &pts {
        for i in 0..dim {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
        let xh = sys.vector_field(&PhasePoint::from_slice(x)?)?;
        let h = 1e-7;
        let xp: Vec<f64> = x.iter().zip(&xh).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(&xh).map(|(a, b)| a - h * b).collect();
        rate = rate.max(((patch.level(&xp) - patch.level(&xm)) / (2.0 * h)).abs());
    }
    for i in 0..dim {
        let pad = 0.1 * (hi[i] - lo[i]) + 1e-9;
        lo[i] -= pad;
        hi[i] += pad;
    }
    let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
    let reject_level = 2.0 * rate * t;
    let values: Result<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, i);
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| g.random_range(*a..*b)).collect();
            if patch.level(&x).abs() > reject_level {
                return Ok(0.0);
            }
            let Some(y) = trace_to_patch(sys, patch, &x, t, opts)? else {
                return Ok(0.0);
            };
            let u = patch.coordinates(&y);
            Ok(if k.contains(&u) { f(&u) } else { 0.0 })
        })
        .collect();
    let values = values?;
    let nf = samples as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(MeasureEstimate::monte_carlo(
        volume * mean,
        volume * (var / nf).sqrt(),
        samples,
        seed,
    ))
}

/// Both sides of the flow-box identity for the patch box `K`, weight `f`
/// (a function of chart coordinates) and half-width `t`.
pub fn flowbox_volume_check(
    sys: &HamiltonianSystem,
    patch: &dyn SurfacePatch,
    k: &ChartBox,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    t: f64,
    method: TubeMethod,
    opts: &FlowboxOptions,
) -> Result<FlowboxResult> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("tube half-width t = {t}")));
    }
    check_patch(sys, patch, k)?;
    let rhs = patch_integral(sys, patch, k, f, t, opts.patch_nodes)?;
    let lhs = match method {
        TubeMethod::Quadrature { nodes } => {
            survey_tube(sys, patch, k, t, &opts.flow)?;
            tube_quadrature(sys, patch, k, f, t, nodes, &opts.flow)?
        }
        TubeMethod::MonteCarlo { samples, seed } => {
            tube_monte_carlo(sys, patch, k, f, t, samples, seed, &opts.flow)?
        }
    };
    Ok(FlowboxResult { lhs, rhs })
}
