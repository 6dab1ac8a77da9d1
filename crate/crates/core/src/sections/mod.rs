//! The shrinking sphere family `ℋ_m = {‖q‖ = 1/m, ⟨p, q⟩ ≤ 0} ⊂ Σ_E`, its
//! charts and invariant densities, Poincaré maps between members, and the
//! flow-box volume identity.

pub mod flowbox;
pub mod sphere;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions, HitEvent};
use crate::forms::{interior_product, liouville_volume};
use crate::hamiltonian::{dot, norm, HamiltonianSystem, PhasePoint};

/// How a sphere `‖q‖ = 1/m` meets the energy surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceStatus {
    /// `E - V < 0` on the whole sphere.
    Empty,
    /// `max (E - V) = 0`: only turning points, no relative interior.
    Turning,
    /// `E - V > 0` somewhere.
    Regular,
}

/// The surfaces `ℋ_m`, `m_lo ≤ m ≤ m_hi`, at fixed energy.
#[derive(Debug, Clone)]
pub struct SurfaceFamily {
    sys: HamiltonianSystem,
    energy: f64,
    m_lo: u32,
    m_hi: u32,
}

impl SurfaceFamily {
    pub fn new(sys: HamiltonianSystem, energy: f64, m_lo: u32, m_hi: u32) -> Result<Self> {
        if m_lo == 0 || m_hi < m_lo {
            return Err(Error::InvalidParameter(format!(
                "surface index range [{m_lo}, {m_hi}]"
            )));
        }
        if !energy.is_finite() {
            return Err(Error::InvalidParameter(format!("energy {energy}")));
        }
        Ok(Self {
            sys,
            energy,
            m_lo,
            m_hi,
        })
    }

    pub fn system(&self) -> &HamiltonianSystem {
        &self.sys
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn range(&self) -> (u32, u32) {
        (self.m_lo, self.m_hi)
    }

    pub fn status(&self, m: u32) -> SurfaceStatus {
        surface_status(&self.sys, self.energy, m)
    }

    /// Smallest index in the range whose surface has a relative interior.
    pub fn first_regular(&self) -> Option<u32> {
        (self.m_lo..=self.m_hi).find(|&m| self.status(m) == SurfaceStatus::Regular)
    }

    pub fn chart(&self, m: u32) -> Result<SurfaceChart> {
        SurfaceChart::new(self.sys.clone(), self.energy, m)
    }
}

/// Largest `E - V` on the sphere of radius `1/m`: exact for radial
/// potentials, a dense angular scan otherwise.
pub fn max_kinetic_on_sphere(sys: &HamiltonianSystem, energy: f64, m: u32) -> f64 {
    max_kinetic_at_radius(sys, energy, 1.0 / m as f64)
}

/// Largest `E - V` on the sphere `‖q‖ = radius`.
pub fn max_kinetic_at_radius(sys: &HamiltonianSystem, energy: f64, radius: f64) -> f64 {
    let n = sys.n();
    if sys.is_radial() {
        let mut q = vec![0.0; n];
        q[0] = radius;
        return energy - sys.v_raw(&q);
    }
    if n == 1 {
        return [-radius, radius]
            .iter()
            .map(|&q| energy - sys.v_raw(&[q]))
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let per = match n {
        2 => 2048,
        3 => 96,
        _ => 24,
    };
    let ranges = sphere::angle_ranges(n);
    // closed grids on [0, π], periodic grid on the last angle
    let counts: Vec<usize> = (0..n - 1)
        .map(|i| if i + 2 < n { per / 2 + 1 } else { per })
        .collect();
    let total: usize = counts.iter().product();
    let mut best = f64::NEG_INFINITY;
    let mut phi = vec![0.0; n - 1];
    for flat in 0..total {
        let mut rem = flat;
        for i in (0..n - 1).rev() {
            let k = rem % counts[i];
            rem /= counts[i];
            let (a, b) = ranges[i];
            phi[i] = if i + 2 < n {
                a + (b - a) * k as f64 / (counts[i] - 1) as f64
            } else {
                a + (b - a) * k as f64 / counts[i] as f64
            };
        }
        let q: Vec<f64> = sphere::unit_from_angles(&phi)
            .into_iter()
            .map(|v| v * radius)
            .collect();
        best = best.max(energy - sys.v_raw(&q));
    }
    best
}

pub fn surface_status(sys: &HamiltonianSystem, energy: f64, m: u32) -> SurfaceStatus {
    let k = max_kinetic_on_sphere(sys, energy, m);
    if k > 0.0 {
        SurfaceStatus::Regular
    } else if k == 0.0 {
        SurfaceStatus::Turning
    } else {
        SurfaceStatus::Empty
    }
}

/// `⟨p, q̂⟩` at a point of the sphere `‖q‖ = 1/m`.
pub fn transversality_margin(x: &PhasePoint, m: u32) -> Result<f64> {
    let radius = 1.0 / m as f64;
    let deviation = x.radius() - radius;
    if deviation.abs() > 1e-9 * radius {
        return Err(Error::OffSurface { deviation });
    }
    Ok(x.radial_momentum())
}

/// Chart `u = (φ, w)` on `ℋ_m`: hyperspherical angles of `q̂` and the
/// tangential momentum components `w_i = ⟨p, e_i(φ)⟩`. The radial momentum
/// is `-sqrt(2(E - V) - ‖w‖²)`.
#[derive(Debug, Clone)]
pub struct SurfaceChart {
    sys: HamiltonianSystem,
    energy: f64,
    m: u32,
}

impl SurfaceChart {
    pub fn new(sys: HamiltonianSystem, energy: f64, m: u32) -> Result<Self> {
        if sys.n() == 1 {
            return Err(Error::DegenerateDimension);
        }
        if m == 0 {
            return Err(Error::InvalidParameter("surface index m = 0".into()));
        }
        if surface_status(&sys, energy, m) == SurfaceStatus::Empty {
            return Err(Error::EmptySurface { m });
        }
        Ok(Self { sys, energy, m })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn radius(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Chart dimension `2n - 2`.
    pub fn dim(&self) -> usize {
        2 * self.sys.n() - 2
    }

    pub fn embed(&self, u: &[f64]) -> Result<PhasePoint> {
        let n = self.sys.n();
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: u.len(),
            });
        }
        let (phi, w) = u.split_at(n - 1);
        let qhat = sphere::unit_from_angles(phi);
        let q: Vec<f64> = qhat.iter().map(|v| v * self.radius()).collect();
        let kin = 2.0 * (self.energy - self.sys.eval_potential(&q)?);
        let pr_sq = kin - dot(w, w);
        if !(pr_sq >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "chart point outside the surface: 2(E - V) - |w|² = {pr_sq:e}"
            )));
        }
        let frame = sphere::tangent_frame(phi);
        let mut p: Vec<f64> = qhat.iter().map(|v| -pr_sq.sqrt() * v).collect();
        for (wi, e) in w.iter().zip(&frame) {
            p.iter_mut().zip(e).for_each(|(pk, ek)| *pk += wi * ek);
        }
        PhasePoint::new(q, p)
    }

    pub fn coordinates(&self, x: &PhasePoint) -> Vec<f64> {
        let r = x.radius();
        let qhat: Vec<f64> = x.q.iter().map(|v| v / r).collect();
        let phi = sphere::angles_from_unit(&qhat);
        let frame = sphere::tangent_frame(&phi);
        let mut u = phi;
        u.extend(frame.iter().map(|e| dot(e, &x.p)));
        u
    }

    /// Density of the invariant form `ι_X ι_Y Ω` (`Y = ∇H/‖∇H‖²`) per chart
    /// coordinate volume, in absolute value.
    pub fn density(&self, u: &[f64]) -> Result<f64> {
        let n = self.sys.n();
        let x = self.embed(u)?;
        let grad = self.sys.grad_h(&x)?;
        let gsq = dot(&grad, &grad);
        if gsq == 0.0 {
            return Err(Error::RestPoint);
        }
        let y: Vec<f64> = grad.iter().map(|v| v / gsq).collect();
        let xh = self.sys.vector_field(&x)?;
        let form = interior_product(&xh, &interior_product(&y, &liouville_volume(n)?)?)?;
        let tangents = self.tangents(u)?;
        let refs: Vec<&[f64]> = tangents.iter().map(|v| v.as_slice()).collect();
        Ok(form.evaluate(&refs)?.abs())
    }

    /// Central-difference coordinate tangent vectors `∂x/∂u_j`.
    fn tangents(&self, u: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(u.len());
        for j in 0..u.len() {
            let h = 1e-6 * (1.0 + u[j].abs());
            let mut up = u.to_vec();
            let mut um = u.to_vec();
            up[j] += h;
            um[j] -= h;
            let xp = self.embed(&up)?.to_vec();
            let xm = self.embed(&um)?.to_vec();
            out.push(xp.iter().zip(&xm).map(|(a, b)| (a - b) / (2.0 * h)).collect());
        }
        Ok(out)
    }
}

/// Result of a Poincaré map evaluation with its volume check.
#[derive(Debug, Clone)]
pub struct PoincareResult {
    pub hit: HitEvent,
    /// Chart Jacobian `∂u_target / ∂u_start`.
    pub jacobian: DMatrix<f64>,
    pub det: f64,
    pub density_start: f64,
    pub density_target: f64,
    /// `|det · ρ_target / ρ_start - 1|`.
    pub residual: f64,
}

/// Options for [`poincare_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoincareOptions {
    pub flow: FlowOptions,
    pub t_max: f64,
    /// Relative finite-difference step, scaled by each coordinate's range.
    pub fd_step: f64,
}

impl Default for PoincareOptions {
    fn default() -> Self {
        Self {
            flow: FlowOptions::tight(),
            t_max: 100.0,
            fd_step: 1e-5,
        }
    }
}

fn map_coordinates(
    source: &SurfaceChart,
    target: &SurfaceChart,
    u: &[f64],
    opts: &PoincareOptions,
) -> Result<(HitEvent, Vec<f64>)> {
    let x = source.embed(u)?;
    let hit = flow::first_hit(&source.sys, &x.to_vec(), target.m, opts.t_max, &opts.flow)?;
    let v = target.coordinates(&hit.point);
    Ok((hit, v))
}

/// Next hit of `ℋ_target` after the start point on `ℋ_start.m`, with the
/// finite-difference chart Jacobian and the invariant-density check.
pub fn poincare_map(
    sys: &HamiltonianSystem,
    energy: f64,
    start: &HitEvent,
    target: u32,
    opts: &PoincareOptions,
) -> Result<PoincareResult> {
    let source = SurfaceChart::new(sys.clone(), energy, start.m)?;
    let dest = SurfaceChart::new(sys.clone(), energy, target)?;
    let margin = transversality_margin(&start.point, start.m)?;
    if margin.abs() / (1.0 + norm(&start.point.p)) < opts.flow.tangency_threshold {
        return Err(Error::TangentialHit { margin });
    }
    if margin > 0.0 {
        return Err(Error::InvalidParameter(format!(
            "start is on the outward half (margin {margin})"
        )));
    }
    let n = sys.n();
    let u0 = source.coordinates(&start.point);
    let (hit, v0) = map_coordinates(&source, &dest, &u0, opts)?;
    let d = source.dim();
    let pmax = (2.0 * max_kinetic_on_sphere(sys, energy, start.m)).max(0.0).sqrt();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let scale = if j < n - 1 { 1.0 } else { pmax.max(1.0) };
        let h = opts.fd_step * scale;
        let mut up = u0.clone();
        let mut um = u0.clone();
        up[j] += h;
        um[j] -= h;
        let (_, vp) = map_coordinates(&source, &dest, &up, opts)?;
        let (_, vm) = map_coordinates(&source, &dest, &um, opts)?;
        for i in 0..d {
            let mut diff = vp[i] - vm[i];
            if i == n - 2 {
                diff = sphere::wrap(diff);
            }
            jac[(i, j)] = diff / (2.0 * h);
        }
    }
    let det = jac.determinant();
    let density_start = source.density(&u0)?;
    let density_target = dest.density(&v0)?;
    let residual = (det * density_target / density_start - 1.0).abs();
    Ok(PoincareResult {
        hit,
        jacobian: jac,
        det,
        density_start,
        density_target,
        residual,
    })
}
