//! Sampling of the Liouville measure `σ_E` on an annulus of configuration
//! space.
//!
//! On `Σ_E` the measure factors as `σ_E = P^{n-2} dq dS(p̂)` with
//! `P = sqrt(2(E - V))`: positions carry the density `P^{n-2}` and momentum
//! directions are uniform.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{dot, HamiltonianSystem, PhasePoint};
use crate::measures::{quadrature, sphere_integral, MeasureEstimate};
use crate::rng;
use crate::sections::{max_kinetic_at_radius, sphere};

/// The annulus `r_lo ≤ ‖q‖ ≤ r_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub r_lo: f64,
    pub r_hi: f64,
}

impl Region {
    pub fn new(r_lo: f64, r_hi: f64) -> Result<Self> {
        if !(r_lo > 0.0 && r_hi > r_lo && r_hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "annulus [{r_lo}, {r_hi}] needs 0 < r_lo < r_hi < ∞"
            )));
        }
        Ok(Self { r_lo, r_hi })
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        let r = dot(q, q).sqrt();
        r >= self.r_lo && r <= self.r_hi
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMethod {
    /// `Direct` for radial potentials, `Shell` otherwise.
    #[default]
    Auto,
    /// Positions weighted by `P^{n-2}`, exact momentum norm.
    Direct,
    /// Uniform in the phase shell `|H - E| < δ`, then projected onto `Σ_E`.
    Shell,
}

/// Shell half-width `δ = 1e-4 (1 + |E|)`.
pub fn shell_half_width(energy: f64) -> f64 {
    1e-4 * (1.0 + energy.abs())
}

const MAX_TRIES: u32 = 10_000_000;

/// Radii that can carry mass and an upper bound for `E - V` on them.
struct Bounds {
    r_lo: f64,
    r_hi: f64,
    kin_max: f64,
}

fn bounds(sys: &HamiltonianSystem, energy: f64, region: &Region) -> Result<Bounds> {
    let n = sys.n();
    let mut r_hi = region.r_hi;
    let kin_max = if sys.is_radial() {
        let pot = sys.potential();
        if energy < 0.0 {
            if pot.c() == 0.0 {
                return Err(Error::EmptyRegion);
            }
            r_hi = r_hi.min((pot.c() / -energy).powf(1.0 / pot.alpha()));
        }
        if r_hi <= region.r_lo {
            return Err(Error::EmptyRegion);
        }
        let mut q = vec![0.0; n];
        q[0] = region.r_lo;
        energy - sys.v_raw(&q)
    } else {
        let k = 64;
        let scan = (0..=k)
            .map(|i| {
                let r = region.r_lo + (region.r_hi - region.r_lo) * i as f64 / k as f64;
                max_kinetic_at_radius(sys, energy, r)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        // grid maxima can miss narrow peaks; samples above the bound are reported
        scan * 1.25
    };
    if !(kin_max > 0.0) {
        return Err(Error::EmptyRegion);
    }
    Ok(Bounds {
        r_lo: region.r_lo,
        r_hi,
        kin_max,
    })
}

fn unit_vector(g: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| g.sample(StandardNormal)).collect();
        let s = dot(&v, &v).sqrt();
        if s > 1e-12 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

fn uniform_in_annulus(g: &mut ChaCha8Rng, n: usize, r_lo: f64, r_hi: f64) -> Vec<f64> {
    let nf = n as f64;
    let u: f64 = g.random();
    let r = (r_lo.powf(nf) + u * (r_hi.powf(nf) - r_lo.powf(nf))).powf(1.0 / nf);
    unit_vector(g, n).into_iter().map(|x| r * x).collect()
}

fn bound_exceeded(ratio: f64) -> Error {
    Error::InvalidParameter(format!(
        "sampling bound exceeded (ratio {ratio}): the potential has a narrow peak the scan missed"
    ))
}

fn sample_direct(sys: &HamiltonianSystem, energy: f64, b: &Bounds, g: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = sys.n();
    let p_max = (2.0 * b.kin_max).sqrt();
    for _ in 0..MAX_TRIES {
        let q = uniform_in_annulus(g, n, b.r_lo, b.r_hi);
        let kin = energy - sys.v_raw(&q);
        if kin < 0.0 {
            continue;
        }
        let p_norm = (2.0 * kin).sqrt();
        if n > 2 {
            let ratio = (p_norm / p_max).powi(n as i32 - 2);
            if ratio > 1.0 + 1e-12 {
                return Err(bound_exceeded(ratio));
            }
            if g.random::<f64>() >= ratio {
                continue;
            }
        }
        let mut x = q;
        x.extend(unit_vector(g, n).into_iter().map(|v| p_norm * v));
        return Ok(x);
    }
    Err(Error::BudgetExhausted("direct sampling rejected every draw".into()))
}

fn sample_shell(
    sys: &HamiltonianSystem,
    energy: f64,
    b: &Bounds,
    delta: f64,
    g: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = sys.n();
    let half = n as f64 / 2.0;
    // momentum-ball volume difference P+^n - P-^n, bounded by the mean value theorem
    let cap = 2.0 * n as f64 * delta * (2.0 * (b.kin_max + delta)).powf(half - 1.0);
    for _ in 0..MAX_TRIES {
        let q = uniform_in_annulus(g, n, b.r_lo, b.r_hi);
        let kin = energy - sys.v_raw(&q);
        if kin + delta <= 0.0 {
            continue;
        }
        let outer = (2.0 * (kin + delta)).powf(half);
        let inner = (2.0 * (kin - delta)).max(0.0).powf(half);
        let ratio = (outer - inner) / cap;
        // equality holds for n = 2 up to rounding in the difference
        if ratio > 1.0 + 1e-9 {
            return Err(bound_exceeded(ratio));
        }
        if g.random::<f64>() >= ratio {
            continue;
        }
        let u: f64 = g.random();
        let rho = (inner + u * (outer - inner)).powf(1.0 / n as f64);
        let mut x = q;
        x.extend(unit_vector(g, n).into_iter().map(|v| rho * v));
        return Ok(x);
    }
    Err(Error::BudgetExhausted("shell sampling rejected every draw".into()))
}

/// Newton steps along `∇H` until `|H - E| ≤ 1e-12 (1 + |E|)`.
pub fn project_to_energy(sys: &HamiltonianSystem, energy: f64, x: &mut [f64]) -> Result<()> {
    let n = sys.n();
    let mut grad = vec![0.0; 2 * n];
    for _ in 0..20 {
        let err = sys.h_raw(x) - energy;
        if err.abs() <= 1e-12 * (1.0 + energy.abs()) {
            return Ok(());
        }
        sys.grad_v_into(&x[..n], &mut grad[..n]);
        grad[n..].copy_from_slice(&x[n..]);
        let gsq = dot(&grad, &grad);
        if gsq == 0.0 {
            return Err(Error::RestPoint);
        }
        x.iter_mut().zip(&grad).for_each(|(xi, gi)| *xi -= err * gi / gsq);
    }
    let err = sys.h_raw(x) - energy;
    if err.abs() > 1e-9 {
        return Err(Error::EnergyMismatch {
            expected: energy,
            actual: energy + err,
        });
    }
    Ok(())
}

/// `count` points of `Σ_E` over the annulus, distributed by `σ_E`. Sample
/// `i` is drawn from its own stream keyed by `(seed, i)`.
pub fn sample_energy_surface(
    sys: &HamiltonianSystem,
    energy: f64,
    region: &Region,
    count: usize,
    seed: u64,
    method: SamplingMethod,
) -> Result<Vec<PhasePoint>> {
    let b = bounds(sys, energy, region)?;
    let delta = shell_half_width(energy);
    let method = match method {
        SamplingMethod::Auto if sys.is_radial() => SamplingMethod::Direct,
        SamplingMethod::Auto => SamplingMethod::Shell,
        m => m,
    };
    if method == SamplingMethod::Shell && delta > 0.01 * b.kin_max {
        return Err(Error::ShellTooThick { delta });
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, i);
            let mut x = match method {
                SamplingMethod::Shell => sample_shell(sys, energy, &b, delta, &mut g)?,
                _ => sample_direct(sys, energy, &b, &mut g)?,
            };
            project_to_energy(sys, energy, &mut x)?;
            PhasePoint::from_slice(&x)
        })
        .collect()
}

/// Total `σ_E` mass of the annulus,
/// `vol(S^{n-1}) ∫ P^{n-2} dq`, by Gauss–Legendre quadrature in the radius.
pub fn energy_surface_mass(
    sys: &HamiltonianSystem,
    energy: f64,
    region: &Region,
) -> Result<MeasureEstimate> {
    let n = sys.n();
    if n < 2 {
        return Err(Error::DegenerateDimension);
    }
    let b = bounds(sys, energy, region)?;
    let shell = sphere::sphere_volume(n - 1);
    let weight = |q: &[f64]| {
        let kin = energy - sys.v_raw(q);
        if kin < 0.0 {
            0.0
        } else {
            (2.0 * kin).sqrt().powi(n as i32 - 2)
        }
    };
    let radial_integral = |nodes: usize| -> (f64, u64) {
        let (rs, ws) = quadrature::gauss_legendre_on(nodes, b.r_lo, b.r_hi);
        let mut total = 0.0;
        let mut count = 0;
        for (r, w) in rs.iter().zip(&ws) {
            if sys.is_radial() {
                let mut q = vec![0.0; n];
                q[0] = *r;
                total += w * shell * r.powi(n as i32 - 1) * weight(&q);
                count += 1;
            } else {
                let (v, c) = sphere_integral(n, *r, &weight);
                total += w * v;
                count += c;
            }
        }
        (shell * total, count)
    };
    let mut nodes = 16;
    let mut prev = radial_integral(nodes);
    loop {
        nodes *= 2;
        let cur = radial_integral(nodes);
        let settled = (cur.0 - prev.0).abs() <= 1e-10 * cur.0.abs();
        if settled || nodes >= 4096 || (!sys.is_radial() && nodes >= 128) {
            return Ok(MeasureEstimate::quadrature(cur.0, cur.1));
        }
        prev = cur;
    }
}
