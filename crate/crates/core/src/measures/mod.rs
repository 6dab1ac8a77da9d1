//! Surface areas of `ℋ_m`, the decay fit, Liouville sampling of `Σ_E`, and
//! Monte Carlo transition measures.

pub mod quadrature;
pub mod sampling;
pub mod transition;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSystem;
use crate::sections::sphere;
use crate::sections::{surface_status, SurfaceStatus};

/// How an estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Quadrature,
    MonteCarlo,
    ClosedForm,
}

/// A numerical value with its provenance. `std_error` is zero exactly for
/// deterministic methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Sample or node count.
    pub count: u64,
    /// Zero for deterministic methods.
    pub seed: u64,
    pub method: Method,
    /// Set for the one-dimensional case, where surfaces are point pairs.
    #[serde(default)]
    pub degenerate: bool,
}

impl MeasureEstimate {
    pub fn quadrature(value: f64, nodes: u64) -> Self {
        Self {
            value,
            std_error: 0.0,
            count: nodes,
            seed: 0,
            method: Method::Quadrature,
            degenerate: false,
        }
    }

    pub fn monte_carlo(value: f64, std_error: f64, samples: u64, seed: u64) -> Self {
        Self {
            value,
            std_error,
            count: samples,
            seed,
            method: Method::MonteCarlo,
            degenerate: false,
        }
    }

    fn two_points() -> Self {
        Self {
            value: 2.0,
            std_error: 0.0,
            count: 0,
            seed: 0,
            method: Method::ClosedForm,
            degenerate: true,
        }
    }
}

/// Integrates `f(q)` over the sphere `‖q‖ = radius` in `R^n` with a
/// Gauss–Legendre × trapezoid product rule, doubling the node count until
/// two successive values agree to `1e-8` relative.
pub fn sphere_integral(
    n: usize,
    radius: f64,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> (f64, u64) {
    assert!(n >= 2);
    let mut nodes = 8usize;
    let mut prev: Option<f64> = None;
    let max_nodes = match n {
        2 => 1 << 16,
        3 => 1 << 10,
        _ => 1 << 6,
    };
    loop {
        let (val, count) = sphere_rule(n, radius, nodes, f);
        if let Some(p) = prev {
            if (val - p).abs() <= 1e-8 * val.abs().max(p.abs()) || nodes >= max_nodes {
                return (val, count);
            }
        }
        prev = Some(val);
        nodes *= 2;
    }
}

fn sphere_rule(
    n: usize,
    radius: f64,
    nodes: usize,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> (f64, u64) {
    let polar: Vec<(Vec<f64>, Vec<f64>)> = (0..n - 2)
        .map(|_| quadrature::gauss_legendre_on(nodes, 0.0, std::f64::consts::PI))
        .collect();
    let periodic = 2 * nodes;
    let dphi = 2.0 * std::f64::consts::PI / periodic as f64;
    let total = nodes.pow((n - 2) as u32) * periodic;
    let rn = radius.powi(n as i32 - 1);
    let mut sum = 0.0;
    let mut phi = vec![0.0; n - 1];
    let mut q = vec![0.0; n];
    for flat in 0..total {
        let mut rem = flat;
        let k = rem % periodic;
        rem /= periodic;
        phi[n - 2] = (k as f64 + 0.5) * dphi;
        let mut w = dphi;
        for i in (0..n - 2).rev() {
            let j = rem % nodes;
            rem /= nodes;
            phi[i] = polar[i].0[j];
            w *= polar[i].1[j];
        }
        let x = sphere::unit_from_angles(&phi);
        q.iter_mut().zip(&x).for_each(|(qi, xi)| *qi = radius * xi);
        sum += w * sphere::area_element(&phi) * f(&q);
    }
    (sum * rn, total as u64)
}

fn check_surface(sys: &HamiltonianSystem, energy: f64, m: u32) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParameter("surface index m = 0".into()));
    }
    if surface_status(sys, energy, m) == SurfaceStatus::Empty {
        return Err(Error::EmptySurface { m });
    }
    Ok(())
}

/// Riemannian area of `ℋ_m`:
/// `½ vol(S^{n-1}) ∫ (2(E-V))^{(n-2)/2} sqrt(2(E-V) + ‖Q∇V‖²) dF_m`.
pub fn riemannian_area(sys: &HamiltonianSystem, energy: f64, m: u32) -> Result<MeasureEstimate> {
    let n = sys.n();
    if n == 1 {
        return Ok(MeasureEstimate::two_points());
    }
    check_surface(sys, energy, m)?;
    let integrand = |q: &[f64]| {
        let k = 2.0 * (energy - sys.v_raw(q));
        if k < 0.0 {
            return 0.0;
        }
        let t = sys.tangential_gradient(q).unwrap_or_default();
        let tsq: f64 = t.iter().map(|v| v * v).sum();
        k.powf((n as f64 - 2.0) / 2.0) * (k + tsq).sqrt()
    };
    let (val, nodes) = sphere_integral(n, 1.0 / m as f64, &integrand);
    Ok(MeasureEstimate::quadrature(
        0.5 * sphere::sphere_volume(n - 1) * val,
        nodes,
    ))
}

/// Symplectic area `∫_{ℋ_m} ω^{n-1}/(n-1)! = v_{n-1} ∫ (2(E-V))^{(n-1)/2} dF_m`.
pub fn symplectic_area(sys: &HamiltonianSystem, energy: f64, m: u32) -> Result<MeasureEstimate> {
    let n = sys.n();
    if n == 1 {
        return Ok(MeasureEstimate::two_points());
    }
    check_surface(sys, energy, m)?;
    let integrand = |q: &[f64]| {
        let k = 2.0 * (energy - sys.v_raw(q));
        if k <= 0.0 {
            0.0
        } else {
            k.powf((n as f64 - 1.0) / 2.0)
        }
    };
    let (val, nodes) = sphere_integral(n, 1.0 / m as f64, &integrand);
    Ok(MeasureEstimate::quadrature(
        sphere::ball_volume(n - 1) * val,
        nodes,
    ))
}

/// Least-squares fit of `log(value) = slope · log(m) + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    /// Prefactor `exp(intercept)`.
    pub prefactor: f64,
}

pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    for &(m, v) in points {
        if !(v > 0.0) {
            return Err(Error::NonPositiveArea { m, value: v });
        }
        if !(m > 0.0) {
            return Err(Error::InvalidParameter(format!("index m = {m}")));
        }
    }
    let mut ms: Vec<f64> = points.iter().map(|p| p.0).collect();
    ms.sort_by(f64::total_cmp);
    ms.dedup();
    if ms.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: ms.len(),
        });
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    Ok(ScalingFit {
        slope,
        intercept,
        residual,
        prefactor: intercept.exp(),
    })
}
