//! Hamiltonians `H(q, p) = ½‖p‖² + V(q)` with a power-law attraction toward
//! the origin and an optional smooth perturbation.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A point `(q, p)` of phase space `R^{2n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                actual: p.len(),
            });
        }
        if q.is_empty() {
            return Err(Error::UnsupportedDimension(0));
        }
        Ok(Self { q, p })
    }

    /// Splits a flat `(q, p)` vector of even length.
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 0 || x.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "phase vector of odd length {}",
                x.len()
            )));
        }
        let n = x.len() / 2;
        Self::new(x[..n].to_vec(), x[n..].to_vec())
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.p);
        v
    }

    pub fn radius(&self) -> f64 {
        norm(&self.q)
    }

    /// `⟨p, q⟩`.
    pub fn radial_action(&self) -> f64 {
        dot(&self.p, &self.q)
    }

    /// `⟨p, q/‖q‖⟩`.
    pub fn radial_momentum(&self) -> f64 {
        self.radial_action() / self.radius()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A smooth real function on `R^k`.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;

    /// Central differences with step `1e-6 (1 + ‖x‖)` unless overridden.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        central_gradient(|y| self.value(y), x, 1e-6 * (1.0 + norm(x)))
    }
}

pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let fp = f(&y);
            y[i] = x[i] - h;
            let fm = f(&y);
            y[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A smooth additive term `W(q)` in the potential.
#[derive(Clone)]
pub struct Perturbation {
    id: String,
    value: FieldFn,
    gradient: GradFn,
    support_radius: Option<f64>,
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Perturbation")
            .field("id", &self.id)
            .field("support_radius", &self.support_radius)
            .finish()
    }
}

impl Perturbation {
    /// A user-supplied term. `support_radius` bounds `‖q‖` on the support
    /// when the term has compact support.
    pub fn custom(
        id: impl Into<String>,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        support_radius: Option<f64>,
    ) -> Self {
        Self {
            id: id.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            support_radius,
        }
    }

    /// `W(q) = ε q_1 q_2`. Unbounded support.
    pub fn bilinear(strength: f64) -> Self {
        Self::custom(
            format!("bilinear({strength})"),
            move |q| strength * q[0] * q[1],
            move |q| {
                let mut g = vec![0.0; q.len()];
                g[0] = strength * q[1];
                g[1] = strength * q[0];
                g
            },
            None,
        )
    }

    /// Smooth bump `ε exp(1 - 1/(1 - u))`, `u = ‖q - c‖² / w²`, supported in
    /// the ball of radius `w` around `c`.
    pub fn bump(strength: f64, center: Vec<f64>, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidParameter(format!("bump width {width}")));
        }
        let support = norm(&center) + width;
        let c1 = center.clone();
        let w2 = width * width;
        Ok(Self::custom(
            format!("bump({strength}, {center:?}, {width})"),
            move |q| {
                let u = dist_sq(q, &c1) / w2;
                if u >= 1.0 {
                    0.0
                } else {
                    strength * (1.0 - 1.0 / (1.0 - u)).exp()
                }
            },
            move |q| {
                let u = dist_sq(q, &center) / w2;
                if u >= 1.0 {
                    return vec![0.0; q.len()];
                }
                let val = strength * (1.0 - 1.0 / (1.0 - u)).exp();
                let dwdu = -val / ((1.0 - u) * (1.0 - u));
                q.iter()
                    .zip(&center)
                    .map(|(a, b)| dwdu * 2.0 * (a - b) / w2)
                    .collect()
            },
            Some(support),
        ))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// `Some(R)` when `W` vanishes outside the ball of radius `R`.
    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    pub fn has_compact_support(&self) -> bool {
        self.support_radius.is_some()
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `V(q) = -c ‖q‖^{-α} + W(q)`. `c = 0` with no perturbation is the free
/// particle, which is smooth at the origin.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    alpha: f64,
    c: f64,
    perturbation: Option<Perturbation>,
}

impl PotentialSpec {
    pub fn new(alpha: f64, c: f64, perturbation: Option<Perturbation>) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be > 0")));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!("c = {c} must be >= 0")));
        }
        Ok(Self {
            alpha,
            c,
            perturbation,
        })
    }

    pub fn radial(alpha: f64, c: f64) -> Result<Self> {
        Self::new(alpha, c, None)
    }

    /// `V ≡ 0`.
    pub fn free() -> Self {
        Self {
            alpha: 1.0,
            c: 0.0,
            perturbation: None,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        self.perturbation.as_ref()
    }

    pub fn is_radial(&self) -> bool {
        self.perturbation.is_none()
    }

    /// Whether the potential has a pole at the origin.
    pub fn is_singular(&self) -> bool {
        self.c > 0.0
    }
}

/// A mechanical system on `R^n`.
#[derive(Debug, Clone)]
pub struct HamiltonianSystem {
    n: usize,
    potential: PotentialSpec,
}

impl HamiltonianSystem {
    pub fn new(n: usize, potential: PotentialSpec) -> Result<Self> {
        if n == 0 || 2 * n > crate::forms::MAX_DIM {
            return Err(Error::UnsupportedDimension(n));
        }
        if potential.perturbation.is_some() && n < 2 {
            return Err(Error::InvalidParameter(
                "perturbations need n >= 2".into(),
            ));
        }
        Ok(Self { n, potential })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn is_radial(&self) -> bool {
        self.potential.is_radial()
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: q.len(),
            });
        }
        if self.potential.is_singular() && q.iter().all(|&v| v == 0.0) {
            return Err(Error::Singular);
        }
        Ok(())
    }

    fn check_x(&self, x: &PhasePoint) -> Result<()> {
        if x.p.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: x.p.len(),
            });
        }
        self.check_q(&x.q)
    }

    /// Unchecked potential; `q` must be nonzero when the potential is singular.
    pub(crate) fn v_raw(&self, q: &[f64]) -> f64 {
        let pot = &self.potential;
        let mut v = 0.0;
        if pot.c > 0.0 {
            let r = norm(q);
            v -= pot.c * r.powf(-pot.alpha);
        }
        if let Some(w) = &pot.perturbation {
            v += (w.value)(q);
        }
        v
    }

    /// Unchecked `∇V` written into `out`.
    pub(crate) fn grad_v_into(&self, q: &[f64], out: &mut [f64]) {
        let pot = &self.potential;
        out.iter_mut().for_each(|v| *v = 0.0);
        if pot.c > 0.0 {
            let r2 = dot(q, q);
            let f = pot.alpha * pot.c * r2.powf(-(pot.alpha + 2.0) / 2.0);
            out.iter_mut().zip(q).for_each(|(o, qi)| *o = f * qi);
        }
        if let Some(w) = &pot.perturbation {
            let g = (w.gradient)(q);
            out.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
        }
    }

    /// Unchecked Hamiltonian of a flat `(q, p)` vector.
    pub(crate) fn h_raw(&self, y: &[f64]) -> f64 {
        let (q, p) = y.split_at(self.n);
        0.5 * dot(p, p) + self.v_raw(q)
    }

    /// Unchecked `X_H = (p, -∇V)` of a flat state.
    pub(crate) fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let (q, p) = y.split_at(n);
        let (dq, dp) = dy.split_at_mut(n);
        dq.copy_from_slice(p);
        self.grad_v_into(q, dp);
        dp.iter_mut().for_each(|v| *v = -*v);
    }

    pub fn eval_potential(&self, q: &[f64]) -> Result<f64> {
        self.check_q(q)?;
        Ok(self.v_raw(q))
    }

    pub fn grad_potential(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_q(q)?;
        let mut g = vec![0.0; self.n];
        self.grad_v_into(q, &mut g);
        Ok(g)
    }

    pub fn eval_h(&self, x: &PhasePoint) -> Result<f64> {
        self.check_x(x)?;
        Ok(0.5 * dot(&x.p, &x.p) + self.v_raw(&x.q))
    }

    /// `∇H = (∇V, p)`.
    pub fn grad_h(&self, x: &PhasePoint) -> Result<Vec<f64>> {
        let mut g = self.grad_potential(&x.q)?;
        if x.p.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: x.p.len(),
            });
        }
        g.extend_from_slice(&x.p);
        Ok(g)
    }

    /// `X_H = (∂H/∂p, -∂H/∂q) = (p, -∇V)`.
    pub fn vector_field(&self, x: &PhasePoint) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let y = x.to_vec();
        let mut dy = vec![0.0; 2 * self.n];
        self.rhs(&y, &mut dy);
        Ok(dy)
    }

    /// Component of `∇V` tangent to the sphere through `q`: `(I - q̂q̂ᵀ)∇V`.
    pub fn tangential_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let g = self.grad_potential(q)?;
        let r2 = dot(q, q);
        if r2 == 0.0 {
            return Ok(g);
        }
        let proj = dot(&g, q) / r2;
        Ok(g.iter().zip(q).map(|(gi, qi)| gi - proj * qi).collect())
    }

    /// `sqrt(2 (E - V(q)))`, or `None` outside the Hill region.
    pub fn momentum_norm(&self, energy: f64, q: &[f64]) -> Result<Option<f64>> {
        let k = energy - self.eval_potential(q)?;
        Ok(if k >= 0.0 { Some((2.0 * k).sqrt()) } else { None })
    }
}
