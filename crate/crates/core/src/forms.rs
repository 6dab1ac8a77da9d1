//! Exterior algebra on a finite-dimensional metric vector space.
//!
//! A [`KForm`] stores one coefficient per strictly increasing index tuple.
//! Tuples are encoded as bitmasks over the coordinate axes and ordered by
//! numeric mask value, which is the colexicographic order on subsets. Phase
//! space coordinates are ordered `(q_1, …, q_n, p_1, …, p_n)`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianSystem, PhasePoint, ScalarField};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 8;

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Colex rank of the subset encoded by `mask`.
fn colex_rank(mask: u32) -> usize {
    let mut rank = 0;
    let mut j = 0;
    let mut bits = mask;
    while bits != 0 {
        let i = bits.trailing_zeros() as usize;
        j += 1;
        rank += binomial(i, j);
        bits &= bits - 1;
    }
    rank
}

/// All `k`-subsets of `0..d` as bitmasks, in colex order.
pub(crate) fn subset_masks(d: usize, k: usize) -> Vec<u32> {
    (0u32..(1u32 << d))
        .filter(|m| m.count_ones() as usize == k)
        .collect()
}

fn mask_indices(mask: u32) -> Vec<usize> {
    let mut out = Vec::with_capacity(mask.count_ones() as usize);
    let mut bits = mask;
    while bits != 0 {
        out.push(bits.trailing_zeros() as usize);
        bits &= bits - 1;
    }
    out
}

/// Sign of the permutation that sorts the concatenation `(a, b)` of two
/// disjoint increasing index sets.
fn shuffle_sign(a: u32, b: u32) -> f64 {
    let mut inversions = 0u32;
    let mut bits = b;
    while bits != 0 {
        let j = bits.trailing_zeros();
        inversions += (a >> (j + 1)).count_ones();
        bits &= bits - 1;
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Determinant of a small row-major square matrix by partial pivoting.
pub(crate) fn small_det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            det = -det;
        }
        let d = a[col * n + col];
        det *= d;
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f != 0.0 {
                for c in col..n {
                    a[row * n + c] -= f * a[col * n + c];
                }
            }
        }
    }
    det
}

/// An alternating multilinear form of fixed degree on `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct KForm {
    dim: usize,
    degree: usize,
    coeffs: Vec<f64>,
}

impl KForm {
    pub fn zero(dim: usize, degree: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        if degree > dim {
            return Err(Error::DegreeOverflow {
                left: degree,
                right: 0,
                dim,
            });
        }
        Ok(Self {
            dim,
            degree,
            coeffs: vec![0.0; binomial(dim, degree)],
        })
    }

    /// The constant 0-form `value`.
    pub fn scalar(dim: usize, value: f64) -> Result<Self> {
        let mut f = Self::zero(dim, 0)?;
        f.coeffs[0] = value;
        Ok(f)
    }

    /// `dx^{i_1} ∧ … ∧ dx^{i_k}` for arbitrary (distinct) indices; unsorted
    /// input picks up the permutation sign.
    pub fn basis(dim: usize, indices: &[usize]) -> Result<Self> {
        let mut out = Self::scalar(dim, 1.0)?;
        for &i in indices {
            if i >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: i + 1,
                });
            }
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            out = out.wedge(&Self::one_form(&e)?)?;
        }
        Ok(out)
    }

    /// The 1-form `Σ c_i dx^i`.
    pub fn one_form(c: &[f64]) -> Result<Self> {
        let mut f = Self::zero(c.len(), 1)?;
        // colex rank of {i} is i
        f.coeffs.copy_from_slice(c);
        Ok(f)
    }

    /// Coordinate volume form `dx^1 ∧ … ∧ dx^d`.
    pub fn volume(dim: usize) -> Result<Self> {
        let mut f = Self::zero(dim, dim)?;
        f.coeffs[0] = 1.0;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Coefficients in colex order of the index tuples.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Index tuples matching [`KForm::coeffs`].
    pub fn index_tuples(&self) -> Vec<Vec<usize>> {
        subset_masks(self.dim, self.degree)
            .into_iter()
            .map(mask_indices)
            .collect()
    }

    /// Coefficient of `dx^{i_1} ∧ … ∧ dx^{i_k}` with `i` strictly increasing.
    pub fn coeff(&self, indices: &[usize]) -> f64 {
        self.coeffs[colex_rank(Self::mask_of(indices))]
    }

    pub fn set_coeff(&mut self, indices: &[usize], value: f64) {
        let r = colex_rank(Self::mask_of(indices));
        self.coeffs[r] = value;
    }

    fn mask_of(indices: &[usize]) -> u32 {
        indices.iter().fold(0u32, |m, &i| m | (1 << i))
    }

    fn masks(&self) -> Vec<u32> {
        subset_masks(self.dim, self.degree)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Largest coefficientwise difference; forms must share dimension and degree.
    pub fn max_abs_diff(&self, other: &KForm) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    fn check_same_shape(&self, other: &KForm) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        if self.degree != other.degree {
            return Err(Error::InvalidParameter(format!(
                "degree mismatch: {} vs {}",
                self.degree, other.degree
            )));
        }
        Ok(())
    }

    /// Exterior product with shuffle signs.
    pub fn wedge(&self, other: &KForm) -> Result<KForm> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        if self.degree + other.degree > self.dim {
            return Err(Error::DegreeOverflow {
                left: self.degree,
                right: other.degree,
                dim: self.dim,
            });
        }
        let mut out = KForm::zero(self.dim, self.degree + other.degree)?;
        let ma = self.masks();
        let mb = other.masks();
        for (a, &ca) in ma.iter().zip(&self.coeffs) {
            if ca == 0.0 {
                continue;
            }
            for (b, &cb) in mb.iter().zip(&other.coeffs) {
                if cb == 0.0 || a & b != 0 {
                    continue;
                }
                out.coeffs[colex_rank(a | b)] += shuffle_sign(*a, *b) * ca * cb;
            }
        }
        Ok(out)
    }

    /// `self ∧ self ∧ …` (`k` factors) divided by `k!`; `k = 0` gives 1.
    pub fn normalized_power(&self, k: usize) -> Result<KForm> {
        let mut out = KForm::scalar(self.dim, 1.0)?;
        for i in 1..=k {
            out = out.wedge(self)? * (1.0 / i as f64);
        }
        Ok(out)
    }

    /// Value on `k` argument vectors.
    pub fn evaluate(&self, vectors: &[&[f64]]) -> Result<f64> {
        if vectors.len() != self.degree {
            return Err(Error::InvalidParameter(format!(
                "{}-form evaluated on {} vectors",
                self.degree,
                vectors.len()
            )));
        }
        for v in vectors {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: v.len(),
                });
            }
        }
        let k = self.degree;
        if k == 0 {
            return Ok(self.coeffs[0]);
        }
        let mut total = 0.0;
        for (mask, &c) in self.masks().iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            let rows = mask_indices(*mask);
            let mut m = Vec::with_capacity(k * k);
            for &r in &rows {
                for v in vectors {
                    m.push(v[r]);
                }
            }
            total += c * small_det(m, k);
        }
        Ok(total)
    }

    /// Pullback along the linear map whose columns are `basis`: the result
    /// lives on `R^{basis.len()}`.
    pub fn pullback(&self, basis: &[Vec<f64>]) -> Result<KForm> {
        let r = basis.len();
        if self.degree > r {
            return Err(Error::DegreeOverflow {
                left: self.degree,
                right: 0,
                dim: r,
            });
        }
        if self.degree == 0 {
            return KForm::scalar(r.max(1), self.coeffs[0]);
        }
        let mut out = KForm::zero(r, self.degree)?;
        for (slot, mask) in subset_masks(r, self.degree).into_iter().enumerate() {
            let vs: Vec<&[f64]> = mask_indices(mask)
                .into_iter()
                .map(|i| basis[i].as_slice())
                .collect();
            out.coeffs[slot] = self.evaluate(&vs)?;
        }
        Ok(out)
    }
}

impl Add for KForm {
    type Output = KForm;
    fn add(mut self, rhs: KForm) -> KForm {
        assert!(
            self.dim == rhs.dim && self.degree == rhs.degree,
            "adding forms of different shape"
        );
        for (a, b) in self.coeffs.iter_mut().zip(rhs.coeffs) {
            *a += b;
        }
        self
    }
}

impl Sub for KForm {
    type Output = KForm;
    fn sub(self, rhs: KForm) -> KForm {
        self + (-rhs)
    }
}

impl Neg for KForm {
    type Output = KForm;
    fn neg(self) -> KForm {
        self * -1.0
    }
}

impl Mul<f64> for KForm {
    type Output = KForm;
    fn mul(mut self, rhs: f64) -> KForm {
        self.coeffs.iter_mut().for_each(|c| *c *= rhs);
        self
    }
}

/// Contraction `ι_v a` in the first slot.
pub fn interior_product(v: &[f64], a: &KForm) -> Result<KForm> {
    if v.len() != a.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            actual: v.len(),
        });
    }
    if a.degree == 0 {
        return Err(Error::DegreeZero);
    }
    let mut out = KForm::zero(a.dim, a.degree - 1)?;
    for (mask, &c) in a.masks().iter().zip(&a.coeffs) {
        if c == 0.0 {
            continue;
        }
        for (pos, i) in mask_indices(*mask).into_iter().enumerate() {
            let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
            out.coeffs[colex_rank(mask & !(1 << i))] += sign * v[i] * c;
        }
    }
    Ok(out)
}

/// Wedge product as a free function.
pub fn wedge(a: &KForm, b: &KForm) -> Result<KForm> {
    a.wedge(b)
}

/// Symmetric positive-definite inner product on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTensor {
    entries: DMatrix<f64>,
    inverse: DMatrix<f64>,
    sqrt_det: f64,
}

impl MetricTensor {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let d = entries.nrows();
        if d != entries.ncols() {
            return Err(Error::InvalidMetric("matrix is not square".into()));
        }
        if d == 0 || d > MAX_DIM {
            return Err(Error::UnsupportedDimension(d));
        }
        let scale = entries.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidMetric(format!(
                        "asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eig = entries.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min <= 0.0 {
            return Err(Error::InvalidMetric(format!(
                "smallest eigenvalue {min:e} is not positive"
            )));
        }
        let inverse = entries
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidMetric("singular".into()))?;
        let sqrt_det = entries.determinant().sqrt();
        Ok(Self {
            entries,
            inverse,
            sqrt_det,
        })
    }

    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += u[i] * self.entries[(i, j)] * v[j];
            }
        }
        s
    }

    pub fn norm_sq(&self, u: &[f64]) -> f64 {
        self.inner(u, u)
    }

    /// Induced inner product on k-forms (Gram determinants of the dual metric).
    pub fn form_inner(&self, a: &KForm, b: &KForm) -> Result<f64> {
        a.check_same_shape(b)?;
        if a.dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: a.dim,
            });
        }
        let masks = a.masks();
        let mut s = 0.0;
        for (ma, &ca) in masks.iter().zip(&a.coeffs) {
            if ca == 0.0 {
                continue;
            }
            for (mb, &cb) in masks.iter().zip(&b.coeffs) {
                if cb == 0.0 {
                    continue;
                }
                s += ca * cb * self.dual_minor(*ma, *mb);
            }
        }
        Ok(s)
    }

    fn dual_minor(&self, rows: u32, cols: u32) -> f64 {
        let r = mask_indices(rows);
        let c = mask_indices(cols);
        let k = r.len();
        if k == 0 {
            return 1.0;
        }
        let mut m = Vec::with_capacity(k * k);
        for &i in &r {
            for &j in &c {
                m.push(self.inverse[(i, j)]);
            }
        }
        small_det(m, k)
    }

    /// Riemannian volume form `sqrt(det g) dx^1 ∧ … ∧ dx^d`.
    pub fn volume_form(&self) -> KForm {
        KForm::volume(self.dim()).expect("validated dimension") * self.sqrt_det
    }
}

/// Orientation used by the Hodge star.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `dq_1 ∧ … ∧ dq_n ∧ dp_1 ∧ … ∧ dp_n`, the orientation of the Liouville
    /// volume `Ω`.
    Coordinate,
    /// The orientation of `ω^n / n!`; differs from `Coordinate` by
    /// `(-1)^{⌊n/2⌋}` and requires an even dimension.
    Symplectic,
}

/// `(-1)^{⌊n/2⌋}`.
pub fn symplectic_sign(n: usize) -> f64 {
    if (n / 2) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Hodge star `⋆: Λ^k → Λ^{d-k}` with `φ ∧ ⋆ψ = ⟨φ, ψ⟩ dP`.
pub fn hodge_star(a: &KForm, g: &MetricTensor, orientation: Orientation) -> Result<KForm> {
    let d = a.dim;
    if g.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: g.dim(),
        });
    }
    let orient = match orientation {
        Orientation::Coordinate => 1.0,
        Orientation::Symplectic => {
            if d % 2 != 0 {
                return Err(Error::InvalidParameter(
                    "symplectic orientation needs an even dimension".into(),
                ));
            }
            symplectic_sign(d / 2)
        }
    };
    let full = (1u32 << d) - 1;
    let mut out = KForm::zero(d, d - a.degree)?;
    let masks = a.masks();
    for &mi in &masks {
        let mut inner = 0.0;
        for (mj, &c) in masks.iter().zip(&a.coeffs) {
            if c != 0.0 {
                inner += c * g.dual_minor(mi, *mj);
            }
        }
        if inner == 0.0 {
            continue;
        }
        let comp = full & !mi;
        out.coeffs[colex_rank(comp)] = orient * shuffle_sign(mi, comp) * g.sqrt_det * inner;
    }
    Ok(out)
}

/// Linear complex structure `J` with `J² = -1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexStructureOp {
    entries: DMatrix<f64>,
}

impl ComplexStructureOp {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let d = entries.nrows();
        if d != entries.ncols() || d % 2 != 0 || d == 0 || d > MAX_DIM {
            return Err(Error::IncompatibleComplexStructure(format!(
                "need an even square matrix of size <= {MAX_DIM}, got {}x{}",
                d,
                entries.ncols()
            )));
        }
        let sq = &entries * &entries + DMatrix::<f64>::identity(d, d);
        let dev = sq.amax();
        if dev > 1e-12 * entries.amax().powi(2).max(1.0) {
            return Err(Error::IncompatibleComplexStructure(format!(
                "J² + 1 deviates by {dev:e}"
            )));
        }
        Ok(Self { entries })
    }

    /// `J(Q, P) = (-P, Q)` on `R^{2n}`.
    pub fn standard(n: usize) -> Result<Self> {
        let d = 2 * n;
        let mut j = DMatrix::zeros(d, d);
        for i in 0..n {
            j[(i, n + i)] = -1.0;
            j[(n + i, i)] = 1.0;
        }
        Self::new(j)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.entries[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Checks `g(JX, JY) = g(X, Y)`, i.e. `Jᵀ g J = g`.
    pub fn check_compatible(&self, g: &MetricTensor) -> Result<()> {
        if g.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: g.dim(),
            });
        }
        let lhs = self.entries.transpose() * g.entries() * &self.entries;
        let dev = (lhs - g.entries()).amax();
        if dev > 1e-10 * g.entries().amax().max(1.0) {
            return Err(Error::IncompatibleComplexStructure(format!(
                "Jᵀ g J - g deviates by {dev:e}"
            )));
        }
        Ok(())
    }

    /// The Kähler 2-form `ω(X, Y) = g(JX, Y)`.
    pub fn kahler_form(&self, g: &MetricTensor) -> Result<KForm> {
        self.check_compatible(g)?;
        let d = self.dim();
        let gj = self.entries.transpose() * g.entries();
        let mut w = KForm::zero(d, 2)?;
        for a in 0..d {
            for b in a + 1..d {
                w.set_coeff(&[a, b], gj[(a, b)]);
            }
        }
        Ok(w)
    }

    /// `ω(X, Y) = g(JX, Y)`.
    pub fn omega(&self, g: &MetricTensor, x: &[f64], y: &[f64]) -> f64 {
        g.inner(&self.apply(x), y)
    }
}

/// `ω = Σ dq_i ∧ dp_i` on `R^{2n}`.
pub fn symplectic_form(n: usize) -> Result<KForm> {
    let d = 2 * n;
    let mut w = KForm::zero(d, 2)?;
    for i in 0..n {
        w.set_coeff(&[i, n + i], 1.0);
    }
    Ok(w)
}

/// Liouville volume `Ω = (-1)^{⌊n/2⌋} ω^n / n!`, which equals the
/// coordinate volume form.
pub fn liouville_volume(n: usize) -> Result<KForm> {
    Ok(symplectic_form(n)?.normalized_power(n)? * symplectic_sign(n))
}

/// Orthonormal basis of the Euclidean orthogonal complement of `normal`.
pub(crate) fn orthonormal_complement(normal: &[f64]) -> Vec<Vec<f64>> {
    let d = normal.len();
    let nn: f64 = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit: Vec<f64> = normal.iter().map(|v| v / nn).collect();
    let mut basis: Vec<Vec<f64>> = vec![unit];
    // Gram-Schmidt over the coordinate axes, best-conditioned first.
    let mut axes: Vec<usize> = (0..d).collect();
    axes.sort_by(|&a, &b| basis[0][a].abs().total_cmp(&basis[0][b].abs()));
    for i in axes {
        if basis.len() == d {
            break;
        }
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let len: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-8 {
            v.iter_mut().for_each(|x| *x /= len);
            basis.push(v);
        }
    }
    basis.remove(0);
    basis
}

/// Residual of `ι_{X_H} σ = -s ω^{n-1}/(n-1)!` with `σ = ι_Y Ω`,
/// `Y = ∇H / ‖∇H‖²`, measured on the tangent space of the energy surface
/// through `x`: the largest coefficient of the pulled-back difference in an
/// orthonormal frame of `∇H^⊥`.
pub fn check_sigma_relation(x: &PhasePoint, sys: &HamiltonianSystem) -> Result<f64> {
    let n = sys.n();
    if x.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x.n(),
        });
    }
    let grad = sys.grad_h(x)?;
    let gsq: f64 = grad.iter().map(|v| v * v).sum();
    if gsq.sqrt() < 1e-14 {
        return Err(Error::RestPoint);
    }
    let xh = sys.vector_field(x)?;
    let y: Vec<f64> = grad.iter().map(|v| v / gsq).collect();
    let omega_vol = liouville_volume(n)?;
    let sigma = interior_product(&y, &omega_vol)?;
    let lhs = interior_product(&xh, &sigma)?;
    let rhs = symplectic_form(n)?.normalized_power(n - 1)? * symplectic_sign(n);
    let residual = lhs + rhs;
    let frame = orthonormal_complement(&grad);
    Ok(residual.pullback(&frame)?.max_abs())
}

/// `‖X‖²‖Y‖² - ⟨X,Y⟩² - ω(X,Y)²`, non-negative by Wirtinger's inequality.
pub fn wirtinger_gap(
    x: &[f64],
    y: &[f64],
    g: &MetricTensor,
    j: &ComplexStructureOp,
) -> Result<f64> {
    j.check_compatible(g)?;
    for v in [x, y] {
        if v.len() != g.dim() {
            return Err(Error::DimensionMismatch {
                expected: g.dim(),
                actual: v.len(),
            });
        }
    }
    let xy = g.inner(x, y);
    let w = j.omega(g, x, y);
    Ok(g.norm_sq(x) * g.norm_sq(y) - xy * xy - w * w)
}

/// `ω(A, B) / sqrt(‖A‖²‖B‖² - g(A,B)²)` for a compatible pair `(g, J)`.
pub fn normalized_bracket(
    a: &[f64],
    b: &[f64],
    g: &MetricTensor,
    j: &ComplexStructureOp,
) -> Result<f64> {
    let aa = g.norm_sq(a);
    let bb = g.norm_sq(b);
    let ab = g.inner(a, b);
    let den_sq = aa * bb - ab * ab;
    if den_sq <= 1e-24 * (aa * bb).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateDenominator(den_sq.max(0.0).sqrt()));
    }
    Ok(j.omega(g, a, b) / den_sq.sqrt())
}

/// Density `η` of the invariant surface form relative to Riemannian area on
/// the level set `{H = E, F = const}` (Euclidean metric, standard `J`).
pub fn eta_density(
    x: &PhasePoint,
    sys: &HamiltonianSystem,
    field: &dyn ScalarField,
) -> Result<f64> {
    let n = sys.n();
    let grad_h = sys.grad_h(x)?;
    let xv = x.to_vec();
    let grad_f = field.gradient(&xv);
    if grad_f.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            actual: grad_f.len(),
        });
    }
    let g = MetricTensor::euclidean(2 * n)?;
    let j = ComplexStructureOp::standard(n)?;
    normalized_bracket(&grad_h, &grad_f, &g, &j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::PotentialSpec;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_form(rng: &mut ChaCha8Rng, d: usize, k: usize) -> KForm {
        let mut f = KForm::zero(d, k).unwrap();
        for c in f.coeffs.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
        f
    }

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn colex_ranks_are_dense() {
        for d in 1..=MAX_DIM {
            for k in 0..=d {
                let masks = subset_masks(d, k);
                assert_eq!(masks.len(), binomial(d, k));
                for (i, m) in masks.iter().enumerate() {
                    assert_eq!(colex_rank(*m), i);
                }
            }
        }
    }

    #[test]
    fn basis_wedge() {
        let f = KForm::basis(2, &[0, 1]).unwrap();
        assert_eq!(f.degree(), 2);
        assert_eq!(f.coeff(&[0, 1]), 1.0);
        let g = KForm::basis(2, &[1, 0]).unwrap();
        assert_eq!(g.coeff(&[0, 1]), -1.0);
    }

    #[test]
    fn graded_anticommutativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = rng.random_range(0..=3);
            let l = rng.random_range(0..=(5 - k).min(3));
            let a = random_form(&mut rng, 5, k);
            let b = random_form(&mut rng, 5, l);
            let ab = a.wedge(&b).unwrap();
            let ba = b.wedge(&a).unwrap() * if (k * l) % 2 == 0 { 1.0 } else { -1.0 };
            assert!(ab.max_abs_diff(&ba).unwrap() < 1e-14);
        }
    }

    #[test]
    fn wedge_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_form(&mut rng, 6, 2);
        let b = random_form(&mut rng, 6, 1);
        let c = random_form(&mut rng, 6, 2);
        let l = a.wedge(&b).unwrap().wedge(&c).unwrap();
        let r = a.wedge(&b.wedge(&c).unwrap()).unwrap();
        assert!(l.max_abs_diff(&r).unwrap() < 1e-13);
    }

    #[test]
    fn omega_squared_in_four_dimensions() {
        let w = symplectic_form(2).unwrap();
        let w2 = w.wedge(&w).unwrap();
        // ω∧ω = 2 dq1∧dp1∧dq2∧dp2 = -2 dq1∧dq2∧dp1∧dp2
        let expected = KForm::basis(4, &[0, 2, 1, 3]).unwrap() * 2.0;
        assert!(w2.max_abs_diff(&expected).unwrap() < 1e-15);
        assert_eq!(w2.coeff(&[0, 1, 2, 3]), -2.0);
    }

    #[test]
    fn wedge_errors() {
        let a = KForm::zero(3, 2).unwrap();
        let b = KForm::zero(4, 1).unwrap();
        assert!(matches!(a.wedge(&b), Err(Error::DimensionMismatch { .. })));
        let c = KForm::zero(3, 2).unwrap();
        assert!(matches!(a.wedge(&c), Err(Error::DegreeOverflow { .. })));
        assert!(matches!(KForm::zero(9, 1), Err(Error::UnsupportedDimension(9))));
    }

    #[test]
    fn interior_product_basis_and_nilpotence() {
        let f = KForm::basis(2, &[0, 1]).unwrap();
        let c = interior_product(&[1.0, 0.0], &f).unwrap();
        assert_eq!(c, KForm::basis(2, &[1]).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 2..=5 {
            let a = random_form(&mut rng, 6, k);
            let v = random_vec(&mut rng, 6);
            let twice = interior_product(&v, &interior_product(&v, &a).unwrap()).unwrap();
            assert!(twice.max_abs() < 1e-14);
        }
        assert!(matches!(
            interior_product(&[1.0], &KForm::scalar(1, 2.0).unwrap()),
            Err(Error::DegreeZero)
        ));
    }

    #[test]
    fn interior_product_matches_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_form(&mut rng, 5, 3);
        let v = random_vec(&mut rng, 5);
        let u = random_vec(&mut rng, 5);
        let w = random_vec(&mut rng, 5);
        let lhs = interior_product(&v, &a).unwrap().evaluate(&[&u, &w]).unwrap();
        let rhs = a.evaluate(&[&v, &u, &w]).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-14);
    }

    #[test]
    fn evaluation_is_alternating() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_form(&mut rng, 6, 3);
        let v: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 6)).collect();
        let e1 = a.evaluate(&[&v[0], &v[1], &v[2]]).unwrap();
        let e2 = a.evaluate(&[&v[1], &v[0], &v[2]]).unwrap();
        assert_abs_diff_eq!(e1, -e2, epsilon = 1e-14);
    }

    #[test]
    fn hodge_of_one_is_volume() {
        let g = MetricTensor::euclidean(4).unwrap();
        let one = KForm::scalar(4, 1.0).unwrap();
        let star = hodge_star(&one, &g, Orientation::Coordinate).unwrap();
        assert_eq!(star, KForm::volume(4).unwrap());
    }

    #[test]
    fn hodge_of_omega_in_four_dimensions() {
        let g = MetricTensor::euclidean(4).unwrap();
        let w = symplectic_form(2).unwrap();
        let sym = hodge_star(&w, &g, Orientation::Symplectic).unwrap();
        assert!(sym.max_abs_diff(&w).unwrap() < 1e-15);
        // the coordinate orientation differs by s = -1 for n = 2
        let coord = hodge_star(&w, &g, Orientation::Coordinate).unwrap();
        assert!(coord.max_abs_diff(&(w * -1.0)).unwrap() < 1e-15);
    }

    #[test]
    fn hodge_of_half_omega_squared_in_six_dimensions() {
        let g = MetricTensor::euclidean(6).unwrap();
        let w = symplectic_form(3).unwrap();
        let w2 = w.normalized_power(2).unwrap();
        let star = hodge_star(&w2, &g, Orientation::Symplectic).unwrap();
        assert!(star.max_abs_diff(&w).unwrap() < 1e-12);
    }

    #[test]
    fn hodge_defining_identity_on_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=6 {
            // a random SPD metric
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let g = MetricTensor::new(a.transpose() * &a + DMatrix::identity(d, d)).unwrap();
            let dp = g.volume_form();
            for k in 0..=d {
                for phi_m in subset_masks(d, k) {
                    for psi_m in subset_masks(d, k) {
                        let phi = KForm::basis(d, &mask_indices(phi_m)).unwrap();
                        let psi = KForm::basis(d, &mask_indices(psi_m)).unwrap();
                        let lhs = phi
                            .wedge(&hodge_star(&psi, &g, Orientation::Coordinate).unwrap())
                            .unwrap();
                        let rhs = dp.clone() * g.form_inner(&phi, &psi).unwrap();
                        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn metric_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(MetricTensor::new(bad), Err(Error::InvalidMetric(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(MetricTensor::new(indefinite).is_err());
    }

    #[test]
    fn complex_structure_validation() {
        let j = ComplexStructureOp::standard(2).unwrap();
        let g = MetricTensor::euclidean(4).unwrap();
        j.check_compatible(&g).unwrap();
        let not_j = DMatrix::identity(4, 4);
        assert!(ComplexStructureOp::new(not_j).is_err());
        let stretched = MetricTensor::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
            vec![1.0, 1.0, 2.0, 1.0],
        )))
        .unwrap();
        assert!(matches!(
            wirtinger_gap(&[1.0; 4], &[0.5; 4], &stretched, &j),
            Err(Error::IncompatibleComplexStructure(_))
        ));
    }

    #[test]
    fn kahler_form_is_standard_omega() {
        let j = ComplexStructureOp::standard(3).unwrap();
        let g = MetricTensor::euclidean(6).unwrap();
        let w = j.kahler_form(&g).unwrap();
        assert!(w.max_abs_diff(&symplectic_form(3).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn wirtinger_examples() {
        let g = MetricTensor::euclidean(4).unwrap();
        let j = ComplexStructureOp::standard(2).unwrap();
        // J e1 = e3 under the (q, p) ordering
        assert_eq!(j.apply(&[1.0, 0.0, 0.0, 0.0]), vec![0.0, 0.0, 1.0, 0.0]);
        let gap = wirtinger_gap(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &g, &j).unwrap();
        assert_abs_diff_eq!(gap, 1.0, epsilon = 1e-15);
        let x = [0.3, -1.2, 0.7, 2.0];
        let jx = j.apply(&x);
        assert_abs_diff_eq!(wirtinger_gap(&x, &jx, &g, &j).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eta_free_particle_example() {
        struct Q1;
        impl ScalarField for Q1 {
            fn value(&self, x: &[f64]) -> f64 {
                x[0]
            }
        }
        let sys = HamiltonianSystem::new(2, PotentialSpec::free()).unwrap();
        let x = PhasePoint::new(vec![0.3, -0.2], vec![1.0, 0.0]).unwrap();
        let eta = eta_density(&x, &sys, &Q1).unwrap();
        assert_abs_diff_eq!(eta, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn eta_orthogonal_gradient_vanishes() {
        struct Lin(Vec<f64>);
        impl ScalarField for Lin {
            fn value(&self, x: &[f64]) -> f64 {
                x.iter().zip(&self.0).map(|(a, b)| a * b).sum()
            }
            fn gradient(&self, _x: &[f64]) -> Vec<f64> {
                self.0.clone()
            }
        }
        let sys = HamiltonianSystem::new(2, PotentialSpec::free()).unwrap();
        let x = PhasePoint::new(vec![0.3, -0.2], vec![1.0, 0.0]).unwrap();
        // ∇H = (0,0,1,0), J∇H = (-1,0,0,0); (0,1,0,0) is orthogonal to both
        let eta = eta_density(&x, &sys, &Lin(vec![0.0, 1.0, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(eta, 0.0, epsilon = 1e-15);
        let par = eta_density(&x, &sys, &Lin(vec![0.0, 0.0, 2.0, 0.0]));
        assert!(matches!(par, Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn sigma_relation_kepler_and_free() {
        let kepler = HamiltonianSystem::new(2, PotentialSpec::radial(1.0, 1.0).unwrap()).unwrap();
        let x = PhasePoint::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert!(check_sigma_relation(&x, &kepler).unwrap() < 1e-10);

        let free = HamiltonianSystem::new(3, PotentialSpec::free()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = PhasePoint::new(random_vec(&mut rng, 3), random_vec(&mut rng, 3)).unwrap();
        assert!(check_sigma_relation(&x, &free).unwrap() < 1e-10);
    }

    #[test]
    fn sigma_relation_rejects_rest_points() {
        // free particle at rest: ∇H = (0, p) = 0
        let free = HamiltonianSystem::new(2, PotentialSpec::free()).unwrap();
        let x = PhasePoint::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(check_sigma_relation(&x, &free), Err(Error::RestPoint)));
    }

    #[test]
    fn sigma_relation_needs_the_energy_surface() {
        // Off T Σ_E the identity picks up a dH term; the full-space residual is O(1).
        let kepler = HamiltonianSystem::new(2, PotentialSpec::radial(1.0, 1.0).unwrap()).unwrap();
        let x = PhasePoint::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let grad = kepler.grad_h(&x).unwrap();
        let gsq: f64 = grad.iter().map(|v| v * v).sum();
        let y: Vec<f64> = grad.iter().map(|v| v / gsq).collect();
        let sigma = interior_product(&y, &liouville_volume(2).unwrap()).unwrap();
        let lhs = interior_product(&kepler.vector_field(&x).unwrap(), &sigma).unwrap();
        let rhs = symplectic_form(2).unwrap() * symplectic_sign(2);
        assert!((lhs + rhs).max_abs() > 0.1);
    }
}
