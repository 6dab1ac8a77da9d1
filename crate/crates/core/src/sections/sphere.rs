//! Hyperspherical coordinates on `S^{n-1}`.
//!
//! Angles `φ_0, …, φ_{n-2}` with `φ_i ∈ [0, π]` for `i < n - 2` and the last
//! angle periodic:
//! `x_k = sin φ_0 ⋯ sin φ_{k-1} cos φ_k` for `k < n - 1`,
//! `x_{n-1} = sin φ_0 ⋯ sin φ_{n-2}`.

use std::f64::consts::PI;

pub fn unit_from_angles(phi: &[f64]) -> Vec<f64> {
    let n = phi.len() + 1;
    let mut x = vec![0.0; n];
    let mut s = 1.0;
    for k in 0..n - 1 {
        x[k] = s * phi[k].cos();
        s *= phi[k].sin();
    }
    x[n - 1] = s;
    x
}

pub fn angles_from_unit(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut phi = vec![0.0; n - 1];
    if n == 1 {
        return phi;
    }
    for k in 0..n - 2 {
        let tail: f64 = x[k + 1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        phi[k] = tail.atan2(x[k]);
    }
    phi[n - 2] = x[n - 1].atan2(x[n - 2]);
    phi
}

/// Orthonormal tangent frame `e_i = ∂_i x / ‖∂_i x‖` at the angles `phi`. The
/// formula has no poles: it stays orthonormal where the angle chart
/// degenerates.
pub fn tangent_frame(phi: &[f64]) -> Vec<Vec<f64>> {
    let n = phi.len() + 1;
    (0..n - 1)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = -phi[i].sin();
            let mut s = phi[i].cos();
            for k in i + 1..n {
                if k < n - 1 {
                    e[k] = s * phi[k].cos();
                    s *= phi[k].sin();
                } else {
                    e[k] = s;
                }
            }
            e
        })
        .collect()
}

/// Surface element `sin^{n-2} φ_0 sin^{n-3} φ_1 ⋯` of the unit sphere.
pub fn area_element(phi: &[f64]) -> f64 {
    let n = phi.len() + 1;
    (0..n - 1)
        .map(|i| phi[i].sin().powi((n - 2 - i) as i32))
        .product()
}

/// Ranges of the angles: `[0, π]` except the last, `[0, 2π)`.
pub fn angle_ranges(n: usize) -> Vec<(f64, f64)> {
    (0..n - 1)
        .map(|i| if i + 2 < n { (0.0, PI) } else { (0.0, 2.0 * PI) })
        .collect()
}

/// Wraps an angle difference into `(-π, π]`.
pub fn wrap(d: f64) -> f64 {
    let mut r = d.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// `vol(S^{k})`, the area of the unit `k`-sphere in `R^{k+1}`.
pub fn sphere_volume(k: usize) -> f64 {
    // vol S^k = 2 π^{(k+1)/2} / Γ((k+1)/2)
    2.0 * PI.powf((k as f64 + 1.0) / 2.0) / gamma_half(k + 1)
}

/// `vol(B^k)`, the volume of the unit `k`-ball.
pub fn ball_volume(k: usize) -> f64 {
    // vol B^k = π^{k/2} / Γ(k/2 + 1)
    PI.powf(k as f64 / 2.0) / gamma_half(k + 2)
}

/// `Γ(j / 2)` for a positive integer `j`.
fn gamma_half(j: usize) -> f64 {
    let mut g = if j % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut k = if j % 2 == 0 { 2 } else { 1 };
    while k < j {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}
