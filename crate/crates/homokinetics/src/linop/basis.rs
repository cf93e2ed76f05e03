//! Orthonormal polynomial basis for the weighted velocity space
//! L^2(e^{-|xi|^2} dxi): associated Laguerre radial parts times real
//! spherical harmonics. psi_{n,l,m} has polynomial degree 2n + l.

use nalgebra::{DVector, Matrix3, Vector3};

use super::quad::gamma_fn;

/// Truncation orders of the Galerkin basis: radial index n runs over
/// 0..=radial_order and angular index l over 0..=angular_order, with the
/// full degenerate range |m| <= l. Dimension is
/// (radial_order + 1) * (angular_order + 1)^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    pub radial_order: usize,
    pub angular_order: usize,
}

impl BasisSpec {
    pub fn new(radial_order: usize, angular_order: usize) -> Self {
        Self { radial_order, angular_order }
    }

    pub fn dims(&self) -> usize {
        (self.radial_order + 1) * (self.angular_order + 1) * (self.angular_order + 1)
    }

    /// Flat index of psi_{n,l,m}; (l, m) blocks are contiguous in n.
    pub fn index_of(&self, n: usize, l: usize, m: i64) -> usize {
        assert!(n <= self.radial_order && l <= self.angular_order);
        assert!(m.unsigned_abs() as usize <= l);
        let block = l * l + (m + l as i64) as usize;
        block * (self.radial_order + 1) + n
    }

    /// Inverse of `index_of`.
    pub fn triple_of(&self, idx: usize) -> (usize, usize, i64) {
        let nr = self.radial_order + 1;
        let block = idx / nr;
        let n = idx % nr;
        let l = (block as f64).sqrt().floor() as usize;
        let m = (block - l * l) as i64 - l as i64;
        (n, l, m)
    }
}

/// Normalization making <psi_{n,l,m}, psi_{n,l,m}>_w = 1.
pub fn norm_nl(n: usize, l: usize) -> f64 {
    let mut fact = 1.0;
    for k in 1..=n {
        fact *= k as f64;
    }
    (2.0 * fact / gamma_fn(n as f64 + l as f64 + 1.5)).sqrt()
}

/// Writes L_k^{(alpha)}(x) for k = 0..out.len() into `out`.
pub fn laguerre_seq(alpha: f64, x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = 1.0 + alpha - x;
    }
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0 + alpha - x) * out[k] - (kf + alpha) * out[k - 1]) / (kf + 1.0);
    }
}

/// Associated Legendre P_l^m(c) without the Condon-Shortley phase,
/// so P_m^m = (2m-1)!! (1 - c^2)^{m/2} >= 0.
fn assoc_legendre(l: usize, m: usize, c: f64) -> f64 {
    assert!(m <= l);
    let s2 = (1.0 - c * c).max(0.0);
    let mut pmm = 1.0;
    for k in 1..=m {
        pmm *= (2 * k - 1) as f64 * s2.sqrt();
    }
    if l == m {
        return pmm;
    }
    let mut p_prev = pmm;
    let mut p_cur = c * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return p_cur;
    }
    for ll in m + 2..=l {
        let llf = ll as f64;
        let mf = m as f64;
        let next = ((2.0 * llf - 1.0) * c * p_cur - (llf - 1.0 + mf) * p_prev) / (llf - mf);
        p_prev = p_cur;
        p_cur = next;
    }
    p_cur
}

/// Real orthonormal spherical harmonic Y_{l,m} evaluated at a unit vector.
/// Conventions: m > 0 pairs with cos(m phi), m < 0 with sin(|m| phi), so e.g.
/// Y_{2,-2} = sqrt(15/4pi) x y / r^2.
pub fn real_harmonic(l: usize, m: i64, unit: &Vector3<f64>) -> f64 {
    let c = unit.z;
    let ma = m.unsigned_abs() as usize;
    let mut ratio = 1.0; // (l - |m|)! / (l + |m|)!
    for k in l - ma + 1..=l + ma {
        ratio /= k as f64;
    }
    let norm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt();
    let plm = assoc_legendre(l, ma, c);
    if m == 0 {
        return norm * plm;
    }
    let phi = unit.y.atan2(unit.x);
    let ang = if m > 0 { (ma as f64 * phi).cos() } else { (ma as f64 * phi).sin() };
    std::f64::consts::SQRT_2 * norm * plm * ang
}

/// Pointwise value of psi_{n,l,m} at velocity xi.
pub fn eval_psi(n: usize, l: usize, m: i64, xi: &Vector3<f64>) -> f64 {
    let r2 = xi.norm_squared();
    let mut lag = vec![0.0; n + 1];
    laguerre_seq(l as f64 + 0.5, r2, &mut lag);
    let radial = norm_nl(n, l) * lag[n];
    if l == 0 {
        return radial * real_harmonic(0, 0, &Vector3::z());
    }
    if r2 == 0.0 {
        return 0.0;
    }
    let r = r2.sqrt();
    radial * r.powi(l as i32) * real_harmonic(l, m, &(xi / r))
}

/// Coefficient vector of the quadratic form xi . D xi for a symmetric
/// traceless D: it lies entirely in the n = 0, l = 2 sector.
pub fn quadratic_coeffs(spec: &BasisSpec, d: &Matrix3<f64>) -> DVector<f64> {
    assert!(spec.angular_order >= 2, "quadratic forms need angular_order >= 2");
    let p34 = std::f64::consts::PI.powf(0.75);
    let mut out = DVector::zeros(spec.dims());
    out[spec.index_of(0, 2, -2)] = p34 * (d[(0, 1)] + d[(1, 0)]) / 2.0;
    out[spec.index_of(0, 2, -1)] = p34 * (d[(1, 2)] + d[(2, 1)]) / 2.0;
    out[spec.index_of(0, 2, 1)] = p34 * (d[(0, 2)] + d[(2, 0)]) / 2.0;
    out[spec.index_of(0, 2, 0)] = 3f64.sqrt() * p34 * d[(2, 2)] / 2.0;
    out[spec.index_of(0, 2, 2)] = p34 * (d[(0, 0)] - d[(1, 1)]) / 2.0;
    out
}

/// Legendre polynomial P_l(x), used to cross-check the harmonic sum rule.
pub fn legendre_poly(l: usize, x: f64) -> f64 {
    let mut p_prev = 1.0;
    if l == 0 {
        return p_prev;
    }
    let mut p_cur = x;
    for k in 1..l {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p_cur - kf * p_prev) / (kf + 1.0);
        p_prev = p_cur;
        p_cur = next;
    }
    p_cur
}
