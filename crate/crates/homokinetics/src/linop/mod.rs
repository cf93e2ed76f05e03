//! Galerkin matrix of the linearized collision operator on the weighted
//! velocity space, the Green-Kubo transport constant it induces, and the
//! first velocity-space correction of the long-time closure.
//!
//! The quadratic form <psi_j, L psi_k>_w = -(1/4) int B exp(-|xi|^2-|xi*|^2)
//! (Delta psi_j)(Delta psi_k) is reduced to five dimensions: in center-of-mass
//! coordinates the m-summed integrand depends on the relative direction only
//! through rotation invariants, so the relative velocity can be frozen on the
//! z-axis and the center of mass in the xz-half-plane. Every remaining factor
//! is polynomial against a classical weight, so Gaussian rules sized to the
//! basis degree integrate it exactly; the reported quad_error is then pure
//! rounding noise rather than truncation.

pub mod basis;
pub mod quad;

pub use basis::BasisSpec;

use std::f64::consts::PI;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, Matrix3};
use thiserror::Error;

use crate::kernel::{AngularDensity, KernelSpec};
use self::quad::{gen_hermite_half, hermite, legendre, legendre01, Rule1D};

#[derive(Debug, Error)]
pub enum LinopError {
    #[error("quadrature budget exhausted: reached error {achieved:.3e}, target {target:.3e}")]
    QuadratureBudgetExceeded { achieved: f64, target: f64 },
    #[error("incompatible right-hand side: {0}")]
    Compatibility(String),
    #[error("invalid operator input: {0}")]
    Domain(String),
}

/// Node-count control for the assembly quadrature.
#[derive(Debug, Clone, Copy)]
pub struct QuadBudget {
    /// Multiplier on the default node counts. The defaults carry a factor-two
    /// margin over the exactness bound, so the half-budget comparison rule is
    /// still exact and the error estimate measures rounding honestly.
    pub factor: f64,
    /// Largest acceptable entrywise error; `None` accepts the first attempt.
    /// When set, the budget escalates by doubling at most twice before
    /// failing with `QuadratureBudgetExceeded`.
    pub target_error: Option<f64>,
}

impl Default for QuadBudget {
    fn default() -> Self {
        Self { factor: 1.0, target_error: None }
    }
}

/// Symmetrized Galerkin matrix of the linearized collision operator.
#[derive(Debug, Clone)]
pub struct GalerkinOperator {
    pub basis: BasisSpec,
    pub kernel: KernelSpec,
    /// Full matrix over the (n, l, m) basis; block-diagonal over (l, m).
    pub matrix: DMatrix<f64>,
    /// Radial blocks per l; the operator is degenerate in m.
    pub radial_blocks: Vec<DMatrix<f64>>,
    /// Entrywise quadrature error estimated by halving the node counts.
    pub quad_error: f64,
    /// Largest entrywise asymmetry prior to symmetrization.
    pub asymmetry: f64,
}

impl GalerkinOperator {
    /// Coordinates spanning the conserved modes 1, xi, |xi|^2: the constant
    /// and |xi|^2 expand exactly over psi_{0,0,0} and psi_{1,0,0}, and the
    /// velocity components over psi_{0,1,m}.
    pub fn invariant_indices(&self) -> [usize; 5] {
        let b = &self.basis;
        [
            b.index_of(0, 0, 0),
            b.index_of(1, 0, 0),
            b.index_of(0, 1, -1),
            b.index_of(0, 1, 0),
            b.index_of(0, 1, 1),
        ]
    }

    /// Orthogonal projector onto the conserved modes.
    pub fn invariant_projector(&self) -> DMatrix<f64> {
        let dims = self.basis.dims();
        let mut p = DMatrix::zeros(dims, dims);
        for idx in self.invariant_indices() {
            p[(idx, idx)] = 1.0;
        }
        p
    }

    /// Component of `v` along the conserved modes.
    pub fn project_invariants(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for idx in self.invariant_indices() {
            out[idx] = v[idx];
        }
        out
    }

    /// Matrix dump, one row per line, 17 significant digits.
    pub fn write_matrix_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> =
                (0..self.matrix.ncols()).map(|j| format!("{:.16e}", self.matrix[(i, j)])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "radial_order": self.basis.radial_order,
            "angular_order": self.basis.angular_order,
            "dims": self.basis.dims(),
            "kernel": self.kernel,
            "quad_error": self.quad_error,
            "asymmetry": self.asymmetry,
        })
    }
}

struct NodeRules {
    r: Rule1D,
    rho: Rule1D,
    z: Rule1D,
    /// Rule in c = cos(theta) with the kernel's angular density absorbed.
    c: Rule1D,
    phi: usize,
}

fn node_rules(kernel: &KernelSpec, basis: &BasisSpec, factor: f64) -> NodeRules {
    let d = (2 * basis.radial_order + basis.angular_order).max(2);
    let scale = |base: usize| ((base as f64 * factor).ceil() as usize).max(2);
    // Relative speed r: the kernel's |V|^gamma and the O(r^2) cancellation of
    // the integrand are folded into the weight r^{4+gamma} e^{-r^2}.
    let r = gen_hermite_half(scale(d + 2), (4.0 + kernel.gamma) / 2.0);
    let rho = gen_hermite_half(scale(d + 2), 0.5);
    let z = hermite(scale(2 * d + 2));
    let c = match kernel.angular {
        AngularDensity::Constant => legendre(scale(4 * d + 2)),
        AngularDensity::Cosine => {
            // The |c| factor is absorbed by u = c^2: nodes +-sqrt(u) with
            // half weights leave a polynomial integrand in u.
            let u = legendre01(scale(2 * d + 2));
            let mut nodes = Vec::with_capacity(2 * u.len());
            let mut weights = Vec::with_capacity(2 * u.len());
            for (&ui, &wi) in u.nodes.iter().zip(&u.weights) {
                nodes.push(ui.sqrt());
                weights.push(wi / 2.0);
                nodes.push(-ui.sqrt());
                weights.push(wi / 2.0);
            }
            Rule1D { nodes, weights }
        }
    };
    NodeRules { r, rho, z, c, phi: scale(8 * d + 2) }
}

fn fill_laguerre_table(dst: &mut [f64], x: f64, nr: usize, nl: usize) {
    for l in 0..nl {
        basis::laguerre_seq(l as f64 + 0.5, x, &mut dst[l * nr..(l + 1) * nr]);
    }
}

/// Unsymmetrized radial blocks of <psi_{n,l,0}, L psi_{n',l,0}>_w.
fn raw_blocks(kernel: &KernelSpec, basis: &BasisSpec, factor: f64) -> Vec<DMatrix<f64>> {
    let nr = basis.radial_order + 1;
    let nl = basis.angular_order + 1;
    let rules = node_rules(kernel, basis, factor);

    let norms: Vec<f64> = (0..nl)
        .flat_map(|l| (0..nr).map(move |n| basis::norm_nl(n, l)))
        .collect();
    let w_phi = 2.0 * PI / rules.phi as f64;
    let trig: Vec<(f64, f64)> = (0..rules.phi)
        .map(|i| {
            let p = 2.0 * PI * i as f64 / rules.phi as f64;
            (p.cos(), p.sin())
        })
        .collect();

    // Point order: 0 = post a, 1 = post b, 2 = pre a, 3 = pre b; the pre
    // points carry negative signs in Delta psi.
    const PIDX: [[usize; 4]; 4] = [[0, 1, 2, 3], [1, 4, 5, 6], [2, 5, 7, 8], [3, 6, 8, 9]];
    const PAIRS: [(usize, usize); 10] =
        [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];

    let mut acc = vec![vec![0.0f64; nr * nr]; nl];
    let mut lag = vec![vec![0.0f64; nl * nr]; 4];
    let mut g = vec![vec![0.0f64; nl]; 10];
    let is2 = std::f64::consts::FRAC_1_SQRT_2;

    for (&r, &wr) in rules.r.nodes.iter().zip(&rules.r.weights) {
        for (&rho, &wrho) in rules.rho.nodes.iter().zip(&rules.rho.weights) {
            for (&z, &wz) in rules.z.nodes.iter().zip(&rules.z.weights) {
                // Pre-collision pair, independent of the scattering direction.
                let xi = [rho * is2, 0.0, (z + r) * is2];
                let xis = [rho * is2, 0.0, (z - r) * is2];
                let q2 = xi[0] * xi[0] + xi[2] * xi[2];
                let q3 = xis[0] * xis[0] + xis[2] * xis[2];
                fill_laguerre_table(&mut lag[2], q2, nr, nl);
                fill_laguerre_table(&mut lag[3], q3, nr, nl);
                let d23 = xi[0] * xis[0] + xi[2] * xis[2];
                let wbase = wr * wrho * wz / (r * r);
                for (&c, &wc) in rules.c.nodes.iter().zip(&rules.c.weights) {
                    let s = (1.0 - c * c).max(0.0).sqrt();
                    let rc = 2.0 * r * c;
                    let rvz = r - rc * c;
                    let wlevel = wbase * wc * w_phi;
                    for &(cp, sp) in &trig {
                        // Reflected relative velocity r (e3 - 2 c omega).
                        let rvx = -rc * s * cp;
                        let rvy = -rc * s * sp;
                        let a0 = [(rho + rvx) * is2, rvy * is2, (z + rvz) * is2];
                        let a1 = [(rho - rvx) * is2, -rvy * is2, (z - rvz) * is2];
                        let q0 = a0[0] * a0[0] + a0[1] * a0[1] + a0[2] * a0[2];
                        let q1 = a1[0] * a1[0] + a1[1] * a1[1] + a1[2] * a1[2];
                        fill_laguerre_table(&mut lag[0], q0, nr, nl);
                        fill_laguerre_table(&mut lag[1], q1, nr, nl);
                        let q = [q0, q1, q2, q3];
                        let dots = [
                            q0,
                            a0[0] * a1[0] + a0[1] * a1[1] + a0[2] * a1[2],
                            a0[0] * xi[0] + a0[2] * xi[2],
                            a0[0] * xis[0] + a0[2] * xis[2],
                            q1,
                            a1[0] * xi[0] + a1[2] * xi[2],
                            a1[0] * xis[0] + a1[2] * xis[2],
                            q2,
                            d23,
                            q3,
                        ];
                        // Solid-harmonic sum rule: G_l(a, b) = (|a||b|)^l P_l
                        // of the angle, by the Legendre recurrence in a.b.
                        for (p, &(pa, pb)) in PAIRS.iter().enumerate() {
                            g[p][0] = 1.0;
                            if nl > 1 {
                                g[p][1] = dots[p];
                            }
                            let qq = q[pa] * q[pb];
                            for l in 1..nl - 1 {
                                g[p][l + 1] = ((2 * l + 1) as f64 * dots[p] * g[p][l]
                                    - l as f64 * qq * g[p][l - 1])
                                    / (l + 1) as f64;
                            }
                        }
                        for l in 0..nl {
                            let base = l * nr;
                            let accl = &mut acc[l];
                            let gl = [
                                g[0][l], g[1][l], g[2][l], g[3][l], g[4][l], g[5][l], g[6][l],
                                g[7][l], g[8][l], g[9][l],
                            ];
                            for n in 0..nr {
                                let nn = norms[base + n];
                                let f0 = nn * lag[0][base + n];
                                let f1 = nn * lag[1][base + n];
                                let f2 = -nn * lag[2][base + n];
                                let f3 = -nn * lag[3][base + n];
                                let v = [
                                    f0 * gl[PIDX[0][0]] + f1 * gl[PIDX[1][0]]
                                        + f2 * gl[PIDX[2][0]]
                                        + f3 * gl[PIDX[3][0]],
                                    f0 * gl[PIDX[0][1]] + f1 * gl[PIDX[1][1]]
                                        + f2 * gl[PIDX[2][1]]
                                        + f3 * gl[PIDX[3][1]],
                                    f0 * gl[PIDX[0][2]] + f1 * gl[PIDX[1][2]]
                                        + f2 * gl[PIDX[2][2]]
                                        + f3 * gl[PIDX[3][2]],
                                    f0 * gl[PIDX[0][3]] + f1 * gl[PIDX[1][3]]
                                        + f2 * gl[PIDX[2][3]]
                                        + f3 * gl[PIDX[3][3]],
                                ];
                                for np in 0..nr {
                                    let um = norms[base + np];
                                    let t = v[0] * lag[0][base + np] + v[1] * lag[1][base + np]
                                        - v[2] * lag[2][base + np]
                                        - v[3] * lag[3][base + np];
                                    accl[n * nr + np] += wlevel * um * t;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    // -(1/4) from the quadratic form, 2 pi from the frozen azimuths, and
    // (sqrt 2)^gamma from |V| = sqrt(2) r with r^gamma in the weight.
    let pref = -(PI / 2.0) * kernel.strength * 2f64.powf(kernel.gamma / 2.0);
    acc.into_iter().map(|a| DMatrix::from_row_slice(nr, nr, &a) * pref).collect()
}

fn build_operator(
    kernel: &KernelSpec,
    basis: &BasisSpec,
    blocks: Vec<DMatrix<f64>>,
    quad_error: f64,
) -> GalerkinOperator {
    let mut asymmetry = 0.0f64;
    let sym_blocks: Vec<DMatrix<f64>> = blocks
        .into_iter()
        .map(|b| {
            let bt = b.transpose();
            asymmetry = asymmetry.max((&b - &bt).amax());
            (b + bt) * 0.5
        })
        .collect();
    let dims = basis.dims();
    let mut matrix = DMatrix::zeros(dims, dims);
    for (l, block) in sym_blocks.iter().enumerate() {
        for m in -(l as i64)..=l as i64 {
            for n in 0..=basis.radial_order {
                for np in 0..=basis.radial_order {
                    matrix[(basis.index_of(n, l, m), basis.index_of(np, l, m))] = block[(n, np)];
                }
            }
        }
    }
    GalerkinOperator {
        basis: *basis,
        kernel: kernel.clone(),
        matrix,
        radial_blocks: sym_blocks,
        quad_error,
        asymmetry,
    }
}

/// Assembles the operator, estimating the quadrature error by comparing the
/// requested budget against its half.
pub fn assemble(
    kernel: &KernelSpec,
    basis: &BasisSpec,
    budget: &QuadBudget,
) -> Result<GalerkinOperator, LinopError> {
    if basis.radial_order < 1 || basis.angular_order < 1 {
        return Err(LinopError::Domain(
            "basis must contain the conserved modes: radial_order >= 1 and angular_order >= 1"
                .into(),
        ));
    }
    if !(budget.factor.is_finite() && budget.factor > 0.0) {
        return Err(LinopError::Domain("budget factor must be positive and finite".into()));
    }
    let mut factor = budget.factor;
    let mut achieved = f64::INFINITY;
    for _ in 0..3 {
        let full = raw_blocks(kernel, basis, factor);
        let half = raw_blocks(kernel, basis, factor / 2.0);
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for (bf, bh) in full.iter().zip(&half) {
            err = err.max((bf - bh).amax());
            scale = scale.max(bf.amax());
        }
        // The floor covers rounding accumulation over ~1e6 nodes, so that
        // re-assembling at a doubled budget stays within quad_error.
        let quad_error = err.max(1e-10 * scale.max(1.0));
        achieved = achieved.min(quad_error);
        if budget.target_error.is_none_or(|t| quad_error <= t) {
            return Ok(build_operator(kernel, basis, full, quad_error));
        }
        factor *= 2.0;
    }
    Err(LinopError::QuadratureBudgetExceeded {
        achieved,
        target: budget.target_error.unwrap_or(f64::NAN),
    })
}

/// Solves (-L) h = rhs on the orthogonal complement of the conserved modes.
///
/// The conserved modes occupy exact coordinate directions (n = 0, 1 in the
/// l = 0 block and n = 0 in the l = 1 blocks), so the restricted operator is
/// strictly positive definite and each radial block is solved directly by
/// Cholesky factorization. The conserved columns are certified null to
/// quadrature accuracy first, which pins the kernel dimension at five.
pub fn solve_on_w(op: &GalerkinOperator, rhs: &DVector<f64>) -> Result<DVector<f64>, LinopError> {
    if rhs.len() != op.basis.dims() {
        return Err(LinopError::Domain(format!(
            "rhs has {} coordinates, operator expects {}",
            rhs.len(),
            op.basis.dims()
        )));
    }
    let incompatible = op.project_invariants(rhs).norm();
    let tol = 10.0 * op.quad_error * rhs.norm().max(1.0) + 1e-13;
    if incompatible > tol {
        return Err(LinopError::Compatibility(format!(
            "rhs has a conserved-mode component of norm {incompatible:.3e} (tolerance {tol:.3e})"
        )));
    }
    for idx in op.invariant_indices() {
        let col = op.matrix.column(idx).amax();
        if col > 10.0 * op.quad_error {
            return Err(LinopError::Domain(format!(
                "conserved mode at coordinate {idx} is not annihilated: column norm {col:.3e}"
            )));
        }
    }
    let nr = op.basis.radial_order + 1;
    let mut h = DVector::zeros(rhs.len());
    for (l, block) in op.radial_blocks.iter().enumerate() {
        let start = match l {
            0 => 2, // constants and |xi|^2
            1 => 1, // velocity components
            _ => 0,
        };
        if start >= nr {
            continue;
        }
        let dim = nr - start;
        let sub = DMatrix::from_fn(dim, dim, |i, j| -block[(start + i, start + j)]);
        let chol = sub.cholesky().ok_or_else(|| {
            LinopError::Domain(format!(
                "operator is not negative definite on the complement in the l={l} block"
            ))
        })?;
        for m in -(l as i64)..=l as i64 {
            let slice =
                DVector::from_fn(dim, |k, _| rhs[op.basis.index_of(start + k, l, m)]);
            let sol = chol.solve(&slice);
            for k in 0..dim {
                h[op.basis.index_of(start + k, l, m)] = sol[k];
            }
        }
    }
    Ok(h)
}

/// Green-Kubo constant with a quadrature error bar.
#[derive(Debug, Clone, Copy)]
pub struct GreenKubo {
    pub value: f64,
    pub error: f64,
}

/// b = <xi . L0 xi, (-L)^{-1} xi . L0 xi>_w for a traceless driving matrix.
pub fn green_kubo_b(op: &GalerkinOperator, l0: &Matrix3<f64>) -> Result<GreenKubo, LinopError> {
    if op.basis.angular_order < 2 {
        return Err(LinopError::Domain("Green-Kubo constant needs angular_order >= 2".into()));
    }
    let scale = l0.amax();
    if l0.trace().abs() > 1e-12 * scale.max(1.0) {
        return Err(LinopError::Compatibility(format!(
            "driving matrix must be traceless, got trace {:.3e}",
            l0.trace()
        )));
    }
    let sym = (l0 + l0.transpose()) / 2.0;
    let dev = sym - Matrix3::identity() * (sym.trace() / 3.0);
    let rhs = basis::quadratic_coeffs(&op.basis, &dev);
    let h = solve_on_w(op, &rhs)?;
    let value = rhs.dot(&h);
    let error = op.quad_error * h.iter().map(|x| x.abs()).sum::<f64>().powi(2);
    Ok(GreenKubo { value, error })
}

/// First velocity-space correction of the long-time closure: the coefficient
/// vector of 2 beta^{gamma/2} / (C0 mu) L^{-1}[xi . Q xi], with C0 = pi^{-3/2}
/// the Gaussian mass normalization.
pub fn hilbert_h1(
    op: &GalerkinOperator,
    mu_now: f64,
    beta_now: f64,
    q_now: &Matrix3<f64>,
) -> Result<DVector<f64>, LinopError> {
    if op.basis.angular_order < 2 {
        return Err(LinopError::Domain("first correction needs angular_order >= 2".into()));
    }
    if !(mu_now.is_finite() && mu_now > 0.0) {
        return Err(LinopError::Domain(format!("collision scale must be positive, got {mu_now}")));
    }
    if !(beta_now.is_finite() && beta_now > 0.0) {
        return Err(LinopError::Domain(format!(
            "inverse temperature must be positive, got {beta_now}"
        )));
    }
    let scale = q_now.amax();
    if q_now.trace().abs() > 1e-12 * scale.max(1.0) {
        return Err(LinopError::Compatibility(format!(
            "driving matrix must be traceless, got trace {:.3e}",
            q_now.trace()
        )));
    }
    let sym = (q_now + q_now.transpose()) / 2.0;
    let dev = sym - Matrix3::identity() * (sym.trace() / 3.0);
    let rhs = basis::quadratic_coeffs(&op.basis, &dev);
    let h = solve_on_w(op, &rhs)?;
    let c0 = PI.powf(-1.5);
    let factor = 2.0 * beta_now.powf(op.kernel.gamma / 2.0) / (c0 * mu_now);
    // L^{-1} = -(-L)^{-1} on the complement of the conserved modes.
    Ok(h * (-factor))
}
