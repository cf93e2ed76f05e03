//! Deformation-matrix families L(t) = A(I+tA)^{-1}: construction, long-time
//! classification into canonical shear/dilatation forms, exact propagation,
//! and the rescaled data (l, L0, mu, Q) used by the solvers.

use crate::{Mat3, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rank decisions on powers of the normalized matrix.
const RANK_TOL: f64 = 1e-9;
/// Geometry guards (orthogonality, kernel overlaps) on unit-scale data.
const GEOM_TOL: f64 = 1e-8;
/// Tolerance for matching the measured long-time form against the canonical one.
const VERIFY_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("zero matrix generates no deformation")]
    DegenerateFlow,
    #[error("deformation degenerates at t = {horizon:.6e}; requested t = {t:.6e}")]
    FiniteHorizon { horizon: f64, t: f64 },
    #[error("no long-time normal form applies: {0}")]
    UnclassifiableFlow(String),
}

/// Row-major 9-number serialization for 3x3 matrices.
pub mod mat9 {
    use crate::Mat3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat3, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat3, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        Ok(Mat3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]))
    }
}

/// Coefficients of det(I + tA) = 1 + c1 t + c2 t^2 + c3 t^3.
///
/// Coefficients below rounding scale are zeroed: the invariants of a matrix
/// assembled from floating-point products (e.g. a rotated nilpotent) carry
/// O(eps) noise that t^k amplifies catastrophically at the large times the
/// classifier probes, and can even fake a finite horizon.
fn det_poly(a: &Mat3) -> [f64; 4] {
    let m = a.amax();
    let c1 = a.trace();
    let minor = |i: usize, j: usize| a[(i, i)] * a[(j, j)] - a[(i, j)] * a[(j, i)];
    let c2 = minor(0, 1) + minor(0, 2) + minor(1, 2);
    let c3 = a.determinant();
    let clean = |c: f64, k: i32| if c.abs() <= 512.0 * f64::EPSILON * m.powi(k) { 0.0 } else { c };
    [1.0, clean(c1, 1), clean(c2, 2), clean(c3, 3)]
}

/// Transpose of the cofactor matrix, so that adjugate(B) = det(B) B^{-1}.
fn adjugate(b: &Mat3) -> Mat3 {
    let c = |i: usize, j: usize| {
        let (r0, r1) = match i {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let (s0, s1) = match j {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * (b[(r0, s0)] * b[(r1, s1)] - b[(r0, s1)] * b[(r1, s0)])
    };
    Mat3::new(c(0, 0), c(1, 0), c(2, 0), c(0, 1), c(1, 1), c(2, 1), c(0, 2), c(1, 2), c(2, 2))
}

/// Real roots of a0 + a1 x + a2 x^2 + a3 x^3, each polished by Newton steps.
/// Coefficients are assumed O(1); degree degradation is handled by thresholds.
fn real_roots_cubic(c: [f64; 4]) -> Vec<f64> {
    let [a0, a1, a2, a3] = c;
    let eval = |x: f64| a0 + x * (a1 + x * (a2 + x * a3));
    let deriv = |x: f64| a1 + x * (2.0 * a2 + x * 3.0 * a3);
    let polish = |mut x: f64| {
        for _ in 0..3 {
            let d = deriv(x);
            if d.abs() > 1e-300 {
                x -= eval(x) / d;
            }
        }
        x
    };
    let mut roots = Vec::new();
    if a3.abs() < 1e-13 {
        if a2.abs() < 1e-13 {
            if a1.abs() > 1e-13 {
                roots.push(-a0 / a1);
            }
            return roots;
        }
        let disc = a1 * a1 - 4.0 * a2 * a0;
        if disc >= 0.0 {
            let q = -0.5 * (a1 + a1.signum() * disc.sqrt());
            if q.abs() > 1e-300 {
                roots.push(q / a2);
                roots.push(a0 / q);
            } else {
                roots.push(0.0);
            }
        }
        return roots.into_iter().map(polish).collect();
    }
    // depressed form x = y - p/3 for y^3 + P y + Q
    let p = a2 / a3;
    let q = a1 / a3;
    let r = a0 / a3;
    let pp = q - p * p / 3.0;
    let qq = 2.0 * p * p * p / 27.0 - p * q / 3.0 + r;
    let disc = -4.0 * pp * pp * pp - 27.0 * qq * qq;
    let scale = (pp.abs().powi(3) + qq.powi(2)).max(1e-300);
    if disc > -1e-10 * scale && pp < 0.0 {
        // three real roots (counting multiplicity): trigonometric form
        let m = 2.0 * (-pp / 3.0).sqrt();
        let arg = (3.0 * qq / (pp * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        for k in 0..3 {
            let y = m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos();
            roots.push(y - p / 3.0);
        }
    } else if pp.abs() < 1e-12 && qq.abs() < 1e-12 {
        roots.push(-p / 3.0);
    } else {
        // one real root: stable Cardano
        let d = (qq * qq / 4.0 + pp * pp * pp / 27.0).max(0.0).sqrt();
        let u = -qq / 2.0 - qq.signum() * d;
        let y = if u.abs() > 1e-300 {
            let a = u.cbrt();
            a - pp / (3.0 * a)
        } else {
            0.0
        };
        roots.push(y - p / 3.0);
    }
    roots.into_iter().map(polish).collect()
}

/// True when the characteristic polynomial of a unit-scale matrix has a
/// complex conjugate pair (discriminant decisively negative).
fn has_complex_pair(ah: &Mat3) -> bool {
    let [_, c1, c2, c3] = det_poly(ah);
    // char poly: l^3 - c1 l^2 + c2 l - c3
    let (b, c, d) = (-c1, c2, -c3);
    let disc = 18.0 * b * c * d - 4.0 * b.powi(3) * d + b.powi(2) * c.powi(2)
        - 4.0 * c.powi(3)
        - 27.0 * d.powi(2);
    let scale = 18.0 * (b * c * d).abs()
        + 4.0 * b.abs().powi(3) * d.abs()
        + (b * c).powi(2)
        + 4.0 * c.abs().powi(3)
        + 27.0 * d.powi(2);
    disc < -1e-10 * scale.max(1.0)
}

/// Singular value decomposition with columns sorted by decreasing singular value.
fn sorted_svd(m: &Mat3) -> (Mat3, [f64; 3], Mat3) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with vectors");
    let v = svd.v_t.expect("svd with vectors").transpose();
    let s = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let mut us = Mat3::zeros();
    let mut vs = Mat3::zeros();
    let mut ss = [0.0; 3];
    for (out, &i) in idx.iter().enumerate() {
        us.set_column(out, &u.column(i));
        vs.set_column(out, &v.column(i));
        ss[out] = s[i];
    }
    (us, ss, vs)
}

/// The deformation family L(t) = A(I+tA)^{-1} for one generating matrix A.
#[derive(Debug, Clone)]
pub struct FlowPath {
    a: Mat3,
    horizon: f64,
    // det(I + sAh) coefficients for the unit-scale Ah = A/m
    poly: [f64; 4],
    m: f64,
}

impl FlowPath {
    pub fn new(a: Mat3) -> Result<Self, FlowError> {
        if !a.iter().all(|x| x.is_finite()) || a.amax() == 0.0 {
            return Err(FlowError::DegenerateFlow);
        }
        let m = a.amax();
        let ah = a / m;
        let poly = det_poly(&ah);
        let horizon = real_roots_cubic(poly)
            .into_iter()
            .filter(|&s| s > 1e-10)
            .fold(f64::INFINITY, f64::min)
            / m;
        Ok(Self { a, horizon, poly, m })
    }

    pub fn a(&self) -> &Mat3 {
        &self.a
    }

    /// Largest T such that det(I+tA) > 0 on [0, T).
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn check(&self, t: f64) -> Result<(), FlowError> {
        if t >= self.horizon {
            return Err(FlowError::FiniteHorizon { horizon: self.horizon, t });
        }
        Ok(())
    }

    /// det(I + tA), positive below the horizon.
    pub fn growth(&self, t: f64) -> f64 {
        let s = t * self.m;
        let [c0, c1, c2, c3] = self.poly;
        c0 + s * (c1 + s * (c2 + s * c3))
    }

    /// L(t) = A(I+tA)^{-1}, computed as A adj(I+tA)/det(I+tA) so that the
    /// determinant comes from the cleaned invariants rather than entrywise
    /// elimination.
    pub fn l_at(&self, t: f64) -> Result<Mat3, FlowError> {
        self.check(t)?;
        let b = Mat3::identity() + t * self.a;
        Ok(self.a * adjugate(&b) / self.growth(t))
    }

    /// Closed form of the accumulated trace, log det(I+tA).
    pub fn trace_integral(&self, t: f64) -> Result<f64, FlowError> {
        self.check(t)?;
        Ok(self.growth(t).ln())
    }

    /// Density transported by the flow: rho0 / det(I+tA).
    pub fn density(&self, rho0: f64, t: f64) -> Result<f64, FlowError> {
        self.check(t)?;
        Ok(rho0 / self.growth(t))
    }

    /// Exact solution operator of dw/dt = -L(t)w from t0 to t1.
    pub fn propagator(&self, t0: f64, t1: f64) -> Result<Mat3, FlowError> {
        self.check(t0)?;
        self.check(t1)?;
        let b1 = Mat3::identity() + t1 * self.a;
        Ok(adjugate(&b1) * (Mat3::identity() + t0 * self.a) / self.growth(t1))
    }

    pub fn propagate(&self, t0: f64, t1: f64, w: Vec3) -> Result<Vec3, FlowError> {
        Ok(self.propagator(t0, t1)? * w)
    }
}

/// Canonical long-time classes of the deformation families, with their
/// dimensionless shear constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum FlowClass {
    HomogeneousDilatation,
    CylindricalDilatation,
    CylindricalDilatationShear { k: f64 },
    PlanarShear { k: f64 },
    SimpleShear { k: f64 },
    SimpleShearDecayingDilatation { k1: f64, k2: f64, k3: f64 },
    CombinedOrthogonalShear { k1: f64, k2: f64, k3: f64 },
}

/// Time-scale factor l(t) entering L(t) = l(t) Q(tau).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    /// l = 1/(t+1), tau = log(t+1)
    Inverse,
    /// l = 1, tau = t
    Constant,
    /// l = t+1, tau = t + t^2/2
    Linear,
}

impl TimeScale {
    pub fn l_of_t(self, t: f64) -> f64 {
        match self {
            TimeScale::Inverse => 1.0 / (1.0 + t),
            TimeScale::Constant => 1.0,
            TimeScale::Linear => 1.0 + t,
        }
    }

    pub fn tau_of_t(self, t: f64) -> f64 {
        match self {
            TimeScale::Inverse => t.ln_1p(),
            TimeScale::Constant => t,
            TimeScale::Linear => t + 0.5 * t * t,
        }
    }

    pub fn t_of_tau(self, tau: f64) -> f64 {
        match self {
            TimeScale::Inverse => tau.exp_m1(),
            TimeScale::Constant => tau,
            TimeScale::Linear => 2.0 * tau / (1.0 + (1.0 + 2.0 * tau).sqrt()),
        }
    }
}

impl FlowClass {
    /// Generating matrix of the canonical representative (identity basis).
    pub fn canonical_matrix(&self) -> Mat3 {
        match *self {
            FlowClass::HomogeneousDilatation => Mat3::identity(),
            FlowClass::CylindricalDilatation => Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
            FlowClass::CylindricalDilatationShear { k } => {
                Mat3::new(1.0, 0.0, k, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
            }
            FlowClass::PlanarShear { k } => Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, k, 0.0, 0.0, 1.0),
            FlowClass::SimpleShear { k } => Mat3::new(0.0, k, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            FlowClass::SimpleShearDecayingDilatation { k1, k2, k3 } => {
                // K2 e1 e2^T plus the rank-one idempotent (k1,0,1)(0,k3,1)^T
                Mat3::new(0.0, k2 + k1 * k3, k1, 0.0, 0.0, 0.0, 0.0, k3, 1.0)
            }
            FlowClass::CombinedOrthogonalShear { k1, k2, k3 } => {
                Mat3::new(0.0, k3, k2, 0.0, 0.0, k1, 0.0, 0.0, 0.0)
            }
        }
    }

    pub fn time_scale(&self) -> TimeScale {
        match self {
            FlowClass::HomogeneousDilatation
            | FlowClass::CylindricalDilatation
            | FlowClass::CylindricalDilatationShear { .. }
            | FlowClass::PlanarShear { .. } => TimeScale::Inverse,
            FlowClass::SimpleShear { .. } | FlowClass::SimpleShearDecayingDilatation { .. } => {
                TimeScale::Constant
            }
            FlowClass::CombinedOrthogonalShear { .. } => TimeScale::Linear,
        }
    }

    /// Limit matrix L0 = lim Q(tau).
    pub fn l0(&self) -> Mat3 {
        match *self {
            FlowClass::HomogeneousDilatation => Mat3::identity(),
            FlowClass::CylindricalDilatation => self.canonical_matrix(),
            FlowClass::CylindricalDilatationShear { .. } => self.canonical_matrix(),
            FlowClass::PlanarShear { .. } => self.canonical_matrix(),
            FlowClass::SimpleShear { .. } => self.canonical_matrix(),
            FlowClass::SimpleShearDecayingDilatation { k2, .. } => {
                Mat3::new(0.0, k2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
            }
            FlowClass::CombinedOrthogonalShear { k1, k3, .. } => {
                Mat3::new(0.0, 0.0, -k1 * k3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
            }
        }
    }

    /// Nondegeneracy requirements on the shear constants.
    pub fn validate(&self) -> Result<(), String> {
        let finite = match *self {
            FlowClass::CylindricalDilatationShear { k } | FlowClass::PlanarShear { k } | FlowClass::SimpleShear { k } => k.is_finite(),
            FlowClass::SimpleShearDecayingDilatation { k1, k2, k3 }
            | FlowClass::CombinedOrthogonalShear { k1, k2, k3 } => {
                k1.is_finite() && k2.is_finite() && k3.is_finite()
            }
            _ => true,
        };
        if !finite {
            return Err("shear constants must be finite".into());
        }
        match *self {
            FlowClass::CylindricalDilatationShear { k } if k == 0.0 => {
                Err("cylindrical dilatation with shear requires k != 0".into())
            }
            FlowClass::SimpleShear { k } if k == 0.0 => Err("simple shear requires k != 0".into()),
            FlowClass::SimpleShearDecayingDilatation { k2, .. } if k2 == 0.0 => {
                Err("shear with decaying dilatation requires k2 != 0".into())
            }
            FlowClass::CombinedOrthogonalShear { k1, k3, .. } if k1 * k3 == 0.0 => {
                Err("combined orthogonal shear requires k1*k3 != 0".into())
            }
            _ => Ok(()),
        }
    }
}

/// A classified flow: class constants plus the orthonormal basis in which the
/// canonical form is realized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowCase {
    #[serde(flatten)]
    pub class: FlowClass,
    #[serde(with = "mat9")]
    pub basis: Mat3,
}

impl FlowCase {
    pub fn canonical(class: FlowClass) -> Self {
        Self { class, basis: Mat3::identity() }
    }

    /// Canonical-frame flow path for this class.
    pub fn flow(&self) -> FlowPath {
        FlowPath::new(self.class.canonical_matrix()).expect("canonical matrix nonzero")
    }

    pub fn decomposition(&self) -> ScaledDecomposition {
        ScaledDecomposition::new(self.class.clone())
    }
}

/// Rescaled description L(t) = l(t) Q(tau) with collision-rate factor
/// mu(tau) = 1/(l(t) det(I+tA)); all quantities in the canonical frame.
#[derive(Debug, Clone)]
pub struct ScaledDecomposition {
    pub class: FlowClass,
    pub scale: TimeScale,
    pub l0: Mat3,
    flow: FlowPath,
}

impl ScaledDecomposition {
    pub fn new(class: FlowClass) -> Self {
        let scale = class.time_scale();
        let l0 = class.l0();
        let flow = FlowPath::new(class.canonical_matrix()).expect("canonical matrix nonzero");
        Self { class, scale, l0, flow }
    }

    pub fn tau_of_t(&self, t: f64) -> f64 {
        self.scale.tau_of_t(t)
    }

    pub fn t_of_tau(&self, tau: f64) -> f64 {
        self.scale.t_of_tau(tau)
    }

    pub fn mu_at_tau(&self, tau: f64) -> f64 {
        let t = self.t_of_tau(tau);
        1.0 / (self.scale.l_of_t(t) * self.flow.growth(t))
    }

    /// Q(tau) = L(t)/l(t) in closed form. Every canonical class admits one
    /// (the generating matrices are idempotent, nilpotent, or a commuting sum
    /// of both), and the closed form stays exact at times where the generic
    /// rescaled inverse would lose all precision.
    pub fn q_at_tau(&self, tau: f64) -> Mat3 {
        let a = self.class.canonical_matrix();
        match self.class {
            FlowClass::HomogeneousDilatation
            | FlowClass::CylindricalDilatation
            | FlowClass::CylindricalDilatationShear { .. }
            | FlowClass::PlanarShear { .. }
            | FlowClass::SimpleShear { .. } => a,
            FlowClass::SimpleShearDecayingDilatation { .. } => {
                self.l0 + (a - self.l0) / (1.0 + tau)
            }
            FlowClass::CombinedOrthogonalShear { .. } => {
                let t = self.t_of_tau(tau);
                (a - t * a * a) / (1.0 + t)
            }
        }
    }

    /// Exact solution operator of dw/dtau = -Q(tau)w.
    pub fn propagator_tau(&self, tau0: f64, tau1: f64) -> Mat3 {
        self.flow
            .propagator(self.t_of_tau(tau0), self.t_of_tau(tau1))
            .expect("infinite horizon")
    }
}

/// Orthonormal completion: unit vectors (a, b) with b = u x a.
fn complete_frame(u: &Vec3) -> (Vec3, Vec3) {
    let trial = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = (trial - u * u.dot(&trial)).normalize();
    let b = u.cross(&a);
    (a, b)
}

fn basis_from(u1: Vec3, u2: Vec3, u3: Vec3) -> Mat3 {
    Mat3::from_columns(&[u1, u2, u3])
}

/// Classify an infinite-horizon flow into its canonical long-time class.
/// The returned basis columns (u1,u2,u3) realize the canonical form.
pub fn classify(flow: &FlowPath) -> Result<FlowCase, FlowError> {
    if flow.horizon.is_finite() {
        return Err(FlowError::FiniteHorizon { horizon: flow.horizon, t: f64::INFINITY });
    }
    let a = flow.a;
    let m = a.amax();
    let ah = a / m;
    if has_complex_pair(&ah) {
        return Err(FlowError::UnclassifiableFlow(
            "matrix has a complex eigenvalue pair".into(),
        ));
    }
    let a3h = ah * ah * ah;
    let (u3m, s3, v3m) = sorted_svd(&a3h);
    let positive = s3.iter().filter(|&&s| s > RANK_TOL).count();

    let case = match positive {
        3 => FlowCase::canonical(FlowClass::HomogeneousDilatation),
        2 => classify_cylindrical(&ah, &u3m)?,
        1 => classify_rank_one_positive(&a, &ah, &v3m)?,
        _ => classify_nilpotent(&a, &ah)?,
    };
    verify_canonical_form(flow, &case, m)?;
    Ok(case)
}

/// Two positive eigenvalues, simple zero: cylindrical dilatation, possibly sheared.
fn classify_cylindrical(ah: &Mat3, u3m: &Mat3) -> Result<FlowCase, FlowError> {
    let u3: Vec3 = u3m.column(2).into_owned();
    let (_, sa, va) = sorted_svd(ah);
    if sa[2] > GEOM_TOL * sa[0] {
        return Err(FlowError::UnclassifiableFlow("kernel direction not resolved".into()));
    }
    let k: Vec3 = va.column(2).into_owned();
    let d = u3.dot(&k);
    if d.abs() < GEOM_TOL {
        return Err(FlowError::UnclassifiableFlow("kernel grazes the expanding plane".into()));
    }
    let x = u3 - k / d;
    let kk = x.norm();
    if kk <= GEOM_TOL {
        let u1: Vec3 = u3m.column(0).into_owned();
        let u2 = u3.cross(&u1);
        Ok(FlowCase { class: FlowClass::CylindricalDilatation, basis: basis_from(u1, u2, u3) })
    } else {
        let u1 = x / kk;
        let u2 = u3.cross(&u1);
        Ok(FlowCase {
            class: FlowClass::CylindricalDilatationShear { k: kk },
            basis: basis_from(u1, u2, u3),
        })
    }
}

/// One positive eigenvalue, double zero: planar shear when the doubled kernel
/// is inert, decaying-dilatation shear when it carries a nilpotent block.
fn classify_rank_one_positive(a: &Mat3, ah: &Mat3, v3m: &Mat3) -> Result<FlowCase, FlowError> {
    let lambda = ah.trace();
    if lambda <= RANK_TOL {
        return Err(FlowError::UnclassifiableFlow("positive eigenvalue not resolved".into()));
    }
    // generalized kernel = right null space of ah^3
    let g1: Vec3 = v3m.column(1).into_owned();
    let g2: Vec3 = v3m.column(2).into_owned();
    let nilpotent = (ah * g1).norm().max((ah * g2).norm()) > GEOM_TOL;
    if !nilpotent {
        // rank-one A: basis from its row and column spaces
        let (_, sa, va) = sorted_svd(ah);
        if sa[1] > GEOM_TOL * sa[0] {
            return Err(FlowError::UnclassifiableFlow("inert kernel but rank exceeds one".into()));
        }
        let u3: Vec3 = va.column(0).into_owned();
        let x = ah * u3 / lambda;
        if (x.dot(&u3) - 1.0).abs() > 1e-6 {
            return Err(FlowError::UnclassifiableFlow("eigenprojector geometry failed".into()));
        }
        let y = u3 - x;
        let kk = y.norm();
        if kk <= GEOM_TOL {
            let (u1, u2) = complete_frame(&u3);
            return Ok(FlowCase { class: FlowClass::PlanarShear { k: 0.0 }, basis: basis_from(u1, u2, u3) });
        }
        let u2 = -y / kk;
        let u1 = u2.cross(&u3);
        return Ok(FlowCase { class: FlowClass::PlanarShear { k: kk }, basis: basis_from(u1, u2, u3) });
    }

    // eigenvectors of the simple positive eigenvalue, both sides
    let (_, _, ve) = sorted_svd(&(ah - lambda * Mat3::identity()));
    let v: Vec3 = ve.column(2).into_owned();
    let (_, _, vf) = sorted_svd(&(ah - lambda * Mat3::identity()).transpose());
    let phi: Vec3 = vf.column(2).into_owned();
    let fv = phi.dot(&v);
    if fv.abs() < GEOM_TOL {
        return Err(FlowError::UnclassifiableFlow("spectral projector not resolved".into()));
    }
    let proj0 = Mat3::identity() - v * phi.transpose() / fv;
    let linf = a * proj0;
    let (ul, sl, vl) = sorted_svd(&linf);
    if sl[0] <= GEOM_TOL * a.amax() || sl[1] > GEOM_TOL * sl[0] {
        return Err(FlowError::UnclassifiableFlow("limit shear block is not rank one".into()));
    }
    let mut u1: Vec3 = ul.column(0).into_owned();
    let mut u2: Vec3 = vl.column(0).into_owned();
    if u1.dot(&u2).abs() > 1e-6 {
        return Err(FlowError::UnclassifiableFlow("limit shear block is not nilpotent".into()));
    }
    let k2 = sl[0];
    let mut u3 = u1.cross(&u2);
    let dv = u3.dot(&v);
    let dphi = u3.dot(&phi);
    if dv.abs() < GEOM_TOL * v.norm() || dphi.abs() < GEOM_TOL * phi.norm() {
        return Err(FlowError::UnclassifiableFlow("eigenvector grazes the shear plane".into()));
    }
    if u2.dot(&v).abs() > 1e-6 * v.norm() || u1.dot(&phi).abs() > 1e-6 * phi.norm() {
        return Err(FlowError::UnclassifiableFlow("shear plane misaligned with eigenvectors".into()));
    }
    let mut k1 = u1.dot(&v) / dv;
    let mut k3 = u2.dot(&phi) / dphi;
    // the only constant-preserving freedom flips (k1,k3) jointly
    if k1 < -GEOM_TOL || (k1.abs() <= GEOM_TOL && k3 < 0.0) {
        u1 = -u1;
        u2 = -u2;
        u3 = u1.cross(&u2);
        k1 = -k1;
        k3 = -k3;
    }
    Ok(FlowCase {
        class: FlowClass::SimpleShearDecayingDilatation { k1, k2, k3 },
        basis: basis_from(u1, u2, u3),
    })
}

/// All eigenvalues zero: simple shear (index two) or combined orthogonal
/// shear (index three).
fn classify_nilpotent(a: &Mat3, ah: &Mat3) -> Result<FlowCase, FlowError> {
    let a2h = ah * ah;
    if a2h.amax() <= GEOM_TOL {
        let (ua, sa, va) = sorted_svd(a);
        if sa[1] > GEOM_TOL * sa[0] {
            return Err(FlowError::UnclassifiableFlow("index-two block is not rank one".into()));
        }
        let u1: Vec3 = ua.column(0).into_owned();
        let u2: Vec3 = va.column(0).into_owned();
        if u1.dot(&u2).abs() > 1e-6 {
            return Err(FlowError::UnclassifiableFlow("shear block is not nilpotent".into()));
        }
        let u3 = u1.cross(&u2);
        return Ok(FlowCase { class: FlowClass::SimpleShear { k: sa[0] }, basis: basis_from(u1, u2, u3) });
    }

    let (_, sa, va) = sorted_svd(ah);
    if sa[1] <= GEOM_TOL * sa[0] {
        return Err(FlowError::UnclassifiableFlow("index-three block has deficient rank".into()));
    }
    let mut u1: Vec3 = va.column(2).into_owned();
    let (_, _, v2) = sorted_svd(&a2h);
    // kernel of ah^2 is two dimensional; take its component orthogonal to u1
    let c1: Vec3 = v2.column(1).into_owned();
    let c2: Vec3 = v2.column(2).into_owned();
    let r1 = c1 - u1 * u1.dot(&c1);
    let r2 = c2 - u1 * u1.dot(&c2);
    let raw = if r1.norm() >= r2.norm() { r1 } else { r2 };
    if raw.norm() < GEOM_TOL {
        return Err(FlowError::UnclassifiableFlow("second kernel direction not resolved".into()));
    }
    let mut u2 = raw.normalize();
    let mut u3 = u1.cross(&u2);
    let consts = |u1: &Vec3, u2: &Vec3, u3: &Vec3| {
        (u2.dot(&(a * u3)), u1.dot(&(a * u3)), u1.dot(&(a * u2)))
    };
    let (mut k1, _, _) = consts(&u1, &u2, &u3);
    if k1 < 0.0 {
        u1 = -u1;
        u3 = u1.cross(&u2);
    }
    let (_, k2, _) = consts(&u1, &u2, &u3);
    let scale = a.amax();
    if k2 < -GEOM_TOL * scale {
        u2 = -u2;
        u3 = u1.cross(&u2);
    } else if k2.abs() <= GEOM_TOL * scale {
        let (_, _, k3now) = consts(&u1, &u2, &u3);
        if k3now < 0.0 {
            u2 = -u2;
            u3 = u1.cross(&u2);
        }
    }
    let (k1f, k2f, k3f) = consts(&u1, &u2, &u3);
    k1 = k1f;
    if k1.abs() <= GEOM_TOL * scale || k3f.abs() <= GEOM_TOL * scale {
        return Err(FlowError::UnclassifiableFlow("index-three shear constants degenerate".into()));
    }
    Ok(FlowCase {
        class: FlowClass::CombinedOrthogonalShear { k1, k2: k2f, k3: k3f },
        basis: basis_from(u1, u2, u3),
    })
}

/// Compare the measured long-time form of P^T L(t) P against the canonical
/// pattern of the proposed class, using two late times and eliminating the
/// first subleading order where the limit is approached algebraically.
fn verify_canonical_form(flow: &FlowPath, case: &FlowCase, m: f64) -> Result<(), FlowError> {
    let p = case.basis;
    let d_at = |t: f64| p.transpose() * flow.l_at(t).expect("below horizon") * p;
    let check = |measured: Mat3, expected: Mat3, reference: f64| -> Result<(), FlowError> {
        let scale = expected.amax().max(reference);
        if (measured - expected).amax() <= VERIFY_TOL * scale {
            Ok(())
        } else {
            Err(FlowError::UnclassifiableFlow(format!(
                "long-time form mismatch: residual {:.3e} exceeds {:.3e}",
                (measured - expected).amax(),
                VERIFY_TOL * scale
            )))
        }
    };
    // two-point elimination of the 1/t correction: for f(t) = F + c/t,
    // (t2 f2 - t1 f1)/(t2 - t1) recovers F
    let eliminate = |f1: Mat3, t1: f64, f2: Mat3, t2: f64| (f2 * t2 - f1 * t1) / (t2 - t1);
    let t1 = 1e3 / m;
    let t2 = 1e6 / m;
    match case.class {
        FlowClass::HomogeneousDilatation
        | FlowClass::CylindricalDilatation
        | FlowClass::CylindricalDilatationShear { .. }
        | FlowClass::PlanarShear { .. } => {
            // t L(t) tends to a dimensionless projector-like pattern
            let mr = eliminate(d_at(t1) * t1, t1, d_at(t2) * t2, t2);
            let expected = match case.class {
                FlowClass::HomogeneousDilatation => Mat3::identity(),
                FlowClass::CylindricalDilatation => {
                    Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
                }
                FlowClass::CylindricalDilatationShear { k } => {
                    Mat3::new(1.0, 0.0, k, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
                }
                FlowClass::PlanarShear { k } => Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, k, 0.0, 0.0, 1.0),
                _ => unreachable!(),
            };
            check(mr, expected, 1.0)
        }
        FlowClass::SimpleShear { k } => {
            let expected = Mat3::new(0.0, k, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            check(d_at(t1), expected, m).and(check(d_at(t2), expected, m))
        }
        FlowClass::SimpleShearDecayingDilatation { k1, k2, k3 } => {
            // shorter probe times: the subleading extraction multiplies the
            // measurement error by t2, so very late probes lose accuracy
            let (t1, t2) = (1e2 / m, 1e4 / m);
            let (d1, d2) = (d_at(t1), d_at(t2));
            let expected0 = Mat3::new(0.0, k2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            check(eliminate(d1, t1, d2, t2), expected0, m)?;
            let l1 = eliminate((d1 - expected0) * t1, t1, (d2 - expected0) * t2, t2);
            let expected1 = Mat3::new(0.0, k1 * k3, k1, 0.0, 0.0, 0.0, 0.0, k3, 1.0);
            check(l1, expected1, 1.0)
        }
        FlowClass::CombinedOrthogonalShear { k1, k2, k3 } => {
            // exact for nilpotent generators: L(t) = A - tA^2
            let expect_at =
                |t: f64| Mat3::new(0.0, k3, k2 - t * k1 * k3, 0.0, 0.0, k1, 0.0, 0.0, 0.0);
            check(d_at(t1), expect_at(t1), m).and(check(d_at(t2), expect_at(t2), m))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    fn rot(axis: Vec3, angle: f64) -> Mat3 {
        *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    }

    #[test]
    fn horizon_examples() {
        let f = FlowPath::new(Mat3::identity()).unwrap();
        assert_eq!(f.horizon(), f64::INFINITY);
        let f = FlowPath::new(-Mat3::identity()).unwrap();
        assert_relative_eq!(f.horizon(), 1.0, max_relative = 1e-12);
        let f = FlowPath::new(Mat3::from_diagonal(&Vec3::new(-1.0, 2.0, 0.0))).unwrap();
        assert_relative_eq!(f.horizon(), 1.0, max_relative = 1e-12);
        let f = FlowPath::new(Mat3::new(0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(f.horizon(), f64::INFINITY);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        assert!(matches!(FlowPath::new(Mat3::zeros()), Err(FlowError::DegenerateFlow)));
    }

    #[test]
    fn identity_flow_is_scalar() {
        let f = FlowPath::new(Mat3::identity()).unwrap();
        for &t in &[0.0, 0.5, 3.0, 100.0] {
            let l = f.l_at(t).unwrap();
            assert_relative_eq!(l[(0, 0)], 1.0 / (1.0 + t), max_relative = 1e-14);
            assert!((l - Mat3::identity() / (1.0 + t)).amax() < 1e-14);
        }
    }

    #[test]
    fn riccati_residual_small() {
        let cases = vec![
            Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0)),
            Mat3::new(0.0, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            Mat3::new(0.0, 0.7, -0.3, 0.0, 0.0, 1.2, 0.0, 0.0, 0.0),
            rot(Vec3::new(1.0, 2.0, 0.5), 0.8)
                * Mat3::new(1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
                * rot(Vec3::new(1.0, 2.0, 0.5), 0.8).transpose(),
        ];
        for a in cases {
            let f = FlowPath::new(a).unwrap();
            for &t in &[0.1, 1.0, 7.0] {
                let h = 1e-5 * (1.0 + t);
                let dl = (f.l_at(t + h).unwrap() - f.l_at(t - h).unwrap()) / (2.0 * h);
                let l = f.l_at(t).unwrap();
                let resid = (dl + l * l).norm();
                assert!(resid <= 1e-6 * l.norm_squared().max(1e-12), "residual {resid}");
            }
        }
    }

    #[test]
    fn propagator_composition_and_identity() {
        let a = Mat3::new(0.3, 0.7, -0.2, 0.0, 0.5, 1.0, 0.0, 0.0, 0.9);
        let f = FlowPath::new(a).unwrap();
        let p = f.propagator(0.4, 2.0).unwrap() * f.propagator(0.0, 0.4).unwrap();
        let q = f.propagator(0.0, 2.0).unwrap();
        assert!((p - q).amax() <= 1e-12 * q.amax());
        assert!((f.propagator(1.3, 1.3).unwrap() - Mat3::identity()).amax() <= 1e-14);
    }

    #[test]
    fn propagator_derivative_matches_generator() {
        let a = Mat3::new(0.3, 0.7, -0.2, 0.0, 0.5, 1.0, 0.0, 0.0, 0.9);
        let f = FlowPath::new(a).unwrap();
        let w = Vec3::new(1.0, -2.0, 0.5);
        let t = 1.2;
        let l = f.l_at(t).unwrap();
        // two-step Richardson extrapolation of the forward difference
        let d = |h: f64| (f.propagate(t, t + h, w).unwrap() - w) / h;
        let extrap = d(1e-4) * 2.0 - d(2e-4);
        assert!((extrap + l * w).norm() <= 1e-6 * (l * w).norm());
    }

    #[test]
    fn density_matches_trace_quadrature() {
        let a = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0));
        let f = FlowPath::new(a).unwrap();
        let t_end = 1.0;
        // Simpson quadrature of Tr L against the closed form
        let n = 2000;
        let h = t_end / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let t0 = i as f64 * h;
            let tr = |t: f64| f.l_at(t).unwrap().trace();
            acc += h / 6.0 * (tr(t0) + 4.0 * tr(t0 + 0.5 * h) + tr(t0 + h));
        }
        assert_relative_eq!((-acc).exp(), f.density(1.0, t_end).unwrap(), max_relative = 1e-10);
        assert_relative_eq!(f.density(1.0, 1.0).unwrap(), 0.25, max_relative = 1e-12);
        let fi = FlowPath::new(Mat3::identity()).unwrap();
        assert_relative_eq!(fi.density(1.0, 1.0).unwrap(), 0.125, max_relative = 1e-12);
    }

    #[test]
    fn density_det_product_constant() {
        let a = Mat3::new(1.0, 0.4, 0.0, 0.0, 0.8, 0.2, 0.0, 0.0, 0.3);
        let f = FlowPath::new(a).unwrap();
        for &t in &[0.0, 0.5, 2.0, 9.0] {
            let prod = f.density(2.5, t).unwrap() * f.growth(t);
            assert_relative_eq!(prod, 2.5, max_relative = 1e-10);
        }
    }

    #[test]
    fn simple_shear_propagation_is_affine() {
        let k = 1.7;
        let f = FlowPath::new(Mat3::new(0.0, k, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        let w = Vec3::new(0.4, -1.1, 2.0);
        let t = 3.3;
        let out = f.propagate(0.0, t, w).unwrap();
        assert_relative_eq!(out.x, w.x - k * t * w.y, max_relative = 1e-13);
        assert_relative_eq!(out.y, w.y, max_relative = 1e-13);
        assert_relative_eq!(out.z, w.z, max_relative = 1e-13);
    }

    #[test]
    fn combined_shear_propagation_closed_form() {
        let (k1, k2, k3) = (0.8, 0.6, 1.3);
        let a = FlowClass::CombinedOrthogonalShear { k1, k2, k3 }.canonical_matrix();
        let f = FlowPath::new(a).unwrap();
        let w = Vec3::new(0.0, 0.0, 1.0);
        for &t in &[0.5, 2.0, 10.0] {
            let out = f.propagate(0.0, t, w).unwrap();
            assert_relative_eq!(out.x, -k2 * t + k1 * k3 * t * t, max_relative = 1e-12);
            assert_relative_eq!(out.y, -k1 * t, max_relative = 1e-12);
            assert_relative_eq!(out.z, 1.0, max_relative = 1e-12);
        }
    }

    /// Fixed-step fourth-order integration of dw/dt = -L(t)w.
    fn integrate_ode(f: &FlowPath, t0: f64, t1: f64, w0: Vec3, steps: usize) -> Vec3 {
        let h = (t1 - t0) / steps as f64;
        let mut w = w0;
        let mut t = t0;
        let rhs = |t: f64, w: Vec3| -(f.l_at(t).unwrap() * w);
        for _ in 0..steps {
            let k1 = rhs(t, w);
            let k2 = rhs(t + 0.5 * h, w + 0.5 * h * k1);
            let k3 = rhs(t + 0.5 * h, w + 0.5 * h * k2);
            let k4 = rhs(t + h, w + h * k3);
            w += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        w
    }

    #[test]
    fn propagate_matches_ode_integration() {
        let r = rot(Vec3::new(0.3, 1.0, -0.6), 1.1);
        let canon = FlowClass::CombinedOrthogonalShear { k1: 1.0, k2: 0.5, k3: 0.9 }.canonical_matrix();
        let cases = vec![
            canon,
            r * canon * r.transpose(),
            Mat3::from_diagonal(&Vec3::new(1.0, 0.5, 0.0)),
        ];
        for a in cases {
            let f = FlowPath::new(a).unwrap();
            let w0 = Vec3::new(1.0, -0.4, 0.7);
            let exact = f.propagate(0.0, 2.0, w0).unwrap();
            let numeric = integrate_ode(&f, 0.0, 2.0, w0, 20000);
            assert!((exact - numeric).norm() <= 1e-10 * exact.norm().max(1.0));
        }
    }

    fn classify_a(a: Mat3) -> FlowCase {
        classify(&FlowPath::new(a).unwrap()).unwrap()
    }

    #[test]
    fn classify_canonical_fixtures() {
        let c = classify_a(Mat3::identity());
        assert_eq!(c.class, FlowClass::HomogeneousDilatation);

        let c = classify_a(Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0)));
        assert_eq!(c.class, FlowClass::CylindricalDilatation);

        let c = classify_a(Mat3::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0));
        match c.class {
            FlowClass::CylindricalDilatationShear { k } => assert_relative_eq!(k, 1.0, epsilon = 1e-9),
            other => panic!("wrong class {other:?}"),
        }

        let c = classify_a(Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 1.0));
        match c.class {
            FlowClass::PlanarShear { k } => assert_relative_eq!(k, 2.0, epsilon = 1e-9),
            other => panic!("wrong class {other:?}"),
        }

        let c = classify_a(Mat3::new(0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        match c.class {
            FlowClass::SimpleShear { k } => assert_relative_eq!(k, 2.0, epsilon = 1e-9),
            other => panic!("wrong class {other:?}"),
        }

        let gen = FlowClass::SimpleShearDecayingDilatation { k1: 0.7, k2: 1.4, k3: -0.5 };
        let c = classify_a(gen.canonical_matrix());
        match c.class {
            FlowClass::SimpleShearDecayingDilatation { k1, k2, k3 } => {
                assert_relative_eq!(k1, 0.7, epsilon = 1e-7);
                assert_relative_eq!(k2, 1.4, epsilon = 1e-7);
                assert_relative_eq!(k3, -0.5, epsilon = 1e-7);
            }
            other => panic!("wrong class {other:?}"),
        }

        let gen = FlowClass::CombinedOrthogonalShear { k1: 1.0, k2: 0.0, k3: 1.0 };
        let c = classify_a(gen.canonical_matrix());
        match c.class {
            FlowClass::CombinedOrthogonalShear { k1, k2, k3 } => {
                assert_relative_eq!(k1, 1.0, epsilon = 1e-8);
                assert!(k2.abs() < 1e-8);
                assert_relative_eq!(k3, 1.0, epsilon = 1e-8);
            }
            other => panic!("wrong class {other:?}"),
        }
    }

    #[test]
    fn classify_non_normal_planar_shear() {
        // rank-one idempotent away from its canonical frame
        let a = Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0);
        let c = classify_a(a);
        match c.class {
            FlowClass::PlanarShear { k } => assert_relative_eq!(k, 1.0, epsilon = 1e-7),
            other => panic!("wrong class {other:?}"),
        }
    }

    #[test]
    fn classify_spectrum_beats_jordan_details() {
        // distinct positive eigenvalues still give homogeneous dilatation
        let c = classify_a(Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(c.class, FlowClass::HomogeneousDilatation);
        let c = classify_a(Mat3::from_diagonal(&Vec3::new(2.0, 3.0, 0.0)));
        assert_eq!(c.class, FlowClass::CylindricalDilatation);
    }

    #[test]
    fn classify_is_rotation_invariant() {
        let rotations = vec![
            rot(Vec3::new(1.0, 0.0, 0.0), 0.7),
            rot(Vec3::new(0.2, -1.0, 0.4), 2.1),
            rot(Vec3::new(1.0, 1.0, 1.0), -0.9),
        ];
        let generators = vec![
            FlowClass::SimpleShear { k: 1.5 },
            FlowClass::CylindricalDilatationShear { k: 0.8 },
            FlowClass::PlanarShear { k: 2.0 },
            FlowClass::SimpleShearDecayingDilatation { k1: 0.7, k2: 1.4, k3: -0.5 },
            FlowClass::CombinedOrthogonalShear { k1: 1.2, k2: 0.4, k3: 0.9 },
        ];
        for g in &generators {
            let a = g.canonical_matrix();
            for r in &rotations {
                let c = classify_a(r * a * r.transpose());
                match (&c.class, g) {
                    (FlowClass::SimpleShear { k }, FlowClass::SimpleShear { k: k0 }) => {
                        assert_relative_eq!(*k, *k0, epsilon = 1e-7)
                    }
                    (
                        FlowClass::CylindricalDilatationShear { k },
                        FlowClass::CylindricalDilatationShear { k: k0 },
                    ) => assert_relative_eq!(*k, *k0, epsilon = 1e-6),
                    (FlowClass::PlanarShear { k }, FlowClass::PlanarShear { k: k0 }) => {
                        assert_relative_eq!(*k, *k0, epsilon = 1e-6)
                    }
                    (
                        FlowClass::SimpleShearDecayingDilatation { k1, k2, k3 },
                        FlowClass::SimpleShearDecayingDilatation { k1: a1, k2: a2, k3: a3 },
                    ) => {
                        assert_relative_eq!(*k1, *a1, epsilon = 1e-6);
                        assert_relative_eq!(*k2, *a2, epsilon = 1e-6);
                        assert_relative_eq!(*k3, *a3, epsilon = 1e-6);
                    }
                    (
                        FlowClass::CombinedOrthogonalShear { k1, k2, k3 },
                        FlowClass::CombinedOrthogonalShear { k1: a1, k2: a2, k3: a3 },
                    ) => {
                        assert_relative_eq!(*k1, *a1, epsilon = 1e-6);
                        assert_relative_eq!(*k2, *a2, epsilon = 1e-6);
                        assert_relative_eq!(*k3, *a3, epsilon = 1e-6);
                    }
                    (got, want) => panic!("class changed under rotation: {got:?} vs {want:?}"),
                }
                // the returned basis must realize the canonical matrix asymptotically;
                // verify_canonical_form already enforced it inside classify
                assert!((c.basis.transpose() * c.basis - Mat3::identity()).amax() < 1e-10);
                assert_relative_eq!(c.basis.determinant(), 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn classify_rejects_complex_spectrum() {
        // rotation generator: det(I+tA) = 1 + t^2 > 0 but spectrum is complex
        let a = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let f = FlowPath::new(a).unwrap();
        assert_eq!(f.horizon(), f64::INFINITY);
        assert!(matches!(classify(&f), Err(FlowError::UnclassifiableFlow(_))));
    }

    #[test]
    fn classify_rejects_finite_horizon() {
        let f = FlowPath::new(Mat3::from_diagonal(&Vec3::new(-1.0, 2.0, 0.0))).unwrap();
        assert!(matches!(classify(&f), Err(FlowError::FiniteHorizon { .. })));
    }

    #[test]
    fn scaled_decomposition_mu_closed_forms() {
        let check = |class: FlowClass, mu_of_tau: &dyn Fn(f64) -> f64| {
            let d = ScaledDecomposition::new(class);
            for &tau in &[0.0, 0.3, 1.0, 4.0] {
                assert_relative_eq!(d.mu_at_tau(tau), mu_of_tau(tau), max_relative = 1e-12);
            }
        };
        check(FlowClass::HomogeneousDilatation, &|tau| (-2.0 * tau).exp());
        check(FlowClass::CylindricalDilatation, &|tau| (-tau).exp());
        check(FlowClass::CylindricalDilatationShear { k: 2.0 }, &|tau| (-tau).exp());
        check(FlowClass::PlanarShear { k: 1.0 }, &|_tau| 1.0);
        check(FlowClass::SimpleShear { k: 1.0 }, &|_| 1.0);
        check(FlowClass::SimpleShearDecayingDilatation { k1: 0.0, k2: 1.0, k3: 0.0 }, &|tau| {
            1.0 / (1.0 + tau)
        });
        check(FlowClass::CombinedOrthogonalShear { k1: 1.0, k2: 0.0, k3: 1.0 }, &|tau| {
            1.0 / (1.0 + 2.0 * tau).sqrt()
        });
    }

    #[test]
    fn scaled_decomposition_q_limits() {
        let classes = vec![
            FlowClass::HomogeneousDilatation,
            FlowClass::CylindricalDilatationShear { k: 1.0 },
            FlowClass::PlanarShear { k: 2.0 },
            FlowClass::SimpleShear { k: 1.0 },
            FlowClass::SimpleShearDecayingDilatation { k1: 0.5, k2: 1.0, k3: 0.3 },
            FlowClass::CombinedOrthogonalShear { k1: 1.0, k2: 0.5, k3: 1.0 },
        ];
        for class in classes {
            let d = ScaledDecomposition::new(class.clone());
            // the slowest classes approach their limit only like 1/tau
            let q = d.q_at_tau(1e8);
            let l0 = d.l0;
            assert!(
                (q - l0).amax() <= 1e-3 * l0.amax().max(1.0),
                "Q(tau) far from L0 for {class:?}: {:?}",
                q - l0
            );
        }
    }

    #[test]
    fn q_closed_forms_match_generic_rescaling() {
        let classes = vec![
            FlowClass::HomogeneousDilatation,
            FlowClass::CylindricalDilatation,
            FlowClass::CylindricalDilatationShear { k: 0.8 },
            FlowClass::PlanarShear { k: 2.0 },
            FlowClass::SimpleShear { k: 1.5 },
            FlowClass::SimpleShearDecayingDilatation { k1: 0.7, k2: 1.4, k3: -0.5 },
            FlowClass::CombinedOrthogonalShear { k1: 1.2, k2: 0.4, k3: 0.9 },
        ];
        for class in classes {
            let d = ScaledDecomposition::new(class.clone());
            let f = FlowPath::new(class.canonical_matrix()).unwrap();
            for &tau in &[0.0, 0.3, 1.0, 3.0, 8.0] {
                let t = d.t_of_tau(tau);
                let generic = f.l_at(t).unwrap() / d.scale.l_of_t(t);
                let q = d.q_at_tau(tau);
                assert!(
                    (q - generic).amax() <= 1e-9 * q.amax().max(1.0),
                    "closed form disagrees with rescaled inverse for {class:?} at tau={tau}"
                );
            }
        }
    }

    #[test]
    fn time_maps_roundtrip() {
        for scale in [TimeScale::Inverse, TimeScale::Constant, TimeScale::Linear] {
            for &t in &[0.0, 1e-9, 0.3, 7.0, 1e4] {
                let tau = scale.tau_of_t(t);
                assert_relative_eq!(scale.t_of_tau(tau), t, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn propagator_tau_matches_unscaled() {
        let class = FlowClass::CylindricalDilatationShear { k: 1.0 };
        let d = ScaledDecomposition::new(class.clone());
        let f = FlowPath::new(class.canonical_matrix()).unwrap();
        let (tau0, tau1) = (0.2, 1.5);
        let p = d.propagator_tau(tau0, tau1);
        let q = f.propagator(d.t_of_tau(tau0), d.t_of_tau(tau1)).unwrap();
        assert!((p - q).amax() <= 1e-13);
    }

    #[test]
    fn flow_case_serde_roundtrip() {
        let case = FlowCase {
            class: FlowClass::CombinedOrthogonalShear { k1: 1.0, k2: 0.5, k3: 2.0 },
            basis: rot(Vec3::new(0.0, 1.0, 0.3), 0.4),
        };
        let text = serde_json::to_string(&case).unwrap();
        let back: FlowCase = serde_json::from_str(&text).unwrap();
        assert_eq!(back.class, case.class);
        assert!((back.basis - case.basis).amax() < 1e-15);
    }

    #[test]
    fn class_validation() {
        assert!(FlowClass::SimpleShear { k: 0.0 }.validate().is_err());
        assert!(FlowClass::SimpleShear { k: 2.0 }.validate().is_ok());
        assert!(FlowClass::CombinedOrthogonalShear { k1: 1.0, k2: 1.0, k3: 0.0 }.validate().is_err());
        assert!(FlowClass::SimpleShearDecayingDilatation { k1: 0.0, k2: 0.0, k3: 0.0 }
            .validate()
            .is_err());
        assert!(FlowClass::CylindricalDilatation.validate().is_ok());
    }
}
