//! Homogeneous collision kernels B(n·w, |V|) = strength |V|^gamma a(n·w),
//! the elastic collision rule, and scattering-direction sampling.

use crate::Vec3;
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
#[error("kernel domain error: {0}")]
pub struct DomainError(pub String);

/// Angular part of the kernel, a nonnegative integrable function of n·w.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngularDensity {
    /// a(c) = 1
    Constant,
    /// a(c) = |c|, the hard-sphere angular law
    Cosine,
}

impl AngularDensity {
    pub fn density(self, c: f64) -> f64 {
        match self {
            AngularDensity::Constant => 1.0,
            AngularDensity::Cosine => c.abs(),
        }
    }

    /// Integral of the density over the unit sphere.
    pub fn total(self) -> f64 {
        match self {
            AngularDensity::Constant => 4.0 * std::f64::consts::PI,
            AngularDensity::Cosine => 2.0 * std::f64::consts::PI,
        }
    }
}

/// A collision kernel: homogeneity exponent, angular law, and a positive
/// strength that sets the collision time unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub gamma: f64,
    pub angular: AngularDensity,
    pub strength: f64,
}

impl KernelSpec {
    pub fn new(gamma: f64, angular: AngularDensity, strength: f64) -> Result<Self, DomainError> {
        let spec = Self { gamma, angular, strength };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !self.gamma.is_finite() || !(-3.0..=3.0).contains(&self.gamma) {
            return Err(DomainError(format!("gamma {} outside [-3, 3]", self.gamma)));
        }
        if !self.strength.is_finite() || self.strength <= 0.0 {
            return Err(DomainError(format!("strength {} must be positive", self.strength)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionOutcome {
    pub v_prime: Vec3,
    pub vstar_prime: Vec3,
}

/// B(n·w, speed) = strength · speed^gamma · a(n·w). For gamma < 0 the kernel
/// diverges at zero relative speed; the IEEE infinity is the honest value.
pub fn evaluate_kernel(
    spec: &KernelSpec,
    n_dot_omega: f64,
    speed: f64,
) -> Result<f64, DomainError> {
    if !(-1.0..=1.0).contains(&n_dot_omega) {
        return Err(DomainError(format!("n·omega {n_dot_omega} outside [-1, 1]")));
    }
    if !(speed >= 0.0) {
        return Err(DomainError(format!("speed {speed} must be nonnegative")));
    }
    Ok(spec.strength * speed.powf(spec.gamma) * spec.angular.density(n_dot_omega))
}

/// Elastic exchange of the omega-component of the relative velocity.
pub fn collide(v: Vec3, vstar: Vec3, omega: Vec3) -> Result<CollisionOutcome, DomainError> {
    if (omega.norm() - 1.0).abs() > 1e-12 {
        return Err(DomainError(format!("omega has norm {}", omega.norm())));
    }
    let h = (vstar - v).dot(&omega);
    Ok(CollisionOutcome { v_prime: v + h * omega, vstar_prime: vstar - h * omega })
}

/// Unit vectors spanning the plane orthogonal to n.
fn orthonormal_complement(n: &Vec3) -> (Vec3, Vec3) {
    let trial = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (trial - n * n.dot(&trial)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Draw omega with density proportional to B(n·omega, |V|) on the sphere,
/// n = V/|V|. The speed factor is constant on the sphere, so only the angular
/// law matters.
pub fn sample_omega<R: Rng + ?Sized>(
    spec: &KernelSpec,
    v_rel: Vec3,
    rng: &mut R,
) -> Result<Vec3, DomainError> {
    let speed = v_rel.norm();
    if speed == 0.0 || !speed.is_finite() {
        return Err(DomainError("relative velocity must be nonzero".into()));
    }
    match spec.angular {
        AngularDensity::Constant => {
            let p: [f64; 3] = UnitSphere.sample(rng);
            Ok(Vec3::new(p[0], p[1], p[2]))
        }
        AngularDensity::Cosine => {
            // P(|c| <= x) = x^2 under the |c| law, so |c| = sqrt(u)
            let n = v_rel / speed;
            let c = rng.gen::<f64>().sqrt() * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let s = (1.0 - c * c).max(0.0).sqrt();
            let phi = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
            let (e1, e2) = orthonormal_complement(&n);
            Ok(c * n + s * (phi.cos() * e1 + phi.sin() * e2))
        }
    }
}

/// Upper bound on the sphere-integrated rate strength · total(a) · s^gamma
/// over all relative speeds s <= max_rel_speed (gamma >= 0) or s >= the floor
/// passed as max_rel_speed (gamma < 0).
pub fn rate_majorant(spec: &KernelSpec, max_rel_speed: f64) -> Result<f64, DomainError> {
    if !(max_rel_speed > 0.0) || !max_rel_speed.is_finite() {
        return Err(DomainError(format!("bounding speed {max_rel_speed} must be positive")));
    }
    Ok(spec.strength * spec.angular.total() * max_rel_speed.powf(spec.gamma))
}
