//! Particle Monte Carlo for the deformation-driven homogeneous equation:
//! exact velocity transport along the flow alternated with majorant-bounded
//! no-time-counter collision sweeps.
//!
//! Particles carry physical peculiar velocities and evolve in the flow's
//! intrinsic clock tau; there mu(tau) = (dt/dtau)/det(I+tA) is exactly the
//! factor multiplying the collision operator (clock change times density
//! dilution), so pair (i,j) collides at rate mu(tau)*B(|w_i - w_j|)/N.
//! Transport uses the closed-form solution operator, so the only
//! discretization is the transport/collision splitting, bounded by
//! `dt_policy`.

use crate::analysis::{SeriesMetadata, TimeSeries};
use crate::flow::{FlowCase, ScaledDecomposition};
use crate::kernel::{collide, rate_majorant, sample_omega, KernelSpec};
use crate::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum DsmcError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("pair rate {observed:.6e} exceeded the majorant {majorant:.6e}")]
    MajorantViolation { observed: f64, majorant: f64 },
}

/// Starting velocity law; sampling is followed by exact moment matching, so
/// the realized mean is 0 and the realized beta equals `target_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDistribution {
    Maxwellian { beta0: f64 },
    UniformBall { radius: f64 },
    TwoTemperature { beta_a: f64, beta_b: f64 },
}

impl InitialDistribution {
    /// Inverse temperature implied by the parameters (beta = 3 / (2<|w|^2>)).
    pub fn target_beta(&self) -> f64 {
        match *self {
            InitialDistribution::Maxwellian { beta0 } => beta0,
            // <|w|^2> = 3 r^2 / 5 for the uniform ball.
            InitialDistribution::UniformBall { radius } => 2.5 / (radius * radius),
            // Equal-mass mixture averages the energies, so beta mixes
            // harmonically.
            InitialDistribution::TwoTemperature { beta_a, beta_b } => {
                2.0 * beta_a * beta_b / (beta_a + beta_b)
            }
        }
    }

    fn validate(&self) -> Result<(), DsmcError> {
        let ok = match *self {
            InitialDistribution::Maxwellian { beta0 } => beta0.is_finite() && beta0 > 0.0,
            InitialDistribution::UniformBall { radius } => radius.is_finite() && radius > 0.0,
            InitialDistribution::TwoTemperature { beta_a, beta_b } => {
                beta_a.is_finite() && beta_a > 0.0 && beta_b.is_finite() && beta_b > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DsmcError::Config(format!("invalid initial distribution {self:?}")))
        }
    }
}

/// One complete simulation request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Deformation drive; `None` runs the gas at rest (no drift, unit rate).
    pub case: Option<FlowCase>,
    pub kernel: KernelSpec,
    pub initial: InitialDistribution,
    pub n_particles: usize,
    /// Max fraction of a mean collision (or deformation) time per step.
    pub dt_policy: f64,
    /// Final rescaled time.
    pub duration: f64,
    /// Steps between moment emissions.
    pub output_stride: usize,
    pub seed: u64,
    pub replicas: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), DsmcError> {
        if self.n_particles < 2 {
            return Err(DsmcError::Config("need at least two particles".into()));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(DsmcError::Config(format!("duration {} must be positive", self.duration)));
        }
        if !(self.dt_policy > 0.0 && self.dt_policy <= 0.5) {
            return Err(DsmcError::Config(format!(
                "dt_policy {} outside (0, 0.5]",
                self.dt_policy
            )));
        }
        if self.output_stride == 0 {
            return Err(DsmcError::Config("output_stride must be positive".into()));
        }
        if self.replicas == 0 {
            return Err(DsmcError::Config("need at least one replica".into()));
        }
        self.kernel.validate().map_err(|e| DsmcError::Config(e.to_string()))?;
        self.initial.validate()?;
        if let Some(case) = &self.case {
            case.class.validate().map_err(DsmcError::Config)?;
        }
        Ok(())
    }

    /// Stable fingerprint of the full configuration, for artifact metadata.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h = DefaultHasher::new();
        text.hash(&mut h);
        format!("{:016x}", h.finish())
    }
}

/// The simulated particle system in the rescaled frame.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub velocities: Vec<Vec3>,
    /// Total mass represented by the ensemble; constant 1 here.
    pub weight: f64,
    pub tau: f64,
    pub rng: ChaCha8Rng,
    pub collisions: u64,
}

/// Moment snapshot of an ensemble (or a replica average) at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub tau: f64,
    pub t: f64,
    pub mass: f64,
    pub mean: [f64; 3],
    pub beta: f64,
    /// <w_i w_j> for (i,j) in {(x,y), (x,z), (y,z)}.
    pub pressure_offdiag: [f64; 3],
    /// Excess kurtosis of the speed distribution; 0 for a Maxwellian.
    pub fourth_cumulant: f64,
    /// mass + second moment, the weighted total the well-posedness
    /// statement controls.
    pub norm_1_2: f64,
    pub collisions: u64,
}

/// No drive, or a canonical class in its rescaled clock.
enum Drive {
    Rest,
    Flow(ScaledDecomposition),
}

impl Drive {
    fn from_config(config: &SimConfig) -> Drive {
        match &config.case {
            None => Drive::Rest,
            Some(case) => Drive::Flow(case.decomposition()),
        }
    }

    fn t_of_tau(&self, tau: f64) -> f64 {
        match self {
            Drive::Rest => tau,
            Drive::Flow(d) => d.t_of_tau(tau),
        }
    }

    fn mu(&self, tau: f64) -> f64 {
        match self {
            Drive::Rest => 1.0,
            Drive::Flow(d) => d.mu_at_tau(tau),
        }
    }

    fn deformation_rate(&self, tau: f64) -> f64 {
        match self {
            Drive::Rest => 0.0,
            Drive::Flow(d) => d.q_at_tau(tau).norm(),
        }
    }

    fn transport(&self, e: &mut ParticleEnsemble, dtau: f64) {
        if let Drive::Flow(d) = self {
            let p = d.propagator_tau(e.tau, e.tau + dtau);
            for w in &mut e.velocities {
                *w = p * *w;
            }
        }
        e.tau += dtau;
    }
}

fn gauss3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

fn init_with_rng(
    config: &SimConfig,
    initial: InitialDistribution,
    mut rng: ChaCha8Rng,
) -> Result<ParticleEnsemble, DsmcError> {
    config.validate()?;
    initial.validate()?;
    let n = config.n_particles;
    let mut v: Vec<Vec3> = Vec::with_capacity(n);
    match initial {
        InitialDistribution::Maxwellian { beta0 } => {
            let sigma = 1.0 / (2.0 * beta0).sqrt();
            for _ in 0..n {
                v.push(sigma * gauss3(&mut rng));
            }
        }
        InitialDistribution::UniformBall { radius } => {
            for _ in 0..n {
                let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                let r = radius * rng.gen::<f64>().cbrt();
                v.push(r * Vec3::new(dir[0], dir[1], dir[2]));
            }
        }
        InitialDistribution::TwoTemperature { beta_a, beta_b } => {
            for i in 0..n {
                let beta = if i < n / 2 { beta_a } else { beta_b };
                let sigma = 1.0 / (2.0 * beta).sqrt();
                v.push(sigma * gauss3(&mut rng));
            }
        }
    }
    // Exact moment matching: zero mean, then beta = target exactly.
    let mean = v.iter().sum::<Vec3>() / n as f64;
    for w in &mut v {
        *w -= mean;
    }
    let msq = v.iter().map(|w| w.norm_squared()).sum::<f64>() / n as f64;
    if !(msq > 0.0) {
        return Err(DsmcError::Config("degenerate initial sample".into()));
    }
    let scale = (3.0 / (2.0 * initial.target_beta()) / msq).sqrt();
    for w in &mut v {
        *w *= scale;
    }
    Ok(ParticleEnsemble { velocities: v, weight: 1.0, tau: 0.0, rng, collisions: 0 })
}

/// Build the starting ensemble for `config` (replica 0's stream).
pub fn init_ensemble(
    config: &SimConfig,
    initial: InitialDistribution,
) -> Result<ParticleEnsemble, DsmcError> {
    init_with_rng(config, initial, ChaCha8Rng::seed_from_u64(config.seed))
}

/// Map every velocity through the exact solution operator of the rescaled
/// drift over [tau, tau + dtau].
pub fn step_transport(
    e: &mut ParticleEnsemble,
    case: &FlowCase,
    dtau: f64,
) -> Result<(), DsmcError> {
    if !(dtau > 0.0) {
        return Err(DsmcError::Config(format!("dtau {dtau} must be positive")));
    }
    Drive::Flow(case.decomposition()).transport(e, dtau);
    Ok(())
}

/// Sphere-integrated rate bound for the current ensemble. For gamma >= 0 the
/// bound covers every pair through twice the max speed; for gamma < 0 the
/// kernel is unbounded at zero relative speed, so the bound holds above a
/// floor at 20^{-1/|gamma|} of the rms relative speed and candidates below
/// the floor are accepted at the clamped rate (negligible under-collision of
/// near-coincident pairs that barely move moments).
fn ensemble_majorant(e: &ParticleEnsemble, kernel: &KernelSpec) -> Result<f64, DsmcError> {
    let as_config = |err: crate::kernel::DomainError| DsmcError::Config(err.to_string());
    if kernel.gamma >= 0.0 {
        let vmax = e.velocities.iter().map(|w| w.norm()).fold(0.0f64, f64::max);
        if vmax == 0.0 {
            // All particles coincide in velocity; only gamma = 0 has a
            // nonzero rate, and those collisions are exact no-ops.
            return if kernel.gamma == 0.0 {
                rate_majorant(kernel, 1.0).map_err(as_config)
            } else {
                Ok(0.0)
            };
        }
        rate_majorant(kernel, 2.0 * vmax).map_err(as_config)
    } else {
        let msq =
            e.velocities.iter().map(|w| w.norm_squared()).sum::<f64>() / e.velocities.len() as f64;
        if !(msq > 0.0) {
            return Err(DsmcError::Config("cold ensemble has no speed scale".into()));
        }
        let floor = 20f64.powf(-1.0 / kernel.gamma.abs()) * (2.0 * msq).sqrt();
        rate_majorant(kernel, floor).map_err(as_config)
    }
}

/// One no-time-counter sweep against a given majorant. Candidate pairs are
/// drawn uniformly at total intensity (N-1)/2 * mu * majorant * dtau and
/// thinned by the true-to-majorant rate ratio.
fn collision_sweep(
    e: &mut ParticleEnsemble,
    kernel: &KernelSpec,
    mu_now: f64,
    dtau: f64,
    bmaj: f64,
) -> Result<(), DsmcError> {
    if mu_now == 0.0 || bmaj == 0.0 {
        return Ok(());
    }
    let n = e.velocities.len();
    let intensity = 0.5 * (n as f64 - 1.0) * mu_now * bmaj * dtau;
    if !intensity.is_finite() || intensity > 1e9 {
        return Err(DsmcError::Config(format!(
            "collision intensity {intensity:.3e} per step is not tractable"
        )));
    }
    let mut candidates = intensity.floor();
    if e.rng.gen::<f64>() < intensity - candidates {
        candidates += 1.0;
    }
    let sphere_total = kernel.strength * kernel.angular.total();
    for _ in 0..candidates as u64 {
        let i = e.rng.gen_range(0..n);
        let mut j = e.rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let v_rel = e.velocities[j] - e.velocities[i];
        let speed = v_rel.norm();
        if speed == 0.0 {
            continue; // coincident velocities cannot scatter
        }
        let true_rate = sphere_total * speed.powf(kernel.gamma);
        let ratio = true_rate / bmaj;
        if kernel.gamma >= 0.0 && ratio > 1.0 + 1e-9 {
            return Err(DsmcError::MajorantViolation { observed: true_rate, majorant: bmaj });
        }
        let accept = ratio >= 1.0 || e.rng.gen::<f64>() < ratio;
        if accept {
            let omega = sample_omega(kernel, v_rel, &mut e.rng)
                .map_err(|err| DsmcError::Config(err.to_string()))?;
            let out = collide(e.velocities[i], e.velocities[j], omega)
                .map_err(|err| DsmcError::Config(err.to_string()))?;
            e.velocities[i] = out.v_prime;
            e.velocities[j] = out.vstar_prime;
            e.collisions += 1;
        }
    }
    Ok(())
}

/// One collision step at rate factor `mu_now`, using a majorant refreshed
/// from the current ensemble.
pub fn step_collisions(
    e: &mut ParticleEnsemble,
    kernel: &KernelSpec,
    mu_now: f64,
    dtau: f64,
) -> Result<(), DsmcError> {
    if !(dtau > 0.0) {
        return Err(DsmcError::Config(format!("dtau {dtau} must be positive")));
    }
    if !(mu_now >= 0.0) {
        return Err(DsmcError::Config(format!("mu {mu_now} must be nonnegative")));
    }
    let bmaj = ensemble_majorant(e, kernel)?;
    collision_sweep(e, kernel, mu_now, dtau, bmaj)
}

fn moments(e: &ParticleEnsemble, drive: &Drive) -> MomentSummary {
    let n = e.velocities.len() as f64;
    let mut mean = Vec3::zeros();
    let (mut msq, mut m4) = (0.0, 0.0);
    let mut off = [0.0; 3];
    for w in &e.velocities {
        mean += *w;
        let s2 = w.norm_squared();
        msq += s2;
        m4 += s2 * s2;
        off[0] += w.x * w.y;
        off[1] += w.x * w.z;
        off[2] += w.y * w.z;
    }
    mean /= n;
    msq /= n;
    m4 /= n;
    for o in &mut off {
        *o /= n;
    }
    // Zero-mean convention: beta and the cumulant use raw moments, since the
    // momentum stays at its exactly conserved initial value 0.
    let beta = 3.0 / (2.0 * msq);
    let fourth_cumulant = 0.6 * m4 / (msq * msq) - 1.0;
    MomentSummary {
        tau: e.tau,
        t: drive.t_of_tau(e.tau),
        mass: e.weight,
        mean: [mean.x, mean.y, mean.z],
        beta,
        pressure_offdiag: off,
        fourth_cumulant,
        norm_1_2: e.weight * (1.0 + msq),
        collisions: e.collisions,
    }
}

/// Residual drift felt by the stretched velocity t*w of the homogeneous
/// dilatation when time is renormalized so collisions run at unit rate
/// (gamma < -2). Returns (s, |kappa(s)|); the drift decays faster than
/// s^{-1-1/|2+gamma|}, which is why the state Maxwellianizes even though the
/// deformation never stops. The solver itself transports exactly and never
/// needs this smallness.
pub fn dilatation_residual_drift(gamma: f64, tau: f64) -> Result<(f64, f64), DsmcError> {
    if !(gamma < -2.0) {
        return Err(DsmcError::Config(format!(
            "collision-normalized clock needs gamma < -2, got {gamma}"
        )));
    }
    if !(tau >= 0.0) {
        return Err(DsmcError::Config(format!("tau {tau} must be nonnegative")));
    }
    let q = (2.0 + gamma).abs();
    let s = (q * tau).exp_m1() / q;
    let kappa = (-q * tau).exp() / (1.0 + tau.exp());
    Ok((s, kappa))
}

struct StepOutcome {
    emitted: bool,
}

struct Replica<'a> {
    config: &'a SimConfig,
    drive: Drive,
    e: ParticleEnsemble,
    steps_since_emit: usize,
    majorant_boost: f64,
}

impl<'a> Replica<'a> {
    fn new(config: &'a SimConfig, index: u64) -> Result<Self, DsmcError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index);
        let e = init_with_rng(config, config.initial, rng)?;
        Ok(Replica {
            config,
            drive: Drive::from_config(config),
            e,
            steps_since_emit: 0,
            majorant_boost: 1.0,
        })
    }

    /// Advance one splitting step, no farther than `tau_cap`. Emission is
    /// due every `output_stride` steps or at the final time; when `pin` is
    /// set the step lands exactly on `tau_cap` if it reaches it.
    fn step(&mut self, tau_cap: f64, pin: bool) -> Result<StepOutcome, DsmcError> {
        let kernel = &self.config.kernel;
        loop {
            let bmaj = ensemble_majorant(&self.e, kernel)? * self.majorant_boost;
            let tau = self.e.tau;
            // The load floor of 1 keeps dtau <= dt_policy even when all rates
            // die out, so mu(tau) and Q(tau) stay resolved and quiet runs
            // still populate the output grid.
            let load = self.drive.mu(tau) * bmaj + self.drive.deformation_rate(tau);
            let mut dtau = self.config.dt_policy / load.max(1.0);
            if !dtau.is_finite() {
                dtau = tau_cap - tau;
            }
            let capped = tau + dtau >= tau_cap;
            if capped {
                dtau = tau_cap - tau;
            }
            if !(dtau > 0.0) {
                return Err(DsmcError::Config(format!("step collapsed at tau {tau}")));
            }

            let snapshot = (self.e.velocities.clone(), self.e.rng.clone(), self.e.collisions);
            self.drive.transport(&mut self.e, dtau);
            if capped && pin {
                self.e.tau = tau_cap;
            }
            let mu_mid = self.drive.mu(tau + 0.5 * dtau);
            // The majorant is refreshed after transport so it bounds the
            // velocities the sweep actually sees.
            let bmaj_now = ensemble_majorant(&self.e, kernel)? * self.majorant_boost;
            match collision_sweep(&mut self.e, kernel, mu_mid, dtau, bmaj_now) {
                Ok(()) => {
                    self.majorant_boost = 1.0;
                }
                Err(DsmcError::MajorantViolation { .. }) => {
                    // Undo the step and retry with a stretched majorant.
                    let (velocities, rng, collisions) = snapshot;
                    self.e.velocities = velocities;
                    self.e.rng = rng;
                    self.e.collisions = collisions;
                    self.e.tau = tau;
                    self.majorant_boost *= 1.2;
                    if self.majorant_boost > 1e6 {
                        return Err(DsmcError::Config(
                            "majorant refresh diverged; the ensemble is degenerate".into(),
                        ));
                    }
                    continue;
                }
                Err(other) => return Err(other),
            }
            self.steps_since_emit += 1;
            let due = self.steps_since_emit >= self.config.output_stride
                || self.e.tau >= self.config.duration
                || (pin && self.e.tau == tau_cap);
            if due {
                self.steps_since_emit = 0;
            }
            return Ok(StepOutcome { emitted: due });
        }
    }
}

/// Replica 0: free-running stride emission; defines the shared grid.
fn simulate_leader(config: &SimConfig) -> Result<Vec<MomentSummary>, DsmcError> {
    let mut r = Replica::new(config, 0)?;
    let mut out = vec![moments(&r.e, &r.drive)];
    let mut steps: u64 = 0;
    while r.e.tau < config.duration {
        steps += 1;
        if steps > 50_000_000 {
            return Err(DsmcError::Config("step budget exhausted".into()));
        }
        let outcome = r.step(config.duration, true)?;
        if outcome.emitted {
            out.push(moments(&r.e, &r.drive));
        }
    }
    Ok(out)
}

/// Followers integrate the same dynamics but land exactly on the leader's
/// emission times so the replica average is taken on one grid.
fn simulate_follower(
    config: &SimConfig,
    index: u64,
    grid: &[f64],
) -> Result<Vec<MomentSummary>, DsmcError> {
    let mut r = Replica::new(config, index)?;
    let mut out = vec![moments(&r.e, &r.drive)];
    let mut steps: u64 = 0;
    for &target in &grid[1..] {
        while r.e.tau < target {
            steps += 1;
            if steps > 50_000_000 {
                return Err(DsmcError::Config("step budget exhausted".into()));
            }
            r.step(target, true)?;
        }
        out.push(moments(&r.e, &r.drive));
    }
    Ok(out)
}

fn worker_count(jobs: usize) -> usize {
    let configured = std::env::var("HOMOKINETICS_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1);
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    configured.unwrap_or(available).min(jobs.max(1))
}

/// Average the replicas' summaries on the shared grid. Raw moments pool
/// linearly; beta and the cumulant are recomputed from the pooled moments so
/// the result is the empirical measure of the union ensemble.
fn reduce_replicas(per_replica: &[Vec<MomentSummary>]) -> Vec<MomentSummary> {
    let rows = per_replica[0].len();
    let r = per_replica.len() as f64;
    (0..rows)
        .map(|k| {
            let first = &per_replica[0][k];
            let mut mean = [0.0; 3];
            let mut off = [0.0; 3];
            let (mut msq, mut m4, mut mass) = (0.0, 0.0, 0.0);
            let mut collisions = 0u64;
            for series in per_replica {
                let row = &series[k];
                debug_assert_eq!(row.tau, first.tau, "replica grids must agree");
                mass += row.mass;
                for a in 0..3 {
                    mean[a] += row.mean[a];
                    off[a] += row.pressure_offdiag[a];
                }
                let row_msq = 1.5 / row.beta;
                msq += row_msq;
                m4 += (row.fourth_cumulant + 1.0) / 0.6 * row_msq * row_msq;
                collisions += row.collisions;
            }
            mass /= r;
            for a in 0..3 {
                mean[a] /= r;
                off[a] /= r;
            }
            msq /= r;
            m4 /= r;
            MomentSummary {
                tau: first.tau,
                t: first.t,
                mass,
                mean,
                beta: 3.0 / (2.0 * msq),
                pressure_offdiag: off,
                fourth_cumulant: 0.6 * m4 / (msq * msq) - 1.0,
                norm_1_2: mass + msq,
                collisions,
            }
        })
        .collect()
}

/// Run every replica and reduce to one TimeSeries. Replica RNG streams are
/// derived from (seed, replica index), so the result is independent of the
/// worker thread count.
pub fn run(config: &SimConfig) -> Result<TimeSeries, DsmcError> {
    config.validate()?;
    let leader = simulate_leader(config)?;
    let grid: Vec<f64> = leader.iter().map(|m| m.tau).collect();

    let followers = config.replicas - 1;
    let mut all = vec![leader];
    if followers > 0 {
        let mut results: Vec<Option<Result<Vec<MomentSummary>, DsmcError>>> = Vec::new();
        results.resize_with(followers, || None);
        let workers = worker_count(followers);
        let chunk = followers.div_ceil(workers);
        std::thread::scope(|scope| {
            for (w, slot_chunk) in results.chunks_mut(chunk).enumerate() {
                let grid = &grid;
                let first_index = 1 + w * chunk;
                scope.spawn(move || {
                    for (offset, slot) in slot_chunk.iter_mut().enumerate() {
                        let index = (first_index + offset) as u64;
                        *slot = Some(simulate_follower(config, index, grid));
                    }
                });
            }
        });
        for slot in results {
            all.push(slot.expect("worker filled its slot")?);
        }
    }
    Ok(TimeSeries {
        rows: reduce_replicas(&all),
        metadata: SeriesMetadata {
            config_hash: config.fingerprint(),
            seed: config.seed,
            replicas: config.replicas,
        },
    })
}
