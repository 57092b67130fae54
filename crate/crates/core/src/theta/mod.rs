//! Classical N-body simulator of the long-range self-interacting theta-spin
//! system.
//!
//! Particles carry a fixed-magnitude spin; pairs interact through a
//! Plummer-softened 1/r kernel weighted by the spin dot product, with the
//! overall sign fixed so aligned spins attract:
//! `U = -g * sum_{i<j} (s_i . s_j) / sqrt(|x_i - x_j|^2 + a^2)`.
//! Orbits are integrated with kick-drift-kick leapfrog; spins relax toward
//! the local shift field by over-damped gradient flow. Forces are evaluated
//! by direct O(nu^2) summation.

mod lynden_bell;

pub use lynden_bell::{
    coarse_grain, fermi_ground_state, fit_lynden_bell, CoarseGrainSpec, FermiGroundState, FitError,
    LyndenBellComponent, LyndenBellFit, LyndenBellParams, PhaseSpaceHistogram,
    BETA_INFINITE_FACTOR,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::runtime::worker_threads;
use crate::vec3;

#[derive(Debug, Error)]
pub enum ThetaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("field lookup failed at position {0:?}")]
    FieldLookup([f64; 3]),
}

/// Point particle with position, momentum, unit spin, and mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaParticle {
    pub x: [f64; 3],
    pub p: [f64; 3],
    pub s: [f64; 3],
    pub m: f64,
}

impl ThetaParticle {
    pub fn velocity(&self) -> [f64; 3] {
        vec3::scale(self.p, 1.0 / self.m)
    }

    pub fn kinetic_energy(&self) -> f64 {
        vec3::dot(self.p, self.p) / (2.0 * self.m)
    }
}

/// Simulation parameters. `g = -J > 0` is the spin-spin coupling,
/// `g_c = -J_c > 0` the shift-field coupling, `softening` the Plummer
/// length.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub g: f64,
    pub g_c: f64,
    pub softening: f64,
    pub dt: f64,
    pub nu: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ThetaError> {
        let checks = [
            (self.g > 0.0 && self.g.is_finite(), format!("g must be > 0, got {}", self.g)),
            (
                self.g_c > 0.0 && self.g_c.is_finite(),
                format!("g_c must be > 0, got {}", self.g_c),
            ),
            (
                self.softening > 0.0 && self.softening.is_finite(),
                format!("softening must be > 0, got {}", self.softening),
            ),
            (
                self.dt != 0.0 && self.dt.is_finite(),
                format!("dt must be nonzero, got {}", self.dt),
            ),
            (self.nu >= 2, format!("nu must be >= 2, got {}", self.nu)),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(ThetaError::InvalidInput(msg));
            }
        }
        Ok(())
    }
}

/// Axis-aligned phase-space box.
#[derive(Debug, Clone, Copy)]
pub struct PhaseSpaceBox {
    pub x_lo: [f64; 3],
    pub x_hi: [f64; 3],
    pub p_lo: [f64; 3],
    pub p_hi: [f64; 3],
}

impl PhaseSpaceBox {
    /// Symmetric box `[-x_half, x_half]^3 x [-p_half, p_half]^3`.
    pub fn symmetric(x_half: f64, p_half: f64) -> Self {
        Self {
            x_lo: [-x_half; 3],
            x_hi: [x_half; 3],
            p_lo: [-p_half; 3],
            p_hi: [p_half; 3],
        }
    }

    pub fn volume6(&self) -> f64 {
        let mut v = 1.0;
        for k in 0..3 {
            v *= self.x_hi[k] - self.x_lo[k];
            v *= self.p_hi[k] - self.p_lo[k];
        }
        v
    }

    fn validate(&self) -> Result<(), ThetaError> {
        for k in 0..3 {
            if !(self.x_hi[k] > self.x_lo[k]) || !(self.p_hi[k] > self.p_lo[k]) {
                return Err(ThetaError::InvalidInput(
                    "phase-space box must have positive extent on every axis".into(),
                ));
            }
        }
        if !self.volume6().is_finite() {
            return Err(ThetaError::InvalidInput("non-finite box volume".into()));
        }
        Ok(())
    }
}

/// Uniform (water-bag) sample of `nu` particles in the box, every spin set
/// to `spin_dir`. The single fine-grained level is `eta_level`: particle
/// masses are `eta_level * volume6 / nu`, so the mass density in phase
/// space equals `eta_level` on the support. Deterministic for a fixed seed.
pub fn init_waterbag(
    region: &PhaseSpaceBox,
    nu: usize,
    spin_dir: [f64; 3],
    eta_level: f64,
    seed: u64,
) -> Result<Vec<ThetaParticle>, ThetaError> {
    region.validate()?;
    if nu == 0 {
        return Err(ThetaError::InvalidInput("nu must be >= 1".into()));
    }
    if !(eta_level > 0.0) || !eta_level.is_finite() {
        return Err(ThetaError::InvalidInput(format!(
            "eta_level must be > 0, got {eta_level}"
        )));
    }
    if (vec3::norm(spin_dir) - 1.0).abs() > 1e-9 {
        return Err(ThetaError::InvalidInput("spin_dir must be a unit vector".into()));
    }
    let mass = eta_level * region.volume6() / nu as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut particles = Vec::with_capacity(nu);
    for _ in 0..nu {
        let mut x = [0.0; 3];
        let mut p = [0.0; 3];
        for k in 0..3 {
            x[k] = rng.gen_range(region.x_lo[k]..region.x_hi[k]);
        }
        for k in 0..3 {
            p[k] = rng.gen_range(region.p_lo[k]..region.p_hi[k]);
        }
        particles.push(ThetaParticle {
            x,
            p,
            s: spin_dir,
            m: mass,
        });
    }
    Ok(particles)
}

/// Pairwise forces `F_i = -g sum_j (s_i.s_j) (x_i - x_j) / (r^2 + a^2)^{3/2}`.
///
/// Sequential runs use an equal-and-opposite half loop; with
/// `TRPS_LAB_THREADS > 1` each particle's force is an independent
/// fixed-order sum over all partners, so results stay deterministic for a
/// fixed thread count.
pub fn forces(particles: &[ThetaParticle], cfg: &SimConfig) -> Vec<[f64; 3]> {
    forces_with_workers(particles, cfg, worker_threads())
}

fn forces_with_workers(
    particles: &[ThetaParticle],
    cfg: &SimConfig,
    workers: usize,
) -> Vec<[f64; 3]> {
    let n = particles.len();
    let xs: Vec<[f64; 3]> = particles.iter().map(|p| p.x).collect();
    let ss: Vec<[f64; 3]> = particles.iter().map(|p| p.s).collect();
    let a2 = cfg.softening * cfg.softening;
    let g = cfg.g;
    let workers = workers.min(n).max(1);

    let mut fs = vec![[0.0f64; 3]; n];
    if workers == 1 {
        for i in 0..n {
            let xi = xs[i];
            let si = ss[i];
            let mut f0 = 0.0f64;
            let mut f1 = 0.0f64;
            let mut f2 = 0.0f64;
            let (_, f_tail) = fs.split_at_mut(i + 1);
            let pairs = xs[i + 1..].iter().zip(&ss[i + 1..]).zip(f_tail);
            for ((xj, sj), fj) in pairs {
                let d0 = xi[0] - xj[0];
                let d1 = xi[1] - xj[1];
                let d2 = xi[2] - xj[2];
                let r2 = d0 * d0 + d1 * d1 + d2 * d2 + a2;
                let sdot = si[0] * sj[0] + si[1] * sj[1] + si[2] * sj[2];
                let inv = 1.0 / r2.sqrt();
                let coef = g * sdot * (inv * inv * inv);
                f0 -= coef * d0;
                f1 -= coef * d1;
                f2 -= coef * d2;
                fj[0] += coef * d0;
                fj[1] += coef * d1;
                fj[2] += coef * d2;
            }
            let fi = &mut fs[i];
            fi[0] += f0;
            fi[1] += f1;
            fi[2] += f2;
        }
    } else {
        let per = n.div_ceil(workers);
        let xs = &xs;
        let ss = &ss;
        std::thread::scope(|scope| {
            for (w, slice) in fs.chunks_mut(per).enumerate() {
                scope.spawn(move || {
                    for (off, out) in slice.iter_mut().enumerate() {
                        let i = w * per + off;
                        let xi = xs[i];
                        let si = ss[i];
                        let mut fi = [0.0f64; 3];
                        for j in 0..xs.len() {
                            if j == i {
                                continue;
                            }
                            let d0 = xi[0] - xs[j][0];
                            let d1 = xi[1] - xs[j][1];
                            let d2 = xi[2] - xs[j][2];
                            let r2 = d0 * d0 + d1 * d1 + d2 * d2 + a2;
                            let sdot =
                                si[0] * ss[j][0] + si[1] * ss[j][1] + si[2] * ss[j][2];
                            let inv = 1.0 / r2.sqrt();
                            let coef = g * sdot * inv * inv * inv;
                            fi[0] -= coef * d0;
                            fi[1] -= coef * d1;
                            fi[2] -= coef * d2;
                        }
                        *out = fi;
                    }
                });
            }
        });
    }
    fs
}

/// Softened pair potential between particles `i` and `j`.
fn pair_potential(pi: &ThetaParticle, pj: &ThetaParticle, g: f64, a2: f64) -> f64 {
    let d = vec3::sub(pi.x, pj.x);
    -g * vec3::dot(pi.s, pj.s) / (vec3::dot(d, d) + a2).sqrt()
}

pub fn kinetic_energy(particles: &[ThetaParticle]) -> f64 {
    particles.iter().map(|p| p.kinetic_energy()).sum()
}

pub fn potential_energy(particles: &[ThetaParticle], cfg: &SimConfig) -> f64 {
    let a2 = cfg.softening * cfg.softening;
    let n = particles.len();
    let mut u = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            u += pair_potential(&particles[i], &particles[j], cfg.g, a2);
        }
    }
    u
}

/// Total energy `sum p^2/2m - g sum_{i<j} (s_i.s_j)/sqrt(r^2 + a^2)`.
pub fn total_energy(particles: &[ThetaParticle], cfg: &SimConfig) -> Result<f64, ThetaError> {
    if particles.is_empty() {
        return Err(ThetaError::InvalidInput("empty particle list".into()));
    }
    Ok(kinetic_energy(particles) + potential_energy(particles, cfg))
}

fn kick(particles: &mut [ThetaParticle], fs: &[[f64; 3]], half_dt: f64) {
    for (p, f) in particles.iter_mut().zip(fs) {
        p.p = vec3::add(p.p, vec3::scale(*f, half_dt));
    }
}

fn drift(particles: &mut [ThetaParticle], dt: f64) {
    for p in particles.iter_mut() {
        p.x = vec3::add(p.x, vec3::scale(p.p, dt / p.m));
    }
}

/// One kick-drift-kick leapfrog step. Spins are untouched. `cfg.dt` may be
/// negative, which runs the (time-symmetric) integrator backwards.
pub fn step_leapfrog(particles: &mut [ThetaParticle], cfg: &SimConfig) {
    let fs = forces(particles, cfg);
    kick(particles, &fs, 0.5 * cfg.dt);
    drift(particles, cfg.dt);
    let fs = forces(particles, cfg);
    kick(particles, &fs, 0.5 * cfg.dt);
}

/// Runs `n_steps` leapfrog steps, re-using the closing force evaluation of
/// each step as the opening one of the next (identical arithmetic to
/// repeated [`step_leapfrog`], one force pass per step). `on_step` is
/// called after every step with the 1-based step index.
pub fn run_leapfrog(
    particles: &mut [ThetaParticle],
    cfg: &SimConfig,
    n_steps: usize,
    mut on_step: impl FnMut(usize, &[ThetaParticle]),
) {
    if n_steps == 0 {
        return;
    }
    let mut fs = forces(particles, cfg);
    for step in 1..=n_steps {
        kick(particles, &fs, 0.5 * cfg.dt);
        drift(particles, cfg.dt);
        fs = forces(particles, cfg);
        kick(particles, &fs, 0.5 * cfg.dt);
        on_step(step, particles);
    }
}

/// A 3-vector field sampled at particle positions; `None` marks a failed
/// lookup (outside the field's domain).
pub trait VectorField {
    fn at(&self, x: [f64; 3]) -> Option<[f64; 3]>;
}

/// Spatially constant field.
#[derive(Debug, Clone, Copy)]
pub struct UniformField(pub [f64; 3]);

impl VectorField for UniformField {
    fn at(&self, _x: [f64; 3]) -> Option<[f64; 3]> {
        Some(self.0)
    }
}

impl<F> VectorField for F
where
    F: Fn([f64; 3]) -> Option<[f64; 3]>,
{
    fn at(&self, x: [f64; 3]) -> Option<[f64; 3]> {
        self(x)
    }
}

/// Coupling energy `-g_c sum_i s_i . N_phys(x_i)`; aligned spins minimize
/// it.
pub fn coupling_energy(
    particles: &[ThetaParticle],
    field: &impl VectorField,
    cfg: &SimConfig,
) -> Result<f64, ThetaError> {
    let mut acc = 0.0;
    for p in particles {
        let h = field.at(p.x).ok_or(ThetaError::FieldLookup(p.x))?;
        acc += vec3::dot(p.s, h);
    }
    Ok(-cfg.g_c * acc)
}

/// Per-step record of a spin-relaxation run. Entry 0 is the state before
/// the first step.
#[derive(Debug, Clone)]
pub struct SpinRelaxReport {
    pub coupling_energy: Vec<f64>,
    /// Mean of `s . h_unit` over sites with a nonzero local field.
    pub mean_alignment: Vec<f64>,
}

fn mean_alignment(
    particles: &[ThetaParticle],
    field: &impl VectorField,
) -> Result<f64, ThetaError> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for p in particles {
        let h = field.at(p.x).ok_or(ThetaError::FieldLookup(p.x))?;
        if let Some(unit) = vec3::unit(h) {
            acc += vec3::dot(p.s, unit);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { acc / count as f64 })
}

/// Over-damped rotation of every spin toward its local field direction:
/// `s <- normalize(s + rate * (h_unit - (s.h_unit) s))`, the tangent-space
/// gradient flow of the coupling energy. For `rate` in `(0, 1]` the
/// coupling energy is non-increasing at every step; spins are renormalized
/// each update. Sites with zero local field keep their spin. A spin exactly
/// anti-parallel to its field is pushed along a deterministic tangent so it
/// does not sit on the unstable equilibrium.
pub fn spin_relax(
    particles: &mut [ThetaParticle],
    field: &impl VectorField,
    cfg: &SimConfig,
    rate: f64,
    steps: usize,
) -> Result<SpinRelaxReport, ThetaError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ThetaError::InvalidInput(format!(
            "rate must be in (0, 1], got {rate}"
        )));
    }
    let mut report = SpinRelaxReport {
        coupling_energy: Vec::with_capacity(steps + 1),
        mean_alignment: Vec::with_capacity(steps + 1),
    };
    report.coupling_energy.push(coupling_energy(particles, field, cfg)?);
    report.mean_alignment.push(mean_alignment(particles, field)?);
    for _ in 0..steps {
        for p in particles.iter_mut() {
            let h = field.at(p.x).ok_or(ThetaError::FieldLookup(p.x))?;
            let Some(unit) = vec3::unit(h) else {
                continue;
            };
            let c = vec3::dot(p.s, unit);
            let dir = if c <= -1.0 + 1e-12 {
                // Anti-parallel: step along a fixed tangent direction.
                let mut axis = [0.0; 3];
                let k = (0..3).min_by(|&a, &b| unit[a].abs().total_cmp(&unit[b].abs())).unwrap();
                axis[k] = 1.0;
                let tangent = vec3::sub(axis, vec3::scale(unit, vec3::dot(axis, unit)));
                vec3::unit(tangent).unwrap()
            } else {
                vec3::sub(unit, vec3::scale(p.s, c))
            };
            let stepped = vec3::add(p.s, vec3::scale(dir, rate));
            if let Some(next) = vec3::unit(stepped) {
                p.s = next;
            }
        }
        report.coupling_energy.push(coupling_energy(particles, field, cfg)?);
        report.mean_alignment.push(mean_alignment(particles, field)?);
    }
    Ok(report)
}

/// One-particle energy: kinetic term plus the softened mean-field potential
/// from all other particles.
pub fn one_particle_energy(index: usize, particles: &[ThetaParticle], cfg: &SimConfig) -> f64 {
    let a2 = cfg.softening * cfg.softening;
    let pi = &particles[index];
    let mut u = 0.0;
    for (j, pj) in particles.iter().enumerate() {
        if j != index {
            u += pair_potential(pi, pj, cfg.g, a2);
        }
    }
    pi.kinetic_energy() + u
}

/// All one-particle energies in one O(nu^2) pass.
pub fn one_particle_energies(particles: &[ThetaParticle], cfg: &SimConfig) -> Vec<f64> {
    let a2 = cfg.softening * cfg.softening;
    let n = particles.len();
    let mut eps: Vec<f64> = particles.iter().map(|p| p.kinetic_energy()).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let u = pair_potential(&particles[i], &particles[j], cfg.g, a2);
            eps[i] += u;
            eps[j] += u;
        }
    }
    eps
}

/// Splits particles into (bound, evaporated). A particle is evaporated when
/// its one-particle energy is positive and it moves radially outward
/// relative to the center of mass of the full set.
pub fn exclude_evaporated(
    particles: &[ThetaParticle],
    cfg: &SimConfig,
) -> (Vec<ThetaParticle>, Vec<ThetaParticle>) {
    if particles.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let total_mass: f64 = particles.iter().map(|p| p.m).sum();
    let mut x_cm = [0.0; 3];
    let mut v_cm = [0.0; 3];
    for p in particles {
        x_cm = vec3::add(x_cm, vec3::scale(p.x, p.m / total_mass));
        v_cm = vec3::add(v_cm, vec3::scale(p.p, 1.0 / total_mass));
    }
    let eps = one_particle_energies(particles, cfg);
    let mut bound = Vec::new();
    let mut evaporated = Vec::new();
    for (p, &e) in particles.iter().zip(&eps) {
        let radial = vec3::dot(vec3::sub(p.x, x_cm), vec3::sub(p.velocity(), v_cm));
        if e > 0.0 && radial > 0.0 {
            evaporated.push(*p);
        } else {
            bound.push(*p);
        }
    }
    (bound, evaporated)
}

/// Snapshot diagnostics of a particle system.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Diagnostics {
    pub total_energy: f64,
    pub kinetic: f64,
    pub potential: f64,
    /// `2K / |W|`; `None` when the potential vanishes.
    pub virial_ratio: Option<f64>,
    /// Radius (about the bound center of mass) enclosing 50% of bound mass.
    pub core_radius: f64,
    /// Radius enclosing 90% of bound mass.
    pub halo_radius: f64,
    pub bound_fraction: f64,
}

/// Mass-quantile radius about the center of mass of `particles`.
fn mass_quantile_radius(particles: &[ThetaParticle], frac: f64) -> f64 {
    if particles.is_empty() {
        return 0.0;
    }
    let total_mass: f64 = particles.iter().map(|p| p.m).sum();
    let mut x_cm = [0.0; 3];
    for p in particles {
        x_cm = vec3::add(x_cm, vec3::scale(p.x, p.m / total_mass));
    }
    let mut radii: Vec<(f64, f64)> = particles
        .iter()
        .map(|p| (vec3::norm(vec3::sub(p.x, x_cm)), p.m))
        .collect();
    radii.sort_by(|a, b| a.0.total_cmp(&b.0));
    let target = frac * total_mass;
    let mut acc = 0.0;
    for (r, m) in radii {
        acc += m;
        if acc >= target {
            return r;
        }
    }
    radii_last(particles, x_cm)
}

fn radii_last(particles: &[ThetaParticle], x_cm: [f64; 3]) -> f64 {
    particles
        .iter()
        .map(|p| vec3::norm(vec3::sub(p.x, x_cm)))
        .fold(0.0, f64::max)
}

pub fn diagnostics(particles: &[ThetaParticle], cfg: &SimConfig) -> Diagnostics {
    let kinetic = kinetic_energy(particles);
    let potential = potential_energy(particles, cfg);
    let virial_ratio = if potential == 0.0 {
        None
    } else {
        Some(2.0 * kinetic / potential.abs())
    };
    let (bound, _) = exclude_evaporated(particles, cfg);
    let core_radius = mass_quantile_radius(&bound, 0.5);
    let halo_radius = mass_quantile_radius(&bound, 0.9);
    let total_mass: f64 = particles.iter().map(|p| p.m).sum();
    let bound_mass: f64 = bound.iter().map(|p| p.m).sum();
    Diagnostics {
        total_energy: kinetic + potential,
        kinetic,
        potential,
        virial_ratio,
        core_radius,
        halo_radius,
        bound_fraction: if total_mass > 0.0 { bound_mass / total_mass } else { 0.0 },
    }
}

/// Characteristic mean-field time `sqrt(mean_mass * r_rms^3 / (g * nu))`
/// about the center of mass.
pub fn dynamical_time(particles: &[ThetaParticle], cfg: &SimConfig) -> f64 {
    let n = particles.len();
    if n == 0 {
        return 0.0;
    }
    let total_mass: f64 = particles.iter().map(|p| p.m).sum();
    let mut x_cm = [0.0; 3];
    for p in particles {
        x_cm = vec3::add(x_cm, vec3::scale(p.x, p.m / total_mass));
    }
    let r2_mean = particles
        .iter()
        .map(|p| {
            let d = vec3::sub(p.x, x_cm);
            vec3::dot(d, d)
        })
        .sum::<f64>()
        / n as f64;
    let mean_mass = total_mass / n as f64;
    // r_rms^3 via sqrt products only (IEEE-exact, platform-independent).
    let r_cubed = r2_mean * r2_mean.sqrt();
    (mean_mass * r_cubed / (cfg.g * n as f64)).sqrt()
}
