//! Spinor geometry: lapse and shift from the two quadratic forms of a
//! dimensionless space spinor, spin-configuration magnetization, and the
//! coherence-domain criterion with its `kappa` ratio.
//!
//! Conventions fixed here once and used everywhere else:
//! - the symmetric spinor-index pair is mapped to a Euclidean 3-vector
//!   through the standard Pauli matrices `sigma_1, sigma_2, sigma_3`;
//! - all spatial 3-vectors are stored as Euclidean components; energy
//!   expressions elsewhere carry an explicit overall sign.
//!
//! With these conventions the shift modulus of a single spinor satisfies
//! `|shift| = sqrt(2) * c * lapse` (the factor is pinned by the explicit
//! Pauli-matrix oracle in this module's tests).

use num_complex::Complex64;
use thiserror::Error;

use crate::vec3;

#[derive(Debug, Error)]
pub enum SenError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Complex two-component dimensionless spinor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceSpinor {
    pub a0: Complex64,
    pub a1: Complex64,
}

impl SpaceSpinor {
    pub fn new(a0: Complex64, a1: Complex64) -> Self {
        Self { a0, a1 }
    }

    /// `|a0|^2 + |a1|^2`.
    pub fn norm2(&self) -> f64 {
        self.a0.norm_sqr() + self.a1.norm_sqr()
    }

    fn check_finite(&self) -> Result<(), SenError> {
        let parts = [self.a0.re, self.a0.im, self.a1.re, self.a1.im];
        if parts.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(SenError::InvalidInput(
                "spinor amplitudes must be finite".into(),
            ))
        }
    }
}

/// Lapse plus shift data derived from one spinor.
#[derive(Debug, Clone, Copy)]
pub struct LapseShift {
    /// Dimensionless lapse, `>= 0`.
    pub lapse: f64,
    /// Shift 3-vector in velocity units.
    pub shift: [f64; 3],
}

/// Lapse of a spinor: `(|a0|^2 + |a1|^2) / sqrt(2)`.
///
/// Zero only for the zero spinor, which is legal input ("no time lapse").
pub fn lapse_of(spinor: &SpaceSpinor) -> Result<f64, SenError> {
    spinor.check_finite()?;
    Ok(spinor.norm2() / std::f64::consts::SQRT_2)
}

/// Shift vector of a spinor: `c * (s.sigma_1.s, s.sigma_2.s, s.sigma_3.s)`
/// written out in closed form. Its modulus is `sqrt(2) * c * lapse_of(s)`.
pub fn shift_of(spinor: &SpaceSpinor, c: f64) -> Result<[f64; 3], SenError> {
    spinor.check_finite()?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(SenError::InvalidInput(format!(
            "speed c must be positive and finite, got {c}"
        )));
    }
    let cross = spinor.a0.conj() * spinor.a1;
    Ok([
        c * 2.0 * cross.re,
        c * 2.0 * cross.im,
        c * (spinor.a0.norm_sqr() - spinor.a1.norm_sqr()),
    ])
}

/// Lapse and shift of one spinor in a single call.
pub fn lapse_shift_of(spinor: &SpaceSpinor, c: f64) -> Result<LapseShift, SenError> {
    Ok(LapseShift {
        lapse: lapse_of(spinor)?,
        shift: shift_of(spinor, c)?,
    })
}

/// Modulus and direction of the weighted mean of a set of spin vectors.
#[derive(Debug, Clone, Copy)]
pub struct Magnetization {
    pub modulus: f64,
    /// Unit direction of the mean vector; `None` when the mean vanishes.
    pub direction: Option<[f64; 3]>,
}

/// Vector modulus (and direction) of the weighted arithmetic mean of spins.
///
/// Weights must be non-negative, match the spin list in length, and sum to
/// one within `1e-9`.
pub fn magnetization(spins: &[[f64; 3]], weights: &[f64]) -> Result<Magnetization, SenError> {
    if spins.len() != weights.len() {
        return Err(SenError::InvalidInput(format!(
            "{} spins but {} weights",
            spins.len(),
            weights.len()
        )));
    }
    if spins.is_empty() {
        return Err(SenError::InvalidInput("empty spin list".into()));
    }
    let mut sum_w = 0.0;
    let mut mean = [0.0; 3];
    for (s, &w) in spins.iter().zip(weights) {
        if !(w >= 0.0) {
            return Err(SenError::InvalidInput(format!("negative weight {w}")));
        }
        if !vec3::is_finite(*s) {
            return Err(SenError::InvalidInput("non-finite spin component".into()));
        }
        sum_w += w;
        mean = vec3::add(mean, vec3::scale(*s, w));
    }
    if (sum_w - 1.0).abs() > 1e-9 {
        return Err(SenError::InvalidInput(format!(
            "weights sum to {sum_w}, expected 1"
        )));
    }
    Ok(Magnetization {
        modulus: vec3::norm(mean),
        direction: vec3::unit(mean),
    })
}

/// Discretized coherence domain: per-node probability density, quadrature
/// weights, and a position-uncertainty 3-vector field, together with the
/// domain lengths, the mean-displacement direction, the invariant time
/// uncertainty `sigma`, and the parameter-time increment `dt0`.
#[derive(Debug, Clone)]
pub struct CoherenceSpec {
    lengths: [f64; 3],
    density: Vec<f64>,
    quad_weights: Vec<f64>,
    dx: Vec<[f64; 3]>,
    direction: [f64; 3],
    sigma: f64,
    dt0: f64,
}

impl CoherenceSpec {
    /// Tolerance on the density normalization check.
    pub const NORM_TOL: f64 = 1e-6;

    pub fn new(
        lengths: [f64; 3],
        density: Vec<f64>,
        quad_weights: Vec<f64>,
        dx: Vec<[f64; 3]>,
        direction: [f64; 3],
        sigma: f64,
        dt0: f64,
    ) -> Result<Self, SenError> {
        let n = density.len();
        if n == 0 || quad_weights.len() != n || dx.len() != n {
            return Err(SenError::InvalidInput(
                "density, quadrature weights, and dx field must share a nonzero length".into(),
            ));
        }
        if !lengths.iter().all(|l| l.is_finite() && *l > 0.0) {
            return Err(SenError::InvalidInput("domain lengths must be > 0".into()));
        }
        if density.iter().any(|p| !(*p >= 0.0)) || quad_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(SenError::InvalidInput(
                "density and quadrature weights must be >= 0".into(),
            ));
        }
        if dx.iter().any(|v| !vec3::is_finite(*v)) {
            return Err(SenError::InvalidInput("non-finite dx field".into()));
        }
        let total: f64 = density.iter().zip(&quad_weights).map(|(p, w)| p * w).sum();
        if (total - 1.0).abs() > Self::NORM_TOL {
            return Err(SenError::InvalidInput(format!(
                "density integrates to {total}, expected 1"
            )));
        }
        if (vec3::norm(direction) - 1.0).abs() > 1e-9 {
            return Err(SenError::InvalidInput("direction must be a unit vector".into()));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(SenError::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        if !(dt0 > 0.0) || !dt0.is_finite() {
            return Err(SenError::InvalidInput(format!("dt0 must be > 0, got {dt0}")));
        }
        Ok(Self {
            lengths,
            density,
            quad_weights,
            dx,
            direction,
            sigma,
            dt0,
        })
    }

    /// Regular 1-D node chain with trapezoidal quadrature weights over
    /// `[0, extent]`; `density_of` and `dx_of` are evaluated per node
    /// coordinate. The density is renormalized by its own quadrature so the
    /// normalization invariant holds exactly.
    pub fn on_segment(
        lengths: [f64; 3],
        extent: f64,
        n_nodes: usize,
        density_of: impl Fn(f64) -> f64,
        dx_of: impl Fn(f64) -> [f64; 3],
        direction: [f64; 3],
        sigma: f64,
        dt0: f64,
    ) -> Result<Self, SenError> {
        if n_nodes < 2 || !(extent > 0.0) {
            return Err(SenError::InvalidInput(
                "segment needs >= 2 nodes and a positive extent".into(),
            ));
        }
        let h = extent / (n_nodes - 1) as f64;
        let mut density = Vec::with_capacity(n_nodes);
        let mut quad = Vec::with_capacity(n_nodes);
        let mut dx = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let x = i as f64 * h;
            density.push(density_of(x));
            quad.push(if i == 0 || i == n_nodes - 1 { 0.5 * h } else { h });
            dx.push(dx_of(x));
        }
        let total: f64 = density.iter().zip(&quad).map(|(p, w)| p * w).sum();
        if !(total > 0.0) {
            return Err(SenError::InvalidInput("density vanishes on the segment".into()));
        }
        for p in &mut density {
            *p /= total;
        }
        Self::new(lengths, density, quad, dx, direction, sigma, dt0)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dt0(&self) -> f64 {
        self.dt0
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    /// Density-weighted root mean square of a per-node scalar.
    fn weighted_rms(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.density.len() {
            let v = value(i);
            acc += self.density[i] * self.quad_weights[i] * v * v;
        }
        acc.sqrt()
    }
}

/// `kappa = rms(n . dx) / sigma`, the density-weighted root mean square of
/// the projected uncertainty divided by the invariant time uncertainty.
pub fn kappa(spec: &CoherenceSpec) -> f64 {
    spec.weighted_rms(|i| vec3::dot(spec.direction, spec.dx[i])) / spec.sigma
}

/// Expected shift modulus `kappa * lapse` for a supplied lapse value.
pub fn expected_shift_modulus(spec: &CoherenceSpec, lapse: f64) -> f64 {
    kappa(spec) * lapse
}

/// Per-axis check `length_a <= rms(dx_a)`: whether each domain dimension is
/// bounded by the density-weighted rms of the uncertainty field along it.
pub fn coherence_criterion(spec: &CoherenceSpec) -> [bool; 3] {
    let mut out = [false; 3];
    for (axis, flag) in out.iter_mut().enumerate() {
        let rms = spec.weighted_rms(|i| spec.dx[i][axis]);
        *flag = spec.lengths[axis] <= rms;
    }
    out
}
