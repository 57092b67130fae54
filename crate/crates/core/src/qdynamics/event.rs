//! Event reading (Born-rule outcome selection once interference is below
//! the uncertainty width) and the energy-feedback entanglement map.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use super::{AveragedDensity, HermitianOperator, PureState, QError, HERMITICITY_REL_TOL};

/// Absolute visibility floor, relative to the observable's Frobenius norm.
/// Below it the interference term is treated as exactly extinguished even
/// when the uncertainty width is degenerate (e.g. an exact eigenstate).
pub const VISIBILITY_ABS_FLOOR: f64 = 1e-12;

/// Result of one event-reading attempt.
#[derive(Debug, Clone)]
pub enum EventOutcome {
    /// An event fired: outcome `index` in the energy eigenbasis, together
    /// with the corresponding eigenprojection of the state.
    Event { index: usize, state: PureState },
    /// Interference is still visible; no event is permitted.
    Coherent,
}

#[derive(Debug, Clone)]
pub struct EventReading {
    /// Modulus of the off-diagonal (energy-basis) contribution to `<A>`.
    pub visibility: f64,
    /// `sqrt(Var(A))` in the supplied state.
    pub width: f64,
    pub outcome: EventOutcome,
}

/// Attempts an event reading on `rho` with observable `a`.
///
/// The interference functional is a declared operational choice: visibility
/// is the modulus of the off-diagonal contribution to `<A>` in the
/// eigenbasis of `h`, the width is the standard deviation of `A`, and an
/// event is permitted when `visibility < threshold * width` (or when the
/// visibility is below an absolute floor, which covers degenerate widths).
/// Outcomes follow the Born rule on the energy-basis diagonal of `rho`.
pub fn event_read(
    rho: &AveragedDensity,
    h: &HermitianOperator,
    a: &DMatrix<Complex64>,
    threshold: f64,
    rng: &mut impl Rng,
) -> Result<EventReading, QError> {
    let d = h.dim();
    if rho.dim() != d || a.nrows() != d || a.ncols() != d {
        return Err(QError::InvalidInput(
            "density, operator, and observable dimensions must match".into(),
        ));
    }
    let a_scale = a.norm();
    if (a - a.adjoint()).norm() > HERMITICITY_REL_TOL * a_scale {
        return Err(QError::InvalidInput("observable must be Hermitian".into()));
    }
    if !(threshold >= 0.0) {
        return Err(QError::InvalidInput("threshold must be >= 0".into()));
    }

    let rho_e = rho.in_eigenbasis(h);
    let a_e = h.eigenvectors().adjoint() * a * h.eigenvectors();

    let mut off_diag = Complex64::new(0.0, 0.0);
    for m in 0..d {
        for n in 0..d {
            if m != n {
                off_diag += rho_e[(m, n)] * a_e[(n, m)];
            }
        }
    }
    let visibility = off_diag.norm();

    let mean = (rho.matrix() * a).trace().re;
    let mean_sq = (rho.matrix() * a * a).trace().re;
    let width = (mean_sq - mean * mean).max(0.0).sqrt();

    let permitted = visibility < threshold * width || visibility <= VISIBILITY_ABS_FLOOR * a_scale;
    if !permitted {
        return Ok(EventReading {
            visibility,
            width,
            outcome: EventOutcome::Coherent,
        });
    }

    // Born rule on the energy-basis diagonal.
    let mut probs: Vec<f64> = (0..d).map(|n| rho_e[(n, n)].re.max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(QError::InvalidInput("density has no positive diagonal weight".into()));
    }
    for p in &mut probs {
        *p /= total;
    }
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    let mut index = d - 1;
    for (n, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            index = n;
            break;
        }
    }
    let state = PureState::new(h.eigenvector(index))?;
    Ok(EventReading {
        visibility,
        width,
        outcome: EventOutcome::Event { index, state },
    })
}

/// Distance between two state vectors minimized over a global phase:
/// `min_phi ||a - e^{i phi} b||`. The minimizing phase aligns `b` with the
/// overlap `<a, b>`; the residual is evaluated explicitly so that distances
/// far below sqrt(machine epsilon) remain resolvable.
pub fn phase_min_distance(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
    let overlap = a.dotc(b);
    let z = if overlap.norm() > 0.0 {
        overlap.conj() / overlap.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    (a - b.map(|v| z * v)).norm()
}

/// Controlled shift on the composite `d x d` space taking
/// `|O_n>|E_k>` to `|O_n>|E_{k+n mod d}>`. Restricted to inputs with the
/// energy register in `|E_0>` it realizes the feedback map
/// `sum_n c_n |O_n>|E_0>  ->  sum_n c_n |O_n>|E_n>`.
/// Composite index convention: `o * d + e`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyFeedback {
    dim: usize,
}

impl EnergyFeedback {
    pub fn new(dim: usize) -> Result<Self, QError> {
        if dim == 0 {
            return Err(QError::InvalidInput("dimension must be >= 1".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Applies the controlled shift to a composite vector of length `d^2`.
    pub fn apply(&self, state: &DVector<Complex64>) -> Result<DVector<Complex64>, QError> {
        let d = self.dim;
        if state.len() != d * d {
            return Err(QError::InvalidInput(format!(
                "composite state must have length {}, got {}",
                d * d,
                state.len()
            )));
        }
        let mut out = DVector::zeros(d * d);
        for o in 0..d {
            for e in 0..d {
                out[o * d + (e + o) % d] = state[o * d + e];
            }
        }
        Ok(out)
    }

    /// Builds `sum_n c_n |O_n>|E_0>` from normalized coefficients.
    pub fn domain_state(&self, coeffs: &[Complex64]) -> Result<DVector<Complex64>, QError> {
        let d = self.dim;
        if coeffs.len() != d {
            return Err(QError::InvalidInput(format!(
                "expected {d} coefficients, got {}",
                coeffs.len()
            )));
        }
        let norm2: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        if (norm2 - 1.0).abs() > 1e-12 {
            return Err(QError::InvalidInput(format!(
                "coefficients must be normalized, |c|^2 sums to {norm2}"
            )));
        }
        let mut state = DVector::zeros(d * d);
        for (o, &c) in coeffs.iter().enumerate() {
            state[o * d] = c;
        }
        Ok(state)
    }

    /// Reduced density matrix of the energy register (subject register
    /// traced out).
    pub fn energy_register_density(&self, state: &DVector<Complex64>) -> DMatrix<Complex64> {
        let d = self.dim;
        let mut out = DMatrix::zeros(d, d);
        for e1 in 0..d {
            for e2 in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for o in 0..d {
                    acc += state[o * d + e1] * state[o * d + e2].conj();
                }
                out[(e1, e2)] = acc;
            }
        }
        out
    }
}

/// Runs the full feedback process: builds `sum_n c_n |O_n>|E_0>`, applies
/// the controlled shift, and returns `sum_n c_n |O_n>|E_n>`.
pub fn energy_feedback(coeffs: &[Complex64]) -> Result<DVector<Complex64>, QError> {
    let map = EnergyFeedback::new(coeffs.len())?;
    let input = map.domain_state(coeffs)?;
    map.apply(&input)
}
