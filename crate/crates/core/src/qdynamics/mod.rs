//! Stochastic-time quantum evolution engine.
//!
//! A Hermitian operator is diagonalized once and cached; every evolution is
//! then a spectral function of it. Time increments fluctuate around their
//! trial mean with a normal law of mean `mu` and variance `sigma * mu`, so a
//! trajectory's total elapsed time over duration `t` is `Normal(t, sigma*t)`
//! and the ensemble-averaged propagator is
//! `G(t) = sum_k exp(-i t l_k / hbar - sigma t l_k^2 / (2 hbar^2)) P_k`,
//! a contraction semigroup in `t`.

mod event;

pub use event::{
    energy_feedback, event_read, phase_min_distance, EnergyFeedback, EventOutcome, EventReading,
};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::runtime::worker_threads;

/// Relative Frobenius tolerance on `||H - H^dag||`.
pub const HERMITICITY_REL_TOL: f64 = 1e-12;
/// Tolerance on eigenvector orthonormality.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Tolerance on reconstructing `H` (and `H^2`) from the spectral family.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
/// Tolerance on pure-state normalization.
pub const STATE_NORM_TOL: f64 = 1e-12;
/// Tolerance on density-matrix trace and positive semidefiniteness.
pub const DENSITY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum QError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("spectral decomposition failed: {0}")]
    Spectral(String),
}

/// Hermitian operator with its cached spectral decomposition
/// (eigenvalues ascending, orthonormal eigenvector columns).
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    dim: usize,
    matrix: DMatrix<Complex64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<Complex64>,
}

impl HermitianOperator {
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self, QError> {
        let dim = matrix.nrows();
        if dim == 0 || matrix.ncols() != dim {
            return Err(QError::InvalidInput(format!(
                "operator must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QError::InvalidInput("non-finite matrix entry".into()));
        }
        let scale = matrix.norm();
        let defect = (&matrix - matrix.adjoint()).norm();
        if defect > HERMITICITY_REL_TOL * scale {
            return Err(QError::InvalidInput(format!(
                "matrix is not Hermitian: ||H - H^dag|| = {defect:e} > {HERMITICITY_REL_TOL:e} * {scale:e}"
            )));
        }
        // Work on the exactly Hermitian part.
        let sym = (&matrix + matrix.adjoint()).scale(0.5);
        let eig = sym.clone().symmetric_eigen();

        // Ascending eigenvalue order, columns permuted in step.
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut eigenvectors = DMatrix::<Complex64>::zeros(dim, dim);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }

        let op = Self {
            dim,
            matrix: sym,
            eigenvalues,
            eigenvectors,
        };
        op.verify_spectral()?;
        Ok(op)
    }

    /// Diagonal operator with the given real entries.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self, QError> {
        let m = DMatrix::from_fn(diag.len(), diag.len(), |r, c| {
            if r == c {
                Complex64::new(diag[r], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Self::new(m)
    }

    /// Checks the cached spectral family: orthonormal eigenvectors,
    /// `H = sum l_k P_k`, and `H^2 = sum l_k^2 P_k`.
    fn verify_spectral(&self) -> Result<(), QError> {
        let v = &self.eigenvectors;
        let id = DMatrix::<Complex64>::identity(self.dim, self.dim);
        let orth = (v.adjoint() * v - &id).norm();
        if orth > ORTHONORMALITY_TOL {
            return Err(QError::Spectral(format!(
                "eigenvector orthonormality defect {orth:e}"
            )));
        }
        let scale = 1.0 + self.matrix.norm();
        let rec = (self.apply_spectral_fn(|l| Complex64::new(l, 0.0)) - &self.matrix).norm();
        if rec > RECONSTRUCTION_TOL * scale {
            return Err(QError::Spectral(format!("reconstruction defect {rec:e}")));
        }
        let h2 = &self.matrix * &self.matrix;
        let scale2 = 1.0 + h2.norm();
        let rec2 = (self.apply_spectral_fn(|l| Complex64::new(l * l, 0.0)) - h2).norm();
        if rec2 > RECONSTRUCTION_TOL * scale2 {
            return Err(QError::Spectral(format!("square reconstruction defect {rec2:e}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> DVector<Complex64> {
        DVector::from_column_slice(self.eigenvectors.column(k).as_slice())
    }

    pub fn eigenvectors(&self) -> &DMatrix<Complex64> {
        &self.eigenvectors
    }

    /// Rank-one spectral projector `P_k = v_k v_k^dag`.
    pub fn projector(&self, k: usize) -> DMatrix<Complex64> {
        let v = self.eigenvectors.column(k);
        let mut p = DMatrix::<Complex64>::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                p[(r, c)] = v[r] * v[c].conj();
            }
        }
        p
    }

    /// `sum_k f(l_k) P_k` as a dense matrix.
    pub fn apply_spectral_fn(&self, f: impl Fn(f64) -> Complex64) -> DMatrix<Complex64> {
        let mut scaled = self.eigenvectors.clone();
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            let fk = f(l);
            for r in 0..self.dim {
                scaled[(r, k)] *= fk;
            }
        }
        scaled * self.eigenvectors.adjoint()
    }

    /// Coordinates of `psi` in the eigenbasis.
    fn to_eigenbasis(&self, psi: &DVector<Complex64>) -> DVector<Complex64> {
        self.eigenvectors.adjoint() * psi
    }

    fn from_eigenbasis(&self, coeffs: &DVector<Complex64>) -> DVector<Complex64> {
        &self.eigenvectors * coeffs
    }
}

/// Spectrum plus materialized projectors; eigenvalues ascending.
pub fn spectral(h: &HermitianOperator) -> (Vec<f64>, Vec<DMatrix<Complex64>>) {
    let projectors = (0..h.dim()).map(|k| h.projector(k)).collect();
    (h.eigenvalues().to_vec(), projectors)
}

/// Normalized state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amps: DVector<Complex64>,
}

impl PureState {
    pub fn new(amps: DVector<Complex64>) -> Result<Self, QError> {
        if amps.is_empty() {
            return Err(QError::InvalidInput("empty state vector".into()));
        }
        let norm = amps.norm();
        if (norm - 1.0).abs() > STATE_NORM_TOL {
            return Err(QError::InvalidInput(format!(
                "state norm {norm} deviates from 1 beyond {STATE_NORM_TOL:e}"
            )));
        }
        Ok(Self { amps })
    }

    /// Basis vector `|index>` in dimension `dim`.
    pub fn basis(dim: usize, index: usize) -> Result<Self, QError> {
        if index >= dim {
            return Err(QError::InvalidInput(format!(
                "basis index {index} out of range for dimension {dim}"
            )));
        }
        let mut amps = DVector::zeros(dim);
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { amps })
    }

    /// Normalizes the input, rejecting the zero vector.
    pub fn normalized(amps: DVector<Complex64>) -> Result<Self, QError> {
        let norm = amps.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(QError::InvalidInput("cannot normalize zero state".into()));
        }
        Ok(Self {
            amps: amps.map(|z| z / norm),
        })
    }

    fn from_raw(amps: DVector<Complex64>) -> Self {
        Self { amps }
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    /// |<self|other>|.
    pub fn overlap(&self, other: &Self) -> f64 {
        self.amps.dotc(&other.amps).norm()
    }
}

/// Ensemble-averaged density matrix: Hermitian, unit trace, positive
/// semidefinite within [`DENSITY_TOL`].
#[derive(Debug, Clone)]
pub struct AveragedDensity {
    mat: DMatrix<Complex64>,
}

impl AveragedDensity {
    pub fn new(mat: DMatrix<Complex64>) -> Result<Self, QError> {
        let d = mat.nrows();
        if d == 0 || mat.ncols() != d {
            return Err(QError::InvalidInput("density matrix must be square".into()));
        }
        let scale = 1.0 + mat.norm();
        let defect = (&mat - mat.adjoint()).norm();
        if defect > DENSITY_TOL * scale {
            return Err(QError::InvalidInput(format!(
                "density matrix not Hermitian: defect {defect:e}"
            )));
        }
        let trace = mat.trace();
        if (trace.re - 1.0).abs() > DENSITY_TOL || trace.im.abs() > DENSITY_TOL {
            return Err(QError::InvalidInput(format!(
                "density trace {trace} deviates from 1"
            )));
        }
        let sym = (&mat + mat.adjoint()).scale(0.5);
        let min_eig = sym
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -DENSITY_TOL {
            return Err(QError::InvalidInput(format!(
                "density matrix has eigenvalue {min_eig:e} below -{DENSITY_TOL:e}"
            )));
        }
        Ok(Self { mat })
    }

    /// Pure-state projector `|psi><psi|`.
    pub fn pure(psi: &PureState) -> Self {
        let d = psi.dim();
        let a = psi.amplitudes();
        let mut mat = DMatrix::zeros(d, d);
        for r in 0..d {
            for c in 0..d {
                mat[(r, c)] = a[r] * a[c].conj();
            }
        }
        Self { mat }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn trace_re(&self) -> f64 {
        self.mat.trace().re
    }

    pub fn entry(&self, m: usize, n: usize) -> Complex64 {
        self.mat[(m, n)]
    }

    /// Representation in the eigenbasis of `h`.
    pub fn in_eigenbasis(&self, h: &HermitianOperator) -> DMatrix<Complex64> {
        h.eigenvectors().adjoint() * &self.mat * h.eigenvectors()
    }
}

/// Statistical law of proper-time increments: trials have mean `mu_t` and
/// variance `sigma * mu_t`; `sigma` carries time units.
#[derive(Debug, Clone, Copy)]
pub struct IncrementLaw {
    pub mu_t: f64,
    pub sigma: f64,
    pub hbar: f64,
}

impl IncrementLaw {
    pub fn new(mu_t: f64, sigma: f64, hbar: f64) -> Result<Self, QError> {
        if !(mu_t > 0.0) || !mu_t.is_finite() {
            return Err(QError::InvalidInput(format!("mu_t must be > 0, got {mu_t}")));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(QError::InvalidInput(format!("sigma must be >= 0, got {sigma}")));
        }
        if !(hbar > 0.0) || !hbar.is_finite() {
            return Err(QError::InvalidInput(format!("hbar must be > 0, got {hbar}")));
        }
        Ok(Self { mu_t, sigma, hbar })
    }
}

/// One unitary update `exp(-i dt H / hbar) psi` through the spectral cache.
/// `dt` may be negative; the norm is preserved to rounding.
pub fn unitary_step(psi: &PureState, dt: f64, h: &HermitianOperator, hbar: f64) -> PureState {
    let mut coeffs = h.to_eigenbasis(psi.amplitudes());
    for (k, &l) in h.eigenvalues().iter().enumerate() {
        coeffs[k] *= Complex64::from_polar(1.0, -l * dt / hbar);
    }
    PureState::from_raw(h.from_eigenbasis(&coeffs))
}

/// Monte-Carlo ensemble average over `m` trajectories.
///
/// Each trajectory draws its total elapsed time `dT ~ Normal(t, sigma*t)`
/// (the exact distribution of a sum of iid per-step increments totalling
/// `t`), evolves unitarily by `dT`, and contributes its outer product. The
/// result is renormalized to unit trace. Trajectory `j` derives its stream
/// from `(seed, j)`, so the result is bit-identical for every worker-thread
/// count.
pub fn evolve_mc(
    psi0: &PureState,
    t: f64,
    h: &HermitianOperator,
    law: &IncrementLaw,
    m: usize,
    seed: u64,
) -> Result<AveragedDensity, QError> {
    evolve_mc_with_workers(psi0, t, h, law, m, seed, worker_threads())
}

fn evolve_mc_with_workers(
    psi0: &PureState,
    t: f64,
    h: &HermitianOperator,
    law: &IncrementLaw,
    m: usize,
    seed: u64,
    workers: usize,
) -> Result<AveragedDensity, QError> {
    if m == 0 {
        return Err(QError::InvalidInput("trajectory count must be >= 1".into()));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(QError::InvalidInput(format!("time must be > 0, got {t}")));
    }
    if psi0.dim() != h.dim() {
        return Err(QError::InvalidInput("state/operator dimension mismatch".into()));
    }
    let d = h.dim();
    let std = (law.sigma * t).sqrt();
    let normal = Normal::new(t, std)
        .map_err(|e| QError::InvalidInput(format!("bad increment law: {e}")))?;
    let coeffs0 = h.to_eigenbasis(psi0.amplitudes());

    const CHUNK: usize = 256;
    let n_chunks = m.div_ceil(CHUNK);
    let mut partials: Vec<DMatrix<Complex64>> = vec![DMatrix::zeros(d, d); n_chunks];

    let run_chunk = |chunk: usize, acc: &mut DMatrix<Complex64>| {
        let lo = chunk * CHUNK;
        let hi = ((chunk + 1) * CHUNK).min(m);
        let mut coeffs = DVector::<Complex64>::zeros(d);
        let mut psi = DVector::<Complex64>::zeros(d);
        for j in lo..hi {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let dt = normal.sample(&mut rng);
            for (k, &l) in h.eigenvalues().iter().enumerate() {
                coeffs[k] = coeffs0[k] * Complex64::from_polar(1.0, -l * dt / law.hbar);
            }
            h.eigenvectors().mul_to(&coeffs, &mut psi);
            for r in 0..d {
                for c in 0..d {
                    acc[(r, c)] += psi[r] * psi[c].conj();
                }
            }
        }
    };

    let workers = workers.min(n_chunks).max(1);
    if workers == 1 {
        for (chunk, acc) in partials.iter_mut().enumerate() {
            run_chunk(chunk, acc);
        }
    } else {
        // Contiguous chunk ranges per worker; fold order below stays fixed.
        let per = n_chunks.div_ceil(workers);
        std::thread::scope(|scope| {
            for (w, slice) in partials.chunks_mut(per).enumerate() {
                let run_chunk = &run_chunk;
                scope.spawn(move || {
                    for (off, acc) in slice.iter_mut().enumerate() {
                        run_chunk(w * per + off, acc);
                    }
                });
            }
        });
    }

    let mut sum = DMatrix::<Complex64>::zeros(d, d);
    for p in &partials {
        sum += p;
    }
    let trace = sum.trace().re;
    AveragedDensity::new(sum.map(|z| z / trace))
}

/// Averaged state vector `sum_k exp(-i t l_k / hbar - sigma t l_k^2 /
/// (2 hbar^2)) P_k psi0`. The output norm is at most 1 and non-increasing
/// in `t`, so it is returned as a bare vector rather than a [`PureState`].
pub fn evolve_analytic_vector(
    psi0: &PureState,
    t: f64,
    h: &HermitianOperator,
    law: &IncrementLaw,
) -> DVector<Complex64> {
    let mut coeffs = h.to_eigenbasis(psi0.amplitudes());
    for (k, &l) in h.eigenvalues().iter().enumerate() {
        let damp = (-law.sigma * t * l * l / (2.0 * law.hbar * law.hbar)).exp();
        coeffs[k] *= Complex64::from_polar(damp, -l * t / law.hbar);
    }
    h.from_eigenbasis(&coeffs)
}

/// Averaged density evolution: in the eigenbasis of `h`,
/// `rho_mn(t) = rho_mn(0) exp(-i (l_m - l_n) t / hbar
///                            - sigma t (l_m - l_n)^2 / (2 hbar^2))`.
/// Diagonal entries are constant and the trace is preserved.
pub fn evolve_analytic_density(
    rho0: &AveragedDensity,
    t: f64,
    h: &HermitianOperator,
    law: &IncrementLaw,
) -> Result<AveragedDensity, QError> {
    if rho0.dim() != h.dim() {
        return Err(QError::InvalidInput("density/operator dimension mismatch".into()));
    }
    let d = h.dim();
    let mut in_basis = rho0.in_eigenbasis(h);
    let ls = h.eigenvalues();
    for m in 0..d {
        for n in 0..d {
            let w = ls[m] - ls[n];
            let damp = (-law.sigma * t * w * w / (2.0 * law.hbar * law.hbar)).exp();
            in_basis[(m, n)] *= Complex64::from_polar(damp, -w * t / law.hbar);
        }
    }
    AveragedDensity::new(h.eigenvectors() * in_basis * h.eigenvectors().adjoint())
}

/// Averaged propagator `G(t)` as a dense matrix.
pub fn propagator(h: &HermitianOperator, t: f64, law: &IncrementLaw) -> DMatrix<Complex64> {
    h.apply_spectral_fn(|l| {
        let damp = (-law.sigma * t * l * l / (2.0 * law.hbar * law.hbar)).exp();
        Complex64::from_polar(damp, -l * t / law.hbar)
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SemigroupReport {
    /// `||G(t1) G(t2) - G(t1+t2)||` (Frobenius).
    pub composition_error: f64,
    /// Operator norms of `G(t1)`, `G(t2)`, `G(t1+t2)`.
    pub norms: [f64; 3],
    pub pass: bool,
}

/// Tolerance on the semigroup composition law.
pub const SEMIGROUP_TOL: f64 = 1e-12;

/// Checks `G(t1) G(t2) = G(t1+t2)` and `||G(t)|| <= 1` by explicit matrix
/// products.
pub fn semigroup_check(
    h: &HermitianOperator,
    law: &IncrementLaw,
    t1: f64,
    t2: f64,
) -> SemigroupReport {
    let g1 = propagator(h, t1, law);
    let g2 = propagator(h, t2, law);
    let g12 = propagator(h, t1 + t2, law);
    let composition_error = (&g1 * &g2 - &g12).norm();
    let op_norm = |g: &DMatrix<Complex64>| -> f64 {
        (g.adjoint() * g)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(0.0, f64::max)
            .max(0.0)
            .sqrt()
    };
    let norms = [op_norm(&g1), op_norm(&g2), op_norm(&g12)];
    let pass = composition_error <= SEMIGROUP_TOL && norms.iter().all(|&n| n <= 1.0 + SEMIGROUP_TOL);
    SemigroupReport {
        composition_error,
        norms,
        pass,
    }
}

/// Coherence lifetime `2 hbar^2 / (sigma dE^2)`; infinite when `sigma` or
/// `dE` vanishes.
pub fn lifetime(sigma: f64, delta_e: f64, hbar: f64) -> f64 {
    if sigma == 0.0 || delta_e == 0.0 {
        return f64::INFINITY;
    }
    2.0 * hbar * hbar / (sigma * delta_e * delta_e)
}

/// Seeded random Hermitian operator with entries of order one (diagnostic
/// workloads and checks).
pub fn random_hermitian(dim: usize, seed: u64) -> Result<HermitianOperator, QError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    for r in 0..dim {
        for c in r..dim {
            let re = rng.gen_range(-1.0..1.0);
            let im = if r == c { 0.0 } else { rng.gen_range(-1.0..1.0) };
            m[(r, c)] = Complex64::new(re, im);
            m[(c, r)] = Complex64::new(re, -im);
        }
    }
    HermitianOperator::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn random_hermitian(dim: usize, seed: u64) -> HermitianOperator {
        super::random_hermitian(dim, seed).unwrap()
    }

    fn superposition(h: &HermitianOperator, weights: &[(usize, f64)]) -> PureState {
        let mut amps = DVector::<Complex64>::zeros(h.dim());
        for &(k, w) in weights {
            amps += h.eigenvector(k).map(|z| z * w);
        }
        PureState::normalized(amps).unwrap()
    }

    #[test]
    fn spectral_diag_examples() {
        let h = HermitianOperator::from_diagonal(&[0.0, 1.0]).unwrap();
        assert_eq!(h.eigenvalues(), &[0.0, 1.0]);

        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        let h = HermitianOperator::new(m).unwrap();
        assert_relative_eq!(h.eigenvalues()[0], -1.0, max_relative = 1e-12);
        assert_relative_eq!(h.eigenvalues()[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn spectral_reconstructs_random_operator() {
        let h = random_hermitian(8, 21);
        let (ls, ps) = spectral(&h);
        assert!(ls.windows(2).all(|w| w[0] <= w[1]), "ascending order");
        let mut rec = DMatrix::<Complex64>::zeros(8, 8);
        let mut rec2 = DMatrix::<Complex64>::zeros(8, 8);
        for (l, p) in ls.iter().zip(&ps) {
            rec += p.map(|z| z * *l);
            rec2 += p.map(|z| z * l * l);
        }
        assert!((rec - h.matrix()).norm() < 1e-10);
        assert!((rec2 - h.matrix() * h.matrix()).norm() < 1e-10);
    }

    #[test]
    fn spectral_rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.5, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        assert!(HermitianOperator::new(m).is_err());
    }

    #[test]
    fn unitary_step_identity_and_eigenstate() {
        let h = random_hermitian(5, 3);
        let psi = superposition(&h, &[(0, 0.6), (3, 0.8)]);
        let stepped = unitary_step(&psi, 0.0, &h, 1.0);
        assert!((stepped.amplitudes() - psi.amplitudes()).norm() < 1e-14);

        // Eigenstate input: only a global phase; moduli unchanged.
        let eig = PureState::new(h.eigenvector(2)).unwrap();
        let stepped = unitary_step(&eig, 0.7, &h, 1.0);
        for k in 0..5 {
            assert!(
                (stepped.amplitudes()[k].norm() - eig.amplitudes()[k].norm()).abs() < 1e-12
            );
        }
        assert_relative_eq!(eig.overlap(&stepped), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unitary_group_law_and_norm() {
        let h = random_hermitian(6, 5);
        let psi = superposition(&h, &[(0, 0.3), (2, 0.5), (5, 0.8)]);
        let a = 0.37;
        let b = -1.21;
        let lhs = unitary_step(&unitary_step(&psi, b, &h, 1.0), a, &h, 1.0);
        let rhs = unitary_step(&psi, a + b, &h, 1.0);
        assert!((lhs.amplitudes() - rhs.amplitudes()).norm() < 1e-12);
        assert!((lhs.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evolve_mc_degenerate_sigma_is_unitary() {
        let h = random_hermitian(4, 9);
        let law = IncrementLaw::new(0.01, 0.0, 1.0).unwrap();
        let psi = superposition(&h, &[(0, 0.6), (1, 0.8)]);
        let rho = evolve_mc(&psi, 1.3, &h, &law, 32, 7).unwrap();
        let expected = AveragedDensity::pure(&unitary_step(&psi, 1.3, &h, 1.0));
        assert!((rho.matrix() - expected.matrix()).norm() < 1e-12);
    }

    #[test]
    fn evolve_mc_eigenstate_is_stationary() {
        let h = random_hermitian(4, 13);
        let law = IncrementLaw::new(0.01, 0.4, 1.0).unwrap();
        let psi = PureState::new(h.eigenvector(1)).unwrap();
        let rho = evolve_mc(&psi, 2.0, &h, &law, 64, 3).unwrap();
        let expected = AveragedDensity::pure(&psi);
        assert!((rho.matrix() - expected.matrix()).norm() < 1e-12);
    }

    #[test]
    fn evolve_mc_matches_gaussian_characteristic_function() {
        // Two-level superposition: the averaged off-diagonal follows
        // exp(-i w t - sigma t w^2 / 2) with w = (E0 - E1) / hbar.
        let h = HermitianOperator::from_diagonal(&[0.0, 1.0]).unwrap();
        let law = IncrementLaw::new(0.01, 0.1, 1.0).unwrap();
        let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let psi = PureState::new(DVector::from_vec(vec![amp, amp])).unwrap();
        let m = 20_000usize;
        let tol = 3.0 / (m as f64).sqrt() * 0.5;
        for &t in &[2.0, 10.0, 20.0] {
            let rho = evolve_mc(&psi, t, &h, &law, m, 42).unwrap();
            let w = -1.0;
            let analytic = Complex64::from_polar(
                0.5 * (-law.sigma * t * w * w / 2.0).exp(),
                -w * t,
            );
            let got = rho.entry(0, 1);
            assert!(
                (got - analytic).norm() < tol,
                "t={t}: {got} vs {analytic}, tol {tol}"
            );
        }
    }

    #[test]
    fn evolve_mc_trace_is_one() {
        let h = random_hermitian(3, 15);
        let law = IncrementLaw::new(0.02, 0.3, 1.0).unwrap();
        let psi = superposition(&h, &[(0, 1.0), (2, 1.0)]);
        for (m, t, seed) in [(1usize, 0.5, 0u64), (37, 2.0, 5), (512, 7.0, 9)] {
            let rho = evolve_mc(&psi, t, &h, &law, m, seed).unwrap();
            assert!((rho.trace_re() - 1.0).abs() <= 8.0 * f64::EPSILON);
        }
    }

    #[test]
    fn evolve_mc_worker_count_does_not_change_bits() {
        let h = random_hermitian(3, 23);
        let law = IncrementLaw::new(0.02, 0.2, 1.0).unwrap();
        let psi = superposition(&h, &[(0, 1.0), (1, 1.0)]);
        let baseline = evolve_mc_with_workers(&psi, 1.0, &h, &law, 700, 11, 1).unwrap();
        for workers in [2usize, 3, 5] {
            let threaded =
                evolve_mc_with_workers(&psi, 1.0, &h, &law, 700, 11, workers).unwrap();
            assert_eq!(baseline.matrix(), threaded.matrix());
        }
    }

    #[test]
    fn analytic_vector_matches_quadrature_average() {
        // One-dimensional Gaussian quadrature over the increment law,
        // applied per eigencomponent, is the oracle for the closed form.
        let h = random_hermitian(4, 31);
        let law = IncrementLaw::new(0.01, 0.25, 1.0).unwrap();
        let psi = superposition(&h, &[(0, 0.5), (1, 0.5), (3, 0.7)]);
        let t = 1.7;
        let std = (law.sigma * t).sqrt();
        let quad_factor = |l: f64| -> Complex64 {
            // Trapezoid over +-10 standard deviations.
            let n = 200_001usize;
            let lo = t - 10.0 * std;
            let hi = t + 10.0 * std;
            let hstep = (hi - lo) / (n - 1) as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let x = lo + i as f64 * hstep;
                let weight = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let gauss = (-(x - t) * (x - t) / (2.0 * std * std)).exp()
                    / (std * (2.0 * std::f64::consts::PI).sqrt());
                acc += Complex64::from_polar(weight * gauss * hstep, -l * x / law.hbar);
            }
            acc
        };
        let got = evolve_analytic_vector(&psi, t, &h, &law);
        let coeffs = h.to_eigenbasis(psi.amplitudes());
        let mut want = DVector::<Complex64>::zeros(4);
        for (k, &l) in h.eigenvalues().iter().enumerate() {
            want[k] = coeffs[k] * quad_factor(l);
        }
        let want = h.from_eigenbasis(&want);
        assert!((got - want).norm() < 1e-6);
    }

    #[test]
    fn analytic_vector_identity_and_zero_eigenvalue() {
        let h = HermitianOperator::from_diagonal(&[0.0, 2.0]).unwrap();
        let law = IncrementLaw::new(0.01, 0.5, 1.0).unwrap();
        let psi = PureState::basis(2, 0).unwrap();
        let at0 = evolve_analytic_vector(&psi, 0.0, &h, &law);
        assert!((at0 - psi.amplitudes()).norm() < 1e-14);
        // lambda = 0 kills both exponents for all t.
        let later = evolve_analytic_vector(&psi, 25.0, &h, &law);
        assert!((later - psi.amplitudes()).norm() < 1e-14);
    }

    #[test]
    fn analytic_vector_norm_non_increasing() {
        let h = random_hermitian(5, 37);
        let law = IncrementLaw::new(0.01, 0.2, 1.0).unwrap();
        let psi = superposition(&h, &[(1, 0.8), (4, 0.6)]);
        let mut prev = 1.0;
        for step in 0..20 {
            let t = step as f64 * 0.5;
            let norm = evolve_analytic_vector(&psi, t, &h, &law).norm();
            assert!(norm <= prev + 1e-12);
            assert!(norm <= 1.0 + 1e-12);
            prev = norm;
        }
    }

    #[test]
    fn analytic_density_diagonal_constant_offdiag_decay() {
        let h = HermitianOperator::from_diagonal(&[0.0, 1.0]).unwrap();
        let law = IncrementLaw::new(0.01, 0.1, 1.0).unwrap();
        let psi = superposition(&h, &[(0, 1.0), (1, 1.0)]);
        let rho0 = AveragedDensity::pure(&psi);
        let mut prev_mod = 0.5;
        for step in 1..=10 {
            let t = step as f64 * 2.0;
            let rho = evolve_analytic_density(&rho0, t, &h, &law).unwrap();
            assert_relative_eq!(rho.entry(0, 0).re, 0.5, epsilon = 1e-12);
            assert_relative_eq!(rho.entry(1, 1).re, 0.5, epsilon = 1e-12);
            let off = rho.entry(0, 1).norm();
            // |rho_01(t)| = 0.5 exp(-sigma t dE^2 / (2 hbar^2))
            assert_relative_eq!(
                off,
                0.5 * (-law.sigma * t / 2.0).exp(),
                max_relative = 1e-12
            );
            assert!(off < prev_mod);
            prev_mod = off;
        }
    }

    #[test]
    fn analytic_density_diagonal_input_constant() {
        let h = random_hermitian(4, 41);
        let law = IncrementLaw::new(0.01, 0.3, 1.0).unwrap();
        // Diagonal in the eigenbasis of h.
        let mut in_basis = DMatrix::<Complex64>::zeros(4, 4);
        for (k, w) in [(0usize, 0.4), (1, 0.3), (2, 0.2), (3, 0.1)] {
            in_basis[(k, k)] = Complex64::new(w, 0.0);
        }
        let rho0 =
            AveragedDensity::new(h.eigenvectors() * in_basis * h.eigenvectors().adjoint())
                .unwrap();
        let rho = evolve_analytic_density(&rho0, 9.0, &h, &law).unwrap();
        assert!((rho.matrix() - rho0.matrix()).norm() < 1e-10);
    }

    #[test]
    fn analytic_density_agrees_with_mc() {
        let h = random_hermitian(4, 43);
        let law = IncrementLaw::new(0.01, 0.15, 1.0).unwrap();
        let psi = superposition(&h, &[(0, 0.7), (2, 0.7), (3, 0.4)]);
        let m = 10_000usize;
        let t = 3.0;
        let mc = evolve_mc(&psi, t, &h, &law, m, 77).unwrap();
        let analytic = evolve_analytic_density(&AveragedDensity::pure(&psi), t, &h, &law).unwrap();
        let tol = 3.0 / (m as f64).sqrt();
        assert!(
            (mc.matrix() - analytic.matrix()).norm() < tol,
            "{} vs tol {tol}",
            (mc.matrix() - analytic.matrix()).norm()
        );
    }

    #[test]
    fn mc_converges_at_root_m_rate() {
        let h = HermitianOperator::from_diagonal(&[0.0, 1.0]).unwrap();
        let law = IncrementLaw::new(0.01, 0.2, 1.0).unwrap();
        let psi = superposition(&h, &[(0, 1.0), (1, 1.0)]);
        let t = 5.0;
        let analytic = evolve_analytic_density(&AveragedDensity::pure(&psi), t, &h, &law).unwrap();
        let mut errs = Vec::new();
        for &m in &[100usize, 1000, 10_000] {
            // Average the error over seeds to beat noise in the rate check.
            let mut err = 0.0;
            for seed in 0..8 {
                let mc = evolve_mc(&psi, t, &h, &law, m, seed).unwrap();
                err += (mc.matrix() - analytic.matrix()).norm();
            }
            errs.push(err / 8.0);
        }
        // Each 10x in M should shrink the error by roughly sqrt(10); allow
        // a generous band around that.
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                ratio > 1.5 && ratio < 7.0,
                "convergence ratios off: {errs:?}"
            );
        }
    }

    #[test]
    fn semigroup_on_random_operators() {
        for seed in 0..5 {
            let h = random_hermitian(6, 100 + seed);
            let law = IncrementLaw::new(0.01, 0.3, 1.0).unwrap();
            let report = semigroup_check(&h, &law, 1.0, 1.0);
            assert!(report.pass, "{report:?}");
        }
    }

    #[test]
    fn semigroup_unitary_limit_and_identity() {
        let h = random_hermitian(5, 111);
        let law = IncrementLaw::new(0.01, 0.0, 1.0).unwrap();
        let report = semigroup_check(&h, &law, 0.7, 1.9);
        assert!(report.pass);
        for n in report.norms {
            assert_relative_eq!(n, 1.0, epsilon = 1e-10);
        }
        let g0 = propagator(&h, 0.0, &law);
        assert!((g0 - DMatrix::<Complex64>::identity(5, 5)).norm() < 1e-12);
    }

    #[test]
    fn lifetime_examples() {
        assert_relative_eq!(lifetime(1.0, 1.0, 1.0), 2.0);
        assert_relative_eq!(lifetime(2.0, 1.0, 1.0), 1.0);
        assert_eq!(lifetime(0.0, 1.0, 1.0), f64::INFINITY);
        assert_eq!(lifetime(0.5, 0.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn lifetime_matches_fitted_efolding_time() {
        // Exponential-fit oracle: linear regression of log |rho_01| vs t.
        let h = HermitianOperator::from_diagonal(&[0.0, 1.0]).unwrap();
        let sigma = 0.1;
        let law = IncrementLaw::new(0.01, sigma, 1.0).unwrap();
        let psi = superposition(&h, &[(0, 1.0), (1, 1.0)]);
        let rho0 = AveragedDensity::pure(&psi);
        let mut ts = Vec::new();
        let mut logs = Vec::new();
        for step in 1..=40 {
            let t = step as f64;
            let rho = evolve_analytic_density(&rho0, t, &h, &law).unwrap();
            ts.push(t);
            logs.push(rho.entry(0, 1).norm().ln());
        }
        let n = ts.len() as f64;
        let mean_t = ts.iter().sum::<f64>() / n;
        let mean_l = logs.iter().sum::<f64>() / n;
        let slope = ts
            .iter()
            .zip(&logs)
            .map(|(t, l)| (t - mean_t) * (l - mean_l))
            .sum::<f64>()
            / ts.iter().map(|t| (t - mean_t) * (t - mean_t)).sum::<f64>();
        let fitted = -1.0 / slope;
        assert_relative_eq!(fitted, lifetime(sigma, 1.0, 1.0), max_relative = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn phase_equivalence_dichotomy(seed in 0u64..200) {
            // Distance minimized over a global phase vanishes exactly for
            // eigenstates and stays positive for genuine superpositions.
            let h = random_hermitian(5, seed);
            // Generic spectrum only: near-degenerate eigenvalues degrade the
            // numerical eigenbasis itself.
            let min_gap = h
                .eigenvalues()
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min);
            prop_assume!(min_gap > 1e-2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let dt1 = rng.gen_range(-1.0..1.0);
            let dt2 = dt1 + 1.0;
            let k = rng.gen_range(0..5usize);
            let eig = PureState::new(h.eigenvector(k)).unwrap();
            let d_eig = phase_min_distance(
                unitary_step(&eig, dt1, &h, 1.0).amplitudes(),
                unitary_step(&eig, dt2, &h, 1.0).amplitudes(),
            );
            prop_assert!(d_eig < 1e-12);

            let j = (k + 1) % 5;
            // Skip spectra where the two occupied levels have a phase gap
            // near a multiple of 2 pi over dt2 - dt1 = 1.
            let gap = h.eigenvalues()[k] - h.eigenvalues()[j];
            let tau = std::f64::consts::TAU;
            let wrapped = (gap.abs() % tau).min(tau - gap.abs() % tau);
            prop_assume!(wrapped > 0.05);
            let sup = superposition(&h, &[(k, 0.8), (j, 0.6)]);
            let d_sup = phase_min_distance(
                unitary_step(&sup, dt1, &h, 1.0).amplitudes(),
                unitary_step(&sup, dt2, &h, 1.0).amplitudes(),
            );
            prop_assert!(d_sup > 1e-3, "superposition distance {d_sup}");
        }

        #[test]
        fn mc_trace_exact(seed in 0u64..50, m in 1usize..200) {
            let h = random_hermitian(3, 1000 + seed);
            let law = IncrementLaw::new(0.01, 0.4, 1.0).unwrap();
            let psi = superposition(&h, &[(0, 1.0), (2, 1.0)]);
            let rho = evolve_mc(&psi, 1.0, &h, &law, m, seed).unwrap();
            prop_assert!((rho.trace_re() - 1.0).abs() <= 8.0 * f64::EPSILON);
        }
    }
}
