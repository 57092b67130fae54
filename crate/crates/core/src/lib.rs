//! Numerical laboratory for a chain of coupled models: spinor-derived
//! lapse/shift geometry, a long-range self-interacting spin N-body system
//! relaxing to Lynden-Bell equilibria, time-reparametrization symmetry
//! breaking diagnostics on the resulting two-component ground state, and
//! non-unitary quantum evolution driven by Gaussian-fluctuating time
//! increments.
//!
//! Modules:
//! - [`sen`] — spinor squares to lapse/shift, magnetization, coherence-domain
//!   criterion and the `kappa` ratio.
//! - [`theta`] — classical N-body simulator with softened 1/r ferromagnetic
//!   spin coupling, water-bag initialization, coarse-graining, Lynden-Bell
//!   fits and the Fermi ground state.
//! - [`trps`] — ground-state pair distribution, the reparametrization
//!   invariant potential, component lapses, order parameter, and proper-time
//!   increment statistics.
//! - [`qdynamics`] — spectral machinery, Monte-Carlo ensembles over Gaussian
//!   time increments, the analytic averaged propagator, decoherence lifetime,
//!   event reading, and energy-feedback entanglement.
//! - [`harness`] — configuration, scenarios, and result serialization used by
//!   the `trps-lab` CLI.

pub mod harness;
pub mod qdynamics;
pub mod runtime;
pub mod sen;
pub mod theta;
pub mod trps;
pub mod vec3;
