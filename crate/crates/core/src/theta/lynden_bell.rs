//! Coarse-grained phase-space histograms, Lynden-Bell (Fermi-Dirac form)
//! fits with one or two components, and the zero-temperature ground state.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::{one_particle_energies, SimConfig, ThetaError, ThetaParticle};

/// A two-component fit whose `beta` exceeds `BETA_INFINITE_FACTOR /
/// energy_scale` is treated as effectively at zero temperature.
pub const BETA_INFINITE_FACTOR: f64 = 1e4;

/// Histogram of one-particle energies carrying a phase-space density
/// estimate per bin.
#[derive(Debug, Clone)]
pub struct PhaseSpaceHistogram {
    /// `n_bins + 1` strictly increasing bin edges (energy units).
    pub edges: Vec<f64>,
    /// Estimated phase-space density `f_k` per bin (units of the
    /// fine-grained level `eta`).
    pub occupancy: Vec<f64>,
    /// Particles per bin.
    pub counts: Vec<usize>,
    /// Occupied 6-D phase-space volume per bin.
    pub occupied_volume: Vec<f64>,
}

impl PhaseSpaceHistogram {
    /// Histogram from direct density samples (synthetic data); every bin is
    /// marked occupied so it participates in fits.
    pub fn from_density_samples(edges: Vec<f64>, occupancy: Vec<f64>) -> Result<Self, ThetaError> {
        let hist = Self {
            counts: vec![1; occupancy.len()],
            occupied_volume: vec![0.0; occupancy.len()],
            edges,
            occupancy,
        };
        hist.validate()?;
        Ok(hist)
    }

    pub fn validate(&self) -> Result<(), ThetaError> {
        if self.edges.len() < 2 || self.edges.len() != self.occupancy.len() + 1 {
            return Err(ThetaError::InvalidInput(
                "histogram needs n+1 edges for n bins".into(),
            ));
        }
        if !self.edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(ThetaError::InvalidInput(
                "bin edges must be strictly increasing".into(),
            ));
        }
        if self.occupancy.iter().any(|f| !(*f >= 0.0)) {
            return Err(ThetaError::InvalidInput("occupancy must be >= 0".into()));
        }
        if self.counts.len() != self.occupancy.len()
            || self.occupied_volume.len() != self.occupancy.len()
        {
            return Err(ThetaError::InvalidInput("histogram field lengths differ".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.occupancy.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Energy scale of the histogram: the full bin range.
    pub fn energy_scale(&self) -> f64 {
        self.edges[self.edges.len() - 1] - self.edges[0]
    }

    /// `sum_k f_k * V_k`, the mass recovered from the density estimate.
    pub fn integrated_mass(&self) -> f64 {
        self.occupancy
            .iter()
            .zip(&self.occupied_volume)
            .map(|(f, v)| f * v)
            .sum()
    }

    /// Threshold above which a fitted `beta` counts as effectively infinite.
    pub fn beta_infinite_threshold(&self) -> f64 {
        BETA_INFINITE_FACTOR / self.energy_scale()
    }
}

/// Coarse-graining parameters: energy bin count and the fixed 6-D cell
/// sizes.
#[derive(Debug, Clone, Copy)]
pub struct CoarseGrainSpec {
    pub n_bins: usize,
    pub cell_dx: f64,
    pub cell_dp: f64,
}

impl CoarseGrainSpec {
    fn validate(&self) -> Result<(), ThetaError> {
        if self.n_bins == 0 {
            return Err(ThetaError::InvalidInput("n_bins must be >= 1".into()));
        }
        if !(self.cell_dx > 0.0) || !(self.cell_dp > 0.0) {
            return Err(ThetaError::InvalidInput("cell sizes must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Default)]
struct CellAggregate {
    mass: f64,
    mass_energy: f64,
    count: usize,
}

/// Coarse-grains one-particle energies into a phase-space density estimate.
///
/// Particles are grouped into fixed 6-D cells of size `cell_dx^3 *
/// cell_dp^3`; each occupied cell contributes its full volume and mass to
/// the energy bin of its mass-weighted mean energy. The density estimate is
/// bin mass over occupied bin volume, so `integrated_mass` reproduces the
/// total mass exactly. Cell aggregation runs over a sorted map, keeping the
/// result byte-reproducible.
pub fn coarse_grain(
    particles: &[ThetaParticle],
    cfg: &SimConfig,
    spec: &CoarseGrainSpec,
) -> Result<PhaseSpaceHistogram, ThetaError> {
    spec.validate()?;
    if particles.is_empty() {
        return Err(ThetaError::InvalidInput("empty particle list".into()));
    }
    let eps = one_particle_energies(particles, cfg);

    let mut cells: BTreeMap<[i64; 6], CellAggregate> = BTreeMap::new();
    for (p, &e) in particles.iter().zip(&eps) {
        let mut key = [0i64; 6];
        for k in 0..3 {
            key[k] = (p.x[k] / spec.cell_dx).floor() as i64;
            key[k + 3] = (p.p[k] / spec.cell_dp).floor() as i64;
        }
        let agg = cells.entry(key).or_default();
        agg.mass += p.m;
        agg.mass_energy += p.m * e;
        agg.count += 1;
    }

    let e_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let e_max = eps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if e_max > e_min {
        (e_min, e_max)
    } else {
        // Degenerate single-energy case: give the bins a finite span.
        let pad = 0.5 * e_min.abs().max(1.0);
        (e_min - pad, e_min + pad)
    };
    let n = spec.n_bins;
    let width = (hi - lo) / n as f64;
    let edges: Vec<f64> = (0..=n).map(|k| lo + k as f64 * width).collect();

    let cell_volume = spec.cell_dx.powi(3) * spec.cell_dp.powi(3);
    let mut mass = vec![0.0; n];
    let mut volume = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for agg in cells.values() {
        let e_mean = agg.mass_energy / agg.mass;
        let k = (((e_mean - lo) / width) as usize).min(n - 1);
        mass[k] += agg.mass;
        volume[k] += cell_volume;
        counts[k] += agg.count;
    }

    let occupancy: Vec<f64> = mass
        .iter()
        .zip(&volume)
        .map(|(m, v)| if *v > 0.0 { m / v } else { 0.0 })
        .collect();
    Ok(PhaseSpaceHistogram {
        edges,
        occupancy,
        counts,
        occupied_volume: volume,
    })
}

/// One Fermi-Dirac-form component `eta / (exp(beta (eps - mu)) + 1)`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LyndenBellComponent {
    pub eta: f64,
    pub beta: f64,
    pub mu: f64,
}

impl LyndenBellComponent {
    pub fn eval(&self, eps: f64) -> f64 {
        self.eta * logistic_complement(self.beta * (eps - self.mu))
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LyndenBellParams {
    pub components: Vec<LyndenBellComponent>,
}

impl LyndenBellParams {
    pub fn eval(&self, eps: f64) -> f64 {
        self.components.iter().map(|c| c.eval(eps)).sum()
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LyndenBellFit {
    pub params: LyndenBellParams,
    /// Sum of squared residuals at the fitted parameters.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fit did not converge within the restart budget (best residual {})", best.residual)]
    NonConvergence { best: Box<LyndenBellFit> },
}

/// Stable `1 / (exp(u) + 1)`.
fn logistic_complement(u: f64) -> f64 {
    if u > 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            restarts: 5,
        }
    }
}

/// Internal parameter vector: `[ln eta, ln beta, mu]` per component.
fn model_value(theta: &[f64], eps: f64) -> f64 {
    theta
        .chunks_exact(3)
        .map(|c| c[0].exp() * logistic_complement(c[1].exp() * (eps - c[2])))
        .sum()
}

fn residual_cost(theta: &[f64], eps: &[f64], f: &[f64]) -> f64 {
    eps.iter()
        .zip(f)
        .map(|(&e, &fk)| {
            let r = model_value(theta, e) - fk;
            r * r
        })
        .sum()
}

/// Damped least squares from one starting point. Steps are accepted only
/// when they strictly decrease the cost, so the final cost never exceeds
/// the initial one. Returns (theta, cost, converged); `converged` means a
/// stall at a local minimum — no descent direction left, an exactly zero
/// cost, or a long plateau of negligible relative improvements — not an
/// exhausted iteration budget.
fn levenberg_marquardt(
    eps: &[f64],
    f: &[f64],
    mut theta: Vec<f64>,
    max_iterations: usize,
) -> (Vec<f64>, f64, bool) {
    let n_par = theta.len();
    let n_pts = eps.len();
    let mut cost = residual_cost(&theta, eps, f);
    let mut lambda = 1e-3;
    let mut plateau = 0usize;

    for _ in 0..max_iterations {
        if cost == 0.0 {
            return (theta, cost, true);
        }
        // Jacobian and residuals at theta.
        let mut jac = DMatrix::<f64>::zeros(n_pts, n_par);
        let mut res = DVector::<f64>::zeros(n_pts);
        for (row, (&e, &fk)) in eps.iter().zip(f).enumerate() {
            let mut val = 0.0;
            for (comp, c) in theta.chunks_exact(3).enumerate() {
                let eta = c[0].exp();
                let beta = c[1].exp();
                let u = beta * (e - c[2]);
                let s = logistic_complement(u);
                let s1s = s * (1.0 - s);
                val += eta * s;
                jac[(row, 3 * comp)] = eta * s;
                jac[(row, 3 * comp + 1)] = -eta * u * s1s;
                jac[(row, 3 * comp + 2)] = eta * beta * s1s;
            }
            res[row] = val - fk;
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;

        let mut improved = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for k in 0..n_par {
                damped[(k, k)] += lambda * (jtj[(k, k)].abs() + 1e-30);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 4.0;
                continue;
            };
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            if trial.iter().any(|t| !t.is_finite()) {
                lambda *= 4.0;
                continue;
            }
            let trial_cost = residual_cost(&trial, eps, f);
            if trial_cost < cost {
                let relative_gain = (cost - trial_cost) / cost;
                plateau = if relative_gain < 1e-10 { plateau + 1 } else { 0 };
                theta = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // No descent direction left at maximal damping: local minimum.
            return (theta, cost, true);
        }
        if plateau >= 10 {
            return (theta, cost, true);
        }
    }
    (theta, cost, false)
}

/// Half-height initialization for a single component.
fn single_component_start(eps: &[f64], f: &[f64]) -> Vec<f64> {
    let f_max = f.iter().copied().fold(0.0, f64::max);
    let range = eps[eps.len() - 1] - eps[0];
    let eta0 = if f_max > 0.0 { f_max } else { 1.0 };
    // Last energy at which f is above half height.
    let mut mu0 = eps[0] + 0.5 * range;
    for (&e, &fk) in eps.iter().zip(f) {
        if fk >= 0.5 * eta0 {
            mu0 = e;
        }
    }
    // Width of the 0.75 -> 0.25 drop sets the inverse-temperature scale.
    let mut e_hi = None;
    let mut e_lo = None;
    for (&e, &fk) in eps.iter().zip(f) {
        if fk >= 0.75 * eta0 {
            e_lo = Some(e);
        }
        if e_hi.is_none() && e_lo.is_some() && fk <= 0.25 * eta0 {
            e_hi = Some(e);
        }
    }
    let beta0 = match (e_lo, e_hi) {
        (Some(a), Some(b)) if b > a => 2.197 / (b - a),
        _ => 20.0 / range,
    };
    vec![eta0.ln(), beta0.ln(), mu0]
}

/// Deterministic multiplicative perturbations (roughly +-20%) used for
/// restarts.
fn perturb(theta: &[f64], scale_mu: f64, k: usize) -> Vec<f64> {
    // Fixed pattern; restart k flips signs through the bits of k.
    theta
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let sign = if (k >> (i % 3)) & 1 == 0 { 1.0 } else { -1.0 };
            if i % 3 == 2 {
                t + sign * 0.2 * scale_mu
            } else {
                t + sign * 0.2
            }
        })
        .collect()
}

/// Least-squares Lynden-Bell fit with one or two components.
///
/// The two-component fit always starts (among other restarts) from the
/// one-component optimum with a vanishing second component, which pins its
/// residual at or below the one-component residual.
pub fn fit_lynden_bell(
    hist: &PhaseSpaceHistogram,
    ncomp: usize,
) -> Result<LyndenBellFit, FitError> {
    fit_lynden_bell_with(hist, ncomp, FitOptions::default())
}

pub fn fit_lynden_bell_with(
    hist: &PhaseSpaceHistogram,
    ncomp: usize,
    opts: FitOptions,
) -> Result<LyndenBellFit, FitError> {
    if !(ncomp == 1 || ncomp == 2) {
        return Err(FitError::InvalidInput(format!(
            "component count must be 1 or 2, got {ncomp}"
        )));
    }
    hist.validate()
        .map_err(|e| FitError::InvalidInput(e.to_string()))?;
    let centers = hist.centers();
    let mut eps = Vec::new();
    let mut f = Vec::new();
    for (k, &c) in centers.iter().enumerate() {
        if hist.counts[k] > 0 {
            eps.push(c);
            f.push(hist.occupancy[k]);
        }
    }
    if eps.len() < 3 * ncomp {
        return Err(FitError::InvalidInput(format!(
            "{} occupied bins cannot constrain {} parameters",
            eps.len(),
            3 * ncomp
        )));
    }
    let range = eps[eps.len() - 1] - eps[0];

    let mut starts: Vec<Vec<f64>> = Vec::new();
    let base1 = single_component_start(&eps, &f);
    if ncomp == 1 {
        starts.push(base1.clone());
        for k in 1..=opts.restarts {
            starts.push(perturb(&base1, range, k));
        }
    } else {
        let fit1 = fit_lynden_bell_with(hist, 1, opts)?;
        let c1 = &fit1.params.components[0];
        // Embedded start: exact one-component optimum plus a second
        // component too small to move any residual.
        starts.push(vec![
            c1.eta.ln(),
            c1.beta.ln(),
            c1.mu,
            -700.0,
            c1.beta.ln(),
            c1.mu,
        ]);
        // Split heuristic: a sharper low-energy core plus a softer
        // higher-energy tail sharing the observed amplitude.
        let split = vec![
            (0.7 * c1.eta).max(1e-12).ln(),
            (2.0 * c1.beta).ln(),
            c1.mu - 0.15 * range,
            (0.4 * c1.eta).max(1e-12).ln(),
            (0.5 * c1.beta).ln(),
            c1.mu + 0.25 * range,
        ];
        starts.push(split.clone());
        for k in 1..=opts.restarts {
            starts.push(perturb(&split, range, k));
        }
    }

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for start in starts {
        let (theta, cost, converged) =
            levenberg_marquardt(&eps, &f, start, opts.max_iterations);
        let better = match &best {
            None => true,
            Some((_, best_cost, _)) => cost < *best_cost,
        };
        if better {
            best = Some((theta, cost, converged));
        }
    }
    let (theta, cost, converged) = best.expect("at least one start");
    let components = theta
        .chunks_exact(3)
        .map(|c| LyndenBellComponent {
            eta: c[0].exp(),
            beta: c[1].exp(),
            mu: c[2],
        })
        .collect();
    let fit = LyndenBellFit {
        params: LyndenBellParams { components },
        residual: cost,
        converged,
    };
    if !fit.converged {
        return Err(FitError::NonConvergence { best: Box::new(fit) });
    }
    Ok(fit)
}

/// Zero-temperature ground state `f0(eps) = sum_i eta_i theta(eF_i - eps)`
/// with the right-continuity convention `theta(0) = 1`.
#[derive(Debug, Clone)]
pub struct FermiGroundState {
    components: Vec<(f64, f64)>,
}

impl FermiGroundState {
    pub fn eval(&self, eps: f64) -> f64 {
        self.components
            .iter()
            .map(|&(eta, ef)| if eps <= ef { eta } else { 0.0 })
            .sum()
    }

    pub fn components(&self) -> &[(f64, f64)] {
        &self.components
    }
}

pub fn fermi_ground_state(etas: &[f64], fermi_energies: &[f64]) -> Result<FermiGroundState, ThetaError> {
    if etas.len() != fermi_energies.len() {
        return Err(ThetaError::InvalidInput(format!(
            "{} eta values but {} Fermi energies",
            etas.len(),
            fermi_energies.len()
        )));
    }
    if etas.is_empty() || etas.len() > 2 {
        return Err(ThetaError::InvalidInput(
            "ground state takes 1 or 2 components".into(),
        ));
    }
    if etas.iter().any(|eta| !(*eta > 0.0)) {
        return Err(ThetaError::InvalidInput("eta must be > 0".into()));
    }
    Ok(FermiGroundState {
        components: etas.iter().copied().zip(fermi_energies.iter().copied()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{init_waterbag, PhaseSpaceBox};
    use super::*;
    use approx::assert_relative_eq;

    fn synthetic_hist(edges: Vec<f64>, params: &LyndenBellParams) -> PhaseSpaceHistogram {
        let occupancy = edges
            .windows(2)
            .map(|w| params.eval(0.5 * (w[0] + w[1])))
            .collect();
        PhaseSpaceHistogram::from_density_samples(edges, occupancy).unwrap()
    }

    fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
    }

    #[test]
    fn single_component_round_trip() {
        let truth = LyndenBellParams {
            components: vec![LyndenBellComponent {
                eta: 1.0,
                beta: 2.0,
                mu: 0.5,
            }],
        };
        let hist = synthetic_hist(linspace(-1.0, 2.0, 120), &truth);
        let fit = fit_lynden_bell(&hist, 1).unwrap();
        let c = &fit.params.components[0];
        assert_relative_eq!(c.eta, 1.0, max_relative = 1e-6);
        assert_relative_eq!(c.beta, 2.0, max_relative = 1e-6);
        assert_relative_eq!(c.mu, 0.5, max_relative = 1e-6);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn zero_temperature_step_drives_beta_past_threshold() {
        // A sharp step is the beta -> infinity limit: the fitted beta must
        // cross the configured "effectively infinite" threshold and mu must
        // land at the step.
        let edges = linspace(0.0, 1.0, 256);
        let occupancy: Vec<f64> = edges
            .windows(2)
            .map(|w| if 0.5 * (w[0] + w[1]) < 0.5 { 1.0 } else { 0.0 })
            .collect();
        let hist = PhaseSpaceHistogram::from_density_samples(edges, occupancy).unwrap();
        let fit = fit_lynden_bell(&hist, 1).unwrap();
        let c = &fit.params.components[0];
        assert!(
            c.beta > hist.beta_infinite_threshold(),
            "beta {} vs threshold {}",
            c.beta,
            hist.beta_infinite_threshold()
        );
        let bin_width = 1.0 / 256.0;
        assert!((c.mu - 0.5).abs() <= 2.0 * bin_width, "mu = {}", c.mu);
    }

    #[test]
    fn two_component_round_trip() {
        let truth = LyndenBellParams {
            components: vec![
                LyndenBellComponent {
                    eta: 1.0,
                    beta: 8.0,
                    mu: 0.3,
                },
                LyndenBellComponent {
                    eta: 0.35,
                    beta: 3.0,
                    mu: 1.1,
                },
            ],
        };
        let hist = synthetic_hist(linspace(-1.0, 3.0, 200), &truth);
        let fit = fit_lynden_bell(&hist, 2).unwrap();
        // Components can come back in either order.
        let mut got: Vec<_> = fit.params.components.clone();
        got.sort_by(|a, b| a.mu.total_cmp(&b.mu));
        for (c, t) in got.iter().zip(&truth.components) {
            assert_relative_eq!(c.eta, t.eta, max_relative = 1e-3);
            assert_relative_eq!(c.beta, t.beta, max_relative = 1e-3);
            assert_relative_eq!(c.mu, t.mu, max_relative = 1e-3);
        }
    }

    #[test]
    fn two_component_residual_never_above_one_component() {
        // Nested-model guarantee on data that is genuinely single-component
        // plus a deterministic wiggle.
        let edges = linspace(-0.5, 1.5, 80);
        let occupancy: Vec<f64> = edges
            .windows(2)
            .map(|w| {
                let e = 0.5 * (w[0] + w[1]);
                let base = 0.8 * logistic_complement(3.0 * (e - 0.4));
                base * (1.0 + 0.05 * (17.0 * e).sin())
            })
            .collect();
        let hist = PhaseSpaceHistogram::from_density_samples(edges, occupancy).unwrap();
        let fit1 = fit_lynden_bell(&hist, 1).unwrap();
        let fit2 = fit_lynden_bell(&hist, 2).unwrap();
        assert!(
            fit2.residual <= fit1.residual,
            "residuals {} vs {}",
            fit2.residual,
            fit1.residual
        );
    }

    #[test]
    fn exhausted_iteration_budget_reports_best_so_far() {
        let truth = LyndenBellParams {
            components: vec![LyndenBellComponent {
                eta: 1.0,
                beta: 4.0,
                mu: 0.2,
            }],
        };
        let hist = synthetic_hist(linspace(-1.0, 1.0, 60), &truth);
        let opts = FitOptions {
            max_iterations: 1,
            restarts: 1,
        };
        match fit_lynden_bell_with(&hist, 1, opts) {
            Err(FitError::NonConvergence { best }) => {
                assert!(best.residual.is_finite());
                assert_eq!(best.params.components.len(), 1);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn fermi_ground_state_examples() {
        let f0 = fermi_ground_state(&[1.0], &[0.5]).unwrap();
        assert_eq!(f0.eval(0.3), 1.0);
        assert_eq!(f0.eval(0.7), 0.0);
        // Right-continuity convention at the edge.
        assert_eq!(f0.eval(0.5), 1.0);

        let f0 = fermi_ground_state(&[1.0, 0.5], &[0.2, 0.8]).unwrap();
        assert_eq!(f0.eval(0.5), 0.5);
        assert_eq!(f0.eval(0.1), 1.5);

        assert!(fermi_ground_state(&[1.0], &[0.5, 0.6]).is_err());
        assert!(fermi_ground_state(&[1.0, 0.5, 0.2], &[0.1, 0.2, 0.3]).is_err());
        assert!(fermi_ground_state(&[-1.0], &[0.5]).is_err());
    }

    #[test]
    fn fermi_is_pointwise_infinite_beta_limit() {
        let eta = 0.7;
        let ef = 0.4;
        let f0 = fermi_ground_state(&[eta], &[ef]).unwrap();
        let sharp = LyndenBellComponent {
            eta,
            beta: 1e8,
            mu: ef,
        };
        for &e in &[-1.0, 0.0, 0.39, 0.41, 1.0, 5.0] {
            assert_relative_eq!(f0.eval(e), sharp.eval(e), epsilon = 1e-9);
        }
    }

    #[test]
    fn waterbag_coarse_grain_matches_density_of_states() {
        // Free water-bag (negligible coupling): raw energies follow the
        // analytic density of states of the box, and the per-bin density
        // estimate is flat at the fine-grained level.
        let x_half = 1.0;
        let p_half = 0.3;
        let nu = 12_000usize;
        let region = PhaseSpaceBox::symmetric(x_half, p_half);
        let eta = nu as f64 / region.volume6(); // unit particle mass
        let particles = init_waterbag(&region, nu, [0.0, 0.0, 1.0], eta, 99).unwrap();
        let cfg = SimConfig {
            g: 1e-12,
            g_c: 1.0,
            softening: 0.05,
            dt: 1e-3,
            nu,
            seed: 99,
        };

        // Density-of-states oracle on the raw energies: below the sphere
        // edge e < p_half^2 / 2m, mass(e' < e) = eta V_x (4/3) pi p^3.
        let eps = one_particle_energies(&particles, &cfg);
        let v_x = 8.0 * x_half.powi(3);
        for &frac in &[0.3, 0.6, 0.9] {
            let e = frac * p_half * p_half / 2.0;
            let p = (2.0 * e).sqrt();
            let expected = v_x * 4.0 / 3.0 * std::f64::consts::PI * p.powi(3)
                / region.volume6();
            let got = eps.iter().filter(|&&x| x < e).count() as f64 / nu as f64;
            let std = (expected * (1.0 - expected) / nu as f64).sqrt();
            assert!(
                (got - expected).abs() < 4.0 * std,
                "CDF at {e}: {got} vs {expected} +- {std}"
            );
        }

        // Flat occupancy at the fine-grained level. Cell edges sit at
        // integer multiples of the cell size, so these choices tile the box
        // exactly; only well-populated bins are asserted.
        let spec = CoarseGrainSpec {
            n_bins: 6,
            cell_dx: x_half / 2.0,
            cell_dp: p_half / 2.0,
        };
        let hist = coarse_grain(&particles, &cfg, &spec).unwrap();
        assert_relative_eq!(
            hist.integrated_mass(),
            nu as f64,
            max_relative = 1e-12
        );
        let cell_volume = spec.cell_dx.powi(3) * spec.cell_dp.powi(3);
        let mut asserted = 0;
        for k in 0..hist.n_bins() {
            let n_cells = hist.occupied_volume[k] / cell_volume;
            if n_cells >= 30.0 {
                assert_relative_eq!(hist.occupancy[k], eta, max_relative = 0.3);
                asserted += 1;
            }
        }
        assert!(asserted >= 3, "too few populated bins ({asserted})");
    }

    #[test]
    fn identical_energies_fill_single_bin() {
        let mk = |x: [f64; 3]| ThetaParticle {
            x,
            p: [0.0; 3],
            s: [0.0, 0.0, 1.0],
            m: 1.0,
        };
        // A resting pair: both particles carry exactly the same energy.
        let particles = vec![mk([1.0, 0.0, 0.0]), mk([-1.0, 0.0, 0.0])];
        let cfg = SimConfig {
            g: 1.0,
            g_c: 1.0,
            softening: 0.1,
            dt: 1e-3,
            nu: 2,
            seed: 0,
        };
        let spec = CoarseGrainSpec {
            n_bins: 8,
            cell_dx: 0.5,
            cell_dp: 0.5,
        };
        let hist = coarse_grain(&particles, &cfg, &spec).unwrap();
        let occupied: Vec<usize> = (0..hist.n_bins()).filter(|&k| hist.counts[k] > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(hist.counts[occupied[0]], 2);
    }

    #[test]
    fn coarse_grain_rejects_empty() {
        let cfg = SimConfig {
            g: 1.0,
            g_c: 1.0,
            softening: 0.1,
            dt: 1e-3,
            nu: 2,
            seed: 0,
        };
        let spec = CoarseGrainSpec {
            n_bins: 4,
            cell_dx: 0.5,
            cell_dp: 0.5,
        };
        assert!(coarse_grain(&[], &cfg, &spec).is_err());
    }
}
