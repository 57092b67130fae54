//! The four experiment scenarios and their wiring: `decohere` (stochastic
//! time evolution suite), `relax` (water-bag to collisionless equilibrium
//! with Lynden-Bell fits), `trps` (ground-state pair, invariant potential,
//! order parameter, proper-time statistics), and `pipeline` (relax -> trps
//! -> sigma -> decohere, end to end).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::harness::config::ExperimentConfig;
use crate::harness::io::{write_csv, write_field_csv, write_snapshot_csv};
use crate::harness::record::RunRecord;
use crate::qdynamics::{
    self, event_read, AveragedDensity, EventOutcome, HermitianOperator, IncrementLaw, PureState,
};
use crate::sen::{self, CoherenceSpec, SpaceSpinor};
use crate::theta::{
    self, coarse_grain, exclude_evaporated, fit_lynden_bell, CoarseGrainSpec, FitError,
    LyndenBellFit, PhaseSpaceBox, SimConfig, ThetaParticle, UniformField,
};
use crate::trps::{
    component_lapse, decompose_lapse, order_parameter, proper_time_stats, reparametrize,
    sample_lapse_mixture, v_c, v_c_particle_estimate, GroundStatePair, LapseDistribution,
    LapseField, Reparam, SpatialGrid, TimeMap,
};
use crate::vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Decohere,
    Relax,
    Trps,
    Pipeline,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Decohere => "decohere",
            Self::Relax => "relax",
            Self::Trps => "trps",
            Self::Pipeline => "pipeline",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "decohere" => Ok(Self::Decohere),
            "relax" => Ok(Self::Relax),
            "trps" => Ok(Self::Trps),
            "pipeline" => Ok(Self::Pipeline),
            other => Err(format!(
                "unknown scenario {other:?} (expected decohere, relax, trps, or pipeline)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
}

macro_rules! impl_run_error {
    ($($ty:ty),*) => {
        $(impl From<$ty> for HarnessError {
            fn from(e: $ty) -> Self {
                HarnessError::Run(e.to_string())
            }
        })*
    };
}
impl_run_error!(
    crate::sen::SenError,
    crate::theta::ThetaError,
    crate::trps::TrpsError,
    crate::qdynamics::QError
);

/// Plot-ready numeric table.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: String,
    pub rows: Vec<Vec<f64>>,
}

/// One output artifact of a scenario run.
#[derive(Debug, Clone)]
pub enum Artifact {
    Table(Table),
    Snapshot {
        name: String,
        particles: Vec<ThetaParticle>,
    },
    Field {
        name: String,
        grid: SpatialGrid,
        values: Vec<f64>,
    },
}

#[derive(Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub artifacts: Vec<Artifact>,
}

/// Intermediate results shared between a scenario and the pipeline.
struct StageOutput {
    metrics: BTreeMap<String, serde_json::Value>,
    verdicts: BTreeMap<String, bool>,
    artifacts: Vec<Artifact>,
}

impl StageOutput {
    fn new() -> Self {
        Self {
            metrics: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    fn metric(&mut self, key: &str, value: f64) {
        let v = serde_json::Number::from_f64(value)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null);
        self.metrics.insert(key.into(), v);
    }

    fn metric_str(&mut self, key: &str, value: &str) {
        self.metrics.insert(key.into(), serde_json::Value::String(value.into()));
    }

    fn verdict(&mut self, key: &str, pass: bool) {
        self.verdicts.insert(key.into(), pass);
    }

    fn into_record(self, record: &mut RunRecord, prefix: &str) -> Vec<Artifact> {
        for (k, v) in self.metrics {
            record.metrics.insert(format!("{prefix}{k}"), v);
        }
        for (k, v) in self.verdicts {
            record.verdicts.insert(format!("{prefix}{k}"), v);
        }
        self.artifacts
    }
}

pub fn run_scenario(
    scenario: Scenario,
    cfg: &ExperimentConfig,
) -> Result<RunOutput, HarnessError> {
    let violations = cfg.validate();
    if !violations.is_empty() {
        return Err(HarnessError::Usage(format!(
            "config violates invariants:\n  {}",
            violations.join("\n  ")
        )));
    }
    let mut record = RunRecord::new(scenario.name(), &cfg.hash, cfg.seed);
    let mut artifacts = Vec::new();
    match scenario {
        Scenario::Decohere => {
            let stage = decohere_stage(cfg, cfg.qdynamics.sigma)?;
            artifacts.extend(stage.into_record(&mut record, ""));
        }
        Scenario::Relax => {
            let (stage, _) = relax_stage(cfg)?;
            artifacts.extend(stage.into_record(&mut record, ""));
        }
        Scenario::Trps => {
            let grid = SpatialGrid::cube(cfg.trps.grid_half, cfg.trps.grid_n)?;
            let (rho1, rho2) = synthetic_densities(cfg, &grid);
            let (stage, _) = trps_stage(cfg, &grid, rho1, rho2, [0.0; 3])?;
            artifacts.extend(stage.into_record(&mut record, ""));
        }
        Scenario::Pipeline => {
            let (relax_out, relax_state) = relax_stage(cfg)?;
            artifacts.extend(relax_out.into_record(&mut record, "relax."));

            let (grid, rho1, rho2, center) = densities_from_particles(cfg, &relax_state)?;
            let (trps_out, sigma) = trps_stage(cfg, &grid, rho1, rho2, center)?;
            artifacts.extend(trps_out.into_record(&mut record, "trps."));
            record.metric("pipeline.sigma", sigma);

            // The proper-time relative variance feeds the increment law
            // verbatim.
            let deco = decohere_stage(cfg, sigma)?;
            artifacts.extend(deco.into_record(&mut record, "decohere."));
        }
    }
    Ok(RunOutput { record, artifacts })
}

fn spinor_from_config(cfg: &ExperimentConfig) -> SpaceSpinor {
    SpaceSpinor::new(
        Complex64::new(cfg.sen.a0_re, cfg.sen.a0_im),
        Complex64::new(cfg.sen.a1_re, cfg.sen.a1_im),
    )
}

// ---------------------------------------------------------------------
// decohere
// ---------------------------------------------------------------------

fn decohere_stage(cfg: &ExperimentConfig, sigma: f64) -> Result<StageOutput, HarnessError> {
    let q = &cfg.qdynamics;
    let law = IncrementLaw::new(q.mu_t, sigma, q.hbar)?;
    let h = HermitianOperator::from_diagonal(&[0.0, q.delta_e])?;
    let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let psi0 = PureState::new(DVector::from_vec(vec![amp, amp]))?;
    let m = q.trajectories;
    let tol = 3.0 / (m as f64).sqrt() * 0.5;

    let mut out = StageOutput::new();
    let mut decay = Table {
        name: "decay".into(),
        header: "t,abs_rho01,analytic".into(),
        rows: Vec::new(),
    };
    let mut mc_max_dev = 0.0f64;
    let mut trace_max_dev = 0.0f64;
    let mut last_density: Option<AveragedDensity> = None;
    for j in 1..=q.n_times {
        let t = q.t_max * j as f64 / q.n_times as f64;
        let rho = qdynamics::evolve_mc(&psi0, t, &h, &law, m, cfg.seed.wrapping_add(j as u64))?;
        let mc01 = rho.entry(0, 1).norm();
        let analytic =
            0.5 * (-sigma * t * q.delta_e * q.delta_e / (2.0 * q.hbar * q.hbar)).exp();
        mc_max_dev = mc_max_dev.max((mc01 - analytic).abs());
        trace_max_dev = trace_max_dev.max((rho.trace_re() - 1.0).abs());
        decay.rows.push(vec![t, mc01, analytic]);
        last_density = Some(rho);
    }
    out.verdict("mc_matches_analytic", mc_max_dev <= tol);
    out.verdict("trace_unit", trace_max_dev <= 1e-12);
    out.metric("mc_max_abs_dev", mc_max_dev);
    out.metric("mc_tolerance", tol);
    out.metric("sigma", sigma);

    // Lifetime: fitted e-folding time of the analytic curve against the
    // closed form; in the unitary limit the curve must stay flat at 0.5.
    let t_life = qdynamics::lifetime(sigma, q.delta_e, q.hbar);
    out.metric("t_life", t_life);
    if sigma > 0.0 {
        let (mut sum_t, mut sum_l, mut n) = (0.0, 0.0, 0.0);
        for row in &decay.rows {
            sum_t += row[0];
            sum_l += row[2].ln();
            n += 1.0;
        }
        let (mean_t, mean_l) = (sum_t / n, sum_l / n);
        let mut num = 0.0;
        let mut den = 0.0;
        for row in &decay.rows {
            num += (row[0] - mean_t) * (row[2].ln() - mean_l);
            den += (row[0] - mean_t) * (row[0] - mean_t);
        }
        let fitted = -den / num;
        out.metric("t_life_fitted", fitted);
        out.verdict(
            "lifetime_matches_fit",
            ((fitted - t_life) / t_life).abs() < 1e-9,
        );
    } else {
        let flat = decay
            .rows
            .iter()
            .all(|row| row[2] == 0.5 && (row[1] - 0.5).abs() <= tol);
        out.verdict("unitary_limit_flat_curve", flat);
    }

    // Contraction semigroup on a handful of random operators.
    let mut semigroup_pass = true;
    let mut worst_composition = 0.0f64;
    for k in 0..3u64 {
        let hk = qdynamics::random_hermitian(6, cfg.seed ^ (0xa5a5 + k))?;
        let report = qdynamics::semigroup_check(&hk, &law, 1.0, 2.3);
        semigroup_pass &= report.pass;
        worst_composition = worst_composition.max(report.composition_error);
    }
    out.verdict("semigroup", semigroup_pass);
    out.metric("semigroup_worst_composition_error", worst_composition);

    // Event reading on the final ensemble.
    if let Some(rho) = &last_density {
        let sx = nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe7e7);
        let reading = event_read(rho, &h, &sx, q.event_threshold, &mut rng)?;
        out.metric("event_visibility", reading.visibility);
        out.metric("event_width", reading.width);
        match reading.outcome {
            EventOutcome::Event { index, .. } => {
                out.metric_str("event_outcome", &format!("event:{index}"))
            }
            EventOutcome::Coherent => out.metric_str("event_outcome", "coherent"),
        }

        let mut density = Table {
            name: "density".into(),
            header: "m,n,re,im".into(),
            rows: Vec::new(),
        };
        for mm in 0..rho.dim() {
            for nn in 0..rho.dim() {
                let z = rho.entry(mm, nn);
                density.rows.push(vec![mm as f64, nn as f64, z.re, z.im]);
            }
        }
        out.artifacts.push(Artifact::Table(density));
    }
    out.artifacts.push(Artifact::Table(decay));
    Ok(out)
}

// ---------------------------------------------------------------------
// relax
// ---------------------------------------------------------------------

struct RelaxState {
    bound: Vec<ThetaParticle>,
    fit2: Option<LyndenBellFit>,
    sim_cfg: SimConfig,
}

fn relax_stage(cfg: &ExperimentConfig) -> Result<(StageOutput, RelaxState), HarnessError> {
    let t = &cfg.theta;
    let mut out = StageOutput::new();

    let spinor = spinor_from_config(cfg);
    let shift = sen::shift_of(&spinor, cfg.sen.c)?;
    let Some(dir) = vec3::unit(shift) else {
        return Err(HarnessError::Usage(
            "sen spinor yields a zero shift; no alignment direction".into(),
        ));
    };

    let region = PhaseSpaceBox::symmetric(t.box_x, t.box_p);
    let eta_level = t.nu as f64 / region.volume6(); // unit particle mass
    let mut particles = theta::init_waterbag(&region, t.nu, dir, eta_level, cfg.seed)?;

    let mut sim_cfg = SimConfig {
        g: t.g,
        g_c: t.g_c,
        softening: t.softening.unwrap_or(0.05 * 2.0 * t.box_x),
        dt: 1.0, // placeholder until t_dyn is known
        nu: t.nu,
        seed: cfg.seed,
    };
    sim_cfg.validate()?;

    // Spins start disordered unless configured otherwise, so the coupling
    // phase genuinely orders them.
    if t.randomize_spins {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5151);
        for p in &mut particles {
            let v = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            p.s = vec3::unit(v).unwrap_or(dir);
        }
    }

    // Alignment phase: over-damped spin relaxation against the shift field.
    let field = UniformField(shift);
    let uniform_weights = vec![1.0 / t.nu as f64; t.nu];
    let mut alignment = Table {
        name: "alignment".into(),
        header: "step,coupling_energy,mean_alignment,magnetization".into(),
        rows: Vec::new(),
    };
    let mut coupling_prev = f64::INFINITY;
    let mut monotone = true;
    for step in 0..=t.relax_steps {
        if step > 0 {
            theta::spin_relax(&mut particles, &field, &sim_cfg, t.relax_rate, 1)?;
        }
        let coupling = theta::coupling_energy(&particles, &field, &sim_cfg)?;
        if coupling > coupling_prev + 1e-12 {
            monotone = false;
        }
        coupling_prev = coupling;
        let spins: Vec<[f64; 3]> = particles.iter().map(|p| p.s).collect();
        let mag = sen::magnetization(&spins, &uniform_weights)?;
        let mean_align: f64 =
            spins.iter().map(|s| vec3::dot(*s, dir)).sum::<f64>() / t.nu as f64;
        alignment
            .rows
            .push(vec![step as f64, coupling, mean_align, mag.modulus]);
    }
    let final_alignment = alignment.rows.last().map(|r| r[2]).unwrap_or(0.0);
    out.verdict("spin_alignment", final_alignment > 0.99);
    out.verdict("coupling_energy_monotone", monotone);
    out.metric("final_alignment_cosine", final_alignment);

    // Momenta rescaled onto the configured virial line, with the potential
    // of the now-aligned spins.
    let k0 = theta::kinetic_energy(&particles);
    let w0 = theta::potential_energy(&particles, &sim_cfg);
    if k0 > 0.0 && w0 != 0.0 {
        let scale = (t.virial_init * w0.abs() / (2.0 * k0)).sqrt();
        for p in &mut particles {
            p.p = vec3::scale(p.p, scale);
        }
        out.metric("momentum_rescale", scale);
    }

    // Orbital relaxation over the configured number of dynamical times.
    let t_dyn = theta::dynamical_time(&particles, &sim_cfg);
    sim_cfg.dt = t.dt.unwrap_or(t_dyn / 60.0);
    let n_steps = ((t.n_dyn_times * t_dyn / sim_cfg.dt).ceil() as usize).max(1);
    out.metric("t_dyn", t_dyn);
    out.metric("dt", sim_cfg.dt);
    out.metric("n_steps", n_steps as f64);

    let e0 = theta::total_energy(&particles, &sim_cfg)?;
    let mut p0 = [0.0; 3];
    let mut p_scale = 0.0;
    for p in &particles {
        p0 = vec3::add(p0, p.p);
        p_scale += vec3::norm(p.p);
    }

    let mut energy_table = Table {
        name: "energy".into(),
        header: "t,total_energy,momentum_drift,virial_ratio".into(),
        rows: Vec::new(),
    };
    let snapshot_every = (n_steps / 50).max(1);
    let mut max_energy_drift = 0.0f64;
    let mut max_momentum_drift = 0.0f64;
    {
        let sim_cfg = &sim_cfg;
        let energy_table = &mut energy_table;
        let max_energy_drift = &mut max_energy_drift;
        let max_momentum_drift = &mut max_momentum_drift;
        theta::run_leapfrog(&mut particles, sim_cfg, n_steps, |step, ps| {
            if step % snapshot_every == 0 || step == n_steps {
                let e = theta::total_energy(ps, sim_cfg).expect("nonempty");
                let mut ptot = [0.0; 3];
                for p in ps {
                    ptot = vec3::add(ptot, p.p);
                }
                let p_drift = vec3::norm(vec3::sub(ptot, p0));
                let d = theta::diagnostics(ps, sim_cfg);
                *max_energy_drift = max_energy_drift.max(((e - e0) / e0).abs());
                *max_momentum_drift = max_momentum_drift.max(p_drift);
                energy_table.rows.push(vec![
                    step as f64 * sim_cfg.dt,
                    e,
                    p_drift,
                    d.virial_ratio.unwrap_or(f64::NAN),
                ]);
            }
        });
    }
    out.verdict("energy_drift", max_energy_drift < 1e-3);
    out.verdict("momentum_drift", max_momentum_drift < 1e-9 * p_scale);
    out.metric("max_energy_drift", max_energy_drift);
    out.metric("max_momentum_drift", max_momentum_drift);
    out.metric("momentum_scale", p_scale);

    // Evaporation, diagnostics, coarse-graining, Lynden-Bell fits.
    let (bound, evaporated) = exclude_evaporated(&particles, &sim_cfg);
    let diag = theta::diagnostics(&particles, &sim_cfg);
    out.metric("bound_fraction", diag.bound_fraction);
    out.metric("core_radius", diag.core_radius);
    out.metric("halo_radius", diag.halo_radius);
    out.metric("virial_ratio", diag.virial_ratio.unwrap_or(f64::NAN));
    out.metric("evaporated_count", evaporated.len() as f64);

    if bound.is_empty() {
        return Err(HarnessError::Run(
            "no bound particles remain; relaxation evaporated everything".into(),
        ));
    }
    let p_rms = {
        let sum: f64 = bound.iter().map(|p| vec3::dot(p.p, p.p)).sum();
        (sum / bound.len() as f64).sqrt()
    };
    let spec = CoarseGrainSpec {
        n_bins: t.bins,
        cell_dx: t.cell_dx.unwrap_or(0.7 * diag.halo_radius.max(1e-6)),
        cell_dp: t.cell_dp.unwrap_or(1.8 * p_rms.max(1e-12)),
    };
    out.metric("cell_dx", spec.cell_dx);
    out.metric("cell_dp", spec.cell_dp);
    let hist = coarse_grain(&bound, &sim_cfg, &spec)?;

    // Emitted histogram rows carry the mass per bin (occupancy times
    // occupied volume), so the file's f column sums to the bound mass.
    let mut histogram = Table {
        name: "histogram".into(),
        header: "eps_lo,eps_hi,f".into(),
        rows: Vec::new(),
    };
    for k in 0..hist.n_bins() {
        histogram.rows.push(vec![
            hist.edges[k],
            hist.edges[k + 1],
            hist.occupancy[k] * hist.occupied_volume[k],
        ]);
    }

    let fit1 = run_fit(&hist, 1, &mut out, "lb1")?;
    let fit2 = run_fit(&hist, 2, &mut out, "lb2")?;
    if let (Some(f1), Some(f2)) = (&fit1, &fit2) {
        out.verdict("nested_fit_residual", f2.residual <= f1.residual);
        out.metric("fit_improvement_factor", f1.residual / f2.residual);
    }

    let mut lb_fit = Table {
        name: "lb_fit".into(),
        header: "eps,f,fit1,fit2".into(),
        rows: Vec::new(),
    };
    for (k, center) in hist.centers().iter().enumerate() {
        lb_fit.rows.push(vec![
            *center,
            hist.occupancy[k],
            fit1.as_ref().map_or(f64::NAN, |f| f.params.eval(*center)),
            fit2.as_ref().map_or(f64::NAN, |f| f.params.eval(*center)),
        ]);
    }

    out.artifacts.push(Artifact::Table(alignment));
    out.artifacts.push(Artifact::Table(energy_table));
    out.artifacts.push(Artifact::Table(histogram));
    out.artifacts.push(Artifact::Table(lb_fit));
    out.artifacts.push(Artifact::Snapshot {
        name: "snapshot".into(),
        particles: particles.clone(),
    });

    Ok((
        out,
        RelaxState {
            bound,
            fit2,
            sim_cfg,
        },
    ))
}

/// Runs one Lynden-Bell fit, recording parameters and convergence; a
/// non-converged fit still yields its best-so-far parameters. Histograms
/// too sparse to constrain the parameters (tiny systems) skip the fit with
/// a note instead of failing the run.
fn run_fit(
    hist: &theta::PhaseSpaceHistogram,
    ncomp: usize,
    out: &mut StageOutput,
    prefix: &str,
) -> Result<Option<LyndenBellFit>, HarnessError> {
    let fit = match fit_lynden_bell(hist, ncomp) {
        Ok(fit) => fit,
        Err(FitError::NonConvergence { best }) => *best,
        Err(FitError::InvalidInput(msg)) => {
            out.metric_str(&format!("{prefix}_skipped"), &msg);
            return Ok(None);
        }
    };
    out.verdict(&format!("{prefix}_converged"), fit.converged);
    out.metric(&format!("{prefix}_residual"), fit.residual);
    for (i, c) in fit.params.components.iter().enumerate() {
        out.metric(&format!("{prefix}_eta{i}"), c.eta);
        out.metric(&format!("{prefix}_beta{i}"), c.beta);
        out.metric(&format!("{prefix}_mu{i}"), c.mu);
    }
    Ok(Some(fit))
}

// ---------------------------------------------------------------------
// trps
// ---------------------------------------------------------------------

/// Synthetic two-gaussian core/halo densities, normalized on the grid.
fn synthetic_densities(cfg: &ExperimentConfig, grid: &SpatialGrid) -> (Vec<f64>, Vec<f64>) {
    let r = &cfg.trps;
    let gauss = |x: [f64; 3], w: f64| (-vec3::dot(x, x) / (2.0 * w * w)).exp();
    let raw1: Vec<f64> = grid.nodes().iter().map(|&x| gauss(x, r.core_width)).collect();
    let raw2: Vec<f64> = grid.nodes().iter().map(|&x| gauss(x, r.halo_width)).collect();
    let z1 = grid.integrate(&raw1);
    let z2 = grid.integrate(&raw2);
    let rho1 = raw1.iter().map(|v| r.core_fraction * v / z1).collect();
    let rho2 = raw2
        .iter()
        .map(|v| (1.0 - r.core_fraction) * v / z2)
        .collect();
    (rho1, rho2)
}

/// Bins the bound particles of a relax stage into component densities; the
/// split follows the larger fitted Lynden-Bell component at each particle's
/// energy, falling back to a median-energy split.
fn densities_from_particles(
    cfg: &ExperimentConfig,
    state: &RelaxState,
) -> Result<(SpatialGrid, Vec<f64>, Vec<f64>, [f64; 3]), HarnessError> {
    let bound = &state.bound;
    let eps = theta::one_particle_energies(bound, &state.sim_cfg);

    let assignments: Vec<bool> = match &state.fit2 {
        Some(fit) if fit.params.components.len() == 2 => {
            let c = &fit.params.components;
            eps.iter().map(|&e| c[0].eval(e) >= c[1].eval(e)).collect()
        }
        _ => {
            let mut sorted = eps.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            eps.iter().map(|&e| e <= median).collect()
        }
    };
    let mut pos1 = Vec::new();
    let mut pos2 = Vec::new();
    for (p, &core) in bound.iter().zip(&assignments) {
        if core {
            pos1.push(p.x);
        } else {
            pos2.push(p.x);
        }
    }
    // Degenerate split: fall back to median energy.
    if pos1.is_empty() || pos2.is_empty() {
        pos1.clear();
        pos2.clear();
        let mut sorted = eps.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        for (p, &e) in bound.iter().zip(&eps) {
            if e <= median {
                pos1.push(p.x);
            } else {
                pos2.push(p.x);
            }
        }
    }

    // Grid covering the bound cluster, centered on its center of mass.
    let total_mass: f64 = bound.iter().map(|p| p.m).sum();
    let mut center = [0.0; 3];
    for p in bound {
        center = vec3::add(center, vec3::scale(p.x, p.m / total_mass));
    }
    let mut half = 0.0f64;
    for p in bound {
        half = half.max(vec3::norm(vec3::sub(p.x, center)));
    }
    let half = half.max(1e-6) * 1.05;
    let grid = SpatialGrid::regular(
        [center[0] - half, center[1] - half, center[2] - half],
        [center[0] + half, center[1] + half, center[2] + half],
        [cfg.trps.grid_n; 3],
    )?;
    let placeholder = [LapseDistribution::Constant(1.0); 2];
    let pair = GroundStatePair::from_positions(&grid, &pos1, &pos2, placeholder)?;
    Ok((
        grid,
        pair.density(0).to_vec(),
        pair.density(1).to_vec(),
        center,
    ))
}

fn trps_stage(
    cfg: &ExperimentConfig,
    grid: &SpatialGrid,
    rho1: Vec<f64>,
    rho2: Vec<f64>,
    center: [f64; 3],
) -> Result<(StageOutput, f64), HarnessError> {
    let r = &cfg.trps;
    let mut out = StageOutput::new();

    let placeholder = [LapseDistribution::Constant(1.0); 2];
    let pair0 = GroundStatePair::from_densities(grid, rho1.clone(), rho2.clone(), placeholder)?;

    // Radial lapse profile about the cluster center.
    let scale = grid
        .nodes()
        .iter()
        .map(|&x| vec3::norm(vec3::sub(x, center)))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let lapse = LapseField::from_fn(grid, |x| {
        r.lapse_base * (1.0 + r.lapse_gradient * vec3::norm(vec3::sub(x, center)) / scale)
    })?;

    // Component lapse means parametrize the per-component lapse-weight
    // distributions.
    let cl = component_lapse(grid, &pair0, &lapse)?;
    out.metric("mean_lapse_1", cl.means[0]);
    out.metric("mean_lapse_2", cl.means[1]);
    out.metric("masked_nodes", cl.masked_nodes as f64);
    let weights = if r.phi_sigma_log > 0.0 {
        [
            LapseDistribution::LogNormal {
                mean: cl.means[0],
                sigma_log: r.phi_sigma_log,
            },
            LapseDistribution::LogNormal {
                mean: cl.means[1],
                sigma_log: r.phi_sigma_log,
            },
        ]
    } else {
        [
            LapseDistribution::Constant(cl.means[0]),
            LapseDistribution::Constant(cl.means[1]),
        ]
    };
    let pair = pair0.with_lapse_weights(weights)?;

    // Pointwise identity r1 N1 + r2 N2 = N.
    let [r1, r2] = pair.fractions();
    let mut identity_dev = 0.0f64;
    for node in 0..grid.len() {
        let n1 = cl.fields[0][node];
        if n1.is_nan() {
            continue;
        }
        let combo = r1 * n1 + r2 * cl.fields[1][node];
        identity_dev = identity_dev.max(((combo - lapse.values()[node]) / lapse.values()[node]).abs());
    }
    out.verdict("component_lapse_identity", identity_dev <= 1e-12);
    out.metric("component_lapse_identity_dev", identity_dev);

    // Proper-time increment statistics from the lapse-weight mixture.
    let samples = sample_lapse_mixture(&pair, r.lapse_samples, cfg.seed ^ 0x7215);
    let decomp = decompose_lapse(&samples)?;
    let fluct_mean =
        decomp.fluctuations.iter().sum::<f64>() / decomp.fluctuations.len() as f64;
    out.verdict("fluctuation_zero_mean", fluct_mean.abs() <= 1e-12 * decomp.mean.abs());
    let stats = proper_time_stats(&decomp, r.dt0)?;
    out.metric("lapse_mean", decomp.mean);
    out.metric("lapse_relative_variance", decomp.relative_variance);
    out.metric("mean_dt", stats.mean_dt);
    out.metric("sigma", stats.sigma);

    // kappa from the coherence-domain data; the Mandelstam-Tamm scale is
    // the proper-time sigma when it is nondegenerate.
    let spinor = spinor_from_config(cfg);
    let shift = sen::shift_of(&spinor, cfg.sen.c)?;
    let direction = vec3::unit(shift).unwrap_or([0.0, 0.0, 1.0]);
    let sigma_mt = if stats.sigma > 0.0 {
        stats.sigma
    } else {
        out.metric_str("sigma_note", "degenerate sigma; kappa uses dt0");
        r.dt0
    };
    let dx = cfg.coherence.dx;
    let spec = CoherenceSpec::on_segment(
        cfg.coherence.lengths,
        1.0,
        cfg.coherence.nodes,
        |_| 1.0,
        |_| dx,
        direction,
        sigma_mt,
        r.dt0,
    )?;
    let kappa = sen::kappa(&spec);
    out.metric("kappa", kappa);
    let criterion = sen::coherence_criterion(&spec);
    out.metric_str(
        "coherence_criterion",
        &format!("{},{},{}", criterion[0], criterion[1], criterion[2]),
    );

    // Invariant potential plus its particle-form cross-check.
    let g_c = cfg.theta.g_c;
    let nu = cfg.theta.nu as f64;
    let vc = v_c(grid, &pair, &lapse, kappa, g_c, nu)?;
    let (vc_mc, vc_se) =
        v_c_particle_estimate(grid, &pair, &lapse, kappa, g_c, nu, 50_000, cfg.seed ^ 0x9e37)?;
    out.metric("v_c", vc);
    out.metric("v_c_particle", vc_mc);
    out.metric("v_c_particle_se", vc_se);
    out.verdict(
        "v_c_crosscheck",
        (vc - vc_mc).abs() <= 3.0 * vc_se + 1e-12 * vc.abs(),
    );

    // Order parameter and reparametrization invariance.
    let op = order_parameter(grid, &pair, &lapse)?;
    out.metric("invariant_combo", op.invariant_combo);
    out.metric("delta", op.delta);
    out.metric_str("trps_phase", if op.broken { "broken" } else { "symmetric" });

    let tm = TimeMap::uniform(0.0, r.dt0, r.t0_steps)?;
    let linear = Reparam::Linear {
        scale: 2.0,
        offset: 0.0,
    };
    let rep1 = reparametrize(&tm, &lapse, &pair, grid, kappa, g_c, nu, &linear)?;
    let sine = Reparam::Sine {
        eps: r.reparam_eps,
        omega: r.reparam_omega,
    };
    let rep2 = reparametrize(&tm, &lapse, &pair, grid, kappa, g_c, nu, &sine)?;
    out.verdict("reparam_linear", rep1.pass);
    out.verdict("reparam_sine", rep2.pass);
    out.verdict(
        "reparam_changes_lapse",
        rep1.lapse_max_rel_change > 0.1 && rep2.lapse_max_rel_change > 0.0,
    );
    out.metric("reparam_vc_dt0_dev", rep1.vc_dt0_max_rel_dev.max(rep2.vc_dt0_max_rel_dev));
    out.metric(
        "reparam_proper_time_dev",
        rep1.proper_time_max_rel_dev.max(rep2.proper_time_max_rel_dev),
    );

    out.artifacts.push(Artifact::Field {
        name: "rho1".into(),
        grid: grid.clone(),
        values: rho1,
    });
    out.artifacts.push(Artifact::Field {
        name: "rho2".into(),
        grid: grid.clone(),
        values: rho2,
    });
    out.artifacts.push(Artifact::Field {
        name: "lapse".into(),
        grid: grid.clone(),
        values: lapse.values().to_vec(),
    });
    let sigma = stats.sigma;
    Ok((out, sigma))
}

// ---------------------------------------------------------------------
// Emission and the execution driver
// ---------------------------------------------------------------------

/// Writes every artifact as CSV into `dir`, returning the file names.
/// Empty tables are skipped with a warning; an empty run writes nothing.
pub fn emit_plotdata(output: &RunOutput, dir: &Path) -> io::Result<Vec<String>> {
    if output.artifacts.is_empty() {
        eprintln!("warning: run produced no artifacts; nothing to emit");
        return Ok(Vec::new());
    }
    let mut names = Vec::new();
    for artifact in &output.artifacts {
        match artifact {
            Artifact::Table(table) => {
                if table.rows.is_empty() {
                    eprintln!("warning: table {} has no rows; skipped", table.name);
                    continue;
                }
                let name = format!("{}.csv", table.name);
                write_csv(&dir.join(&name), &table.header, &table.rows)?;
                names.push(name);
            }
            Artifact::Snapshot { name, particles } => {
                let file = format!("{name}.csv");
                write_snapshot_csv(&dir.join(&file), particles)?;
                names.push(file);
            }
            Artifact::Field { name, grid, values } => {
                let file = format!("{name}.csv");
                write_field_csv(&dir.join(&file), grid, values)?;
                names.push(file);
            }
        }
    }
    Ok(names)
}

/// Runs a scenario end to end: compute, emit artifacts, write the run
/// record (also on invariant-violation exits), and map the outcome to the
/// process exit code (0 success, 1 usage error, 2 invariant violation).
pub fn execute(scenario: Scenario, cfg: &ExperimentConfig, out_dir: &Path) -> i32 {
    let mut output = match run_scenario(scenario, cfg) {
        Ok(output) => output,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return 1;
    }
    match emit_plotdata(&output, out_dir) {
        Ok(mut names) => {
            names.push("record.json".into());
            output.record.artifacts = names;
        }
        Err(e) => {
            eprintln!("error: artifact emission failed: {e}");
            return 1;
        }
    }
    output.record.finish();
    let record_path = out_dir.join("record.json");
    if let Err(e) = fs::write(&record_path, output.record.to_json()) {
        eprintln!("error: cannot write {}: {e}", record_path.display());
        return 1;
    }
    for (name, pass) in &output.record.verdicts {
        println!("{} {}", if *pass { "PASS" } else { "FAIL" }, name);
    }
    println!("record: {}", record_path.display());
    if output.record.all_verdicts_pass() {
        0
    } else {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_text(text).unwrap()
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in [
            Scenario::Decohere,
            Scenario::Relax,
            Scenario::Trps,
            Scenario::Pipeline,
        ] {
            assert_eq!(Scenario::from_str(s.name()).unwrap(), s);
        }
        assert!(Scenario::from_str("bogus").is_err());
    }

    #[test]
    fn decohere_scenario_unitary_limit() {
        let cfg = config(
            "run.seed = 7\nqdynamics.sigma = 0\nqdynamics.trajectories = 400\nqdynamics.n_times = 5\n",
        );
        let out = run_scenario(Scenario::Decohere, &cfg).unwrap();
        assert!(out.record.verdicts["unitary_limit_flat_curve"]);
        assert!(out.record.all_verdicts_pass());
        let decay = out
            .artifacts
            .iter()
            .find_map(|a| match a {
                Artifact::Table(t) if t.name == "decay" => Some(t),
                _ => None,
            })
            .unwrap();
        for row in &decay.rows {
            assert_eq!(row[2], 0.5);
        }
    }

    #[test]
    fn decohere_scenario_decay_and_lifetime() {
        let cfg = config("run.seed = 11\nqdynamics.trajectories = 2000\nqdynamics.n_times = 8\n");
        let out = run_scenario(Scenario::Decohere, &cfg).unwrap();
        assert!(
            out.record.all_verdicts_pass(),
            "verdicts: {:?}",
            out.record.verdicts
        );
    }

    #[test]
    fn invalid_config_is_usage_error() {
        let cfg = config("run.seed = 1\ntheta.nu = 0\n");
        match run_scenario(Scenario::Relax, &cfg) {
            Err(HarnessError::Usage(msg)) => assert!(msg.contains("theta.nu")),
            other => panic!("expected usage error, got {other:?}"),
        }
    }

    #[test]
    fn trps_scenario_passes_and_breaks_symmetry() {
        let cfg = config("run.seed = 3\ntrps.grid_n = 8\ntrps.lapse_samples = 20000\n");
        let out = run_scenario(Scenario::Trps, &cfg).unwrap();
        assert!(
            out.record.all_verdicts_pass(),
            "verdicts: {:?}",
            out.record.verdicts
        );
        assert_eq!(
            out.record.metrics["trps_phase"],
            serde_json::Value::String("broken".into())
        );
        let sigma = out.record.metrics["sigma"].as_f64().unwrap();
        assert!(sigma > 0.0);
    }

    #[test]
    fn relax_scenario_small_system() {
        let cfg = config(
            "run.seed = 5\ntheta.nu = 128\ntheta.n_dyn_times = 10\ntheta.bins = 12\ntheta.relax_steps = 40\n",
        );
        let out = run_scenario(Scenario::Relax, &cfg).unwrap();
        assert!(
            out.record.all_verdicts_pass(),
            "verdicts: {:?}",
            out.record.verdicts
        );
    }

    #[test]
    fn pipeline_passes_sigma_verbatim() {
        let cfg = config(
            "run.seed = 9\ntheta.nu = 128\ntheta.n_dyn_times = 8\ntheta.bins = 10\ntheta.relax_steps = 30\n\
             trps.grid_n = 6\ntrps.lapse_samples = 5000\ntrps.dt0 = 1.0\n\
             qdynamics.trajectories = 1000\nqdynamics.n_times = 6\n",
        );
        let out = run_scenario(Scenario::Pipeline, &cfg).unwrap();
        let sigma = out.record.metrics["pipeline.sigma"].as_f64().unwrap();
        let used = out.record.metrics["decohere.sigma"].as_f64().unwrap();
        assert_eq!(sigma, used);
        assert!(sigma > 0.0);
        assert!(
            out.record.all_verdicts_pass(),
            "verdicts: {:?}",
            out.record.verdicts
        );
    }

    #[test]
    fn emit_of_empty_run_warns_and_writes_nothing() {
        let output = RunOutput {
            record: RunRecord::new("decohere", "hash", 0),
            artifacts: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let names = emit_plotdata(&output, dir.path()).unwrap();
        assert!(names.is_empty());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn emit_writes_expected_files() {
        let cfg = config(
            "run.seed = 2\nqdynamics.sigma = 0.2\nqdynamics.trajectories = 200\nqdynamics.n_times = 4\n",
        );
        let out = run_scenario(Scenario::Decohere, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let names = emit_plotdata(&out, dir.path()).unwrap();
        assert!(names.contains(&"decay.csv".to_string()));
        assert!(names.contains(&"density.csv".to_string()));
        let (header, rows) = crate::harness::io::read_csv(&dir.path().join("decay.csv")).unwrap();
        assert_eq!(header, "t,abs_rho01,analytic");
        assert_eq!(rows.len(), 4);
    }
}
