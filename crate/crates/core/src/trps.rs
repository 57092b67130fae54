//! Time-reparametrization diagnostics on the two-component ground state:
//! the invariant potential, component lapses and the order parameter,
//! reparametrization invariance checks, and proper-time increment
//! statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrpsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("reparametrization map is not strictly increasing at t0 = {0}")]
    NonMonotonic(f64),
}

/// Relative tolerance deciding the broken/unbroken verdict of the order
/// parameter.
pub const ORDER_PARAMETER_REL_TOL: f64 = 1e-9;
/// Quadrature tolerance on density normalization.
pub const DENSITY_NORM_TOL: f64 = 1e-6;

/// Regular spatial grid of cell centers with a rectangle-rule measure.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    lo: [f64; 3],
    hi: [f64; 3],
    n: [usize; 3],
    nodes: Vec<[f64; 3]>,
    cell_volume: f64,
}

impl SpatialGrid {
    pub fn regular(lo: [f64; 3], hi: [f64; 3], n: [usize; 3]) -> Result<Self, TrpsError> {
        if n.iter().any(|&k| k == 0) {
            return Err(TrpsError::InvalidInput("grid needs >= 1 cell per axis".into()));
        }
        let mut h = [0.0; 3];
        for k in 0..3 {
            if !(hi[k] > lo[k]) {
                return Err(TrpsError::InvalidInput(
                    "grid extent must be positive on every axis".into(),
                ));
            }
            h[k] = (hi[k] - lo[k]) / n[k] as f64;
        }
        let mut nodes = Vec::with_capacity(n[0] * n[1] * n[2]);
        for ix in 0..n[0] {
            for iy in 0..n[1] {
                for iz in 0..n[2] {
                    nodes.push([
                        lo[0] + (ix as f64 + 0.5) * h[0],
                        lo[1] + (iy as f64 + 0.5) * h[1],
                        lo[2] + (iz as f64 + 0.5) * h[2],
                    ]);
                }
            }
        }
        Ok(Self {
            lo,
            hi,
            n,
            nodes,
            cell_volume: h[0] * h[1] * h[2],
        })
    }

    /// Cube `[-half, half]^3` with `n` cells per axis.
    pub fn cube(half: f64, n: usize) -> Result<Self, TrpsError> {
        Self::regular([-half; 3], [half; 3], [n; 3])
    }

    /// Same extents with twice the resolution per axis.
    pub fn refined(&self) -> Self {
        Self::regular(self.lo, self.hi, [2 * self.n[0], 2 * self.n[1], 2 * self.n[2]])
            .expect("refinement of a valid grid")
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Index of the cell containing `x`, clamped onto the boundary cells.
    pub fn index_of_clamped(&self, x: [f64; 3]) -> usize {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let h = (self.hi[k] - self.lo[k]) / self.n[k] as f64;
            let i = ((x[k] - self.lo[k]) / h).floor();
            idx[k] = (i.max(0.0) as usize).min(self.n[k] - 1);
        }
        (idx[0] * self.n[1] + idx[1]) * self.n[2] + idx[2]
    }

    /// Rectangle-rule integral of per-node values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_volume
    }
}

/// Strictly positive lapse field sampled on a grid.
#[derive(Debug, Clone)]
pub struct LapseField {
    values: Vec<f64>,
}

impl LapseField {
    pub fn new(values: Vec<f64>) -> Result<Self, TrpsError> {
        if values.is_empty() {
            return Err(TrpsError::InvalidInput("empty lapse field".into()));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(TrpsError::InvalidInput("lapse must be positive and finite".into()));
        }
        Ok(Self { values })
    }

    pub fn from_fn(grid: &SpatialGrid, f: impl Fn([f64; 3]) -> f64) -> Result<Self, TrpsError> {
        Self::new(grid.nodes().iter().map(|&x| f(x)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Field divided by a positive scalar (a reparametrization factor).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v / factor).collect(),
        }
    }
}

/// Distribution of lapse values used as a per-component weight.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub enum LapseDistribution {
    Constant(f64),
    /// Lognormal with the given mean and log-space width.
    LogNormal { mean: f64, sigma_log: f64 },
}

impl LapseDistribution {
    pub fn validate(&self) -> Result<(), TrpsError> {
        let ok = match self {
            Self::Constant(v) => *v > 0.0 && v.is_finite(),
            Self::LogNormal { mean, sigma_log } => {
                *mean > 0.0 && mean.is_finite() && *sigma_log >= 0.0 && sigma_log.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(TrpsError::InvalidInput(format!(
                "lapse distribution must have positive support: {self:?}"
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::LogNormal { mean, .. } => *mean,
        }
    }

    /// Analytic `Var(N) / mean(N)^2`.
    pub fn relative_variance(&self) -> f64 {
        match self {
            Self::Constant(_) => 0.0,
            Self::LogNormal { sigma_log, .. } => (sigma_log * sigma_log).exp_m1(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, count: usize) -> Vec<f64> {
        match self {
            Self::Constant(v) => vec![*v; count],
            Self::LogNormal { mean, sigma_log } => {
                let mu_log = mean.ln() - 0.5 * sigma_log * sigma_log;
                let dist = LogNormal::new(mu_log, *sigma_log).expect("validated parameters");
                (0..count).map(|_| dist.sample(rng)).collect()
            }
        }
    }
}

/// Two-component ground-state pair distribution: spatial densities, their
/// fractions, and per-component lapse-weight distributions.
#[derive(Debug, Clone)]
pub struct GroundStatePair {
    rho: [Vec<f64>; 2],
    fractions: [f64; 2],
    lapse_weights: [LapseDistribution; 2],
}

impl GroundStatePair {
    pub fn from_densities(
        grid: &SpatialGrid,
        rho1: Vec<f64>,
        rho2: Vec<f64>,
        lapse_weights: [LapseDistribution; 2],
    ) -> Result<Self, TrpsError> {
        if rho1.len() != grid.len() || rho2.len() != grid.len() {
            return Err(TrpsError::InvalidInput(format!(
                "density lengths {}/{} do not match grid size {}",
                rho1.len(),
                rho2.len(),
                grid.len()
            )));
        }
        if rho1.iter().chain(&rho2).any(|r| !(*r >= 0.0)) {
            return Err(TrpsError::InvalidInput("densities must be >= 0".into()));
        }
        let r1 = grid.integrate(&rho1);
        let r2 = grid.integrate(&rho2);
        if ((r1 + r2) - 1.0).abs() > DENSITY_NORM_TOL {
            return Err(TrpsError::InvalidInput(format!(
                "total density integrates to {}, expected 1",
                r1 + r2
            )));
        }
        for w in &lapse_weights {
            w.validate()?;
        }
        Ok(Self {
            rho: [rho1, rho2],
            fractions: [r1, r2],
            lapse_weights,
        })
    }

    /// Builds normalized component densities by binning positions onto the
    /// grid (out-of-range positions land in boundary cells). The fractions
    /// are the position counts over the total.
    pub fn from_positions(
        grid: &SpatialGrid,
        pos1: &[[f64; 3]],
        pos2: &[[f64; 3]],
        lapse_weights: [LapseDistribution; 2],
    ) -> Result<Self, TrpsError> {
        let total = pos1.len() + pos2.len();
        if total == 0 {
            return Err(TrpsError::InvalidInput("no positions".into()));
        }
        let weight = 1.0 / (total as f64 * grid.cell_volume());
        let mut rho1 = vec![0.0; grid.len()];
        for &x in pos1 {
            rho1[grid.index_of_clamped(x)] += weight;
        }
        let mut rho2 = vec![0.0; grid.len()];
        for &x in pos2 {
            rho2[grid.index_of_clamped(x)] += weight;
        }
        Self::from_densities(grid, rho1, rho2, lapse_weights)
    }

    pub fn density(&self, component: usize) -> &[f64] {
        &self.rho[component]
    }

    pub fn total_density(&self) -> Vec<f64> {
        self.rho[0].iter().zip(&self.rho[1]).map(|(a, b)| a + b).collect()
    }

    pub fn fractions(&self) -> [f64; 2] {
        self.fractions
    }

    pub fn lapse_weights(&self) -> &[LapseDistribution; 2] {
        &self.lapse_weights
    }

    /// Same densities with replacement lapse-weight distributions.
    pub fn with_lapse_weights(
        self,
        lapse_weights: [LapseDistribution; 2],
    ) -> Result<Self, TrpsError> {
        for w in &lapse_weights {
            w.validate()?;
        }
        Ok(Self {
            lapse_weights,
            ..self
        })
    }
}

/// Reparametrization invariant potential
/// `g_c * kappa * nu * sum_i int rho_i N dS` by rectangle-rule quadrature.
pub fn v_c(
    grid: &SpatialGrid,
    pair: &GroundStatePair,
    lapse: &LapseField,
    kappa: f64,
    g_c: f64,
    nu: f64,
) -> Result<f64, TrpsError> {
    if lapse.values().len() != grid.len() {
        return Err(TrpsError::InvalidInput(format!(
            "lapse field length {} does not match grid size {}",
            lapse.values().len(),
            grid.len()
        )));
    }
    for (name, v) in [("kappa", kappa), ("g_c", g_c), ("nu", nu)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(TrpsError::InvalidInput(format!("{name} must be > 0, got {v}")));
        }
    }
    let mut acc = 0.0;
    for comp in 0..2 {
        for (r, n) in pair.rho[comp].iter().zip(lapse.values()) {
            acc += r * n;
        }
    }
    Ok(g_c * kappa * nu * acc * grid.cell_volume())
}

/// Monte-Carlo estimate of the particle form of the potential: positions
/// sampled from the total density, `g_c * kappa * nu * mean(N(x))`.
/// Returns the estimate and its standard error.
pub fn v_c_particle_estimate(
    grid: &SpatialGrid,
    pair: &GroundStatePair,
    lapse: &LapseField,
    kappa: f64,
    g_c: f64,
    nu: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64), TrpsError> {
    if samples == 0 {
        return Err(TrpsError::InvalidInput("need at least one sample".into()));
    }
    if lapse.values().len() != grid.len() {
        return Err(TrpsError::InvalidInput("lapse/grid size mismatch".into()));
    }
    // Cumulative node probabilities from the total density.
    let rho = pair.total_density();
    let mut cumulative = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    for r in &rho {
        acc += r * grid.cell_volume();
        cumulative.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let u: f64 = rng.gen_range(0.0..total);
        let node = cumulative.partition_point(|&c| c <= u).min(grid.len() - 1);
        let n = lapse.values()[node];
        sum += n;
        sum_sq += n * n;
    }
    let mean = sum / samples as f64;
    let var = (sum_sq / samples as f64 - mean * mean).max(0.0);
    let scale = g_c * kappa * nu;
    Ok((scale * mean, scale * (var / samples as f64).sqrt()))
}

/// Component lapses `N_i(x) = rho_i(x) N(x) / (r_i rho(x))` with their
/// density-weighted means. Nodes with vanishing total density are masked
/// (`NaN`) and counted.
#[derive(Debug, Clone)]
pub struct ComponentLapse {
    pub fields: [Vec<f64>; 2],
    pub means: [f64; 2],
    pub masked_nodes: usize,
}

pub fn component_lapse(
    grid: &SpatialGrid,
    pair: &GroundStatePair,
    lapse: &LapseField,
) -> Result<ComponentLapse, TrpsError> {
    if lapse.values().len() != grid.len() {
        return Err(TrpsError::InvalidInput("lapse/grid size mismatch".into()));
    }
    let rho = pair.total_density();
    let [r1, r2] = pair.fractions();
    if r1 <= 0.0 || r2 <= 0.0 {
        return Err(TrpsError::InvalidInput(
            "both components need positive fractions".into(),
        ));
    }
    let mut fields = [vec![f64::NAN; grid.len()], vec![f64::NAN; grid.len()]];
    let mut masked = 0usize;
    for (node, (&rho_tot, &n)) in rho.iter().zip(lapse.values()).enumerate() {
        if rho_tot > 0.0 {
            fields[0][node] = pair.rho[0][node] * n / (r1 * rho_tot);
            fields[1][node] = pair.rho[1][node] * n / (r2 * rho_tot);
        } else {
            masked += 1;
        }
    }
    // <N_i> = int rho_i N dS / r_i: the rho-weighted mean of N_i.
    let mut means = [0.0; 2];
    for comp in 0..2 {
        let mut acc = 0.0;
        for (r, n) in pair.rho[comp].iter().zip(lapse.values()) {
            acc += r * n;
        }
        means[comp] = acc * grid.cell_volume() / pair.fractions[comp];
    }
    Ok(ComponentLapse {
        fields,
        means,
        masked_nodes: masked,
    })
}

/// Reparametrization-symmetry order parameter.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct OrderParameter {
    /// `r1 <N1> + r2 <N2>`, the invariant combination.
    pub invariant_combo: f64,
    /// `<N1> - <N2>`; a nonzero value marks the broken phase.
    pub delta: f64,
    pub broken: bool,
}

pub fn order_parameter(
    grid: &SpatialGrid,
    pair: &GroundStatePair,
    lapse: &LapseField,
) -> Result<OrderParameter, TrpsError> {
    let cl = component_lapse(grid, pair, lapse)?;
    let [r1, r2] = pair.fractions();
    let invariant_combo = r1 * cl.means[0] + r2 * cl.means[1];
    let delta = cl.means[0] - cl.means[1];
    Ok(OrderParameter {
        invariant_combo,
        delta,
        broken: delta.abs() > ORDER_PARAMETER_REL_TOL * invariant_combo.abs(),
    })
}

/// Uniform grid of the a-priori parameter time.
#[derive(Debug, Clone)]
pub struct TimeMap {
    t0: Vec<f64>,
    dt0: f64,
}

impl TimeMap {
    pub fn uniform(start: f64, dt0: f64, steps: usize) -> Result<Self, TrpsError> {
        if !(dt0 > 0.0) || !dt0.is_finite() {
            return Err(TrpsError::InvalidInput(format!("dt0 must be > 0, got {dt0}")));
        }
        if steps == 0 {
            return Err(TrpsError::InvalidInput("need at least one step".into()));
        }
        Ok(Self {
            t0: (0..steps).map(|j| start + j as f64 * dt0).collect(),
            dt0,
        })
    }

    pub fn t0(&self) -> &[f64] {
        &self.t0
    }

    pub fn dt0(&self) -> f64 {
        self.dt0
    }
}

/// Smooth strictly increasing reparametrization `t0 -> F(t0)`.
#[derive(Debug, Clone, Copy)]
pub enum Reparam {
    /// `F(t0) = scale * t0 + offset`.
    Linear { scale: f64, offset: f64 },
    /// `F(t0) = t0 + eps * sin(omega * t0)`.
    Sine { eps: f64, omega: f64 },
}

impl Reparam {
    pub fn value(&self, t0: f64) -> f64 {
        match self {
            Self::Linear { scale, offset } => scale * t0 + offset,
            Self::Sine { eps, omega } => t0 + eps * (omega * t0).sin(),
        }
    }

    pub fn prime(&self, t0: f64) -> f64 {
        match self {
            Self::Linear { scale, .. } => *scale,
            Self::Sine { eps, omega } => 1.0 + eps * omega * (omega * t0).cos(),
        }
    }
}

/// Outcome of the reparametrization-invariance check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ReparamReport {
    /// Max relative deviation of `V_c * dt0` across grid times.
    pub vc_dt0_max_rel_dev: f64,
    /// Max relative deviation of the accumulated proper time per node.
    pub proper_time_max_rel_dev: f64,
    pub verdict_before: bool,
    pub verdict_preserved: bool,
    /// Max relative change of the lapse field itself (nonzero whenever F
    /// is not the identity).
    pub lapse_max_rel_change: f64,
    pub pass: bool,
}

/// Invariance tolerance for the reparametrization checks.
pub const REPARAM_TOL: f64 = 1e-12;

/// Applies `N -> N / F'(t0)` and `dt0 -> F'(t0) dt0` at each grid time and
/// verifies that `V_c dt0`, the accumulated proper time, and the order
/// parameter verdict are unchanged, while `N` itself changes.
#[allow(clippy::too_many_arguments)]
pub fn reparametrize(
    tm: &TimeMap,
    lapse: &LapseField,
    pair: &GroundStatePair,
    grid: &SpatialGrid,
    kappa: f64,
    g_c: f64,
    nu: f64,
    f: &Reparam,
) -> Result<ReparamReport, TrpsError> {
    // Strict monotonicity on the grid.
    for &t in tm.t0() {
        if !(f.prime(t) > 0.0) {
            return Err(TrpsError::NonMonotonic(t));
        }
    }
    let vc0 = v_c(grid, pair, lapse, kappa, g_c, nu)?;
    let verdict0 = order_parameter(grid, pair, lapse)?.broken;

    let mut vc_dev = 0.0f64;
    let mut lapse_change = 0.0f64;
    let mut verdict_preserved = true;
    // Accumulated proper time per node, before and after.
    let mut proper0 = vec![0.0f64; grid.len()];
    let mut proper1 = vec![0.0f64; grid.len()];
    for &t in tm.t0() {
        let factor = f.prime(t);
        let scaled = lapse.scaled(factor);
        let dt0_scaled = factor * tm.dt0();

        let vc_scaled = v_c(grid, pair, &scaled, kappa, g_c, nu)?;
        let prod0 = vc0 * tm.dt0();
        let prod1 = vc_scaled * dt0_scaled;
        vc_dev = vc_dev.max(((prod1 - prod0) / prod0).abs());

        let verdict = order_parameter(grid, pair, &scaled)?.broken;
        if verdict != verdict0 {
            verdict_preserved = false;
        }

        for (node, (&n0, &n1)) in lapse.values().iter().zip(scaled.values()).enumerate() {
            proper0[node] += n0 * tm.dt0();
            proper1[node] += n1 * dt0_scaled;
            lapse_change = lapse_change.max(((n1 - n0) / n0).abs());
        }
    }
    let mut proper_dev = 0.0f64;
    for (a, b) in proper0.iter().zip(&proper1) {
        proper_dev = proper_dev.max(((b - a) / a).abs());
    }
    let pass = vc_dev <= REPARAM_TOL && proper_dev <= REPARAM_TOL && verdict_preserved;
    Ok(ReparamReport {
        vc_dt0_max_rel_dev: vc_dev,
        proper_time_max_rel_dev: proper_dev,
        verdict_before: verdict0,
        verdict_preserved,
        lapse_max_rel_change: lapse_change,
        pass,
    })
}

/// Mean/fluctuation split of lapse samples.
#[derive(Debug, Clone)]
pub struct LapseDecomposition {
    pub mean: f64,
    pub fluctuations: Vec<f64>,
    /// Population variance over squared mean.
    pub relative_variance: f64,
}

pub fn decompose_lapse(samples: &[f64]) -> Result<LapseDecomposition, TrpsError> {
    if samples.len() < 2 {
        return Err(TrpsError::InvalidInput(format!(
            "need >= 2 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(TrpsError::InvalidInput("non-finite sample".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let fluctuations: Vec<f64> = samples.iter().map(|s| s - mean).collect();
    let variance = fluctuations.iter().map(|f| f * f).sum::<f64>() / n;
    Ok(LapseDecomposition {
        mean,
        fluctuations,
        relative_variance: if mean != 0.0 { variance / (mean * mean) } else { 0.0 },
    })
}

/// Proper-time increment statistics for trials `dt = N * dt0`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ProperTimeStats {
    /// Mean increment `<N> dt0`.
    pub mean_dt: f64,
    /// Relative variance `Var(dt) / mean(dt)`: the time-uncertainty scale
    /// consumed by the stochastic evolution engine (time units).
    pub sigma: f64,
}

pub fn proper_time_stats(
    decomp: &LapseDecomposition,
    dt0: f64,
) -> Result<ProperTimeStats, TrpsError> {
    if !(dt0 > 0.0) || !dt0.is_finite() {
        return Err(TrpsError::InvalidInput(format!("dt0 must be > 0, got {dt0}")));
    }
    let mean_dt = decomp.mean * dt0;
    // Var(dt) / mean(dt) = relvar * mean(N) * dt0.
    let sigma = decomp.relative_variance * decomp.mean * dt0;
    Ok(ProperTimeStats { mean_dt, sigma })
}

/// Convenience: the position-uncertainty direction is immaterial here; this
/// draws `count` lapse samples from the mixture `r1 phi1 + r2 phi2`.
pub fn sample_lapse_mixture(
    pair: &GroundStatePair,
    count: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [r1, _] = pair.fractions();
    let picks: Vec<bool> = (0..count).map(|_| rng.gen_range(0.0..1.0) < r1).collect();
    let n1 = picks.iter().filter(|&&b| b).count();
    let s1 = pair.lapse_weights[0].sample(&mut rng, n1);
    let s2 = pair.lapse_weights[1].sample(&mut rng, count - n1);
    let mut it1 = s1.into_iter();
    let mut it2 = s2.into_iter();
    picks
        .into_iter()
        .map(|b| if b { it1.next().unwrap() } else { it2.next().unwrap() })
        .collect()
}
