//! Flat key-value experiment configuration.
//!
//! The config file is line-oriented `section.key = value` text; `#` starts
//! a comment. Values are scalars or comma-separated 3-vectors. The config
//! hash is a SHA-256 over the canonicalized text (comments and blank lines
//! stripped, keys sorted), so formatting does not change identity.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config line {line}: {text:?}")]
    Malformed { line: usize, text: String },
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("key {key}: cannot parse {value:?} as {wanted}")]
    BadValue {
        key: String,
        value: String,
        wanted: &'static str,
    },
    #[error("missing mandatory key {0}")]
    MissingKey(String),
}

/// Parsed but untyped key-value entries.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: idx + 1,
                    text: raw_line.to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Malformed {
                    line: idx + 1,
                    text: raw_line.to_string(),
                });
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey(key));
            }
        }
        Ok(Self { entries })
    }

    fn take_f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: v,
                wanted: "number",
            }),
        }
    }

    fn take_opt_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: v,
                wanted: "number",
            }),
        }
    }

    fn take_usize(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: v,
                wanted: "non-negative integer",
            }),
        }
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    key: key.into(),
                    value: v,
                    wanted: "boolean",
                }),
            },
        }
    }

    fn take_vec3(&mut self, key: &str, default: [f64; 3]) -> Result<[f64; 3], ConfigError> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => {
                let parts: Vec<_> = v.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: v,
                        wanted: "comma-separated 3-vector",
                    });
                }
                let mut out = [0.0; 3];
                for (slot, part) in out.iter_mut().zip(&parts) {
                    *slot = part.parse().map_err(|_| ConfigError::BadValue {
                        key: key.into(),
                        value: v.clone(),
                        wanted: "comma-separated 3-vector",
                    })?;
                }
                Ok(out)
            }
        }
    }
}

/// Canonical form used for hashing: comments/blank lines stripped, entries
/// normalized to `key = value` and sorted.
pub fn canonicalize(text: &str) -> Result<String, ConfigError> {
    let raw = RawConfig::parse(text)?;
    let lines: Vec<String> = raw
        .entries
        .iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect();
    Ok(lines.join("\n"))
}

/// SHA-256 hex digest of the canonicalized config text.
pub fn config_hash(text: &str) -> Result<String, ConfigError> {
    let canonical = canonicalize(text)?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct ThetaConfig {
    pub nu: usize,
    pub g: f64,
    pub g_c: f64,
    /// Plummer softening; defaults to 5% of the position box size.
    pub softening: Option<f64>,
    /// Timestep; defaults to `t_dyn / 40`.
    pub dt: Option<f64>,
    pub box_x: f64,
    /// Raw momentum half-width sampled before the virial rescaling.
    pub box_p: f64,
    /// Target `2K/|W|` of the initial state (momenta are rescaled onto it).
    pub virial_init: f64,
    pub n_dyn_times: f64,
    pub randomize_spins: bool,
    pub relax_rate: f64,
    pub relax_steps: usize,
    pub bins: usize,
    /// Coarse-grain cell sizes; default derived from the bound cluster.
    pub cell_dx: Option<f64>,
    pub cell_dp: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SenConfig {
    pub a0_re: f64,
    pub a0_im: f64,
    pub a1_re: f64,
    pub a1_im: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct CoherenceConfig {
    pub lengths: [f64; 3],
    /// Constant position-uncertainty vector over the domain.
    pub dx: [f64; 3],
    pub nodes: usize,
}

#[derive(Debug, Clone)]
pub struct TrpsConfig {
    pub grid_n: usize,
    pub grid_half: f64,
    pub core_width: f64,
    pub halo_width: f64,
    pub core_fraction: f64,
    pub lapse_base: f64,
    pub lapse_gradient: f64,
    pub phi_sigma_log: f64,
    pub lapse_samples: usize,
    pub dt0: f64,
    pub t0_steps: usize,
    pub reparam_eps: f64,
    pub reparam_omega: f64,
}

#[derive(Debug, Clone)]
pub struct QdynConfig {
    pub delta_e: f64,
    pub sigma: f64,
    pub mu_t: f64,
    pub hbar: f64,
    pub trajectories: usize,
    pub t_max: f64,
    pub n_times: usize,
    pub event_threshold: f64,
}

/// Fully typed experiment configuration. Semantic violations are collected
/// by [`ExperimentConfig::validate`], not rejected at parse time.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: String,
    pub hash: String,
    pub theta: ThetaConfig,
    pub sen: SenConfig,
    pub coherence: CoherenceConfig,
    pub trps: TrpsConfig,
    pub qdynamics: QdynConfig,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let hash = config_hash(text)?;
        let mut raw = RawConfig::parse(text)?;

        let seed = match raw.entries.remove("run.seed") {
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: "run.seed".into(),
                value: v,
                wanted: "unsigned integer",
            })?,
            None => return Err(ConfigError::MissingKey("run.seed".into())),
        };
        let out_dir = raw.entries.remove("run.out_dir").unwrap_or_else(|| "out".into());

        let theta = ThetaConfig {
            nu: raw.take_usize("theta.nu", 2048)?,
            g: raw.take_f64("theta.g", 1.0)?,
            g_c: raw.take_f64("theta.g_c", 10.0)?,
            softening: raw.take_opt_f64("theta.softening")?,
            dt: raw.take_opt_f64("theta.dt")?,
            box_x: raw.take_f64("theta.box_x", 1.0)?,
            box_p: raw.take_f64("theta.box_p", 1.0)?,
            virial_init: raw.take_f64("theta.virial_init", 1.0)?,
            n_dyn_times: raw.take_f64("theta.n_dyn_times", 100.0)?,
            randomize_spins: raw.take_bool("theta.randomize_spins", true)?,
            relax_rate: raw.take_f64("theta.relax_rate", 0.3)?,
            relax_steps: raw.take_usize("theta.relax_steps", 80)?,
            bins: raw.take_usize("theta.bins", 48)?,
            cell_dx: raw.take_opt_f64("theta.cell_dx")?,
            cell_dp: raw.take_opt_f64("theta.cell_dp")?,
        };
        let sen = SenConfig {
            a0_re: raw.take_f64("sen.a0_re", 1.0)?,
            a0_im: raw.take_f64("sen.a0_im", 0.0)?,
            a1_re: raw.take_f64("sen.a1_re", 0.0)?,
            a1_im: raw.take_f64("sen.a1_im", 0.0)?,
            c: raw.take_f64("sen.c", 1.0)?,
        };
        let coherence = CoherenceConfig {
            lengths: raw.take_vec3("coherence.ell", [0.5, 0.5, 0.5])?,
            dx: raw.take_vec3("coherence.dx", [0.02, 0.02, 0.02])?,
            nodes: raw.take_usize("coherence.nodes", 33)?,
        };
        let trps = TrpsConfig {
            grid_n: raw.take_usize("trps.grid_n", 12)?,
            grid_half: raw.take_f64("trps.grid_half", 1.2)?,
            core_width: raw.take_f64("trps.core_width", 0.25)?,
            halo_width: raw.take_f64("trps.halo_width", 0.7)?,
            core_fraction: raw.take_f64("trps.core_fraction", 0.4)?,
            lapse_base: raw.take_f64("trps.lapse_base", 1.0)?,
            lapse_gradient: raw.take_f64("trps.lapse_gradient", 0.4)?,
            phi_sigma_log: raw.take_f64("trps.phi_sigma_log", 0.2)?,
            lapse_samples: raw.take_usize("trps.lapse_samples", 100_000)?,
            dt0: raw.take_f64("trps.dt0", 0.05)?,
            t0_steps: raw.take_usize("trps.t0_steps", 200)?,
            reparam_eps: raw.take_f64("trps.reparam_eps", 0.1)?,
            reparam_omega: raw.take_f64("trps.reparam_omega", 1.0)?,
        };
        let qdynamics = QdynConfig {
            delta_e: raw.take_f64("qdynamics.delta_e", 1.0)?,
            sigma: raw.take_f64("qdynamics.sigma", 0.1)?,
            mu_t: raw.take_f64("qdynamics.mu_t", 0.01)?,
            hbar: raw.take_f64("qdynamics.hbar", 1.0)?,
            trajectories: raw.take_usize("qdynamics.trajectories", 10_000)?,
            t_max: raw.take_f64("qdynamics.t_max", 40.0)?,
            n_times: raw.take_usize("qdynamics.n_times", 20)?,
            event_threshold: raw.take_f64("qdynamics.event_threshold", 1.0)?,
        };

        if let Some(key) = raw.entries.keys().next() {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        Ok(Self {
            seed,
            out_dir,
            hash,
            theta,
            sen,
            coherence,
            trps,
            qdynamics,
        })
    }

    /// Checks every sub-config invariant without running anything; returns
    /// the list of violations (empty for a valid config).
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let t = &self.theta;
        if t.nu < 2 {
            v.push(format!("theta.nu must be >= 2, got {}", t.nu));
        }
        for (name, value) in [
            ("theta.g", t.g),
            ("theta.g_c", t.g_c),
            ("theta.box_x", t.box_x),
            ("theta.box_p", t.box_p),
            ("theta.virial_init", t.virial_init),
            ("theta.n_dyn_times", t.n_dyn_times),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                v.push(format!("{name} must be > 0, got {value}"));
            }
        }
        if let Some(s) = t.softening {
            if !(s > 0.0) {
                v.push(format!("theta.softening must be > 0, got {s}"));
            }
        }
        if let Some(dt) = t.dt {
            if !(dt > 0.0) {
                v.push(format!("theta.dt must be > 0, got {dt}"));
            }
        }
        if !(t.relax_rate > 0.0 && t.relax_rate <= 1.0) {
            v.push(format!("theta.relax_rate must be in (0,1], got {}", t.relax_rate));
        }
        if t.bins == 0 {
            v.push("theta.bins must be >= 1".into());
        }

        let parts = [
            self.sen.a0_re,
            self.sen.a0_im,
            self.sen.a1_re,
            self.sen.a1_im,
        ];
        if parts.iter().any(|x| !x.is_finite()) {
            v.push("sen spinor amplitudes must be finite".into());
        }
        if parts.iter().map(|x| x * x).sum::<f64>() == 0.0 {
            v.push("sen spinor must be nonzero (no shift direction otherwise)".into());
        }
        if !(self.sen.c > 0.0) {
            v.push(format!("sen.c must be > 0, got {}", self.sen.c));
        }

        if self.coherence.lengths.iter().any(|l| !(*l > 0.0)) {
            v.push("coherence.ell components must be > 0".into());
        }
        if self.coherence.nodes < 2 {
            v.push("coherence.nodes must be >= 2".into());
        }

        let r = &self.trps;
        if r.grid_n == 0 {
            v.push("trps.grid_n must be >= 1".into());
        }
        for (name, value) in [
            ("trps.grid_half", r.grid_half),
            ("trps.core_width", r.core_width),
            ("trps.halo_width", r.halo_width),
            ("trps.lapse_base", r.lapse_base),
            ("trps.dt0", r.dt0),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                v.push(format!("{name} must be > 0, got {value}"));
            }
        }
        if !(r.core_fraction > 0.0 && r.core_fraction < 1.0) {
            v.push(format!(
                "trps.core_fraction must be in (0,1), got {}",
                r.core_fraction
            ));
        }
        if !(r.phi_sigma_log >= 0.0) {
            v.push(format!(
                "trps.phi_sigma_log must be >= 0, got {}",
                r.phi_sigma_log
            ));
        }
        if r.lapse_samples < 2 {
            v.push("trps.lapse_samples must be >= 2".into());
        }
        if r.t0_steps == 0 {
            v.push("trps.t0_steps must be >= 1".into());
        }

        let q = &self.qdynamics;
        if !(q.sigma >= 0.0) || !q.sigma.is_finite() {
            v.push(format!("qdynamics.sigma must be >= 0, got {}", q.sigma));
        }
        for (name, value) in [
            ("qdynamics.delta_e", q.delta_e),
            ("qdynamics.mu_t", q.mu_t),
            ("qdynamics.hbar", q.hbar),
            ("qdynamics.t_max", q.t_max),
            ("qdynamics.event_threshold", q.event_threshold),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                v.push(format!("{name} must be > 0, got {value}"));
            }
        }
        if q.trajectories == 0 {
            v.push("qdynamics.trajectories must be >= 1".into());
        }
        if q.n_times == 0 {
            v.push("qdynamics.n_times must be >= 1".into());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "run.seed = 42\n";

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::from_text(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 42);
        assert!(cfg.validate().is_empty());
    }

    #[test]
    fn violations_are_listed_not_thrown() {
        let cfg =
            ExperimentConfig::from_text("run.seed = 1\ntheta.nu = 0\nqdynamics.sigma = -0.5\n")
                .unwrap();
        let violations = cfg.validate();
        assert!(violations.iter().any(|v| v.contains("theta.nu")));
        assert!(violations.iter().any(|v| v.contains("qdynamics.sigma")));
    }

    #[test]
    fn hash_ignores_formatting_but_not_values() {
        let a = config_hash("run.seed = 1\ntheta.nu = 10\n").unwrap();
        let b = config_hash("# comment\ntheta.nu=10\n\nrun.seed =   1\n").unwrap();
        assert_eq!(a, b);
        let c = config_hash("run.seed = 1\ntheta.nu = 11\n").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(
            ExperimentConfig::from_text("run.seed = 1\nbogus.key = 3\n"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(ExperimentConfig::from_text("run.seed\n").is_err());
        assert!(
            ExperimentConfig::from_text("theta.nu = 4\n").is_err(),
            "seed is mandatory"
        );
        assert!(matches!(
            ExperimentConfig::from_text("run.seed = 1\nrun.seed = 2\n"),
            Err(ConfigError::DuplicateKey(_))
        ));
    }

    #[test]
    fn vector_values_parse() {
        let cfg =
            ExperimentConfig::from_text("run.seed = 3\ncoherence.dx = 0.1, 0.2, 0.3\n").unwrap();
        assert_eq!(cfg.coherence.dx, [0.1, 0.2, 0.3]);
    }
}
