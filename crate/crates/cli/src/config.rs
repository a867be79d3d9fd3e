//! Run configuration files.
//!
//! A config is one TOML document; unknown keys anywhere are errors. Example:
//!
//! ```toml
//! kind = "L2Flow"
//! resolution = 32
//! t_end = 1.0
//! tolerance = 1e-8
//!
//! [initial]
//! preset = "rough"
//! seed = 7
//! amplitude = 0.03
//!
//! [monitors]
//! local_sobolev = { center = [0, 0], radius = 1.0, m = 1 }
//! ```

use focf::flow::IntegratorParams;
use focf::presets::Preset;
use focf::{FlowKind, FlowSpec, FlowState, Grid2Chart};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {0}: {1}")]
    Io(String, std::io::Error),
}

fn default_resolution() -> usize {
    32
}

fn default_length() -> f64 {
    TAU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: FlowKind,
    pub t_end: f64,
    /// Grid nodes per axis (ignored by homogeneous presets).
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Torus side length.
    #[serde(default = "default_length")]
    pub length: f64,
    /// Overrides `integrator.tol`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub initial: Preset,
    #[serde(default)]
    pub integrator: IntegratorParams,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub monitors: MonitorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write every n-th state as a snapshot; 0 disables snapshots.
    pub snapshot_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { snapshot_stride: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub smoothing: bool,
    pub metric_equivalence: bool,
    pub energy_budget: bool,
    /// Relative tolerance of the energy budget against `F(0)`.
    pub energy_budget_tol: f64,
    pub residual: bool,
    pub singularity: bool,
    pub classifier: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_sobolev: Option<LocalSobolevConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball_growth: Option<BallGrowthConfig>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            smoothing: true,
            metric_equivalence: true,
            energy_budget: true,
            energy_budget_tol: 1e-4,
            residual: false,
            singularity: true,
            classifier: true,
            local_sobolev: None,
            ball_growth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSobolevConfig {
    pub center: [usize; 2],
    pub radius: f64,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallGrowthConfig {
    pub center: [usize; 2],
    pub rho: f64,
    pub times: Vec<f64>,
}

pub fn parse_value(value: toml::Value) -> Result<RunConfig, ConfigError> {
    let text = toml::to_string(&value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Field { path, message: inner.message().trim().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a TOML config, or the config embedded in a run manifest (`.json`).
pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let cfg = v.get("config").ok_or_else(|| ConfigError::Invalid("manifest has no `config`".into()))?;
        let value: toml::Value =
            serde_json::from_value(cfg.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        return parse_value(value);
    }
    parse(&text)
}

impl RunConfig {
    fn field(path: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Field { path: path.into(), message: message.into() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Self::field("t_end", "must be positive"));
        }
        if self.resolution < 4 {
            return Err(Self::field("resolution", "needs at least 4 nodes per axis"));
        }
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Self::field("length", "must be positive"));
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                return Err(Self::field("tolerance", "must be positive"));
            }
        }
        if self.kind == FlowKind::SurfaceCalabi && !self.initial.is_potential() {
            return Err(Self::field("initial.preset", "SurfaceCalabi runs need the calabi-random preset"));
        }
        if self.kind != FlowKind::SurfaceCalabi && self.initial.is_potential() {
            return Err(Self::field("kind", "calabi-random data needs kind = \"SurfaceCalabi\""));
        }
        self.initial_state().map(|_| ())
    }

    pub fn spec(&self) -> Result<FlowSpec, ConfigError> {
        let mut integrator = self.integrator.clone();
        if let Some(t) = self.tolerance {
            integrator.tol = t;
        }
        FlowSpec::with_params(self.kind, self.initial.geometry(), integrator)
            .map_err(|e| Self::field("kind", e.to_string()))
    }

    /// Builds and validates the initial data (SPD metric, positive conformal factor).
    pub fn initial_state(&self) -> Result<FlowState, ConfigError> {
        let chart = Grid2Chart::square(self.length, self.resolution).map_err(|e| Self::field("resolution", e.to_string()))?;
        self.initial.build(chart).map_err(|e| Self::field("initial", e.to_string()))
    }

    /// The preset seed, if the preset is random.
    pub fn seed(&self) -> Option<u64> {
        match self.initial {
            Preset::RandomSmooth { seed, .. } | Preset::Rough { seed, .. } | Preset::CalabiRandom { seed, .. } => Some(seed),
            _ => None,
        }
    }

    pub fn set_seed(&mut self, s: u64) -> Result<(), ConfigError> {
        match &mut self.initial {
            Preset::RandomSmooth { seed, .. } | Preset::Rough { seed, .. } | Preset::CalabiRandom { seed, .. } => {
                *seed = s;
                Ok(())
            }
            _ => Err(Self::field("initial.seed", "preset has no seed")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "kind = \"L2Flow\"\nt_end = 0.5\n[initial]\npreset = \"conformal-bump\"\namplitude = 0.1\nmode = 1\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.resolution, 32);
        assert!(c.monitors.smoothing);
        assert_eq!(c.spec().unwrap().integrator.tol, 1e-8);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = parse(&format!("{BASE}colour = 1\n")).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let err = parse(&BASE.replace("mode = 1", "mode = 1\nphase = 2")).unwrap_err();
        assert!(err.to_string().starts_with("initial"), "{err}");
        let err = parse(&format!("{BASE}[monitors]\nsmothing = true\n")).unwrap_err();
        assert!(err.to_string().starts_with("monitors"), "{err}");
    }

    #[test]
    fn non_spd_amplitude_is_rejected() {
        let text = "kind = \"L2Flow\"\nt_end = 1.0\n[initial]\npreset = \"random-smooth\"\nseed = 1\namplitude = 3.0\n";
        assert!(matches!(parse(text), Err(ConfigError::Field { ref path, .. }) if path == "initial"));
    }

    #[test]
    fn calabi_needs_potential_data() {
        let text = BASE.replace("L2Flow", "SurfaceCalabi");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn seed_override() {
        let mut c = parse(BASE).unwrap();
        assert!(c.set_seed(3).is_err());
        let mut r = parse("kind = \"L2Flow\"\nt_end = 1.0\n[initial]\npreset = \"rough\"\nseed = 1\namplitude = 0.01\n").unwrap();
        r.set_seed(9).unwrap();
        assert_eq!(r.seed(), Some(9));
        c.tolerance = Some(1e-6);
        assert_eq!(c.spec().unwrap().integrator.tol, 1e-6);
    }
}
