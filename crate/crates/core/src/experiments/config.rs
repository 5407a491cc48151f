//! Versioned TOML configuration for sweeps and subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{build_profile, ChannelProfile};
use crate::nonlinearity::ReactionTerm;

pub const CONFIG_SCHEMA: &str = "thinlab-config/1";

pub const MIN_NX: usize = 16;
pub const MIN_NZ: usize = 4;
pub const MIN_N1D: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    /// constant, sine or polynomial.
    pub kind: String,
    pub params: Vec<f64>,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionConfig {
    /// f(s) = a s - s^3, cut beyond sqrt(a).
    pub a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Reference grid for resolvent and spectral rates.
    pub nx: usize,
    pub nz: usize,
    /// Standalone limit grid for spectra and the gap scan.
    pub n1d: usize,
    /// Reference grid carrying the dynamics.
    pub dyn_nx: usize,
    pub dyn_nz: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// Inertial-manifold dimension: a fixed value or the gap scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModeCount {
    Fixed(usize),
    Auto(AutoTag),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: Option<String>,
    pub json: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub profile: ProfileConfig,
    pub mu: f64,
    pub reaction: ReactionConfig,
    /// Gate radius R in X^alpha; absent means twice the norm of the constant sqrt(a).
    pub cutoff_radius: Option<f64>,
    pub alpha: f64,
    pub grid: GridConfig,
    pub eps_list: Vec<f64>,
    pub m: ModeCount,
    pub seed: u64,
    /// Extra samples stored in the first time unit of each connection.
    pub dense_samples: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: CONFIG_SCHEMA.into(),
            profile: ProfileConfig { kind: "sine".into(), params: vec![1.0, 0.3], d: 2 },
            mu: 1.0,
            reaction: ReactionConfig { a: 5.0 },
            cutoff_radius: None,
            alpha: 0.25,
            grid: GridConfig { nx: 128, nz: 32, n1d: 1024, dyn_nx: 64, dyn_nz: 8 },
            eps_list: (3..=7).map(|k| 0.5f64.powi(k)).collect(),
            m: ModeCount::Fixed(1),
            seed: 20240601,
            dense_samples: 20,
            output: OutputConfig::default(),
        }
    }
}

fn bad(msg: String) -> LabError {
    LabError::Config(msg)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LabError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(bad(format!("schema '{}' is not {CONFIG_SCHEMA}", self.schema)));
        }
        if self.eps_list.is_empty() {
            return Err(bad("eps_list is empty".into()));
        }
        if let Some(e) = self.eps_list.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
            return Err(bad(format!("eps {e} outside (0, 1]")));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad("eps_list must be strictly decreasing".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(bad(format!("alpha {} outside (0, 1/2)", self.alpha)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(bad(format!("mu {} must be positive", self.mu)));
        }
        let g = &self.grid;
        if g.nx < MIN_NX || g.dyn_nx < MIN_NX || g.nz < MIN_NZ || g.dyn_nz < MIN_NZ || g.n1d < MIN_N1D {
            return Err(bad(format!(
                "grid below minimums (nx, dyn_nx >= {MIN_NX}; nz, dyn_nz >= {MIN_NZ}; n1d >= {MIN_N1D})"
            )));
        }
        if let ModeCount::Fixed(m) = self.m {
            if !(1..=2).contains(&m) {
                return Err(bad(format!("m = {m}: graphs are computed for m in {{1, 2}}")));
            }
        }
        if self.seed > i64::MAX as u64 {
            return Err(bad(format!("seed {} does not fit a TOML integer", self.seed)));
        }
        if let Some(r) = self.cutoff_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(bad(format!("cutoff radius {r} must be positive")));
            }
        }
        self.profile()?;
        self.reaction()?;
        Ok(())
    }

    pub fn profile(&self) -> Result<ChannelProfile> {
        build_profile(&self.profile.kind, &self.profile.params, self.profile.d).map_err(|e| bad(e.to_string()))
    }

    pub fn reaction(&self) -> Result<ReactionTerm> {
        ReactionTerm::cubic(self.reaction.a).map_err(|e| bad(e.to_string()))
    }

    /// Replaces eps_list and revalidates.
    pub fn with_eps(mut self, eps: Vec<f64>) -> Result<Self> {
        self.eps_list = eps;
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn shipped_default_file_matches_default() {
        let text = include_str!("../../configs/default.toml");
        assert_eq!(ExperimentConfig::from_toml(text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn auto_mode_count_parses() {
        let text = ExperimentConfig::default().to_toml().replace("m = 1", "m = \"auto\"");
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap().m, ModeCount::Auto(AutoTag::Auto));
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = ExperimentConfig::default();
        assert!(base.clone().with_eps(vec![]).is_err());
        assert!(base.clone().with_eps(vec![0.1, 0.2]).is_err());
        assert!(base.clone().with_eps(vec![1.5, 0.5]).is_err());
        let mut c = base.clone();
        c.alpha = 0.5;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.grid.nz = 3;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.m = ModeCount::Fixed(3);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.seed = u64::MAX;
        assert!(c.validate().is_err());
        let text = base.to_toml().replace("mu = 1.0", "mu = 1.0\nextra = 2");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(LabError::Config(_))));
    }
}
