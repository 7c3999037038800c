use std::path::{Path, PathBuf};

use interlace::lattice::{MAX_DIM, MIN_DIM};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Exist,
    Unique,
    Uc,
    Disconnect,
    Classes,
    FiniteEnergy,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Exist => "exist",
            EventKind::Unique => "unique",
            EventKind::Uc => "uc",
            EventKind::Disconnect => "disconnect",
            EventKind::Classes => "classes",
            EventKind::FiniteEnergy => "finite_energy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeCorpusConfig {
    pub xi: Vec<f64>,
    pub instances: usize,
    /// Scales; the calibrated floor for each ξ when empty.
    pub s: Vec<f64>,
    pub l_max: i64,
    /// Complexity exponent; the calibrated default for each ξ when unset.
    pub m: Option<f64>,
}

impl Default for BridgeCorpusConfig {
    fn default() -> Self {
        BridgeCorpusConfig { xi: vec![0.55, 0.6, 0.75], instances: 60, s: Vec::new(), l_max: 1024, m: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    /// Radius of the sampled box B_R; the smallest box the events need when unset.
    pub window_radius: Option<i64>,
    pub u: Vec<f64>,
    /// Second levels for Unique and UC, used with every u ≥ v.
    pub v: Vec<f64>,
    pub delta: Vec<f64>,
    pub events: Vec<EventKind>,
    pub r: Vec<i64>,
    pub m: Vec<i64>,
    /// Stages j for the class counts.
    pub j: Vec<usize>,
    /// r0 of the finite-energy events.
    pub fe_r0: i64,
    pub trials: u64,
    pub seed: u64,
    pub truncation: Option<i64>,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    pub gamma_m: Option<f64>,
    pub bridge: BridgeCorpusConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 3,
            window_radius: None,
            u: vec![0.5, 1.0, 2.0],
            v: vec![0.25],
            delta: vec![0.2],
            events: vec![EventKind::Exist, EventKind::Disconnect],
            r: vec![4],
            m: vec![8],
            j: vec![0],
            fe_r0: 1,
            trials: 100,
            seed: 1,
            truncation: None,
            threads: None,
            out_dir: PathBuf::from("out"),
            gamma_m: None,
            bridge: BridgeCorpusConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text).map_err(|source| ConfigError::Parse { path: path.into(), source: Box::new(source) })
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn u_max(&self) -> f64 {
        self.u.iter().chain(&self.v).fold(0.0, |a, &b| a.max(b))
    }

    /// Radius of the smallest centred box on which every selected event is
    /// decided.
    pub fn required_radius(&self) -> i64 {
        let max = |v: &[i64]| v.iter().copied().max().unwrap_or(0);
        let (r, m) = (max(&self.r), max(&self.m));
        self.events
            .iter()
            .map(|e| match e {
                EventKind::Exist => r,
                EventKind::Unique => 2 * r,
                EventKind::Uc => 6 * m,
                EventKind::Disconnect => m,
                EventKind::Classes => 4 * m,
                EventKind::FiniteEnergy => r + 8 * self.fe_r0,
            })
            .max()
            .unwrap_or(1)
            .max(1)
    }

    pub fn window(&self) -> i64 {
        self.window_radius.unwrap_or_else(|| self.required_radius())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if !(MIN_DIM..=MAX_DIM).contains(&self.d) {
            return bad(format!("d = {} outside {MIN_DIM}..={MAX_DIM}", self.d));
        }
        if let Some(x) = self.u.iter().chain(&self.v).find(|x| !(x.is_finite() && **x > 0.0)) {
            return bad(format!("level {x} is not a positive number"));
        }
        if let Some(x) = self.delta.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return bad(format!("δ = {x} is negative"));
        }
        if let Some(x) = self.r.iter().chain(&self.m).find(|x| **x < 1) {
            return bad(format!("scale {x} below 1"));
        }
        if self.fe_r0 < 1 {
            return bad(format!("fe_r0 = {} below 1", self.fe_r0));
        }
        if let Some(&j) = self.j.iter().find(|&&j| self.m.iter().any(|&m| j > (m as f64).sqrt() as usize)) {
            return bad(format!("stage j = {j} exceeds ⌊√M⌋ for some M"));
        }
        let need = self.required_radius();
        if let Some(w) = self.window_radius {
            if w < need {
                return bad(format!("window_radius = {w} but the events need {need}"));
            }
        }
        if let Some(t) = self.truncation {
            if t < 2 * self.window() {
                return bad(format!("truncation = {t} below twice the window radius {}", self.window()));
            }
        }
        if let Some(g) = self.gamma_m {
            if !(g.is_finite() && g > 0.0) {
                return bad(format!("gamma_m = {g} is not positive"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads = 0".into());
        }
        let b = &self.bridge;
        if let Some(x) = b.xi.iter().find(|x| !(**x > 0.5 && **x < 1.0)) {
            return bad(format!("bridge ξ = {x} outside (½, 1)"));
        }
        if let Some(s) = b.s.iter().find(|s| !(s.is_finite() && **s >= 1.0)) {
            return bad(format!("bridge s = {s} below 1"));
        }
        if b.l_max < 2 {
            return bad(format!("bridge l_max = {} below 2", b.l_max));
        }
        if let Some(m) = b.m {
            if !(m.is_finite() && m > 0.0) {
                return bad(format!("bridge m = {m} is not positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn example_file_is_valid() {
        let c = ExperimentConfig::parse(include_str!("../example.toml")).unwrap();
        c.validate().unwrap();
        assert_eq!(c.events.len(), 6);
        assert_eq!(c.required_radius(), 48);
    }

    #[test]
    fn required_radius_follows_events() {
        let c = ExperimentConfig { events: vec![EventKind::Uc], m: vec![2, 3], ..Default::default() };
        assert_eq!(c.required_radius(), 18);
        let c = ExperimentConfig { events: vec![], ..Default::default() };
        assert_eq!(c.required_radius(), 1);
    }

    #[test]
    fn rejects_bad_values() {
        for text in ["d = 2", "u = [0.0]", "r = [0]", "delta = [-1.0]", "window_radius = 2\nr = [4]", "[bridge]\nxi = [0.5]"] {
            let c = ExperimentConfig::parse(text).unwrap();
            assert!(c.validate().is_err(), "{text}");
        }
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
    }
}
