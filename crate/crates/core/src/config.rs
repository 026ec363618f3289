//! Run configuration: a flat `key = value` file, builtin example defaults and
//! command-line overrides, merged in that order of increasing priority.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{DomainError, Grid, StateBox, TimeRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    Incremental,
    ExponentialIncremental,
    Convergent,
    Contraction,
    Demidovic,
    LyapunovCheck,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::Incremental,
        Property::ExponentialIncremental,
        Property::Convergent,
        Property::Contraction,
        Property::Demidovic,
        Property::LyapunovCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Incremental => "incremental",
            Property::ExponentialIncremental => "exponential-incremental",
            Property::Convergent => "convergent",
            Property::Contraction => "contraction",
            Property::Demidovic => "demidovic",
            Property::LyapunovCheck => "lyapunov-check",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Properties whose purpose is to certify; a falsified result is a
    /// failure of the run.
    pub fn requests_certification(self) -> bool {
        matches!(
            self,
            Property::Contraction | Property::Demidovic | Property::LyapunovCheck
        )
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MetricSource {
    /// The system's `theta` grid when present, otherwise the Q-builder.
    #[default]
    Auto,
    Expression,
    QBuilder,
    Identity,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: Box<toml::de::Error> },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

macro_rules! settings {
    (
        required { $($r:ident : $rt:ty = $rd:expr),* $(,)? }
        optional { $($o:ident : $ot:ty),* $(,)? }
    ) => {
        /// Partial settings as read from a file, a registry entry or flags.
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ConfigFile {
            pub system: Option<String>,
            pub property: Option<Property>,
            $(#[serde(skip_serializing_if = "Option::is_none")] pub $r: Option<$rt>,)*
            $(#[serde(skip_serializing_if = "Option::is_none")] pub $o: Option<$ot>,)*
        }

        impl ConfigFile {
            /// Fields set in `other` replace those in `self`.
            pub fn overlay(mut self, other: ConfigFile) -> ConfigFile {
                if other.system.is_some() { self.system = other.system; }
                if other.property.is_some() { self.property = other.property; }
                $(if other.$r.is_some() { self.$r = other.$r; })*
                $(if other.$o.is_some() { self.$o = other.$o; })*
                self
            }

            pub fn resolve(self) -> Result<AnalysisConfig, ConfigError> {
                let cfg = AnalysisConfig {
                    system: self.system.ok_or(ConfigError::Missing("system"))?,
                    property: self.property.ok_or(ConfigError::Missing("property"))?,
                    $($r: self.$r.unwrap_or($rd),)*
                    $($o: self.$o,)*
                };
                cfg.validate()?;
                Ok(cfg)
            }
        }

        /// Fully resolved settings for one run.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct AnalysisConfig {
            pub system: String,
            pub property: Property,
            $(pub $r: $rt,)*
            $(pub $o: Option<$ot>,)*
        }
    };
}

settings! {
    required {
        radius: f64 = 10.0,
        horizon: usize = 20,
        budget: usize = 1000,
        seed: u64 = 42,
        k0_min: i64 = 0,
        k0_max: i64 = 0,
        grid_points: usize = 41,
        k_min: i64 = -20,
        k_max: i64 = 20,
        samples: usize = 4096,
        growth: f64 = 10.0,
        window_start: i64 = 0,
        window_end: i64 = 100,
        washout: usize = 100,
        ref_tol: f64 = 1e-7,
        lookback: usize = 100,
        metric: MetricSource = MetricSource::Auto,
        p_search: bool = true,
        p_iters: usize = 200,
        buckets: usize = 16,
    }
    optional {
        bounds: Vec<[f64; 2]>,
        candidate: String,
        rho: f64,
        q_horizon: usize,
        q_kappa: f64,
        q_lambda: f64,
        out: String,
    }
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            source: Box::new(e),
        })
    }

    /// Reads a config file; relative `system`, `candidate` and `out` paths
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<String>| {
            if let Some(s) = p {
                if looks_like_path(s) && Path::new(s).is_relative() {
                    *s = base.join(&*s).display().to_string();
                }
            }
        };
        rebase(&mut cfg.system);
        rebase(&mut cfg.candidate);
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    /// One `key=value` override, with the value in config-file syntax.
    pub fn parse_assignment(assignment: &str) -> Result<Self, ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("expected KEY=VALUE, got `{assignment}`")))?;
        let value = value.trim();
        let line = format!("{} = {value}", key.trim());
        Self::parse(&line, "--set").or_else(|_| Self::parse(&format!("{} = {:?}", key.trim(), value), "--set"))
    }
}

fn looks_like_path(s: &str) -> bool {
    s.contains('/') || s.contains('.')
}

impl AnalysisConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return bad(format!("radius must be finite and non-negative, got {}", self.radius));
        }
        if self.k0_min > self.k0_max || self.k_min > self.k_max || self.window_start >= self.window_end {
            return bad("time ranges must be non-empty".into());
        }
        if self.grid_points == 0 || self.samples == 0 {
            return bad("grid sizes must be at least 1".into());
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho < 1.0) {
                return bad(format!("rho must lie in (0, 1), got {rho}"));
            }
        }
        if self.q_kappa.is_some() != self.q_lambda.is_some() {
            return bad("q_kappa and q_lambda must be given together".into());
        }
        Ok(())
    }

    /// The analysis box: explicit `bounds` or the cube of side `2·radius`.
    pub fn state_box(&self, n: usize) -> Result<StateBox, ConfigError> {
        match &self.bounds {
            Some(b) => {
                if b.len() != n {
                    return Err(ConfigError::Invalid(format!(
                        "bounds has {} axes, system has {n}",
                        b.len()
                    )));
                }
                Ok(StateBox::new(
                    b.iter().map(|r| r[0]).collect(),
                    b.iter().map(|r| r[1]).collect(),
                )?)
            }
            None => Ok(StateBox::cube(n, self.radius)),
        }
    }

    pub fn k0_range(&self) -> TimeRange {
        TimeRange {
            start: self.k0_min,
            end: self.k0_max,
        }
    }

    pub fn k_range(&self) -> TimeRange {
        TimeRange {
            start: self.k_min,
            end: self.k_max,
        }
    }

    pub fn window(&self) -> TimeRange {
        TimeRange {
            start: self.window_start,
            end: self.window_end,
        }
    }

    /// Tensor grid with `grid_points` per axis for `n ≤ 2`, otherwise a
    /// Latin hypercube of `samples` points.
    pub fn grid(&self, bx: &StateBox, times: TimeRange) -> Grid {
        if bx.dim() <= 2 {
            Grid::tensor(bx, self.grid_points, times)
        } else {
            Grid::latin_hypercube(bx, self.samples, times, self.seed)
        }
    }

    pub fn q_rate(&self) -> Option<(f64, f64)> {
        self.q_kappa.zip(self.q_lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering() {
        let file = ConfigFile::parse("system = \"ex1\"\nproperty = \"incremental\"\nbudget = 10\n", "t").unwrap();
        let flags = ConfigFile::parse_assignment("seed=7").unwrap();
        let cfg = file.overlay(flags).resolve().unwrap();
        assert_eq!((cfg.budget, cfg.seed, cfg.horizon), (10, 7, 20));
        assert_eq!(
            ConfigFile::parse_assignment("metric=q-builder").unwrap().metric,
            Some(MetricSource::QBuilder)
        );
    }

    #[test]
    fn errors_carry_lines() {
        let e = ConfigFile::parse("system = \"a\"\nbudgett = 3\n", "x.cfg").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("x.cfg") && msg.contains("line 2"), "{msg}");
        assert!(matches!(
            ConfigFile::default().resolve(),
            Err(ConfigError::Missing("system"))
        ));
        let zero = ConfigFile::parse("system = \"a\"\nproperty = \"convergent\"\nbudget = 0", "t").unwrap();
        assert!(zero.resolve().is_err());
    }
}
