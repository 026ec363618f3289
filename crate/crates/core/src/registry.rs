//! Builtin example systems with their expected verdicts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigFile, Property};
use crate::dsl::{parse_system, DslError, SystemDef};

const REGISTRY: &str = include_str!("../data/registry.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Yes,
    No,
    Unknown,
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Expectation::Yes => "yes",
            Expectation::No => "no",
            Expectation::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Column {
    #[serde(rename = "IS")]
    Is,
    #[serde(rename = "EIS")]
    Eis,
    #[serde(rename = "CD")]
    Cd,
    #[serde(rename = "CA")]
    Ca,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::Is => "IS",
            Column::Eis => "EIS",
            Column::Cd => "CD",
            Column::Ca => "CA",
        }
    }

    /// The registry column a property run is compared against.
    pub fn for_property(p: Property) -> Option<Column> {
        match p {
            Property::Incremental => Some(Column::Is),
            Property::ExponentialIncremental | Property::Demidovic => Some(Column::Eis),
            Property::Convergent => Some(Column::Cd),
            Property::Contraction => Some(Column::Ca),
            Property::LyapunovCheck => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    #[serde(rename = "IS")]
    pub is: Expectation,
    #[serde(rename = "EIS")]
    pub eis: Expectation,
    #[serde(rename = "CD")]
    pub cd: Expectation,
    #[serde(rename = "CA")]
    pub ca: Expectation,
}

impl Expected {
    pub fn get(&self, c: Column) -> Expectation {
        match c {
            Column::Is => self.is,
            Column::Eis => self.eis,
            Column::Cd => self.cd,
            Column::Ca => self.ca,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub name: String,
    pub title: String,
    pub differentiable: bool,
    pub note: String,
    pub system: String,
    pub expected: Expected,
    #[serde(default)]
    pub defaults: ConfigFile,
}

impl Example {
    pub fn system_def(&self) -> Result<SystemDef, DslError> {
        parse_system(&self.system)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(rename = "example")]
    pub examples: Vec<Example>,
}

impl Registry {
    pub fn builtin() -> Self {
        toml::from_str(REGISTRY).expect("builtin registry is valid")
    }

    pub fn get(&self, name: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.name == name)
    }

    /// Violations of the implications between the four properties:
    /// EIS ⇒ IS, CA ⇒ IS, and EIS ⇔ CA for differentiable systems.
    pub fn rule_violations(&self) -> Vec<String> {
        use Expectation::*;
        let mut out = Vec::new();
        for e in &self.examples {
            let x = &e.expected;
            if x.eis == Yes && x.is == No {
                out.push(format!(
                    "{}: exponentially incrementally stable but not incrementally stable",
                    e.name
                ));
            }
            if x.ca == Yes && x.is == No {
                out.push(format!("{}: contracting but not incrementally stable", e.name));
            }
            if x.ca == Yes && x.eis != Yes {
                out.push(format!(
                    "{}: contracting but not marked exponentially incrementally stable",
                    e.name
                ));
            }
            if e.differentiable && x.eis == Yes && x.ca != Yes {
                out.push(format!(
                    "{}: exponentially incrementally stable and differentiable but not contracting",
                    e.name
                ));
            }
        }
        out
    }

    /// Fixed-width table of the expected-verdict matrix.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<5} {:<8} {:<8} {:<8} {:<8} {}\n",
            "name", "IS", "EIS", "CD", "CA", "system"
        );
        for e in &self.examples {
            let x = &e.expected;
            s.push_str(&format!(
                "{:<5} {:<8} {:<8} {:<8} {:<8} {}\n",
                e.name,
                x.is.to_string(),
                x.eis.to_string(),
                x.cd.to_string(),
                x.ca.to_string(),
                e.title
            ));
        }
        s
    }
}
