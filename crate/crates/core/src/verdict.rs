use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Certified,
    Falsified,
    Inconclusive,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Certified => "certified",
            Status::Falsified => "falsified",
            Status::Inconclusive => "inconclusive",
        })
    }
}

/// A concrete violation: the pair (or point) involved, the time span, what
/// was observed and what the property allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub xi1: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi2: Option<Vec<f64>>,
    pub k0: i64,
    pub k: i64,
    pub observed: f64,
    pub allowed: f64,
    pub note: String,
}

/// A grid point that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointIssue {
    pub k: i64,
    pub x: Vec<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub constants: BTreeMap<String, f64>,
    pub samples_used: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub issues: Vec<PointIssue>,
}

impl Verdict {
    pub fn certified(constants: impl IntoIterator<Item = (&'static str, f64)>, samples_used: usize) -> Self {
        Verdict {
            status: Status::Certified,
            witness: None,
            constants: constants.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            samples_used,
            issues: Vec::new(),
        }
    }

    pub fn falsified(witness: Witness, samples_used: usize) -> Self {
        debug_assert!(witness.observed > witness.allowed || witness.observed.is_nan());
        Verdict {
            status: Status::Falsified,
            witness: Some(witness),
            constants: BTreeMap::new(),
            samples_used,
            issues: Vec::new(),
        }
    }

    pub fn inconclusive(samples_used: usize) -> Self {
        Verdict {
            status: Status::Inconclusive,
            witness: None,
            constants: BTreeMap::new(),
            samples_used,
            issues: Vec::new(),
        }
    }

    pub fn is_certified(&self) -> bool {
        self.status == Status::Certified
    }

    pub fn is_falsified(&self) -> bool {
        self.status == Status::Falsified
    }
}
