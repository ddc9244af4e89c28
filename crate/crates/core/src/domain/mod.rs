//! Shared value types for tasks, perturbations, verdicts and review decisions.
//!
//! Everything in here is an immutable value with no I/O; the types are
//! `Send + Sync` and are shared freely between pipeline workers.

mod params;
mod path;
mod record;
mod review;
mod task;
mod taskset;
mod verdict;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use params::{ProviderParams, ReviewMode, RunConfig};
pub use path::{DataPath, PathSegment, Span};
pub use record::{
    NumericEdit, NumericRule, PerturbationRecord, ReorderEdit, StringEdit, Substitution,
};
pub use review::{Decision, RejectReason, ReviewDecision};
pub use task::{normalize_and_hash, ContentHash, Instructions, Provenance, Task, TaskId};
pub use taskset::TaskSet;
pub use verdict::{Feasibility, FeasibilityVerdict, ParseStatus};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("task instructions must be non-empty")]
    EmptyInstructions,
    #[error("original tasks must carry language tag en, got {0}")]
    OriginalNotEnglish(Language),
    #[error("perturbed task {child} refers to {parent}, which is not an original task")]
    ChainedPerturbation { child: TaskId, parent: TaskId },
    #[error("task set member {0} does not share the original's domain")]
    DomainMismatch(TaskId),
    #[error("task set member {member} has parent {actual}, expected {expected}")]
    ParentMismatch {
        member: TaskId,
        expected: TaskId,
        actual: TaskId,
    },
    #[error("task set has {actual} perturbed members, expected {expected}")]
    Cardinality { expected: usize, actual: usize },
    #[error("rejected decision for {0} carries no reason")]
    RejectWithoutReason(TaskId),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },
}

/// The four STEM domains tasks are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Science,
    Technology,
    Engineering,
    Medicine,
}

impl Domain {
    /// Report column order.
    pub const ALL: [Domain; 4] = [
        Domain::Science,
        Domain::Technology,
        Domain::Engineering,
        Domain::Medicine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Science => "science",
            Domain::Technology => "technology",
            Domain::Engineering => "engineering",
            Domain::Medicine => "medicine",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Domain::Science => "Science",
            Domain::Technology => "Technology",
            Domain::Engineering => "Engineering",
            Domain::Medicine => "Medicine",
        }
    }

    /// Three-letter prefix used in task ids.
    pub fn short(self) -> &'static str {
        match self {
            Domain::Science => "sci",
            Domain::Technology => "tec",
            Domain::Engineering => "eng",
            Domain::Medicine => "med",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DomainError::UnknownName {
                kind: "domain",
                value: s.to_string(),
            })
    }
}

/// Language tag carried by task instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    En,
    De,
    Es,
    Fr,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::De => "de",
            Language::Es => "es",
            Language::Fr => "fr",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "de" => Ok(Language::De),
            "es" => Ok(Language::Es),
            "fr" => Ok(Language::Fr),
            _ => Err(DomainError::UnknownName {
                kind: "language",
                value: s.to_string(),
            }),
        }
    }
}

/// Target languages for instruction translation. English is deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationTarget {
    De,
    Es,
    Fr,
}

impl TranslationTarget {
    pub const ROTATION: [TranslationTarget; 3] =
        [TranslationTarget::De, TranslationTarget::Es, TranslationTarget::Fr];

    /// Target for variant `j` (1-based): de, es, fr, de, ...
    pub fn for_variant(j: u32) -> TranslationTarget {
        assert!(j >= 1, "variant indices are 1-based");
        Self::ROTATION[((j - 1) % 3) as usize]
    }

    pub fn language(self) -> Language {
        match self {
            TranslationTarget::De => Language::De,
            TranslationTarget::Es => Language::Es,
            TranslationTarget::Fr => Language::Fr,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.language().as_str()
    }
}

impl fmt::Display for TranslationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl TryFrom<Language> for TranslationTarget {
    type Error = Language;

    fn try_from(lang: Language) -> Result<Self, Self::Error> {
        match lang {
            Language::De => Ok(TranslationTarget::De),
            Language::Es => Ok(TranslationTarget::Es),
            Language::Fr => Ok(TranslationTarget::Fr),
            Language::En => Err(Language::En),
        }
    }
}
