use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DomainError, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    None,
    DifficultyIncreased,
    LanguageVocabularyLimit,
    DataInconsistency,
    Other(String),
}

impl RejectReason {
    /// Stable label used as a key in summaries.
    pub fn label(&self) -> &'static str {
        match self {
            RejectReason::None => "none",
            RejectReason::DifficultyIncreased => "difficulty_increased",
            RejectReason::LanguageVocabularyLimit => "language_vocabulary_limit",
            RejectReason::DataInconsistency => "data_inconsistency",
            RejectReason::Other(_) => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub task_id: TaskId,
    pub decision: Decision,
    #[serde(default = "no_reason")]
    pub reason: RejectReason,
    #[serde(default)]
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
}

fn no_reason() -> RejectReason {
    RejectReason::None
}

impl ReviewDecision {
    pub fn accept(task_id: TaskId, reviewer: impl Into<String>) -> Self {
        ReviewDecision {
            task_id,
            decision: Decision::Accepted,
            reason: RejectReason::None,
            reviewer: reviewer.into(),
            timestamp: Utc::now(),
        }
    }

    pub fn reject(task_id: TaskId, reason: RejectReason, reviewer: impl Into<String>) -> Self {
        ReviewDecision {
            task_id,
            decision: Decision::Rejected,
            reason,
            reviewer: reviewer.into(),
            timestamp: Utc::now(),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.decision == Decision::Rejected && self.reason == RejectReason::None {
            return Err(DomainError::RejectWithoutReason(self.task_id.clone()));
        }
        Ok(())
    }

    pub fn is_accepted(&self) -> bool {
        self.decision == Decision::Accepted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejection_needs_a_reason() {
        let bad = ReviewDecision::reject("t".into(), RejectReason::None, "expert");
        assert!(bad.validate().is_err());
        let ok = ReviewDecision::reject("t".into(), RejectReason::Other("typo".into()), "expert");
        assert!(ok.validate().is_ok());
        assert!(ReviewDecision::accept("t".into(), "expert").validate().is_ok());
    }

    #[test]
    fn reason_wire_format() {
        let json = serde_json::to_string(&RejectReason::DataInconsistency).unwrap();
        assert_eq!(json, "\"data_inconsistency\"");
        let other: RejectReason = serde_json::from_str(r#"{"other":"units"}"#).unwrap();
        assert_eq!(other, RejectReason::Other("units".into()));
    }
}
