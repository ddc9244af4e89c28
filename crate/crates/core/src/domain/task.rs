use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Domain, DomainError, Language, PerturbationRecord};

/// Opaque task identifier, unique within a run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        TaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}

impl From<String> for TaskId {
    fn from(s: String) -> Self {
        TaskId(s)
    }
}

/// Hex SHA-256 over normalized task content.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentHash(pub String);

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instructions {
    pub text: String,
    pub language: Language,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Perturbed {
        parent_id: TaskId,
        record: PerturbationRecord,
    },
}

/// One STEM problem: instructions plus structured data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub domain: Domain,
    pub instructions: Instructions,
    #[serde(default)]
    pub data: Value,
    pub provenance: Provenance,
    pub content_hash: ContentHash,
}

impl Task {
    pub fn original(
        id: TaskId,
        domain: Domain,
        instructions: impl Into<String>,
        data: Value,
    ) -> Result<Task, DomainError> {
        let text = instructions.into();
        let content_hash = normalize_and_hash(&text, &data)?;
        Ok(Task {
            id,
            domain,
            instructions: Instructions {
                text,
                language: Language::En,
            },
            data,
            provenance: Provenance::Original,
            content_hash,
        })
    }

    /// Builds a perturbed variant of `parent`. The language tag is taken from
    /// the record's translation target.
    pub fn perturbed(
        id: TaskId,
        parent: &Task,
        instructions: impl Into<String>,
        data: Value,
        record: PerturbationRecord,
    ) -> Result<Task, DomainError> {
        if !parent.is_original() {
            return Err(DomainError::ChainedPerturbation {
                child: id,
                parent: parent.id.clone(),
            });
        }
        let text = instructions.into();
        let content_hash = normalize_and_hash(&text, &data)?;
        Ok(Task {
            id,
            domain: parent.domain,
            instructions: Instructions {
                text,
                language: record.translation_target.language(),
            },
            data,
            provenance: Provenance::Perturbed {
                parent_id: parent.id.clone(),
                record,
            },
            content_hash,
        })
    }

    pub fn is_original(&self) -> bool {
        matches!(self.provenance, Provenance::Original)
    }

    pub fn parent_id(&self) -> Option<&TaskId> {
        match &self.provenance {
            Provenance::Original => None,
            Provenance::Perturbed { parent_id, .. } => Some(parent_id),
        }
    }

    pub fn record(&self) -> Option<&PerturbationRecord> {
        match &self.provenance {
            Provenance::Original => None,
            Provenance::Perturbed { record, .. } => Some(record),
        }
    }

    /// Checks the invariants that can be checked on a single task.
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.instructions.text.trim().is_empty() {
            return Err(DomainError::EmptyInstructions);
        }
        match &self.provenance {
            Provenance::Original if self.instructions.language != Language::En => Err(
                DomainError::OriginalNotEnglish(self.instructions.language),
            ),
            Provenance::Perturbed { record, .. }
                if record.translation_target.language() != self.instructions.language =>
            {
                Err(DomainError::InvalidConfig(format!(
                    "task {} is tagged {} but was translated to {}",
                    self.id, self.instructions.language, record.translation_target
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Digest over lowercased, whitespace-collapsed instructions and the
/// canonically ordered data tree.
pub fn normalize_and_hash(instructions: &str, data: &Value) -> Result<ContentHash, DomainError> {
    if instructions.trim().is_empty() {
        return Err(DomainError::EmptyInstructions);
    }
    let normalized = instructions
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    // serde_json maps are BTreeMaps here, so serialization is key-ordered.
    let canonical = serde_json::to_string(data).expect("Value serialization is infallible");
    let mut hasher = Sha256::new();
    hasher.update(b"instructions\0");
    hasher.update(normalized.as_bytes());
    hasher.update(b"\0data\0");
    hasher.update(canonical.as_bytes());
    Ok(ContentHash(hex::encode(hasher.finalize())))
}
