use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DomainError, FeasibilityVerdict, ReviewDecision, Task, TaskId};

/// One original task and its perturbed variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub original: Task,
    pub perturbed: Vec<Task>,
    #[serde(default)]
    pub verdicts: BTreeMap<TaskId, FeasibilityVerdict>,
    #[serde(default)]
    pub review: BTreeMap<TaskId, ReviewDecision>,
}

impl TaskSet {
    pub fn new(original: Task, perturbed: Vec<Task>) -> Result<TaskSet, DomainError> {
        let set = TaskSet {
            original,
            perturbed,
            verdicts: BTreeMap::new(),
            review: BTreeMap::new(),
        };
        set.validate_members()?;
        Ok(set)
    }

    /// Number of members including the original (`t = n + 1`).
    pub fn len(&self) -> usize {
        self.perturbed.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn members(&self) -> impl Iterator<Item = &Task> {
        std::iter::once(&self.original).chain(self.perturbed.iter())
    }

    fn validate_members(&self) -> Result<(), DomainError> {
        if !self.original.is_original() {
            return Err(DomainError::ChainedPerturbation {
                child: self.original.id.clone(),
                parent: self.original.parent_id().cloned().unwrap_or_else(|| "?".into()),
            });
        }
        for task in &self.perturbed {
            if task.domain != self.original.domain {
                return Err(DomainError::DomainMismatch(task.id.clone()));
            }
            match task.parent_id() {
                Some(parent) if parent == &self.original.id => {}
                Some(parent) => {
                    return Err(DomainError::ParentMismatch {
                        member: task.id.clone(),
                        expected: self.original.id.clone(),
                        actual: parent.clone(),
                    })
                }
                None => {
                    return Err(DomainError::ChainedPerturbation {
                        child: task.id.clone(),
                        parent: self.original.id.clone(),
                    })
                }
            }
        }
        Ok(())
    }

    /// Full invariant check, including `t = n + 1` for a fixed `n`.
    pub fn validate(&self, n: usize) -> Result<(), DomainError> {
        self.validate_members()?;
        if self.perturbed.len() != n {
            return Err(DomainError::Cardinality {
                expected: n,
                actual: self.perturbed.len(),
            });
        }
        Ok(())
    }
}
