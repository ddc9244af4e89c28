//! Expert review queue over a run: pending items, decisions, summaries.

use std::collections::BTreeMap;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Decision, Domain, PerturbationRecord, ReviewDecision, Task, TaskId};
use crate::state::{RunState, StateError};
use crate::store::{Event, RunStore, RunWriter, StoreError};

pub const AUTO_REVIEWER: &str = "auto-accept";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReviewError {
    #[error("no run named {0}")]
    UnknownRun(String),
    #[error("task {0} is not under review in this run")]
    UnknownTask(TaskId),
    #[error("malformed decision: {0}")]
    MalformedDecision(String),
    #[error("task {} was already decided", .existing.task_id)]
    Conflict { existing: Box<ReviewDecision> },
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    State(#[from] StateError),
}

impl From<StoreError> for ReviewError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownRun(id) => ReviewError::UnknownRun(id),
            other => ReviewError::Store(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Variant,
    SpotCheck,
}

/// A queue entry with everything needed to compare it against its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingItem {
    pub kind: ItemKind,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<PerturbationRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendingFilter {
    pub domain: Option<Domain>,
    pub offset: usize,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingPage {
    pub run_id: String,
    /// Matching items before paging.
    pub total: usize,
    pub offset: usize,
    pub items: Vec<PendingItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub run_id: String,
    pub task_id: TaskId,
    pub seq: u64,
    /// Whether an earlier decision for the task was replaced.
    pub replaced: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionCounts {
    pub accepted: usize,
    pub rejected: usize,
}

impl DecisionCounts {
    fn add(&mut self, d: Decision) {
        match d {
            Decision::Accepted => self.accepted += 1,
            Decision::Rejected => self.rejected += 1,
        }
    }
}

/// Counts over the decision log. Overwritten decisions still count; the
/// `current` block counts only the latest decision per task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSummary {
    pub run_id: String,
    pub decisions: usize,
    pub by_decision: DecisionCounts,
    pub by_reason: BTreeMap<String, usize>,
    pub by_domain: BTreeMap<Domain, DecisionCounts>,
    pub current: DecisionCounts,
    pub pending: usize,
}

/// Review access to one run. Reads share the state; writes go through the
/// run's single writer one at a time.
pub struct ReviewDesk {
    state: RwLock<RunState>,
    writer: Mutex<RunWriter>,
}

impl ReviewDesk {
    pub fn open(store: &RunStore, run_id: &str) -> Result<Self, ReviewError> {
        let writer = store.open(run_id)?;
        let state = RunState::fold(&store.read(run_id)?)?;
        Ok(Self::from_parts(state, writer))
    }

    pub fn from_parts(state: RunState, writer: RunWriter) -> Self {
        ReviewDesk {
            state: RwLock::new(state),
            writer: Mutex::new(writer),
        }
    }

    pub fn into_parts(self) -> (RunState, RunWriter) {
        (
            self.state.into_inner().expect("state lock poisoned"),
            self.writer.into_inner().expect("writer lock poisoned"),
        )
    }

    pub fn run_id(&self) -> String {
        self.read().run_id.clone()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, RunState> {
        self.state.read().expect("state lock poisoned")
    }

    pub fn state(&self) -> RunState {
        self.read().clone()
    }

    pub fn pending(&self, filter: &PendingFilter) -> PendingPage {
        let state = self.read();
        let matching: Vec<&Task> = state
            .review_queue()
            .into_iter()
            .filter(|t| filter.domain.is_none_or(|d| t.domain == d))
            .collect();
        let total = matching.len();
        let items = matching
            .into_iter()
            .skip(filter.offset)
            .take(filter.limit.unwrap_or(usize::MAX))
            .map(|t| PendingItem {
                kind: if t.is_original() { ItemKind::SpotCheck } else { ItemKind::Variant },
                task: t.clone(),
                parent: t.parent_id().and_then(|p| state.original(p)).cloned(),
                record: t.record().cloned(),
            })
            .collect();
        PendingPage {
            run_id: state.run_id.clone(),
            total,
            offset: filter.offset,
            items,
        }
    }

    /// Records a decision. Deciding a task again replaces the earlier
    /// decision, unless `if_pending` asks for a conflict instead.
    pub fn decide(&self, decision: ReviewDecision, if_pending: bool) -> Result<Ack, ReviewError> {
        decision
            .validate()
            .map_err(|e| ReviewError::MalformedDecision(e.to_string()))?;
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        let existing = {
            let state = self.read();
            let existing = state.decision(&decision.task_id).cloned();
            let queued = state.review_queue().iter().any(|t| t.id == decision.task_id);
            if existing.is_none() && !queued {
                return Err(ReviewError::UnknownTask(decision.task_id.clone()));
            }
            existing
        };
        if let (Some(existing), true) = (&existing, if_pending) {
            return Err(ReviewError::Conflict {
                existing: Box::new(existing.clone()),
            });
        }
        let task_id = decision.task_id.clone();
        let event = Event::ReviewDecided { decision };
        let seq = writer.append(event.clone())?;
        self.state
            .write()
            .expect("state lock poisoned")
            .apply(seq, &event)?;
        Ok(Ack {
            run_id: writer.run_id().to_string(),
            task_id,
            seq,
            replaced: existing.is_some(),
        })
    }

    /// Accepts everything currently pending.
    pub fn accept_all(&self, reviewer: &str) -> Result<usize, ReviewError> {
        let pending: Vec<TaskId> = self.read().review_queue().iter().map(|t| t.id.clone()).collect();
        for id in &pending {
            self.decide(ReviewDecision::accept(id.clone(), reviewer), false)?;
        }
        Ok(pending.len())
    }

    pub fn summary(&self) -> ReviewSummary {
        let state = self.read();
        let mut s = ReviewSummary {
            run_id: state.run_id.clone(),
            decisions: state.decision_log.len(),
            pending: state.review_queue().len(),
            ..Default::default()
        };
        for d in &state.decision_log {
            s.by_decision.add(d.decision);
            if d.decision == Decision::Rejected {
                *s.by_reason.entry(d.reason.label().to_string()).or_default() += 1;
            }
            if let Some(task) = state.task(&d.task_id) {
                s.by_domain.entry(task.domain).or_default().add(d.decision);
            }
        }
        for d in state.decisions.values() {
            s.current.add(d.decision);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PerturbationRecord, RejectReason, RunConfig, TranslationTarget};
    use crate::perturb::variant_id;
    use serde_json::json;

    fn seeded_desk(dir: &std::path::Path) -> ReviewDesk {
        let store = RunStore::new(dir).with_fsync(false);
        let config = RunConfig {
            m: 2,
            n: 3,
            domains: vec![Domain::Engineering],
            spot_check_rate: 0.0,
            ..RunConfig::default()
        };
        let mut w = store.create("r", &config).unwrap();
        for slot in 0..2u32 {
            let o = Task::original(format!("eng-{slot:03}").into(), Domain::Engineering, "Size the beam.", json!({"span_m": 4})).unwrap();
            w.append(Event::TaskAccepted { slot, task: o.clone() }).unwrap();
            for j in 1..=3 {
                let record = PerturbationRecord {
                    variant_index: j,
                    ontology_substitutions: vec![],
                    rewritten_instructions: "Size the girder.".into(),
                    data_string_edits: vec![],
                    translation_target: TranslationTarget::for_variant(j),
                    translated_instructions: "x".into(),
                    numeric_edits: vec![],
                    reorder_edits: vec![],
                    seed: 1,
                };
                let v = Task::perturbed(variant_id(&o.id, j, 0), &o, "x", json!({"span_m": 5}), record).unwrap();
                w.append(Event::VariantCreated { generation: 0, task: v }).unwrap();
            }
        }
        drop(w);
        ReviewDesk::open(&store, "r").unwrap()
    }

    #[test]
    fn queue_and_decisions() {
        let dir = tempfile::tempdir().unwrap();
        let desk = seeded_desk(dir.path());
        let page = desk.pending(&PendingFilter::default());
        assert_eq!(page.total, 6);
        assert_eq!(page.items[0].task.id.as_str(), "eng-000.p1");
        assert_eq!(page.items[0].parent.as_ref().unwrap().id.as_str(), "eng-000");
        assert!(page.items[0].record.is_some());

        desk.decide(ReviewDecision::accept("eng-000.p1".into(), "a"), false).unwrap();
        desk.decide(ReviewDecision::accept("eng-000.p2".into(), "a"), false).unwrap();
        assert_eq!(desk.pending(&PendingFilter::default()).total, 4);

        let paged = desk.pending(&PendingFilter { offset: 1, limit: Some(2), domain: None });
        assert_eq!(paged.items.len(), 2);
        assert_eq!(paged.items[0].task.id.as_str(), "eng-001.p1");
        let other = desk.pending(&PendingFilter { domain: Some(Domain::Medicine), ..Default::default() });
        assert_eq!(other.total, 0);
    }

    #[test]
    fn decision_validation_and_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let desk = seeded_desk(dir.path());
        assert!(matches!(
            desk.decide(ReviewDecision::reject("eng-000.p1".into(), RejectReason::None, "a"), false),
            Err(ReviewError::MalformedDecision(_))
        ));
        assert!(matches!(
            desk.decide(ReviewDecision::accept("eng-404.p1".into(), "a"), false),
            Err(ReviewError::UnknownTask(_))
        ));
        desk.decide(ReviewDecision::accept("eng-000.p1".into(), "a"), true).unwrap();
        assert!(matches!(
            desk.decide(ReviewDecision::accept("eng-000.p1".into(), "b"), true),
            Err(ReviewError::Conflict { .. })
        ));
        let ack = desk
            .decide(ReviewDecision::reject("eng-000.p1".into(), RejectReason::DifficultyIncreased, "b"), false)
            .unwrap();
        assert!(ack.replaced);
        let state = desk.state();
        assert_eq!(state.decision_log.len(), 2);
        assert!(state.is_rejected(&"eng-000.p1".into()));
    }

    #[test]
    fn summary_counts_the_log() {
        let dir = tempfile::tempdir().unwrap();
        let desk = seeded_desk(dir.path());
        assert_eq!(desk.summary().decisions, 0);
        assert_eq!(desk.summary().by_decision, DecisionCounts::default());
        for id in ["eng-000.p1", "eng-000.p2", "eng-000.p3"] {
            desk.decide(ReviewDecision::accept(id.into(), "a"), false).unwrap();
        }
        desk.decide(
            ReviewDecision::reject("eng-001.p1".into(), RejectReason::DataInconsistency, "a"),
            false,
        )
        .unwrap();
        let s = desk.summary();
        assert_eq!(s.by_decision, DecisionCounts { accepted: 3, rejected: 1 });
        assert_eq!(s.by_reason["data_inconsistency"], 1);
        assert_eq!(s.decisions, s.by_decision.accepted + s.by_decision.rejected);
        assert_eq!(s.by_domain[&Domain::Engineering].accepted, 3);
    }

    #[test]
    fn decisions_survive_reopening() {
        let dir = tempfile::tempdir().unwrap();
        let desk = seeded_desk(dir.path());
        assert_eq!(desk.accept_all(AUTO_REVIEWER).unwrap(), 6);
        drop(desk);
        let desk = ReviewDesk::open(&RunStore::new(dir.path()), "r").unwrap();
        assert_eq!(desk.pending(&PendingFilter::default()).total, 0);
        assert_eq!(desk.summary().current.accepted, 6);
        assert!(matches!(
            ReviewDesk::open(&RunStore::new(dir.path()), "missing"),
            Err(ReviewError::UnknownRun(_))
        ));
    }
}
