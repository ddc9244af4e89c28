//! Materialized run state, folded from the event log.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::domain::{
    Decision, Domain, FeasibilityVerdict, ParseStatus, ReviewDecision, RunConfig, Task, TaskId, TaskSet,
};
use crate::metrics::{outcome_of, ReportCounts, SetOutcome};
use crate::providers::ChatResponse;
use crate::seed;
use crate::store::{Envelope, Event, Stage};

/// Replacement generations tried per variant slot, the first included.
pub const MAX_GENERATIONS: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("log does not start with run_created")]
    MissingRunCreated,
    #[error("event {seq}: {reason}")]
    Inconsistent { seq: u64, reason: String },
}

/// A variant slot: original `parent`, index `j`.
pub type Slot = (TaskId, u32);

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub run_id: String,
    pub config: RunConfig,
    /// Originals by domain, then batch slot.
    pub originals: BTreeMap<Domain, BTreeMap<u32, Task>>,
    /// Variants by slot, then generation.
    pub variants: BTreeMap<Slot, BTreeMap<u32, Task>>,
    /// Generations that could not be built, by slot.
    pub variant_failures: BTreeMap<Slot, BTreeMap<u32, String>>,
    /// Every decision in log order.
    pub decision_log: Vec<ReviewDecision>,
    /// Current decision per task: the last one logged.
    pub decisions: BTreeMap<TaskId, ReviewDecision>,
    pub verdicts: BTreeMap<TaskId, FeasibilityVerdict>,
    /// Sets whose classification stopped on a provider failure and have not
    /// been completed since.
    pub aborted_sets: BTreeMap<TaskId, String>,
    pub provider_calls: BTreeMap<String, ChatResponse>,
    pub stages: BTreeSet<Stage>,
    pub last_seq: u64,
}

impl RunState {
    pub fn new(run_id: &str, config: RunConfig) -> Self {
        RunState {
            run_id: run_id.to_string(),
            config,
            originals: BTreeMap::new(),
            variants: BTreeMap::new(),
            variant_failures: BTreeMap::new(),
            decision_log: Vec::new(),
            decisions: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            aborted_sets: BTreeMap::new(),
            provider_calls: BTreeMap::new(),
            stages: BTreeSet::new(),
            last_seq: 0,
        }
    }

    /// Folds a whole log.
    pub fn fold(events: &[Envelope]) -> Result<RunState, StateError> {
        let Some(first) = events.first() else {
            return Err(StateError::MissingRunCreated);
        };
        let Event::RunCreated { config } = &first.event else {
            return Err(StateError::MissingRunCreated);
        };
        let mut state = RunState::new(&first.run_id, config.clone());
        state.last_seq = first.seq;
        for env in &events[1..] {
            state.apply(env.seq, &env.event)?;
        }
        Ok(state)
    }

    pub fn apply(&mut self, seq: u64, event: &Event) -> Result<(), StateError> {
        let bad = |reason: String| Err(StateError::Inconsistent { seq, reason });
        match event {
            Event::RunCreated { .. } => return bad("second run_created".into()),
            Event::ProviderCall { digest, response, .. } => {
                self.provider_calls.insert(digest.clone(), response.clone());
            }
            Event::TaskAccepted { slot, task } => {
                if !task.is_original() {
                    return bad(format!("{} is not an original", task.id));
                }
                self.originals
                    .entry(task.domain)
                    .or_default()
                    .insert(*slot, task.clone());
            }
            Event::VariantCreated { generation, task } => {
                let (Some(parent), Some(record)) = (task.parent_id(), task.record()) else {
                    return bad(format!("{} is not a variant", task.id));
                };
                if self.original(parent).is_none() {
                    return bad(format!("{} refers to unknown original {parent}", task.id));
                }
                self.variants
                    .entry((parent.clone(), record.variant_index))
                    .or_default()
                    .insert(*generation, task.clone());
            }
            Event::VariantFailed {
                parent_id,
                variant_index,
                generation,
                error,
            } => {
                self.variant_failures
                    .entry((parent_id.clone(), *variant_index))
                    .or_default()
                    .insert(*generation, error.clone());
            }
            Event::ReviewDecided { decision } => {
                self.decision_log.push(decision.clone());
                self.decisions.insert(decision.task_id.clone(), decision.clone());
            }
            Event::VerdictRecorded { verdict } => {
                self.verdicts.insert(verdict.task_id.clone(), verdict.clone());
                if let Some(set) = self.set_id_of(&verdict.task_id) {
                    if self.set_verdicts_complete(&set) {
                        self.aborted_sets.remove(&set);
                    }
                }
            }
            Event::SetAborted { set_id, error } => {
                self.aborted_sets.insert(set_id.clone(), error.clone());
            }
            Event::StageCompleted { stage } => {
                self.stages.insert(*stage);
            }
        }
        self.last_seq = seq;
        Ok(())
    }

    pub fn original(&self, id: &TaskId) -> Option<&Task> {
        self.originals
            .values()
            .flat_map(|slots| slots.values())
            .find(|t| &t.id == id)
    }

    pub fn task(&self, id: &TaskId) -> Option<&Task> {
        self.original(id).or_else(|| {
            self.variants
                .values()
                .flat_map(|g| g.values())
                .find(|t| &t.id == id)
        })
    }

    /// All originals in domain order, then slot order.
    pub fn all_originals(&self) -> impl Iterator<Item = &Task> {
        Domain::ALL
            .into_iter()
            .filter_map(|d| self.originals.get(&d))
            .flat_map(|slots| slots.values())
    }

    fn set_id_of(&self, task: &TaskId) -> Option<TaskId> {
        let t = self.task(task)?;
        Some(t.parent_id().cloned().unwrap_or_else(|| t.id.clone()))
    }

    pub fn decision(&self, id: &TaskId) -> Option<&ReviewDecision> {
        self.decisions.get(id)
    }

    pub fn is_rejected(&self, id: &TaskId) -> bool {
        self.decision(id).is_some_and(|d| d.decision == Decision::Rejected)
    }

    pub fn is_accepted(&self, id: &TaskId) -> bool {
        self.decision(id).is_some_and(|d| d.decision == Decision::Accepted)
    }

    /// Whether an original is sampled for an expert spot check.
    pub fn is_spot_checked(&self, original: &TaskId) -> bool {
        spot_checked(self.config.seed, self.config.spot_check_rate, original)
    }

    /// An original takes part unless a spot check rejected it.
    pub fn original_admitted(&self, original: &Task) -> bool {
        if self.is_spot_checked(&original.id) {
            self.is_accepted(&original.id)
        } else {
            true
        }
    }

    /// The newest generation built for a slot.
    pub fn current_variant(&self, parent: &TaskId, j: u32) -> Option<(u32, &Task)> {
        self.variants
            .get(&(parent.clone(), j))
            .and_then(|g| g.iter().next_back())
            .map(|(g, t)| (*g, t))
    }

    fn last_generation_tried(&self, slot: &Slot) -> Option<u32> {
        let built = self.variants.get(slot).and_then(|g| g.keys().next_back().copied());
        let failed = self.variant_failures.get(slot).and_then(|g| g.keys().next_back().copied());
        built.max(failed)
    }

    /// The generation a slot needs next, or `None` if it is settled.
    ///
    /// A slot is open when nothing was built yet, or when its newest variant
    /// was rejected and the run refills. Slots out of generations stay empty.
    pub fn next_generation(&self, parent: &TaskId, j: u32) -> Option<u32> {
        let slot = (parent.clone(), j);
        let next = match self.current_variant(parent, j) {
            Some((g, task)) => {
                if !(self.config.refill && self.is_rejected(&task.id)) {
                    return None;
                }
                self.last_generation_tried(&slot).unwrap_or(g).max(g) + 1
            }
            None => self.last_generation_tried(&slot).map_or(0, |g| g + 1),
        };
        (next < MAX_GENERATIONS).then_some(next)
    }

    /// Slots still to be built, in original then index order.
    pub fn open_slots(&self) -> Vec<(Task, u32, u32)> {
        let mut out = Vec::new();
        for original in self.all_originals() {
            if !self.original_admitted_or_pending(original) {
                continue;
            }
            for j in 1..=self.config.n {
                if let Some(g) = self.next_generation(&original.id, j) {
                    out.push((original.clone(), j, g));
                }
            }
        }
        out
    }

    fn original_admitted_or_pending(&self, original: &Task) -> bool {
        !self.is_rejected(&original.id)
    }

    /// Items awaiting a review decision, sorted by task id: the newest
    /// variant of each slot, and spot-checked originals.
    pub fn review_queue(&self) -> Vec<&Task> {
        let mut out = Vec::new();
        for original in self.all_originals() {
            if self.is_spot_checked(&original.id) && self.decision(&original.id).is_none() {
                out.push(original);
            }
            if self.is_rejected(&original.id) {
                continue;
            }
            for j in 1..=self.config.n {
                if let Some((_, v)) = self.current_variant(&original.id, j) {
                    if self.decision(&v.id).is_none() {
                        out.push(v);
                    }
                }
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Accepted current variants of an admitted original, in index order.
    fn accepted_members(&self, original: &Task) -> Vec<&Task> {
        (1..=self.config.n)
            .filter_map(|j| self.current_variant(&original.id, j).map(|(_, t)| t))
            .filter(|t| self.is_accepted(&t.id))
            .collect()
    }

    /// Whether every slot of a set is filled by an accepted variant. In
    /// strict mode a set with at least one accepted variant qualifies once no
    /// slot is awaiting review.
    pub fn set_ready(&self, original: &Task) -> bool {
        if !self.original_admitted(original) {
            return false;
        }
        let n = self.config.n as usize;
        let accepted = self.accepted_members(original).len();
        if self.config.refill {
            return accepted == n;
        }
        let undecided = (1..=self.config.n).any(|j| match self.current_variant(&original.id, j) {
            Some((_, t)) => self.decision(&t.id).is_none(),
            None => self.next_generation(&original.id, j).is_some(),
        });
        accepted > 0 && !undecided
    }

    /// Task sets cleared for classification and metrics.
    pub fn task_sets(&self) -> Vec<TaskSet> {
        self.all_originals()
            .filter(|o| self.set_ready(o))
            .map(|o| {
                let perturbed: Vec<Task> = self.accepted_members(o).into_iter().cloned().collect();
                let mut set = TaskSet::new(o.clone(), perturbed).expect("state holds consistent sets");
                for member in set.members().map(|t| t.id.clone()).collect::<Vec<_>>() {
                    if let Some(v) = self.verdicts.get(&member) {
                        set.verdicts.insert(member.clone(), v.clone());
                    }
                    if let Some(d) = self.decisions.get(&member) {
                        set.review.insert(member, d.clone());
                    }
                }
                set
            })
            .collect()
    }

    fn set_verdicts_complete(&self, set_id: &TaskId) -> bool {
        let Some(original) = self.original(set_id) else {
            return false;
        };
        let originals_ok = !self.config.reclassify_originals || self.verdicts.contains_key(set_id);
        originals_ok
            && self
                .accepted_members(original)
                .iter()
                .all(|t| self.verdicts.contains_key(&t.id))
    }

    /// Tasks of ready sets that still lack a verdict, grouped by set.
    pub fn unclassified(&self) -> Vec<(TaskId, Vec<Task>)> {
        let mut out = Vec::new();
        for set in self.task_sets() {
            let mut todo = Vec::new();
            if self.config.reclassify_originals && !set.verdicts.contains_key(&set.original.id) {
                todo.push(set.original.clone());
            }
            todo.extend(
                set.perturbed
                    .iter()
                    .filter(|t| !set.verdicts.contains_key(&t.id))
                    .cloned(),
            );
            if !todo.is_empty() {
                out.push((set.original.id.clone(), todo));
            }
        }
        out
    }

    /// Whether nothing is waiting for review or for a replacement variant.
    pub fn review_settled(&self) -> bool {
        self.review_queue().is_empty() && self.open_slots().is_empty()
    }

    /// Scored outcomes per domain and the report counts.
    pub fn outcomes(&self) -> (BTreeMap<Domain, Vec<SetOutcome>>, ReportCounts) {
        let mut by_domain: BTreeMap<Domain, Vec<SetOutcome>> = BTreeMap::new();
        let mut counts = ReportCounts::default();
        let total_sets = self.all_originals().count();
        for set in self.task_sets() {
            for t in &set.perturbed {
                if let Some(v) = set.verdicts.get(&t.id) {
                    counts.perturbed_verdicts += 1;
                    match v.parse_status {
                        ParseStatus::Failed => counts.parse_failures += 1,
                        ParseStatus::Recovered => counts.recovered_parses += 1,
                        ParseStatus::Clean => {}
                    }
                }
            }
            if self.aborted_sets.contains_key(&set.original.id) {
                continue;
            }
            if let Ok(outcome) = outcome_of(&set) {
                by_domain.entry(set.original.domain).or_default().push(outcome);
            }
        }
        counts.review_rejections = self
            .decisions
            .values()
            .filter(|d| d.decision == Decision::Rejected)
            .count();
        let scored: usize = by_domain.values().map(Vec::len).sum();
        counts.incomplete_sets = total_sets - scored;
        (by_domain, counts)
    }
}

/// Deterministic sampling of originals for spot checks.
pub fn spot_checked(root_seed: u64, rate: f64, original: &TaskId) -> bool {
    if rate <= 0.0 {
        return false;
    }
    let draw = seed::mix(root_seed, &["spot", original.as_str()]);
    (draw as f64) / 18_446_744_073_709_551_616.0 < rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Feasibility, PerturbationRecord, RejectReason, TranslationTarget};
    use crate::perturb::variant_id;
    use crate::classify::parse_verdict;
    use serde_json::json;

    fn config(refill: bool) -> RunConfig {
        RunConfig {
            m: 2,
            n: 3,
            domains: vec![Domain::Science],
            spot_check_rate: 0.0,
            refill,
            ..RunConfig::default()
        }
    }

    fn original(slot: u32) -> Task {
        Task::original(format!("sci-{slot:03}").into(), Domain::Science, format!("Task {slot}"), json!({})).unwrap()
    }

    fn variant(parent: &Task, j: u32, generation: u32) -> Task {
        let record = PerturbationRecord {
            variant_index: j,
            ontology_substitutions: vec![],
            rewritten_instructions: "x".into(),
            data_string_edits: vec![],
            translation_target: TranslationTarget::for_variant(j),
            translated_instructions: format!("v{j}"),
            numeric_edits: vec![],
            reorder_edits: vec![],
            seed: 0,
        };
        Task::perturbed(variant_id(&parent.id, j, generation), parent, format!("v{j} g{generation}"), json!({}), record).unwrap()
    }

    fn built(refill: bool) -> RunState {
        let mut s = RunState::new("r", config(refill));
        let mut seq = 1;
        let mut push = |s: &mut RunState, e: Event| {
            seq += 1;
            s.apply(seq, &e).unwrap();
        };
        for slot in 0..2 {
            let o = original(slot);
            push(&mut s, Event::TaskAccepted { slot, task: o.clone() });
            for j in 1..=3 {
                push(&mut s, Event::VariantCreated { generation: 0, task: variant(&o, j, 0) });
            }
        }
        s
    }

    fn decide(s: &mut RunState, d: ReviewDecision) {
        let seq = s.last_seq + 1;
        s.apply(seq, &Event::ReviewDecided { decision: d }).unwrap();
    }

    #[test]
    fn queue_shrinks_with_decisions() {
        let mut s = built(true);
        assert_eq!(s.review_queue().len(), 6);
        decide(&mut s, ReviewDecision::accept("sci-000.p1".into(), "x"));
        decide(&mut s, ReviewDecision::accept("sci-000.p2".into(), "x"));
        assert_eq!(s.review_queue().len(), 4);
        assert!(s.task_sets().is_empty());
    }

    #[test]
    fn rejection_opens_a_replacement_slot_when_refilling() {
        let mut s = built(true);
        for t in s.review_queue().into_iter().map(|t| t.id.clone()).collect::<Vec<_>>() {
            decide(&mut s, ReviewDecision::accept(t, "x"));
        }
        assert_eq!(s.task_sets().len(), 2);
        decide(&mut s, ReviewDecision::reject("sci-001.p2".into(), RejectReason::DataInconsistency, "x"));
        let open = s.open_slots();
        assert_eq!(open.len(), 1);
        assert_eq!((open[0].0.id.as_str(), open[0].1, open[0].2), ("sci-001", 2, 1));
        assert_eq!(s.task_sets().len(), 1);

        let o = original(1);
        let seq = s.last_seq + 1;
        s.apply(seq, &Event::VariantCreated { generation: 1, task: variant(&o, 2, 1) }).unwrap();
        assert_eq!(s.review_queue().iter().map(|t| t.id.as_str()).collect::<Vec<_>>(), vec!["sci-001.p2r1"]);
        decide(&mut s, ReviewDecision::accept("sci-001.p2r1".into(), "x"));
        let sets = s.task_sets();
        assert_eq!(sets.len(), 2);
        assert!(sets.iter().all(|set| set.validate(3).is_ok()));
        assert!(sets[1].perturbed.iter().all(|t| t.id.as_str() != "sci-001.p2"));
    }

    #[test]
    fn strict_mode_shrinks_the_set() {
        let mut s = built(false);
        for t in s.review_queue().into_iter().map(|t| t.id.clone()).collect::<Vec<_>>() {
            let d = if t.as_str() == "sci-000.p3" {
                ReviewDecision::reject(t, RejectReason::DifficultyIncreased, "x")
            } else {
                ReviewDecision::accept(t, "x")
            };
            decide(&mut s, d);
        }
        assert!(s.open_slots().is_empty());
        let sets = s.task_sets();
        assert_eq!(sets[0].perturbed.len(), 2);
        assert_eq!(sets[1].perturbed.len(), 3);
    }

    #[test]
    fn generations_are_capped() {
        let mut s = built(true);
        let o = original(0);
        for g in 1..MAX_GENERATIONS {
            let seq = s.last_seq + 1;
            s.apply(seq, &Event::VariantFailed {
                parent_id: o.id.clone(),
                variant_index: 1,
                generation: g,
                error: "x".into(),
            })
            .unwrap();
        }
        decide(&mut s, ReviewDecision::reject("sci-000.p1".into(), RejectReason::DataInconsistency, "x"));
        assert_eq!(s.next_generation(&o.id, 1), None);
    }

    #[test]
    fn verdicts_feed_outcomes() {
        let mut s = built(true);
        for t in s.review_queue().into_iter().map(|t| t.id.clone()).collect::<Vec<_>>() {
            decide(&mut s, ReviewDecision::accept(t, "x"));
        }
        assert_eq!(s.unclassified().len(), 2);
        for (id, raw) in [
            ("sci-000.p1", "VERDICT: INFEASIBLE\nno"),
            ("sci-000.p2", "VERDICT: FEASIBLE\n1"),
            ("sci-000.p3", "garbage"),
        ] {
            let seq = s.last_seq + 1;
            s.apply(seq, &Event::VerdictRecorded { verdict: parse_verdict(id.into(), raw) }).unwrap();
        }
        let (by, counts) = s.outcomes();
        assert_eq!(by[&Domain::Science].len(), 1);
        assert_eq!(by[&Domain::Science][0].perturbed, vec![Feasibility::Infeasible, Feasibility::Feasible]);
        assert_eq!(counts.parse_failures, 1);
        assert_eq!(counts.incomplete_sets, 1);
    }

    #[test]
    fn spot_check_sampling_tracks_the_rate() {
        let hits = (0..10_000)
            .filter(|i| spot_checked(7, 0.10, &TaskId(format!("t{i}"))))
            .count();
        assert!((850..1150).contains(&hits), "{hits}");
        assert!(!spot_checked(7, 0.0, &"t".into()));
        assert!(spot_checked(7, 1.0, &"t".into()));
    }
}
