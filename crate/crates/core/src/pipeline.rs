//! Stage orchestration over a run log: generate, perturb, review gate,
//! classify, report.
//!
//! Every provider exchange is logged before its result is used, and logged
//! exchanges are answered from the log, so an interrupted run resumes
//! without repeating a call.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::classify::classify_task;
use crate::config::{Services};
use crate::domain::{ReviewDecision, RunConfig, TaskId, TranslationTarget};
use crate::metrics::{aggregate_report, MetricsReport};
use crate::perturb::{perturb_task, PerturbContext, PerturbError};
use crate::providers::{
    request_digest, translation_digest, ChatProvider, ChatRequest, ChatResponse, ProviderError, Translator,
};
use crate::review::AUTO_REVIEWER;
use crate::state::{RunState, StateError};
use crate::store::{Event, RunStore, RunWriter, Stage, StoreError};
use crate::taskgen::{TaskGenError, TaskGenerator};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot run {stage}: stage `{missing}` has not completed")]
    Precondition { stage: Stage, missing: Stage },
    #[error("cannot classify: {0} review items are still open")]
    ReviewOpen(usize),
    #[error("run {0} already exists; pass --resume to continue it")]
    RunExists(String),
    #[error("run {0} does not exist")]
    UnknownRun(String),
    #[error("run {run} was created with a different configuration")]
    ConfigMismatch { run: String },
    #[error(transparent)]
    Generation(#[from] TaskGenError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    State(#[from] StateError),
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownRun(id) => PipelineError::UnknownRun(id),
            StoreError::RunExists(id) => PipelineError::RunExists(id),
            other => PipelineError::Store(other),
        }
    }
}

impl PipelineError {
    /// 2 for configuration and precondition errors, 3 when providers are
    /// exhausted, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Precondition { .. }
            | PipelineError::ReviewOpen(_)
            | PipelineError::RunExists(_)
            | PipelineError::UnknownRun(_)
            | PipelineError::ConfigMismatch { .. } => 2,
            PipelineError::Generation(TaskGenError::Template(_))
            | PipelineError::Perturb(PerturbError::Template(_)) => 2,
            PipelineError::Generation(_) | PipelineError::Perturb(_) | PipelineError::Provider(_) => 3,
            PipelineError::Store(StoreError::BadRunId(_)) | PipelineError::Store(StoreError::Locked(_)) => 2,
            PipelineError::Store(_) | PipelineError::State(_) => 1,
        }
    }
}

/// The run's state and its writer, updated together.
pub struct Journal {
    inner: Mutex<(RunState, RunWriter)>,
}

impl Journal {
    pub fn new(state: RunState, writer: RunWriter) -> Self {
        Journal {
            inner: Mutex::new((state, writer)),
        }
    }

    pub fn record(&self, event: Event) -> Result<u64, PipelineError> {
        let mut guard = self.inner.lock().expect("journal poisoned");
        let (state, writer) = &mut *guard;
        let seq = writer.append(event.clone())?;
        state.apply(seq, &event)?;
        Ok(seq)
    }

    pub fn with<R>(&self, f: impl FnOnce(&RunState) -> R) -> R {
        f(&self.inner.lock().expect("journal poisoned").0)
    }

    pub fn snapshot(&self) -> RunState {
        self.with(Clone::clone)
    }

    pub fn into_parts(self) -> (RunState, RunWriter) {
        self.inner.into_inner().expect("journal poisoned")
    }
}

/// Provider exchanges known to the run, plus the ones made live by this
/// process.
pub struct CallLog {
    journal: Arc<Journal>,
    cache: Mutex<HashMap<String, ChatResponse>>,
    live: Mutex<Vec<String>>,
    hits: AtomicUsize,
}

impl CallLog {
    fn new(journal: Arc<Journal>) -> Self {
        let cache = journal.with(|s| s.provider_calls.clone().into_iter().collect());
        CallLog {
            journal,
            cache: Mutex::new(cache),
            live: Mutex::new(Vec::new()),
            hits: AtomicUsize::new(0),
        }
    }

    fn through(
        &self,
        role: &str,
        digest: String,
        call: impl FnOnce() -> Result<ChatResponse, ProviderError>,
    ) -> Result<ChatResponse, ProviderError> {
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&digest) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        let response = call()?;
        self.journal
            .record(Event::ProviderCall {
                role: role.to_string(),
                digest: digest.clone(),
                response: response.clone(),
            })
            .map_err(|e| ProviderError::Storage(e.to_string()))?;
        self.live.lock().expect("live list poisoned").push(digest.clone());
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(digest, response.clone());
        Ok(response)
    }

    /// Digests of the calls this process sent to a provider, in order.
    pub fn live_digests(&self) -> Vec<String> {
        self.live.lock().expect("live list poisoned").clone()
    }

    /// Calls answered from the log.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }
}

struct LoggedProvider {
    role: &'static str,
    inner: Arc<dyn ChatProvider>,
    log: Arc<CallLog>,
}

impl ChatProvider for LoggedProvider {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let digest = request_digest(self.inner.model(), request);
        self.log.through(self.role, digest, || self.inner.complete(request))
    }
}

struct LoggedTranslator {
    inner: Arc<dyn Translator>,
    log: Arc<CallLog>,
}

impl Translator for LoggedTranslator {
    fn translate(&self, text: &str, target: TranslationTarget) -> Result<String, ProviderError> {
        let digest = translation_digest(text, target);
        self.log
            .through("translation", digest, || {
                self.inner.translate(text, target).map(ChatResponse::stop)
            })
            .map(|r| r.text)
    }
}

/// Runs `f` over `items` on up to `workers` threads; results keep item order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot poisoned") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot poisoned").expect("every item ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReviewStatus {
    /// Every item is decided and every slot is filled.
    Settled,
    /// Items wait for expert decisions.
    AwaitingReview(usize),
    /// Rejected variants need replacements before review can finish.
    NeedsVariants(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassifyStatus {
    pub verdicts: usize,
    pub aborted: Vec<(TaskId, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Reported {
        report: Box<MetricsReport>,
        paths: ReportPaths,
        aborted_sets: usize,
    },
    AwaitingReview(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub resume: bool,
    pub parallelism: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            resume: false,
            parallelism: DEFAULT_PARALLELISM,
        }
    }
}

/// One process's hold on a run: the writer lock plus logged providers.
pub struct Session {
    store: RunStore,
    run_id: String,
    journal: Arc<Journal>,
    calls: Arc<CallLog>,
    services: Services,
    parallelism: usize,
}

impl Session {
    /// Creates the run, or continues it when `resume` is set.
    pub fn start(
        store: &RunStore,
        run_id: &str,
        config: &RunConfig,
        services: &Services,
        opts: &SessionOptions,
    ) -> Result<Session, PipelineError> {
        config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if store.exists(run_id) {
            if !opts.resume {
                return Err(PipelineError::RunExists(run_id.to_string()));
            }
            let session = Self::open(store, run_id, services, opts.parallelism)?;
            if session.journal.with(|s| &s.config != config) {
                return Err(PipelineError::ConfigMismatch { run: run_id.to_string() });
            }
            return Ok(session);
        }
        let writer = store.create(run_id, config)?;
        let state = RunState::new(run_id, config.clone());
        Ok(Self::assemble(store, run_id, state, writer, services, opts.parallelism))
    }

    /// Continues an existing run with its recorded configuration.
    pub fn open(
        store: &RunStore,
        run_id: &str,
        services: &Services,
        parallelism: usize,
    ) -> Result<Session, PipelineError> {
        let writer = store.open(run_id)?;
        let state = RunState::fold(&store.read(run_id)?)?;
        Ok(Self::assemble(store, run_id, state, writer, services, parallelism))
    }

    fn assemble(
        store: &RunStore,
        run_id: &str,
        state: RunState,
        writer: RunWriter,
        raw: &Services,
        parallelism: usize,
    ) -> Session {
        let journal = Arc::new(Journal::new(state, writer));
        let calls = Arc::new(CallLog::new(journal.clone()));
        let wrap = |role, inner: &Arc<dyn ChatProvider>| -> Arc<dyn ChatProvider> {
            Arc::new(LoggedProvider {
                role,
                inner: inner.clone(),
                log: calls.clone(),
            })
        };
        let services = Services {
            generator: wrap("generation", &raw.generator),
            validator: wrap("validation", &raw.validator),
            rewriter: wrap("ontology", &raw.rewriter),
            classifier: wrap("classification", &raw.classifier),
            translator: Arc::new(LoggedTranslator {
                inner: raw.translator.clone(),
                log: calls.clone(),
            }),
            prompts: raw.prompts.clone(),
        };
        Session {
            store: store.clone(),
            run_id: run_id.to_string(),
            journal,
            calls,
            services,
            parallelism,
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn state(&self) -> RunState {
        self.journal.snapshot()
    }

    pub fn calls(&self) -> &CallLog {
        &self.calls
    }

    fn config(&self) -> RunConfig {
        self.journal.with(|s| s.config.clone())
    }

    fn require(&self, stage: Stage, missing: Stage) -> Result<(), PipelineError> {
        if self.journal.with(|s| s.stages.contains(&missing)) {
            Ok(())
        } else {
            Err(PipelineError::Precondition { stage, missing })
        }
    }

    fn complete(&self, stage: Stage) -> Result<(), PipelineError> {
        if !self.journal.with(|s| s.stages.contains(&stage)) {
            self.journal.record(Event::StageCompleted { stage })?;
        }
        Ok(())
    }

    /// Fills every domain with `m` validated originals. Domains run in
    /// parallel; slots within a domain run in order.
    pub fn generate(&self) -> Result<(), PipelineError> {
        let config = self.config();
        let generator = TaskGenerator {
            generator: self.services.generator.clone(),
            validator: self.services.validator.clone(),
            prompts: self.services.prompts.clone(),
            params: config.generation_params.clone(),
        };
        let results = parallel_map(&config.domains, self.parallelism, |&domain| {
            let existing: Vec<_> = self.journal.with(|s| {
                s.originals
                    .get(&domain)
                    .map(|slots| slots.values().cloned().collect())
                    .unwrap_or_default()
            });
            generator
                .generate_validated_batch(domain, config.m, config.seed, existing, |slot, task| {
                    self.journal
                        .record(Event::TaskAccepted {
                            slot,
                            task: task.clone(),
                        })
                        .map(drop)
                        .map_err(|e| TaskGenError::Provider(ProviderError::Storage(e.to_string())))
                })
                .map(drop)
        });
        for r in results {
            r?;
        }
        self.complete(Stage::Generate)
    }

    /// Builds every open variant slot, including replacements for rejected
    /// variants when the run refills.
    pub fn perturb(&self) -> Result<(), PipelineError> {
        self.require(Stage::Perturb, Stage::Generate)?;
        let config = self.config();
        let ctx = PerturbContext {
            rewriter: self.services.rewriter.as_ref(),
            translator: self.services.translator.as_ref(),
            prompts: &self.services.prompts,
            params: &config.generation_params,
            root_seed: config.seed,
        };
        loop {
            let open = self.journal.with(RunState::open_slots);
            if open.is_empty() {
                break;
            }
            let results = parallel_map(&open, self.parallelism, |(original, j, generation)| {
                match perturb_task(original, *j, *generation, &ctx) {
                    Ok(task) => self
                        .journal
                        .record(Event::VariantCreated {
                            generation: *generation,
                            task,
                        })
                        .map(drop),
                    Err(e @ PerturbError::VariantFailed { .. }) => {
                        tracing::warn!(error = %e, "variant slot failed");
                        self.journal
                            .record(Event::VariantFailed {
                                parent_id: original.id.clone(),
                                variant_index: *j,
                                generation: *generation,
                                error: e.to_string(),
                            })
                            .map(drop)
                    }
                    Err(e) => Err(e.into()),
                }
            });
            for r in results {
                r?;
            }
        }
        self.complete(Stage::Perturb)
    }

    /// Applies the review gate. With `auto_accept` every pending item is
    /// accepted; otherwise the stage only reports what is open.
    pub fn review(&self, auto_accept: bool) -> Result<ReviewStatus, PipelineError> {
        self.require(Stage::Review, Stage::Perturb)?;
        if auto_accept {
            let pending: Vec<TaskId> = self
                .journal
                .with(|s| s.review_queue().iter().map(|t| t.id.clone()).collect());
            for id in pending {
                self.journal.record(Event::ReviewDecided {
                    decision: ReviewDecision::accept(id, AUTO_REVIEWER),
                })?;
            }
        }
        let (queued, open) = self
            .journal
            .with(|s| (s.review_queue().len(), s.open_slots().len()));
        if queued > 0 {
            return Ok(ReviewStatus::AwaitingReview(queued));
        }
        if open > 0 {
            return Ok(ReviewStatus::NeedsVariants(open));
        }
        self.complete(Stage::Review)?;
        Ok(ReviewStatus::Settled)
    }

    /// Classifies every unclassified member of the cleared sets. A provider
    /// failure stops only the set it happened in.
    pub fn classify(&self) -> Result<ClassifyStatus, PipelineError> {
        self.require(Stage::Classify, Stage::Review)?;
        let (open_items, open_slots) = self
            .journal
            .with(|s| (s.review_queue().len(), s.open_slots().len()));
        if open_items + open_slots > 0 {
            return Err(PipelineError::ReviewOpen(open_items + open_slots));
        }
        let config = self.config();
        let todo = self.journal.with(RunState::unclassified);
        let results = parallel_map(&todo, self.parallelism, |(set_id, tasks)| {
            let mut done = 0;
            for task in tasks {
                match classify_task(
                    task,
                    self.services.classifier.as_ref(),
                    &self.services.prompts,
                    &config.classification_params,
                ) {
                    Ok(verdict) => {
                        self.journal.record(Event::VerdictRecorded { verdict })?;
                        done += 1;
                    }
                    Err(e) => {
                        tracing::warn!(set = %set_id, error = %e, "classification of set aborted");
                        self.journal.record(Event::SetAborted {
                            set_id: set_id.clone(),
                            error: e.to_string(),
                        })?;
                        return Ok::<_, PipelineError>((done, Some((set_id.clone(), e.to_string()))));
                    }
                }
            }
            Ok((done, None))
        });
        let mut status = ClassifyStatus::default();
        for r in results {
            let (done, aborted) = r?;
            status.verdicts += done;
            status.aborted.extend(aborted);
        }
        self.complete(Stage::Classify)?;
        Ok(status)
    }

    /// Computes the report and writes `report.json` and `report.csv`.
    pub fn report(&self) -> Result<(MetricsReport, ReportPaths), PipelineError> {
        self.require(Stage::Report, Stage::Classify)?;
        let report = self.journal.with(build_report);
        let paths = write_report(&self.store, &report)?;
        Ok((report, paths))
    }

    /// All stages in order. Stops early when review is manual and items are
    /// still open.
    pub fn run_all(&self, auto_accept: bool) -> Result<RunOutcome, PipelineError> {
        self.generate()?;
        loop {
            self.perturb()?;
            match self.review(auto_accept)? {
                ReviewStatus::Settled => break,
                ReviewStatus::AwaitingReview(n) => return Ok(RunOutcome::AwaitingReview(n)),
                ReviewStatus::NeedsVariants(_) => continue,
            }
        }
        let status = self.classify()?;
        let (report, paths) = self.report()?;
        Ok(RunOutcome::Reported {
            report: Box::new(report),
            paths,
            aborted_sets: status.aborted.len(),
        })
    }
}

/// The metrics report for a run's current state.
pub fn build_report(state: &RunState) -> MetricsReport {
    let (by_domain, counts) = state.outcomes();
    aggregate_report(&state.run_id, &by_domain, counts)
}

pub fn write_report(store: &RunStore, report: &MetricsReport) -> Result<ReportPaths, PipelineError> {
    let paths = ReportPaths {
        json: store.report_path(&report.run_id, "json"),
        csv: store.report_path(&report.run_id, "csv"),
    };
    for (path, body) in [(&paths.json, report.to_json()), (&paths.csv, report.to_csv())] {
        std::fs::write(path, body).map_err(|e| {
            PipelineError::Store(StoreError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })?;
    }
    Ok(paths)
}

/// Report for a run read straight from its log, without taking the lock.
pub fn report_from_log(store: &RunStore, run_id: &str) -> Result<(MetricsReport, ReportPaths), PipelineError> {
    let state = RunState::fold(&store.read(run_id)?)?;
    if !state.stages.contains(&Stage::Classify) {
        return Err(PipelineError::Precondition {
            stage: Stage::Report,
            missing: Stage::Classify,
        });
    }
    let report = build_report(&state);
    let paths = write_report(store, &report)?;
    Ok((report, paths))
}
