//! Generation of self-declared feasible tasks and their separate validation.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;

use crate::domain::{Domain, DomainError, ProviderParams, Task, TaskId};
use crate::prompt::{extract_json_object, render_data, PromptSet, TemplateError};
use crate::providers::{ChatProvider, ChatRequest, ProviderError};
use crate::seed;

/// Total generation attempts before a reply is declared unparseable.
pub const GENERATION_PARSE_ATTEMPTS: u32 = 3;
/// Candidates tried per batch slot before giving up.
pub const SLOT_ATTEMPTS: u32 = 10;
/// Instruction token-set similarity above which a candidate is a duplicate.
pub const DUPLICATE_JACCARD: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskGenError {
    #[error("could not parse a task from the model after {attempts} attempts: {last}")]
    GenerationParse { attempts: u32, last: String },
    #[error("could not read a confidence verdict from: {0:?}")]
    ValidationParse(String),
    #[error("{domain}: slot {slot} found no distinct validated task in {attempts} attempts ({accepted}/{required} accepted)")]
    BatchExhausted {
        domain: Domain,
        slot: u32,
        attempts: u32,
        accepted: u32,
        required: u32,
    },
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Id of the original task in `slot` of `domain`'s batch.
pub fn original_id(domain: Domain, slot: u32) -> TaskId {
    TaskId(format!("{}-{slot:03}", domain.short()))
}

pub struct TaskGenerator {
    pub generator: Arc<dyn ChatProvider>,
    pub validator: Arc<dyn ChatProvider>,
    pub prompts: Arc<PromptSet>,
    pub params: ProviderParams,
}

impl TaskGenerator {
    pub fn generation_request(&self, domain: Domain, seed: u64) -> Result<ChatRequest, TaskGenError> {
        let user_text = self.prompts.generate.render(&[("domain", domain.title())])?;
        Ok(ChatRequest::new(None, user_text, self.params.with_seed(seed)))
    }

    pub fn validation_request(&self, task: &Task) -> Result<ChatRequest, TaskGenError> {
        let data = render_data(&task.data);
        let user_text = self.prompts.validate.render(&[
            ("domain", task.domain.title()),
            ("instructions", &task.instructions.text),
            ("data", &data),
        ])?;
        let seed = seed::mix(self.params.seed.unwrap_or_default(), &["validate", task.id.as_str()]);
        Ok(ChatRequest::new(None, user_text, self.params.with_seed(seed)))
    }

    /// Asks the model for one task it considers feasible. Unparseable replies
    /// are re-requested with a fresh seed, up to three attempts in total.
    pub fn generate_task(&self, domain: Domain, id: TaskId, seed: u64) -> Result<Task, TaskGenError> {
        let mut last = String::new();
        for attempt in 0..GENERATION_PARSE_ATTEMPTS {
            let attempt_seed = if attempt == 0 {
                seed
            } else {
                seed::mix(seed, &["reparse", &attempt.to_string()])
            };
            let request = self.generation_request(domain, attempt_seed)?;
            let reply = self.generator.complete(&request)?;
            match parse_generated(&reply.text) {
                Ok((instructions, data)) => {
                    return Ok(Task::original(id, domain, instructions, data)?);
                }
                Err(why) => {
                    tracing::debug!(%domain, attempt, %why, "unparseable generation reply");
                    last = why;
                }
            }
        }
        Err(TaskGenError::GenerationParse {
            attempts: GENERATION_PARSE_ATTEMPTS,
            last,
        })
    }

    /// Asks, in a fresh context, whether the model is highly confident it
    /// can solve `task`.
    pub fn validate_task(&self, task: &Task) -> Result<bool, TaskGenError> {
        if !task.is_original() {
            return Err(DomainError::ChainedPerturbation {
                child: task.id.clone(),
                parent: task.parent_id().cloned().unwrap_or_else(|| "?".into()),
            }
            .into());
        }
        let reply = self.validator.complete(&self.validation_request(task)?)?;
        parse_confidence(&reply.text).ok_or(TaskGenError::ValidationParse(reply.text))
    }

    /// Fills slots `accepted.len()..m` with distinct validated tasks.
    ///
    /// Candidates that duplicate an accepted task, fail validation or cannot
    /// be parsed are discarded and the slot is retried with the next seed.
    /// `on_accept` runs for each newly accepted task, in slot order.
    pub fn generate_validated_batch(
        &self,
        domain: Domain,
        m: u32,
        root_seed: u64,
        mut accepted: Vec<Task>,
        mut on_accept: impl FnMut(u32, &Task) -> Result<(), TaskGenError>,
    ) -> Result<Vec<Task>, TaskGenError> {
        if m == 0 {
            return Err(TaskGenError::EmptyBatch);
        }
        let mut dedup = Deduplicator::default();
        for t in &accepted {
            dedup.insert(t);
        }
        for slot in accepted.len() as u32..m {
            let mut found = None;
            for attempt in 0..SLOT_ATTEMPTS {
                let seed = seed::mix(
                    root_seed,
                    &["generate", domain.as_str(), &slot.to_string(), &attempt.to_string()],
                );
                let candidate = match self.generate_task(domain, original_id(domain, slot), seed) {
                    Ok(t) => t,
                    Err(TaskGenError::GenerationParse { .. }) => continue,
                    Err(e) => return Err(e),
                };
                if dedup.is_duplicate(&candidate) {
                    tracing::debug!(%domain, slot, attempt, "duplicate candidate discarded");
                    continue;
                }
                match self.validate_task(&candidate) {
                    Ok(true) => {
                        found = Some(candidate);
                        break;
                    }
                    Ok(false) => tracing::debug!(%domain, slot, attempt, "candidate failed validation"),
                    Err(TaskGenError::ValidationParse(_)) => {
                        tracing::debug!(%domain, slot, attempt, "validation reply unreadable")
                    }
                    Err(e) => return Err(e),
                }
            }
            let task = found.ok_or(TaskGenError::BatchExhausted {
                domain,
                slot,
                attempts: SLOT_ATTEMPTS,
                accepted: accepted.len() as u32,
                required: m,
            })?;
            on_accept(slot, &task)?;
            dedup.insert(&task);
            accepted.push(task);
        }
        Ok(accepted)
    }
}

/// Pulls `instructions` and `data` out of a generation reply.
pub fn parse_generated(reply: &str) -> Result<(String, Value), String> {
    let obj = extract_json_object(reply).ok_or("no JSON object in reply")?;
    let instructions = obj
        .get("instructions")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or("missing or empty `instructions`")?;
    let data = match obj.get("data") {
        None | Some(Value::Null) => Value::Object(Default::default()),
        Some(v @ (Value::Object(_) | Value::Array(_))) => v.clone(),
        Some(other) => return Err(format!("`data` must be an object or array, got {other}")),
    };
    Ok((instructions.to_string(), data))
}

/// Reads `CONFIDENT: YES` / `CONFIDENT: NO`. Conflicting or missing markers
/// give `None`.
pub fn parse_confidence(reply: &str) -> Option<bool> {
    let mut verdict = None;
    for line in reply.lines() {
        let line = line.trim().trim_matches(|c| c == '*' || c == '`').trim();
        let upper = line.to_ascii_uppercase();
        let Some(rest) = upper.strip_prefix("CONFIDENT") else {
            continue;
        };
        let Some(rest) = rest.trim_start().strip_prefix(':') else {
            continue;
        };
        let word: String = rest
            .trim_start()
            .chars()
            .take_while(|c| c.is_ascii_alphabetic())
            .collect();
        let this = match word.as_str() {
            "YES" => true,
            "NO" => false,
            _ => return None,
        };
        if verdict.is_some_and(|v| v != this) {
            return None;
        }
        verdict = Some(this);
    }
    verdict
}

/// Lowercased alphanumeric tokens of a text.
pub fn instruction_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[derive(Default)]
struct Deduplicator {
    hashes: BTreeSet<String>,
    token_sets: Vec<BTreeSet<String>>,
}

impl Deduplicator {
    fn insert(&mut self, task: &Task) {
        self.hashes.insert(task.content_hash.0.clone());
        self.token_sets.push(instruction_tokens(&task.instructions.text));
    }

    fn is_duplicate(&self, task: &Task) -> bool {
        if self.hashes.contains(&task.content_hash.0) {
            return true;
        }
        let tokens = instruction_tokens(&task.instructions.text);
        self.token_sets
            .iter()
            .any(|seen| jaccard(seen, &tokens) > DUPLICATE_JACCARD)
    }
}
