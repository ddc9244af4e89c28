//! Record/replay fixtures: JSONL of `{request_digest, response_text, finish_reason}`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    request_digest, translation_digest, ChatProvider, ChatRequest, ChatResponse, FinishReason,
    ProviderError, Translator,
};
use crate::domain::TranslationTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub request_digest: String,
    pub response_text: String,
    pub finish_reason: FinishReason,
}

/// Loads a fixture file. Later lines win when a digest repeats.
pub fn read_fixtures(path: &Path) -> Result<HashMap<String, FixtureRecord>, ProviderError> {
    let file = File::open(path)
        .map_err(|e| ProviderError::Profile(format!("cannot open fixtures {}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ProviderError::Profile(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FixtureRecord = serde_json::from_str(&line).map_err(|e| {
            ProviderError::Profile(format!("{}:{}: bad fixture line: {e}", path.display(), n + 1))
        })?;
        out.insert(rec.request_digest.clone(), rec);
    }
    Ok(out)
}

/// Serves recorded responses keyed by request digest.
pub struct ReplayProvider {
    model: String,
    fixtures: HashMap<String, FixtureRecord>,
    calls: AtomicUsize,
}

impl ReplayProvider {
    pub fn open(model: &str, path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::from_records(model, read_fixtures(path)?.into_values()))
    }

    pub fn from_records(model: &str, records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        ReplayProvider {
            model: model.to_string(),
            fixtures: records
                .into_iter()
                .map(|r| (r.request_digest.clone(), r))
                .collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ReplayProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let digest = request_digest(&self.model, request);
        let rec = self
            .fixtures
            .get(&digest)
            .ok_or(ProviderError::NoFixture { digest })?;
        Ok(ChatResponse {
            text: rec.response_text.clone(),
            finish_reason: rec.finish_reason,
            provider_metadata: BTreeMap::from([("replay".to_string(), "true".to_string())]),
        })
    }
}

struct FixtureWriter {
    file: File,
    seen: HashSet<String>,
}

impl FixtureWriter {
    fn open(path: &Path) -> Result<Self, ProviderError> {
        let seen = if path.exists() {
            read_fixtures(path)?.into_keys().collect()
        } else {
            HashSet::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ProviderError::Profile(format!("cannot write {}: {e}", path.display())))?;
        Ok(FixtureWriter { file, seen })
    }

    fn write(&mut self, rec: &FixtureRecord) -> Result<(), ProviderError> {
        if !self.seen.insert(rec.request_digest.clone()) {
            return Ok(());
        }
        let line = serde_json::to_string(rec).expect("fixture serializes");
        writeln!(self.file, "{line}").map_err(|e| ProviderError::Profile(e.to_string()))
    }
}

/// Passes requests through to `inner` and records every new exchange.
pub struct RecordingProvider {
    inner: Arc<dyn ChatProvider>,
    writer: Mutex<FixtureWriter>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn ChatProvider>, path: &Path) -> Result<Self, ProviderError> {
        Ok(RecordingProvider {
            inner,
            writer: Mutex::new(FixtureWriter::open(path)?),
        })
    }
}

impl ChatProvider for RecordingProvider {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let resp = self.inner.complete(request)?;
        self.writer.lock().expect("fixture writer poisoned").write(&FixtureRecord {
            request_digest: request_digest(self.inner.model(), request),
            response_text: resp.text.clone(),
            finish_reason: resp.finish_reason,
        })?;
        Ok(resp)
    }
}

/// Serves recorded translations keyed by `(target, text)` digest.
pub struct ReplayTranslator {
    fixtures: HashMap<String, FixtureRecord>,
}

impl ReplayTranslator {
    pub fn open(path: &Path) -> Result<Self, ProviderError> {
        Ok(ReplayTranslator {
            fixtures: read_fixtures(path)?,
        })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, TranslationTarget, &'a str)>) -> Self {
        ReplayTranslator {
            fixtures: pairs
                .into_iter()
                .map(|(text, target, translated)| {
                    let digest = translation_digest(text, target);
                    (
                        digest.clone(),
                        FixtureRecord {
                            request_digest: digest,
                            response_text: translated.to_string(),
                            finish_reason: FinishReason::Stop,
                        },
                    )
                })
                .collect(),
        }
    }
}

impl Translator for ReplayTranslator {
    fn translate(&self, text: &str, target: TranslationTarget) -> Result<String, ProviderError> {
        let digest = translation_digest(text, target);
        self.fixtures
            .get(&digest)
            .map(|r| r.response_text.clone())
            .ok_or(ProviderError::NoFixture { digest })
    }
}

pub struct RecordingTranslator {
    inner: Arc<dyn Translator>,
    writer: Mutex<FixtureWriter>,
}

impl RecordingTranslator {
    pub fn new(inner: Arc<dyn Translator>, path: &Path) -> Result<Self, ProviderError> {
        Ok(RecordingTranslator {
            inner,
            writer: Mutex::new(FixtureWriter::open(path)?),
        })
    }
}

impl Translator for RecordingTranslator {
    fn translate(&self, text: &str, target: TranslationTarget) -> Result<String, ProviderError> {
        let out = self.inner.translate(text, target)?;
        self.writer.lock().expect("fixture writer poisoned").write(&FixtureRecord {
            request_digest: translation_digest(text, target),
            response_text: out.clone(),
            finish_reason: FinishReason::Stop,
        })?;
        Ok(out)
    }
}
