//! Chat-completion and translation providers behind one contract.
//!
//! Networked kinds talk HTTPS JSON; `Replay` and `Scripted` are offline
//! substitutes for tests and deterministic CI runs.

mod fixture;
mod http;
mod limiter;
mod scripted;
mod synthetic;
mod translate;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Language, ProviderParams, TranslationTarget};

pub use fixture::{
    read_fixtures, FixtureRecord, RecordingProvider, RecordingTranslator, ReplayProvider,
    ReplayTranslator,
};
pub use http::{AnthropicProvider, HttpClient, MistralProvider, OpenAiProvider};
pub use limiter::RateLimiter;
pub use scripted::ScriptedProvider;
pub use synthetic::SyntheticModel;
pub use translate::{GoogleTranslator, MockTranslator};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    /// Replay miss; belongs to the malformed-response class.
    #[error("no fixture for request {digest}")]
    NoFixture { digest: String },
    #[error("translation quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("unsupported translation language: {0}")]
    UnsupportedLanguage(Language),
    #[error("request rejected with HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider profile error: {0}")]
    Profile(String),
    #[error("cannot log provider call: {0}")]
    Storage(String),
}

impl ProviderError {
    /// Worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport(_) | ProviderError::RateLimited { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_text: String,
    pub params: ProviderParams,
}

impl ChatRequest {
    pub fn new(system_text: Option<String>, user_text: String, params: ProviderParams) -> Self {
        ChatRequest {
            system_text,
            user_text,
            params,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.user_text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("user_text is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_wire(reason: Option<&str>) -> FinishReason {
        match reason {
            Some("stop" | "end_turn" | "stop_sequence") => FinishReason::Stop,
            Some("length" | "max_tokens" | "model_length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub provider_metadata: BTreeMap<String, String>,
}

impl ChatResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            provider_metadata: BTreeMap::new(),
        }
    }
}

pub trait ChatProvider: Send + Sync {
    /// Model name, part of the replay key.
    fn model(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

pub trait Translator: Send + Sync {
    /// Translates English `text` into `target`.
    fn translate(&self, text: &str, target: TranslationTarget) -> Result<String, ProviderError>;
}

/// Translation with the target given as a free language tag; anything other
/// than de/es/fr is refused.
pub fn translate_to(
    translator: &dyn Translator,
    text: &str,
    target: Language,
) -> Result<String, ProviderError> {
    let target =
        TranslationTarget::try_from(target).map_err(ProviderError::UnsupportedLanguage)?;
    if text.trim().is_empty() {
        return Err(ProviderError::InvalidRequest("nothing to translate".into()));
    }
    translator.translate(text, target)
}

/// Replay key for a chat request: SHA-256 over the model and the full request.
pub fn request_digest(model: &str, request: &ChatRequest) -> String {
    let canonical = serde_json::json!({
        "model": model,
        "request": request,
    });
    sha_hex(&serde_json::to_string(&canonical).expect("request serializes"))
}

/// Replay key for a translation.
pub fn translation_digest(text: &str, target: TranslationTarget) -> String {
    let canonical = serde_json::json!({
        "translate": {"source": "en", "target": target.as_str(), "text": text},
    });
    sha_hex(&serde_json::to_string(&canonical).expect("request serializes"))
}

fn sha_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    OpenAiCompatible,
    AnthropicMessages,
    MistralChat,
    Replay,
    Scripted,
    /// Built-in deterministic model for offline demo runs.
    Synthetic,
}

impl ProviderKind {
    pub fn is_networked(self) -> bool {
        !matches!(
            self,
            ProviderKind::Replay | ProviderKind::Scripted | ProviderKind::Synthetic
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

/// How to reach one chat model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub kind: ProviderKind,
    #[serde(default)]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_per_minute: Option<u32>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Fixture file for `Replay`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Canned replies for `Scripted`, served in order; the last one repeats.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<String>,
}

fn default_timeout() -> u64 {
    120
}

impl ProviderProfile {
    pub fn scripted(model: &str, script: Vec<String>) -> Self {
        ProviderProfile {
            kind: ProviderKind::Scripted,
            model: model.to_string(),
            endpoint: None,
            auth_env: None,
            rate_limit_per_minute: None,
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
            fixtures: None,
            script,
        }
    }

    pub fn replay(model: &str, fixtures: PathBuf) -> Self {
        ProviderProfile {
            kind: ProviderKind::Replay,
            fixtures: Some(fixtures),
            ..ProviderProfile::scripted(model, Vec::new())
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        match self.kind {
            ProviderKind::Replay if self.fixtures.is_none() => Err(ProviderError::Profile(
                "replay profiles need a fixtures path".into(),
            )),
            ProviderKind::Scripted if self.script.is_empty() => Err(ProviderError::Profile(
                "scripted profiles need at least one reply".into(),
            )),
            kind if kind.is_networked() && self.auth_env.is_none() => Err(ProviderError::Profile(
                format!("{kind:?} profiles need auth_env naming the API key variable"),
            )),
            kind if kind.is_networked() && self.model.is_empty() => {
                Err(ProviderError::Profile(format!("{kind:?} profiles need a model")))
            }
            _ => Ok(()),
        }
    }

    /// Reads the API key from the environment.
    pub fn api_key(&self) -> Result<String, ProviderError> {
        let var = self
            .auth_env
            .as_deref()
            .ok_or_else(|| ProviderError::Auth("profile names no auth_env".into()))?;
        match std::env::var(var) {
            Ok(key) if !key.trim().is_empty() => Ok(key),
            _ => Err(ProviderError::Auth(format!("environment variable {var} is not set"))),
        }
    }

    /// Instantiates the provider. Networked kinds resolve their key here.
    pub fn build(&self) -> Result<Arc<dyn ChatProvider>, ProviderError> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Scripted => Arc::new(ScriptedProvider::new(&self.model, self.script.clone())),
            ProviderKind::Synthetic => Arc::new(SyntheticModel::new(&self.model)),
            ProviderKind::Replay => {
                let path = self.fixtures.as_ref().expect("validated");
                Arc::new(ReplayProvider::open(&self.model, path)?)
            }
            ProviderKind::OpenAiCompatible => Arc::new(OpenAiProvider::new(
                HttpClient::from_profile(self, "https://api.openai.com/v1")?,
                &self.model,
            )),
            ProviderKind::AnthropicMessages => Arc::new(AnthropicProvider::new(
                HttpClient::from_profile(self, "https://api.anthropic.com")?,
                &self.model,
            )),
            ProviderKind::MistralChat => Arc::new(MistralProvider::new(
                HttpClient::from_profile(self, "https://api.mistral.ai/v1")?,
                &self.model,
            )),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatorKind {
    GoogleV2,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorProfile {
    pub kind: TranslatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_per_minute: Option<u32>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
}

impl TranslatorProfile {
    pub fn mock() -> Self {
        TranslatorProfile {
            kind: TranslatorKind::Mock,
            endpoint: None,
            auth_env: None,
            rate_limit_per_minute: None,
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
            fixtures: None,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Translator>, ProviderError> {
        Ok(match self.kind {
            TranslatorKind::Mock => Arc::new(MockTranslator::default()),
            TranslatorKind::Replay => {
                let path = self.fixtures.as_ref().ok_or_else(|| {
                    ProviderError::Profile("replay translators need a fixtures path".into())
                })?;
                Arc::new(ReplayTranslator::open(path)?)
            }
            TranslatorKind::GoogleV2 => Arc::new(GoogleTranslator::from_profile(self)?),
        })
    }
}

/// Named provider instances shared by every caller in a process, so rate
/// limits hold across workers.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    chat: HashMap<String, Arc<dyn ChatProvider>>,
    translators: HashMap<String, Arc<dyn Translator>>,
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_chat(&mut self, name: impl Into<String>, provider: Arc<dyn ChatProvider>) {
        self.chat.insert(name.into(), provider);
    }

    pub fn insert_translator(&mut self, name: impl Into<String>, translator: Arc<dyn Translator>) {
        self.translators.insert(name.into(), translator);
    }

    pub fn chat(&self, name: &str) -> Result<Arc<dyn ChatProvider>, ProviderError> {
        self.chat
            .get(name)
            .cloned()
            .ok_or_else(|| ProviderError::Profile(format!("no chat profile named `{name}`")))
    }

    pub fn translator(&self, name: &str) -> Result<Arc<dyn Translator>, ProviderError> {
        self.translators
            .get(name)
            .cloned()
            .ok_or_else(|| ProviderError::Profile(format!("no translator profile named `{name}`")))
    }

    /// `complete` addressed by profile name.
    pub fn complete(&self, profile: &str, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        self.chat(profile)?.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new(None, text.into(), ProviderParams::classification())
    }

    #[test]
    fn digest_depends_on_model_and_request() {
        let a = request_digest("m1", &request("hello"));
        assert_eq!(a, request_digest("m1", &request("hello")));
        assert_ne!(a, request_digest("m2", &request("hello")));
        assert_ne!(a, request_digest("m1", &request("hello!")));
        let reseeded = ChatRequest {
            params: ProviderParams::classification().with_seed(9),
            ..request("hello")
        };
        assert_ne!(a, request_digest("m1", &reseeded));
    }

    #[test]
    fn offline_profiles_need_no_auth() {
        assert!(ProviderProfile::scripted("s", vec!["PONG".into()]).validate().is_ok());
        let mut networked = ProviderProfile::scripted("gpt", vec![]);
        networked.kind = ProviderKind::OpenAiCompatible;
        assert!(matches!(networked.validate(), Err(ProviderError::Profile(_))));
        networked.auth_env = Some("MIRAGE_TEST_DEFINITELY_UNSET".into());
        assert!(networked.validate().is_ok());
        assert!(matches!(networked.build(), Err(ProviderError::Auth(_))));
    }

    #[test]
    fn registry_routes_by_name() {
        let mut reg = ProviderRegistry::new();
        reg.insert_chat("s", ProviderProfile::scripted("s", vec!["PONG".into()]).build().unwrap());
        assert_eq!(reg.complete("s", &request("PING")).unwrap().text, "PONG");
        assert!(reg.complete("missing", &request("PING")).is_err());
        assert!(matches!(
            reg.complete("s", &request("  ")),
            Err(ProviderError::InvalidRequest(_))
        ));
    }

    #[test]
    fn english_target_is_unsupported() {
        let mock = MockTranslator::default();
        assert_eq!(
            translate_to(&mock, "Compute the load", Language::De).unwrap(),
            "[de] Compute the load"
        );
        assert_eq!(
            translate_to(&mock, "Compute the load", Language::En),
            Err(ProviderError::UnsupportedLanguage(Language::En))
        );
    }
}
