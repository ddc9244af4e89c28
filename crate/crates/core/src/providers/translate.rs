use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{HttpClient, ProviderError, RateLimiter, Translator, TranslatorProfile};
use crate::domain::TranslationTarget;

/// Offline translator: dictionary lookups, otherwise `[xx] text`.
#[derive(Debug, Clone, Default)]
pub struct MockTranslator {
    dictionary: HashMap<(String, TranslationTarget), String>,
}

impl MockTranslator {
    pub fn with_entry(mut self, text: &str, target: TranslationTarget, translated: &str) -> Self {
        self.dictionary
            .insert((text.to_string(), target), translated.to_string());
        self
    }
}

impl Translator for MockTranslator {
    fn translate(&self, text: &str, target: TranslationTarget) -> Result<String, ProviderError> {
        Ok(self
            .dictionary
            .get(&(text.to_string(), target))
            .cloned()
            .unwrap_or_else(|| format!("[{target}] {text}")))
    }
}

/// Google Cloud Translation v2 REST API, English source.
pub struct GoogleTranslator {
    client: HttpClient,
}

pub const GOOGLE_TRANSLATE_V2: &str = "https://translation.googleapis.com/language/translate/v2";

impl GoogleTranslator {
    pub fn new(client: HttpClient) -> Self {
        GoogleTranslator { client }
    }

    pub fn from_profile(profile: &TranslatorProfile) -> Result<Self, ProviderError> {
        let var = profile
            .auth_env
            .as_deref()
            .ok_or_else(|| ProviderError::Profile("google_v2 translators need auth_env".into()))?;
        let key = std::env::var(var)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ProviderError::Auth(format!("environment variable {var} is not set")))?;
        Ok(GoogleTranslator::new(HttpClient::new(
            profile.endpoint.clone().unwrap_or_else(|| GOOGLE_TRANSLATE_V2.to_string()),
            key,
            Duration::from_secs(profile.timeout_secs),
            profile.retry.clone(),
            profile
                .rate_limit_per_minute
                .map(|l| Arc::new(RateLimiter::per_minute(l))),
        )))
    }

    pub fn request_body(text: &str, target: TranslationTarget) -> Value {
        json!({"q": text, "source": "en", "target": target.as_str(), "format": "text"})
    }
}

impl Translator for GoogleTranslator {
    fn translate(&self, text: &str, target: TranslationTarget) -> Result<String, ProviderError> {
        let url = format!("{}?key={}", self.client.base_url(), self.client.api_key());
        let body = self
            .client
            .post_json(&url, &[], &Self::request_body(text, target))
            .map_err(|e| match e {
                ProviderError::RateLimited { .. } => ProviderError::QuotaExceeded(e.to_string()),
                ProviderError::Auth(msg) if msg.to_ascii_lowercase().contains("quota") => {
                    ProviderError::QuotaExceeded(msg)
                }
                other => other,
            })?;
        body.pointer("/data/translations/0/translatedText")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::MalformedResponse("no translatedText in response".into()))
    }
}
