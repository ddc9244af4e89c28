use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError};

type Responder = dyn Fn(&ChatRequest, usize) -> Result<String, ProviderError> + Send + Sync;

/// Offline provider that answers from a fixed script or a closure.
pub struct ScriptedProvider {
    model: String,
    responder: Arc<Responder>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    /// Replies in order; once the script runs out the last reply repeats.
    pub fn new(model: &str, script: Vec<String>) -> Self {
        assert!(!script.is_empty(), "a script needs at least one reply");
        Self::from_fn(model, move |_, call| {
            Ok(script[call.min(script.len() - 1)].clone())
        })
    }

    /// Replies computed from the request and the zero-based call index.
    pub fn from_fn<F>(model: &str, responder: F) -> Self
    where
        F: Fn(&ChatRequest, usize) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        ScriptedProvider {
            model: model.to_string(),
            responder: Arc::new(responder),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ScriptedProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(request, call).map(ChatResponse::stop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ProviderParams;

    #[test]
    fn pong_for_any_request() {
        let p = ScriptedProvider::new("s", vec!["PONG".into()]);
        for text in ["PING", "anything else"] {
            let req = ChatRequest::new(None, text.into(), ProviderParams::classification());
            assert_eq!(p.complete(&req).unwrap().text, "PONG");
        }
        assert_eq!(p.calls(), 2);
    }

    #[test]
    fn script_is_served_in_order_then_repeats() {
        let p = ScriptedProvider::new("s", vec!["a".into(), "b".into()]);
        let req = ChatRequest::new(None, "x".into(), ProviderParams::classification());
        let got: Vec<_> = (0..4).map(|_| p.complete(&req).unwrap().text).collect();
        assert_eq!(got, vec!["a", "b", "b", "b"]);
    }
}
