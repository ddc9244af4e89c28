//! Chat and translation adapters against a local HTTP server.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mirage_core::domain::{ProviderParams, TranslationTarget};
use mirage_core::providers::{
    AnthropicProvider, ChatProvider, ChatRequest, FinishReason, GoogleTranslator, HttpClient, MistralProvider,
    OpenAiProvider, ProviderError, ProviderKind, ProviderProfile, RetryPolicy, Translator,
};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    headers: Vec<(String, String)>,
    body: Value,
}

impl Seen {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

/// Answers each request with the next scripted `(status, body)`; the last
/// reply repeats.
struct MockServer {
    base: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl MockServer {
    fn start(replies: Vec<(u16, Value)>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let mut replies: VecDeque<(u16, Value)> = replies.into();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                    continue;
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut headers = Vec::new();
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let (k, v) = line.split_once(':').unwrap();
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                    headers.push((k.to_string(), v.trim().to_string()));
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(Seen {
                    path,
                    headers,
                    body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                });
                let (status, reply) = if replies.len() > 1 {
                    replies.pop_front().unwrap()
                } else {
                    replies.front().cloned().unwrap()
                };
                let text = reply.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        MockServer { base, seen }
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn client(base: &str, attempts: u32) -> HttpClient {
    HttpClient::new(
        base,
        "test-key",
        Duration::from_secs(5),
        RetryPolicy {
            max_attempts: attempts,
            backoff_base_ms: 5,
        },
        None,
    )
}

fn request() -> ChatRequest {
    let mut params = ProviderParams::classification();
    params.seed = Some(1234);
    ChatRequest::new(Some("be brief".into()), "What is 2+2?".into(), params)
}

fn openai_reply(text: &str) -> Value {
    json!({"id": "cmpl-1", "model": "gpt-x", "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]})
}

#[test]
fn openai_round_trip() {
    let server = MockServer::start(vec![(200, openai_reply("VERDICT: FEASIBLE\n4"))]);
    let p = OpenAiProvider::new(client(&server.base, 3), "gpt-x");
    let r = p.complete(&request()).unwrap();
    assert_eq!(r.text, "VERDICT: FEASIBLE\n4");
    assert_eq!(r.finish_reason, FinishReason::Stop);
    assert_eq!(r.provider_metadata["id"], "cmpl-1");

    let seen = &server.requests()[0];
    assert_eq!(seen.path, "/chat/completions");
    assert_eq!(seen.header("authorization"), Some("Bearer test-key"));
    assert_eq!(seen.body["model"], "gpt-x");
    assert_eq!(seen.body["seed"], 1234);
    assert_eq!(seen.body["n"], 1);
    assert_eq!(seen.body["messages"][0]["role"], "system");
    assert_eq!(seen.body["messages"][1]["content"], "What is 2+2?");
}

#[test]
fn mistral_uses_random_seed() {
    let server = MockServer::start(vec![(200, openai_reply("ok"))]);
    let p = MistralProvider::new(client(&server.base, 1), "mistral-large");
    assert_eq!(p.complete(&request()).unwrap().text, "ok");
    let body = &server.requests()[0].body;
    assert_eq!(body["random_seed"], 1234);
    assert!(body.get("seed").is_none());
}

#[test]
fn anthropic_messages_shape() {
    let reply = json!({"id": "msg_1", "model": "claude-x", "stop_reason": "end_turn",
        "content": [{"type": "text", "text": "VERDICT: "}, {"type": "text", "text": "INFEASIBLE"}]});
    let server = MockServer::start(vec![(200, reply)]);
    let p = AnthropicProvider::new(client(&server.base, 1), "claude-x");
    let r = p.complete(&request()).unwrap();
    assert_eq!(r.text, "VERDICT: INFEASIBLE");
    let seen = &server.requests()[0];
    assert_eq!(seen.path, "/v1/messages");
    assert_eq!(seen.header("x-api-key"), Some("test-key"));
    assert!(seen.header("anthropic-version").is_some());
    assert_eq!(seen.body["system"], "be brief");
    assert!(seen.body.get("seed").is_none());
}

#[test]
fn transient_failures_are_retried_then_succeed() {
    let server = MockServer::start(vec![
        (503, json!({"error": "busy"})),
        (429, json!({"error": "slow down"})),
        (200, openai_reply("fine")),
    ]);
    let p = OpenAiProvider::new(client(&server.base, 3), "m");
    assert_eq!(p.complete(&request()).unwrap().text, "fine");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn retries_stop_at_the_attempt_budget() {
    let server = MockServer::start(vec![(500, json!({"error": "down"}))]);
    let p = OpenAiProvider::new(client(&server.base, 4), "m");
    let err = p.complete(&request()).unwrap_err();
    assert!(matches!(err, ProviderError::Transport(_)), "{err:?}");
    assert_eq!(server.requests().len(), 4);

    let limited = MockServer::start(vec![(429, json!({}))]);
    let p = OpenAiProvider::new(client(&limited.base, 2), "m");
    assert_eq!(p.complete(&request()).unwrap_err(), ProviderError::RateLimited { attempts: 2 });
    assert_eq!(limited.requests().len(), 2);
}

#[test]
fn auth_and_client_errors_are_not_retried() {
    let server = MockServer::start(vec![(401, json!({"error": "bad key"}))]);
    let p = OpenAiProvider::new(client(&server.base, 5), "m");
    assert!(matches!(p.complete(&request()).unwrap_err(), ProviderError::Auth(_)));
    assert_eq!(server.requests().len(), 1);

    let server = MockServer::start(vec![(400, json!({"error": "bad"}))]);
    let p = OpenAiProvider::new(client(&server.base, 5), "m");
    assert!(matches!(p.complete(&request()).unwrap_err(), ProviderError::Http { status: 400, .. }));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn malformed_bodies_are_reported() {
    let server = MockServer::start(vec![(200, json!({"choices": []}))]);
    let p = OpenAiProvider::new(client(&server.base, 1), "m");
    assert!(matches!(p.complete(&request()).unwrap_err(), ProviderError::MalformedResponse(_)));
}

#[test]
fn google_translation() {
    let server = MockServer::start(vec![(200, json!({"data": {"translations": [{"translatedText": "Berechne die Last"}]}}))]);
    let t = GoogleTranslator::new(client(&server.base, 1));
    assert_eq!(t.translate("Compute the load", TranslationTarget::De).unwrap(), "Berechne die Last");
    let seen = &server.requests()[0];
    assert_eq!(seen.path, "/?key=test-key");
    assert_eq!(seen.body, json!({"q": "Compute the load", "source": "en", "target": "de", "format": "text"}));

    let quota = MockServer::start(vec![(429, json!({}))]);
    let t = GoogleTranslator::new(client(&quota.base, 1));
    assert!(matches!(t.translate("x", TranslationTarget::Fr).unwrap_err(), ProviderError::QuotaExceeded(_)));
}

#[test]
fn profiles_read_keys_from_the_named_variable() {
    let server = MockServer::start(vec![(200, openai_reply("hi"))]);
    let profile = ProviderProfile {
        kind: ProviderKind::OpenAiCompatible,
        model: "m".into(),
        endpoint: Some(server.base.clone()),
        auth_env: Some("MIRAGE_TEST_PROFILE_KEY".into()),
        ..ProviderProfile::scripted("m", Vec::new())
    };
    match profile.build() {
        Err(ProviderError::Auth(msg)) => assert!(msg.contains("MIRAGE_TEST_PROFILE_KEY")),
        other => panic!("expected an auth error, got {:?}", other.map(|_| ())),
    }
    std::env::set_var("MIRAGE_TEST_PROFILE_KEY", "from-env");
    let p = profile.build().unwrap();
    assert_eq!(p.complete(&request()).unwrap().text, "hi");
    assert_eq!(server.requests()[0].header("authorization"), Some("Bearer from-env"));
}
