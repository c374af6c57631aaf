//! Deterministic mock chat-completion endpoint for tests and offline runs.
//!
//! Serves canned responses from a fixture file. A request matches the first
//! rule whose model filter and prompt substrings all apply; rules can
//! simulate transient failures (`fail_times`), refusals, or fixed HTTP
//! status codes.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tiny_http::{Header, Method, Response, Server};

#[derive(Debug, Error)]
pub enum MockError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("cannot bind mock server on {addr}: {message}")]
    Bind { addr: String, message: String },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRule {
    /// Only match requests for this model; None matches any model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// All substrings must occur in the user prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt_contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Respond with an empty completion carrying a refusal message.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub refusal: bool,
    /// Serve this many HTTP 500s before succeeding.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub fail_times: u32,
    /// Always respond with this HTTP status and an error body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixtures {
    /// Served when no rule matches; without it unmatched requests get 404.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_response: Option<String>,
    #[serde(default)]
    pub rules: Vec<FixtureRule>,
}

impl Fixtures {
    pub fn load(path: &Path) -> Result<Self, MockError> {
        let raw = std::fs::read_to_string(path).map_err(|e| MockError::Io {
            path: path.to_owned(),
            source: e,
        })?;
        serde_json::from_str(&raw).map_err(|e| MockError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    /// One canned answer for everything.
    pub fn canned(response: &str) -> Self {
        Fixtures {
            default_response: Some(response.to_owned()),
            rules: Vec::new(),
        }
    }
}

struct RuleState {
    rule: FixtureRule,
    failures_served: AtomicU32,
}

#[derive(Deserialize)]
struct ChatRequestBody {
    #[serde(default)]
    model: String,
    #[serde(default)]
    messages: Vec<ChatMessage>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    role: String,
    #[serde(default)]
    content: String,
}

fn json_response(body: String, status: u16) -> Response<std::io::Cursor<Vec<u8>>> {
    let content_type = Header::from_bytes("Content-Type", "application/json")
        .expect("static header is valid");
    Response::from_string(body)
        .with_status_code(status)
        .with_header(content_type)
}

fn completion_body(model: &str, content: &str, refusal: Option<&str>) -> String {
    serde_json::json!({
        "id": "mock-completion",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {
                "role": "assistant",
                "content": content,
                "refusal": refusal,
            },
            "finish_reason": "stop",
        }],
    })
    .to_string()
}

fn error_body(message: &str) -> String {
    serde_json::json!({ "error": { "message": message } }).to_string()
}

fn handle_request(mut request: tiny_http::Request, rules: &[RuleState], default: &Option<String>) {
    if request.method() != &Method::Post {
        let _ = request.respond(json_response(error_body("POST only"), 404));
        return;
    }
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        let _ = request.respond(json_response(error_body("unreadable body"), 400));
        return;
    }
    let parsed: ChatRequestBody = match serde_json::from_str(&body) {
        Ok(p) => p,
        Err(e) => {
            let _ = request.respond(json_response(error_body(&e.to_string()), 400));
            return;
        }
    };
    let prompt = parsed
        .messages
        .iter()
        .rev()
        .find(|m| m.role == "user")
        .map(|m| m.content.as_str())
        .unwrap_or("");

    for state in rules {
        let rule = &state.rule;
        if let Some(model) = &rule.model {
            if *model != parsed.model {
                continue;
            }
        }
        if !rule.prompt_contains.iter().all(|s| prompt.contains(s)) {
            continue;
        }
        if let Some(status) = rule.status {
            let _ = request.respond(json_response(error_body("fixture status"), status));
            return;
        }
        let should_fail = state
            .failures_served
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |served| {
                (served < rule.fail_times).then_some(served + 1)
            })
            .is_ok();
        if should_fail {
            let _ = request.respond(json_response(error_body("transient failure"), 500));
            return;
        }
        let body = if rule.refusal {
            completion_body(&parsed.model, "", Some("I can't help with that request."))
        } else {
            completion_body(&parsed.model, rule.response.as_deref().unwrap_or(""), None)
        };
        let _ = request.respond(json_response(body, 200));
        return;
    }

    match default {
        Some(text) => {
            let _ = request.respond(json_response(completion_body(&parsed.model, text, None), 200));
        }
        None => {
            let _ = request.respond(json_response(error_body("no fixture matched"), 404));
        }
    }
}

/// An in-process mock endpoint. Handles requests on a background thread
/// until dropped or [`MockServer::shutdown`] is called.
pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicUsize>,
}

impl MockServer {
    /// Bind and start serving; use `"127.0.0.1:0"` for an ephemeral port.
    pub fn spawn(fixtures: Fixtures, addr: &str) -> Result<Self, MockError> {
        let server = Arc::new(Server::http(addr).map_err(|e| MockError::Bind {
            addr: addr.to_owned(),
            message: e.to_string(),
        })?);
        let bound = server
            .server_addr()
            .to_ip()
            .expect("mock server listens on an IP socket");
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let rules: Vec<RuleState> = fixtures
            .rules
            .into_iter()
            .map(|rule| RuleState {
                rule,
                failures_served: AtomicU32::new(0),
            })
            .collect();
        let default = fixtures.default_response;

        let thread_server = Arc::clone(&server);
        let thread_stop = Arc::clone(&stop);
        let thread_requests = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            while let Ok(request) = thread_server.recv() {
                if thread_stop.load(Ordering::SeqCst) {
                    break;
                }
                thread_requests.fetch_add(1, Ordering::SeqCst);
                handle_request(request, &rules, &default);
            }
        });

        Ok(MockServer {
            server,
            addr: bound,
            handle: Some(handle),
            stop,
            requests,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Chat-completions URL clients should POST to.
    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Total requests received so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn shutdown(mut self) {
        self.stop_thread();
    }

    fn stop_thread(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop_thread();
    }
}

/// Serve fixtures on the current thread until the process exits.
pub fn serve_blocking(fixtures: Fixtures, addr: &str) -> Result<(), MockError> {
    let server = Server::http(addr).map_err(|e| MockError::Bind {
        addr: addr.to_owned(),
        message: e.to_string(),
    })?;
    let bound = server
        .server_addr()
        .to_ip()
        .expect("mock server listens on an IP socket");
    log::info!("mock endpoint listening on http://{bound}");
    let rules: Vec<RuleState> = fixtures
        .rules
        .into_iter()
        .map(|rule| RuleState {
            rule,
            failures_served: AtomicU32::new(0),
        })
        .collect();
    while let Ok(request) = server.recv() {
        handle_request(request, &rules, &fixtures.default_response);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(url: &str, model: &str, prompt: &str) -> (u16, serde_json::Value) {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        let mut response = agent
            .post(url)
            .send_json(serde_json::json!({
                "model": model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0.0,
            }))
            .unwrap();
        let status = response.status().as_u16();
        let body: serde_json::Value = response.body_mut().read_json().unwrap();
        (status, body)
    }

    fn content(body: &serde_json::Value) -> &str {
        body["choices"][0]["message"]["content"].as_str().unwrap()
    }

    #[test]
    fn first_matching_rule_wins() {
        let fixtures = Fixtures {
            default_response: Some("fallback".into()),
            rules: vec![
                FixtureRule {
                    model: Some("m1".into()),
                    prompt_contains: vec!["health".into()],
                    response: Some("rule one".into()),
                    ..Default::default()
                },
                FixtureRule {
                    prompt_contains: vec!["health".into()],
                    response: Some("rule two".into()),
                    ..Default::default()
                },
            ],
        };
        let server = MockServer::spawn(fixtures, "127.0.0.1:0").unwrap();
        let (status, body) = post(&server.url(), "m1", "about health care");
        assert_eq!(status, 200);
        assert_eq!(content(&body), "rule one");

        // Different model falls through to the second rule.
        let (_, body) = post(&server.url(), "m2", "about health care");
        assert_eq!(content(&body), "rule two");

        // No substring match → default.
        let (_, body) = post(&server.url(), "m1", "about weather");
        assert_eq!(content(&body), "fallback");
        assert_eq!(server.request_count(), 3);
    }

    #[test]
    fn fail_times_serves_500s_then_succeeds() {
        let fixtures = Fixtures {
            default_response: None,
            rules: vec![FixtureRule {
                response: Some("finally".into()),
                fail_times: 2,
                ..Default::default()
            }],
        };
        let server = MockServer::spawn(fixtures, "127.0.0.1:0").unwrap();
        let (s1, _) = post(&server.url(), "m", "x");
        let (s2, _) = post(&server.url(), "m", "x");
        let (s3, body) = post(&server.url(), "m", "x");
        assert_eq!((s1, s2, s3), (500, 500, 200));
        assert_eq!(content(&body), "finally");
    }

    #[test]
    fn refusal_rule_returns_empty_content_with_refusal() {
        let fixtures = Fixtures {
            default_response: None,
            rules: vec![FixtureRule {
                refusal: true,
                ..Default::default()
            }],
        };
        let server = MockServer::spawn(fixtures, "127.0.0.1:0").unwrap();
        let (status, body) = post(&server.url(), "m", "anything");
        assert_eq!(status, 200);
        assert_eq!(content(&body), "");
        assert!(body["choices"][0]["message"]["refusal"].is_string());
    }

    #[test]
    fn unmatched_without_default_is_404_and_fixed_status_rules_apply() {
        let fixtures = Fixtures {
            default_response: None,
            rules: vec![FixtureRule {
                prompt_contains: vec!["secret".into()],
                status: Some(401),
                ..Default::default()
            }],
        };
        let server = MockServer::spawn(fixtures, "127.0.0.1:0").unwrap();
        let (status, _) = post(&server.url(), "m", "hello");
        assert_eq!(status, 404);
        let (status, _) = post(&server.url(), "m", "the secret");
        assert_eq!(status, 401);
    }

    #[test]
    fn fixture_file_round_trip() {
        let fixtures = Fixtures {
            default_response: Some("d".into()),
            rules: vec![FixtureRule {
                model: Some("m".into()),
                prompt_contains: vec!["a".into()],
                response: Some("r".into()),
                fail_times: 1,
                ..Default::default()
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.json");
        std::fs::write(&path, serde_json::to_string_pretty(&fixtures).unwrap()).unwrap();
        let loaded = Fixtures::load(&path).unwrap();
        assert_eq!(loaded.rules.len(), 1);
        assert_eq!(loaded.default_response.as_deref(), Some("d"));
        assert_eq!(loaded.rules[0].fail_times, 1);
    }

    #[test]
    fn unknown_fixture_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.json");
        std::fs::write(&path, r#"{"rules": [{"respons": "typo"}]}"#).unwrap();
        assert!(matches!(
            Fixtures::load(&path),
            Err(MockError::Parse { .. })
        ));
    }
}
