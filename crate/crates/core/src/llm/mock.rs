//! Deterministic stand-in LLM and an HTTP server exposing it.
//!
//! The token count for a prompt is drawn from a SHA-256 of `(seed, prompt)`,
//! uniformly in `[mean/2, 3*mean/2]`. Durations are `10 ms` per token plus a
//! fixed `50 ms` overhead, computed in integer nanoseconds so the in-process
//! and over-the-wire paths produce identical seconds.

use std::convert::Infallible;
use std::io::ErrorKind;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tiny_http::{Header, Method, Response, Server};

use super::{DurationSource, LlmError, LlmRequest, LlmResponse};

pub const NS_PER_TOKEN: u64 = 10_000_000;
pub const OVERHEAD_NS: u64 = 50_000_000;

const VOCABULARY: &[&str] = &[
    "the", "model", "energy", "token", "answer", "simple", "result", "because", "power", "data", "value",
    "example", "function", "returns", "quickly", "system", "which", "is", "a", "of", "and", "to", "in",
    "process", "output", "consider", "important", "measure", "response", "language", "prompt", "code",
];

/// A mock completion in the units the Ollama wire format uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCompletion {
    pub text: String,
    pub prompt_eval_count: u64,
    pub eval_count: u64,
    pub eval_duration_ns: u64,
    pub total_duration_ns: u64,
}

impl MockCompletion {
    pub fn generate(prompt: &str, seed: u64, mean_tokens: u64) -> Self {
        let digest = Sha256::new()
            .chain_update(seed.to_le_bytes())
            .chain_update(prompt.as_bytes())
            .finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let draw = u64::from_le_bytes(key[..8].try_into().expect("8 bytes"));

        let mean = mean_tokens.max(1);
        let lo = mean / 2;
        let hi = 3 * mean / 2;
        let n = lo + draw % (hi - lo + 1);

        let mut rng = ChaCha8Rng::from_seed(key);
        let words: Vec<&str> = (0..n)
            .map(|_| *VOCABULARY.choose(&mut rng).expect("nonempty vocabulary"))
            .collect();
        let eval_duration_ns = n * NS_PER_TOKEN;
        MockCompletion {
            text: words.join(" "),
            prompt_eval_count: prompt.split_whitespace().count() as u64,
            eval_count: n,
            eval_duration_ns,
            total_duration_ns: eval_duration_ns + OVERHEAD_NS,
        }
    }

    pub fn to_ollama_json(&self, model: &str) -> Value {
        json!({
            "model": model,
            "created_at": "1970-01-01T00:00:00Z",
            "response": self.text,
            "done": true,
            "prompt_eval_count": self.prompt_eval_count,
            "eval_count": self.eval_count,
            "eval_duration": self.eval_duration_ns,
            "total_duration": self.total_duration_ns,
        })
    }

    pub fn to_openai_json(&self, model: &str) -> Value {
        json!({
            "id": "cmpl-mock",
            "object": "text_completion",
            "model": model,
            "choices": [{ "text": self.text, "index": 0, "finish_reason": "stop" }],
            "usage": {
                "prompt_tokens": self.prompt_eval_count,
                "completion_tokens": self.eval_count,
                "total_tokens": self.prompt_eval_count + self.eval_count,
            },
        })
    }
}

/// Pure mock completion. Wall stamps are zero.
pub fn mock_generate(request: &LlmRequest, seed: u64, mean_tokens: u64) -> LlmResponse {
    let c = MockCompletion::generate(&request.prompt_text, seed, mean_tokens);
    LlmResponse {
        response_text: c.text,
        prompt_token_length: c.prompt_eval_count,
        response_token_length: c.eval_count,
        response_duration_s: c.eval_duration_ns as f64 / 1e9,
        total_duration_s: c.total_duration_ns as f64 / 1e9,
        t_request_wall: 0,
        t_response_wall: 0,
        duration_source: DurationSource::Service,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockConfig {
    pub seed: u64,
    pub mean_tokens: u64,
    /// When set, other model names get HTTP 404 like an Ollama server
    /// without the model pulled.
    pub models: Option<Vec<String>>,
    /// Sleep for the reported total duration before answering.
    pub realtime: bool,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig { seed: 0, mean_tokens: 100, models: None, realtime: false }
    }
}

/// The mock endpoint bound to a local port.
pub struct MockServer {
    server: Arc<Server>,
    config: MockConfig,
    port: u16,
}

impl MockServer {
    /// Binds `addr` (`host:port`; port 0 picks a free one).
    pub fn bind(addr: &str, config: MockConfig) -> Result<Self, LlmError> {
        let server = Server::http(addr).map_err(|e| {
            let requested = addr.rsplit(':').next().and_then(|p| p.parse().ok()).unwrap_or(0);
            match e.downcast_ref::<std::io::Error>() {
                Some(io) if io.kind() == ErrorKind::AddrInUse => LlmError::PortInUse(requested),
                _ => LlmError::Server(e.to_string()),
            }
        })?;
        let port = server.server_addr().to_ip().map(|a| a.port()).unwrap_or(0);
        Ok(MockServer { server: Arc::new(server), config, port })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn endpoint(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    /// Serves requests on the calling thread until the server is unblocked.
    pub fn serve(&self) {
        for request in self.server.incoming_requests() {
            handle(request, &self.config);
        }
    }

    /// Serves on a background thread; dropping the handle stops it.
    pub fn spawn(self) -> MockHandle {
        let server = Arc::clone(&self.server);
        let endpoint = self.endpoint();
        let port = self.port;
        let join = thread::Builder::new()
            .name("mock-llm".into())
            .spawn(move || self.serve())
            .expect("spawn mock server thread");
        MockHandle { server, join: Some(join), endpoint, port }
    }
}

pub struct MockHandle {
    server: Arc<Server>,
    join: Option<JoinHandle<()>>,
    endpoint: String,
    port: u16,
}

impl MockHandle {
    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn port(&self) -> u16 {
        self.port
    }
}

impl Drop for MockHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

/// Serves the mock on `127.0.0.1:port` until the process is stopped.
pub fn serve_mock(port: u16, seed: u64, mean_tokens: u64) -> Result<Infallible, LlmError> {
    let server = MockServer::bind(
        &format!("127.0.0.1:{port}"),
        MockConfig { seed, mean_tokens, ..MockConfig::default() },
    )?;
    info!("mock LLM listening on {}", server.endpoint());
    loop {
        server.serve();
    }
}

fn json_response(status: u16, body: &Value) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    Response::from_string(body.to_string()).with_status_code(status).with_header(header)
}

fn error_response(status: u16, message: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    json_response(status, &json!({ "error": message }))
}

#[derive(Clone, Copy)]
enum Route {
    Ollama,
    OpenAi,
}

fn handle(mut request: tiny_http::Request, config: &MockConfig) {
    let route = match (request.method(), request.url()) {
        (Method::Post, "/api/generate") => Some(Route::Ollama),
        (Method::Post, "/v1/completions") => Some(Route::OpenAi),
        _ => None,
    };
    let reply = match route {
        None => error_response(404, "not found"),
        Some(route) => {
            let mut body = String::new();
            match request.as_reader().read_to_string(&mut body) {
                Ok(_) => answer(route, &body, config),
                Err(e) => error_response(400, &e.to_string()),
            }
        }
    };
    debug!("{} {} -> {}", request.method(), request.url(), reply.status_code().0);
    let _ = request.respond(reply);
}

fn answer(route: Route, body: &str, config: &MockConfig) -> Response<std::io::Cursor<Vec<u8>>> {
    let parsed: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return error_response(400, &format!("invalid JSON: {e}")),
    };
    let (Some(model), Some(prompt)) = (
        parsed.get("model").and_then(Value::as_str),
        parsed.get("prompt").and_then(Value::as_str),
    ) else {
        return error_response(400, "`model` and `prompt` strings are required");
    };
    if model.is_empty() || prompt.is_empty() {
        return error_response(400, "`model` and `prompt` must be nonempty");
    }
    if parsed.get("stream").and_then(Value::as_bool) == Some(true) {
        return error_response(400, "streaming is not supported");
    }
    if let Some(models) = &config.models {
        if !models.iter().any(|m| m == model) {
            return error_response(404, &format!("model '{model}' not found"));
        }
    }
    let completion = MockCompletion::generate(prompt, config.seed, config.mean_tokens);
    if config.realtime {
        thread::sleep(Duration::from_nanos(completion.total_duration_ns));
    }
    match route {
        Route::Ollama => json_response(200, &completion.to_ollama_json(model)),
        Route::OpenAi => json_response(200, &completion.to_openai_json(model)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str) -> LlmRequest {
        LlmRequest::new("mock", prompt).unwrap()
    }

    #[test]
    fn deterministic_per_seed_and_prompt() {
        let a = mock_generate(&request("Explain RAPL."), 7, 100);
        let b = mock_generate(&request("Explain RAPL."), 7, 100);
        assert_eq!(a, b);
        let c = mock_generate(&request("Explain RAPL."), 8, 100);
        assert_ne!(a.response_text, c.response_text);
    }

    #[test]
    fn token_count_within_range() {
        for i in 0..500 {
            let r = mock_generate(&request(&format!("prompt number {i}")), 3, 100);
            assert!((50..=150).contains(&r.response_token_length));
            assert_eq!(r.response_text.split_whitespace().count() as u64, r.response_token_length);
        }
    }

    #[test]
    fn duration_formula() {
        // n = 200 tokens -> 2.0 s generating, 2.05 s total.
        let c = MockCompletion { text: String::new(), prompt_eval_count: 0, eval_count: 200,
            eval_duration_ns: 200 * NS_PER_TOKEN, total_duration_ns: 200 * NS_PER_TOKEN + OVERHEAD_NS };
        assert_eq!(c.eval_duration_ns as f64 / 1e9, 2.0);
        assert_eq!(c.total_duration_ns as f64 / 1e9, 2.05);
        let r = mock_generate(&request("a b c"), 1, 10);
        assert_eq!(r.response_duration_s, r.response_token_length as f64 * NS_PER_TOKEN as f64 / 1e9);
        assert!((r.total_duration_s - r.response_duration_s - 0.05).abs() < 1e-12);
        assert_eq!(r.prompt_token_length, 3);
    }
}
