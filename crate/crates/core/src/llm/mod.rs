//! Completion requests against Ollama- and OpenAI-compatible endpoints.
//!
//! Requests are non-streaming: one prompt in, one complete response out.
//! Ollama reports token counts and nanosecond durations in the response body;
//! the OpenAI completions protocol reports token usage only, so its durations
//! come from local wall-clock timing and are flagged as such.

pub mod mock;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use mock::{mock_generate, serve_mock, MockConfig, MockServer};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    #[error("HTTP error {0}")]
    HttpError(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request timed out")]
    Timeout,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("mock server error: {0}")]
    Server(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiFlavor {
    Ollama,
    Openai,
}

impl fmt::Display for ApiFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApiFlavor::Ollama => "ollama",
            ApiFlavor::Openai => "openai",
        })
    }
}

impl FromStr for ApiFlavor {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ollama" => Ok(ApiFlavor::Ollama),
            "openai" => Ok(ApiFlavor::Openai),
            other => Err(LlmError::InvalidRequest(format!("unknown API flavor `{other}`"))),
        }
    }
}

/// Where a response's durations came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationSource {
    /// Reported by the serving endpoint.
    Service,
    /// Measured locally between send and receive.
    LocalWall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model_name: String,
    pub prompt_text: String,
    pub max_tokens: Option<u32>,
    pub stream: bool,
}

impl LlmRequest {
    pub fn new(model_name: impl Into<String>, prompt_text: impl Into<String>) -> Result<Self, LlmError> {
        let request = LlmRequest {
            model_name: model_name.into(),
            prompt_text: prompt_text.into(),
            max_tokens: None,
            stream: false,
        };
        request.validate()?;
        Ok(request)
    }

    pub fn with_max_tokens(mut self, max_tokens: Option<u32>) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.model_name.is_empty() {
            return Err(LlmError::InvalidRequest("empty model name".into()));
        }
        if self.prompt_text.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if self.stream {
            return Err(LlmError::InvalidRequest("streaming is not supported".into()));
        }
        if self.max_tokens == Some(0) {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub response_text: String,
    pub prompt_token_length: u64,
    pub response_token_length: u64,
    pub response_duration_s: f64,
    pub total_duration_s: f64,
    /// Nanoseconds since the Unix epoch.
    pub t_request_wall: u64,
    pub t_response_wall: u64,
    pub duration_source: DurationSource,
}

impl LlmResponse {
    /// `total >= response >= 0` and the response is not stamped before the
    /// request.
    pub fn check_invariants(&self) -> Result<(), LlmError> {
        let ordered = self.response_duration_s >= 0.0 && self.total_duration_s >= self.response_duration_s;
        if !ordered {
            return Err(LlmError::MalformedResponse(format!(
                "durations out of order: total {} s, response {} s",
                self.total_duration_s, self.response_duration_s
            )));
        }
        if self.t_response_wall < self.t_request_wall {
            return Err(LlmError::MalformedResponse("response stamped before request".into()));
        }
        Ok(())
    }
}

/// Local send/receive stamps for one request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallStamps {
    pub t_request_wall: u64,
    pub t_response_wall: u64,
    pub elapsed_s: f64,
}

pub(crate) fn now_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

/// Nanoseconds to seconds; integer inputs are divided exactly once.
fn ns_field(body: &Value, field: &str) -> Result<f64, LlmError> {
    let v = body
        .get(field)
        .ok_or_else(|| LlmError::MalformedResponse(format!("missing `{field}`")))?;
    let ns = match v.as_u64() {
        Some(n) => n as f64,
        None => v
            .as_f64()
            .filter(|x| *x >= 0.0)
            .ok_or_else(|| LlmError::MalformedResponse(format!("`{field}` is not a duration")))?,
    };
    Ok(ns / 1e9)
}

fn count_field(body: &Value, path: &[&str]) -> Result<u64, LlmError> {
    let mut v = body;
    for key in path {
        v = v
            .get(key)
            .ok_or_else(|| LlmError::MalformedResponse(format!("missing `{}`", path.join("."))))?;
    }
    v.as_u64()
        .ok_or_else(|| LlmError::MalformedResponse(format!("`{}` is not a count", path.join("."))))
}

/// Maps an Ollama `/api/generate` response body.
pub fn parse_ollama_body(body: &str, stamps: WallStamps) -> Result<LlmResponse, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    let response_text = v
        .get("response")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedResponse("missing `response`".into()))?
        .to_string();
    let response = LlmResponse {
        response_text,
        prompt_token_length: count_field(&v, &["prompt_eval_count"])?,
        response_token_length: count_field(&v, &["eval_count"])?,
        response_duration_s: ns_field(&v, "eval_duration")?,
        total_duration_s: ns_field(&v, "total_duration")?,
        t_request_wall: stamps.t_request_wall,
        t_response_wall: stamps.t_response_wall,
        duration_source: DurationSource::Service,
    };
    response.check_invariants()?;
    Ok(response)
}

/// Maps an OpenAI `/v1/completions` response body. Durations are the local
/// send-to-receive time.
pub fn parse_openai_body(body: &str, stamps: WallStamps) -> Result<LlmResponse, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    let response_text = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("text"))
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedResponse("missing `choices[0].text`".into()))?
        .to_string();
    let response = LlmResponse {
        response_text,
        prompt_token_length: count_field(&v, &["usage", "prompt_tokens"])?,
        response_token_length: count_field(&v, &["usage", "completion_tokens"])?,
        response_duration_s: stamps.elapsed_s,
        total_duration_s: stamps.elapsed_s,
        t_request_wall: stamps.t_request_wall,
        t_response_wall: stamps.t_response_wall,
        duration_source: DurationSource::LocalWall,
    };
    response.check_invariants()?;
    Ok(response)
}

/// A reusable client for one endpoint. Requests are blocking and sequential.
#[derive(Debug, Clone)]
pub struct LlmClient {
    endpoint: String,
    flavor: ApiFlavor,
    bearer_token: Option<String>,
    agent: ureq::Agent,
}

impl LlmClient {
    pub fn new(endpoint: &str, flavor: ApiFlavor) -> Self {
        Self::with_options(endpoint, flavor, DEFAULT_TIMEOUT, None)
    }

    pub fn with_options(endpoint: &str, flavor: ApiFlavor, timeout: Duration, bearer_token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        LlmClient {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            flavor,
            bearer_token,
            agent,
        }
    }

    pub fn flavor(&self) -> ApiFlavor {
        self.flavor
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn url(&self) -> String {
        match self.flavor {
            ApiFlavor::Ollama => format!("{}/api/generate", self.endpoint),
            ApiFlavor::Openai => format!("{}/v1/completions", self.endpoint),
        }
    }

    fn body(&self, request: &LlmRequest) -> Value {
        match self.flavor {
            ApiFlavor::Ollama => {
                let mut body = json!({
                    "model": request.model_name,
                    "prompt": request.prompt_text,
                    "stream": false,
                });
                if let Some(n) = request.max_tokens {
                    body["options"] = json!({ "num_predict": n });
                }
                body
            }
            ApiFlavor::Openai => json!({
                "model": request.model_name,
                "prompt": request.prompt_text,
                "max_tokens": request.max_tokens,
                "stream": false,
            }),
        }
    }

    pub fn generate(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let payload = self.body(request).to_string();
        let mut call = self.agent.post(self.url()).header("Content-Type", "application/json");
        if let Some(token) = &self.bearer_token {
            call = call.header("Authorization", format!("Bearer {token}"));
        }

        let t_request_wall = now_ns();
        let started = Instant::now();
        let mut response = call.send(payload.as_str()).map_err(map_transport_error)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_transport_error)?;
        let elapsed_s = started.elapsed().as_secs_f64();
        let t_response_wall = now_ns().max(t_request_wall);

        if !(200..300).contains(&status) {
            return Err(LlmError::HttpError(status));
        }
        let stamps = WallStamps { t_request_wall, t_response_wall, elapsed_s };
        match self.flavor {
            ApiFlavor::Ollama => parse_ollama_body(&text, stamps),
            ApiFlavor::Openai => parse_openai_body(&text, stamps),
        }
    }
}

fn map_transport_error(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        ureq::Error::StatusCode(code) => LlmError::HttpError(code),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => LlmError::Timeout,
        other => LlmError::ConnectionFailed(other.to_string()),
    }
}

/// One-shot request with default client settings.
pub fn generate(endpoint: &str, flavor: ApiFlavor, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
    LlmClient::new(endpoint, flavor).generate(request)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stamps() -> WallStamps {
        WallStamps { t_request_wall: 10, t_response_wall: 20, elapsed_s: 0.5 }
    }

    #[test]
    fn ollama_field_mapping() {
        let body = r#"{"model":"gemma:2b","response":"Hi.","done":true,
            "prompt_eval_count":12,"eval_count":251,"eval_duration":8500000000,"total_duration":9100000000}"#;
        let r = parse_ollama_body(body, stamps()).unwrap();
        assert_eq!(r.response_token_length, 251);
        assert_eq!(r.prompt_token_length, 12);
        assert_eq!(r.total_duration_s, 9.1);
        assert_eq!(r.response_duration_s, 8.5);
        assert_eq!(r.duration_source, DurationSource::Service);
        assert_eq!((r.t_request_wall, r.t_response_wall), (10, 20));
    }

    #[test]
    fn ollama_float_durations_are_accepted() {
        let body = r#"{"response":"x","prompt_eval_count":1,"eval_count":1,"eval_duration":1e9,"total_duration":9.1e9}"#;
        assert_eq!(parse_ollama_body(body, stamps()).unwrap().total_duration_s, 9.1);
    }

    #[test]
    fn empty_completion_is_valid() {
        let body = r#"{"response":"","prompt_eval_count":3,"eval_count":0,"eval_duration":0,"total_duration":40000000}"#;
        let r = parse_ollama_body(body, stamps()).unwrap();
        assert_eq!(r.response_token_length, 0);
        assert_eq!(r.response_text, "");
    }

    #[test]
    fn missing_metadata_is_malformed() {
        let body = r#"{"response":"x","eval_count":1,"eval_duration":1,"total_duration":2}"#;
        assert!(matches!(parse_ollama_body(body, stamps()), Err(LlmError::MalformedResponse(_))));
        assert!(matches!(parse_ollama_body("not json", stamps()), Err(LlmError::MalformedResponse(_))));
    }

    #[test]
    fn out_of_order_durations_are_malformed() {
        let body = r#"{"response":"x","prompt_eval_count":1,"eval_count":1,"eval_duration":5,"total_duration":2}"#;
        assert!(matches!(parse_ollama_body(body, stamps()), Err(LlmError::MalformedResponse(_))));
    }

    #[test]
    fn openai_field_mapping_uses_local_durations() {
        let body = r#"{"id":"cmpl-1","object":"text_completion","choices":[{"text":"Hello","index":0}],
            "usage":{"prompt_tokens":5,"completion_tokens":7,"total_tokens":12}}"#;
        let r = parse_openai_body(body, stamps()).unwrap();
        assert_eq!(r.response_text, "Hello");
        assert_eq!((r.prompt_token_length, r.response_token_length), (5, 7));
        assert_eq!(r.response_duration_s, 0.5);
        assert_eq!(r.total_duration_s, 0.5);
        assert_eq!(r.duration_source, DurationSource::LocalWall);
    }

    #[test]
    fn request_validation() {
        assert!(LlmRequest::new("", "p").is_err());
        assert!(LlmRequest::new("m", "").is_err());
        assert!(LlmRequest::new("m", "p").unwrap().with_max_tokens(Some(0)).validate().is_err());
    }

    #[test]
    fn urls_per_flavor() {
        assert_eq!(LlmClient::new("http://h:1/", ApiFlavor::Ollama).url(), "http://h:1/api/generate");
        assert_eq!(LlmClient::new("http://h:1", ApiFlavor::Openai).url(), "http://h:1/v1/completions");
    }

    #[test]
    fn unreachable_endpoint_is_connection_failure() {
        // Port 9 (discard) on localhost is closed in the sandbox and on CI.
        let client = LlmClient::with_options("http://127.0.0.1:9", ApiFlavor::Ollama, Duration::from_secs(5), None);
        let err = client.generate(&LlmRequest::new("m", "p").unwrap()).unwrap_err();
        assert!(matches!(err, LlmError::ConnectionFailed(_) | LlmError::Timeout), "{err:?}");
    }
}
