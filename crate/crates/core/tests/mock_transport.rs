use melodi::llm::{DurationSource, mock_generate, ApiFlavor, LlmClient, LlmError, LlmRequest, MockConfig, MockServer};

fn same_except_stamps(a: &melodi::llm::LlmResponse, b: &melodi::llm::LlmResponse) {
    assert_eq!(a.response_text, b.response_text);
    assert_eq!(a.prompt_token_length, b.prompt_token_length);
    assert_eq!(a.response_token_length, b.response_token_length);
}

#[test]
fn http_matches_in_process_generator() {
    let server = MockServer::bind("127.0.0.1:0", MockConfig { seed: 3, ..MockConfig::default() }).unwrap().spawn();
    let request = LlmRequest::new("mock", "How do heat pumps work?").unwrap();
    let expected = mock_generate(&request, 3, 100);
    for flavor in [ApiFlavor::Ollama, ApiFlavor::Openai] {
        let got = LlmClient::new(server.endpoint(), flavor).generate(&request).unwrap();
        got.check_invariants().unwrap();
        same_except_stamps(&got, &expected);
        match flavor {
            ApiFlavor::Ollama => {
                assert_eq!(got.duration_source, DurationSource::Service);
                assert_eq!(got.total_duration_s, expected.total_duration_s);
                assert_eq!(got.response_duration_s, expected.response_duration_s);
            }
            // no durations in the body: measured locally
            ApiFlavor::Openai => assert_eq!(got.duration_source, DurationSource::LocalWall),
        }
    }
}

#[test]
fn unknown_model_is_404() {
    let config = MockConfig { models: Some(vec!["llama".into()]), ..MockConfig::default() };
    let server = MockServer::bind("127.0.0.1:0", config).unwrap().spawn();
    let client = LlmClient::new(server.endpoint(), ApiFlavor::Ollama);
    assert!(client.generate(&LlmRequest::new("llama", "hi").unwrap()).is_ok());
    let err = client.generate(&LlmRequest::new("gemma", "hi").unwrap()).unwrap_err();
    assert!(matches!(err, LlmError::HttpError(404)), "{err}");
}

#[test]
fn malformed_body_is_400() {
    let server = MockServer::bind("127.0.0.1:0", MockConfig::default()).unwrap().spawn();
    let url = format!("{}/api/generate", server.endpoint());
    let status = match ureq::post(&url).send("not json") {
        Err(ureq::Error::StatusCode(code)) => code,
        other => panic!("expected an error status, got {other:?}"),
    };
    assert_eq!(status, 400);
}

#[test]
fn busy_port_is_reported() {
    let first = MockServer::bind("127.0.0.1:0", MockConfig::default()).unwrap();
    let port = first.port();
    let err = MockServer::bind(&format!("127.0.0.1:{port}"), MockConfig::default()).err().unwrap();
    assert!(matches!(err, LlmError::PortInUse(p) if p == port), "{err}");
}
