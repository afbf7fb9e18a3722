//! Wire-level tests for the remote backend against a thread-local HTTP stub.
//!
//! The stub is a plain `TcpListener` that accepts one connection per scripted
//! reply, records each request (path, authorization header, parsed JSON
//! body), and either answers with a canned response or hangs up mid-request
//! to simulate a transport failure.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::JoinHandle;
use std::time::Duration;

use halluscan::backend::{
    Backend, BackendError, DecodingParams, Embedder, Entailer, RemoteBackend, RemoteConfig,
};

#[derive(Debug)]
struct Recorded {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

enum Reply {
    /// 200 with this JSON body.
    Json(String),
    /// Arbitrary status with a plain-text body.
    Status(u16, String),
    /// Read the request, then close the socket without responding.
    Hangup,
}

fn read_request(stream: &mut TcpStream) -> Recorded {
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut buffer = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk).expect("request read");
        assert!(n > 0, "client closed before sending a full request");
        buffer.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buffer.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
    };
    let head = String::from_utf8_lossy(&buffer[..header_end]).into_owned();
    let mut lines = head.lines();
    let request_line = lines.next().unwrap_or_default();
    let path = request_line.split_whitespace().nth(1).unwrap_or_default().to_string();
    let mut authorization = None;
    let mut content_length = 0usize;
    for line in lines {
        let Some((name, value)) = line.split_once(':') else { continue };
        match name.to_ascii_lowercase().as_str() {
            "authorization" => authorization = Some(value.trim().to_string()),
            "content-length" => content_length = value.trim().parse().unwrap_or(0),
            _ => {}
        }
    }
    while buffer.len() < header_end + content_length {
        let n = stream.read(&mut chunk).expect("body read");
        assert!(n > 0, "client closed mid-body");
        buffer.extend_from_slice(&chunk[..n]);
    }
    let body = serde_json::from_slice(&buffer[header_end..header_end + content_length])
        .expect("JSON request body");
    Recorded { path, authorization, body }
}

/// Serves the scripted replies on a fresh port; joining the handle yields the
/// recorded requests, one per accepted connection.
fn serve(replies: Vec<Reply>) -> (String, JoinHandle<Vec<Recorded>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut records = Vec::new();
        for reply in replies {
            let (mut stream, _) = listener.accept().expect("accept");
            records.push(read_request(&mut stream));
            let (status, reason, content_type, body) = match reply {
                Reply::Json(body) => (200, "OK", "application/json", body),
                Reply::Status(code, body) => (code, "Error", "text/plain", body),
                Reply::Hangup => continue,
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
            stream.flush().unwrap();
        }
        records
    });
    (base_url, handle)
}

fn config(base_url: &str) -> RemoteConfig {
    RemoteConfig {
        base_url: base_url.to_string(),
        model: "served-model".into(),
        embed_model: None,
        entail_url: None,
        api_key: Some("sekrit".into()),
        seed: 42,
        max_in_flight: 4,
        retries: 2,
        backoff_ms: 1,
        timeout_secs: 5,
    }
}

fn chat_body(contents: &[&str]) -> String {
    let choices: Vec<serde_json::Value> = contents
        .iter()
        .map(|c| serde_json::json!({"message": {"role": "assistant", "content": c}}))
        .collect();
    serde_json::json!({ "choices": choices }).to_string()
}

#[test]
fn generation_request_carries_the_full_decoding_contract() {
    let (url, stub) = serve(vec![Reply::Json(chat_body(&["first", "second", "third"]))]);
    let backend = RemoteBackend::new(config(&url)).unwrap();
    let params = DecodingParams::sampling();

    let samples = backend.sample_k("What is the boiling point?", 3, &params).unwrap();
    assert_eq!(samples, vec!["first", "second", "third"], "choices keep request order");

    let records = stub.join().unwrap();
    assert_eq!(records.len(), 1);
    let request = &records[0];
    assert_eq!(request.path, "/v1/chat/completions");
    assert_eq!(request.authorization.as_deref(), Some("Bearer sekrit"));
    let body = &request.body;
    assert_eq!(body["model"], "served-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "What is the boiling point?");
    assert_eq!(body["n"], 3);
    assert_eq!(body["seed"], 42);
    assert_eq!(body["temperature"], params.temperature);
    assert_eq!(body["top_p"], params.top_p);
    assert_eq!(body["max_tokens"], params.max_tokens);
}

#[test]
fn transport_failure_is_retried_and_then_succeeds() {
    let (url, stub) = serve(vec![Reply::Hangup, Reply::Json(chat_body(&["recovered"]))]);
    let backend = RemoteBackend::new(config(&url)).unwrap();

    let text = backend.generate("q", &DecodingParams::greedy()).unwrap();
    assert_eq!(text, "recovered");
    assert_eq!(stub.join().unwrap().len(), 2, "one failed attempt plus one retry");
}

#[test]
fn refused_status_is_surfaced_immediately_without_retry() {
    let (url, stub) = serve(vec![Reply::Status(500, "overloaded".into())]);
    let backend = RemoteBackend::new(config(&url)).unwrap();

    let error = backend.generate("q", &DecodingParams::greedy()).unwrap_err();
    match error {
        BackendError::Refused { status, detail } => {
            assert_eq!(status, 500);
            assert!(detail.contains("overloaded"));
        }
        other => panic!("expected Refused, got {other:?}"),
    }
    // a retry would have hit the closed listener and come back Unreachable
    assert_eq!(stub.join().unwrap().len(), 1);
}

#[test]
fn exhausted_retries_report_unreachable() {
    let (url, stub) = serve(vec![Reply::Hangup, Reply::Hangup, Reply::Hangup]);
    let backend = RemoteBackend::new(config(&url)).unwrap();

    let error = backend.generate("q", &DecodingParams::greedy()).unwrap_err();
    assert!(matches!(error, BackendError::Unreachable(_)), "got {error:?}");
    assert_eq!(stub.join().unwrap().len(), 3, "initial attempt plus two retries");
}

#[test]
fn short_choice_batch_is_malformed() {
    let (url, stub) = serve(vec![Reply::Json(chat_body(&["only", "two"]))]);
    let backend = RemoteBackend::new(config(&url)).unwrap();

    let error = backend.sample_k("q", 3, &DecodingParams::sampling()).unwrap_err();
    match error {
        BackendError::Malformed(detail) => assert!(detail.contains("requested 3")),
        other => panic!("expected Malformed, got {other:?}"),
    }
    stub.join().unwrap();
}

#[test]
fn embeddings_round_trip_in_input_order_and_check_length() {
    let ok = serde_json::json!({
        "data": [{"embedding": [3.0, 0.0]}, {"embedding": [0.0, 5.0]}]
    })
    .to_string();
    let short = serde_json::json!({ "data": [{"embedding": [1.0]}] }).to_string();
    let (url, stub) = serve(vec![Reply::Json(ok), Reply::Json(short)]);
    let backend = RemoteBackend::new(config(&url)).unwrap();
    let texts = vec!["alpha".to_string(), "beta".to_string()];

    let vectors = backend.embed(&texts).unwrap();
    assert_eq!(vectors.len(), 2);
    assert_eq!(vectors[0].values(), [1.0, 0.0], "unit-normalized in order");
    assert_eq!(vectors[1].values(), [0.0, 1.0]);

    let error = backend.embed(&texts).unwrap_err();
    assert!(matches!(error, BackendError::Malformed(_)), "got {error:?}");

    let records = stub.join().unwrap();
    assert_eq!(records[0].path, "/v1/embeddings");
    assert_eq!(records[0].body["model"], "served-model");
    assert_eq!(records[0].body["input"], serde_json::json!(["alpha", "beta"]));
}

#[test]
fn entailment_posts_the_pair_and_clamps_the_probability() {
    let (url, stub) = serve(vec![
        Reply::Json(r#"{"entailment": 1.7}"#.into()),
        Reply::Json(r#"{"entailment": 0.25}"#.into()),
    ]);
    let backend = RemoteBackend::new(config(&url)).unwrap();

    assert_eq!(backend.entail("water boils", "it boils").unwrap().probability, 1.0);
    assert_eq!(backend.entail("water boils", "it freezes").unwrap().probability, 0.25);

    let records = stub.join().unwrap();
    assert_eq!(records[0].path, "/v1/entail", "sidecar defaults under the base URL");
    assert_eq!(records[0].body["premise"], "water boils");
    assert_eq!(records[0].body["hypothesis"], "it boils");
}

#[test]
fn custom_entail_url_and_missing_api_key_are_honored() {
    let (url, stub) = serve(vec![Reply::Json(r#"{"entailment": 0.5}"#.into())]);
    let listener_root = url.trim_end_matches("/v1").to_string();
    let mut cfg = config(&url);
    cfg.entail_url = Some(format!("{listener_root}/nli/check"));
    cfg.api_key = None;
    let backend = RemoteBackend::new(cfg).unwrap();

    backend.entail("p", "h").unwrap();
    let records = stub.join().unwrap();
    assert_eq!(records[0].path, "/nli/check");
    assert_eq!(records[0].authorization, None, "no bearer header without a key");
}
