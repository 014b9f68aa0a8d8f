//! Exercises the HTTP scoring backend against a minimal local server.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::JoinHandle;
use std::time::Duration;

use icm_core::model::{Example, TaskKind};
use icm_core::scorer::{ScoreError, ScorerBackend, ScoringContext};
use icm_pipeline::backend::{HttpBackend, HttpBackendConfig};

/// One canned reply: an HTTP status and a JSON body.
#[derive(Clone)]
struct Reply {
    status: u16,
    body: String,
}

fn ok(body: &str) -> Reply {
    Reply { status: 200, body: body.to_owned() }
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    loop {
        let n = stream.read(&mut chunk).unwrap();
        buf.extend_from_slice(&chunk[..n]);
        let text = String::from_utf8_lossy(&buf);
        if let Some(header_end) = text.find("\r\n\r\n") {
            let content_length = text
                .lines()
                .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                .unwrap_or(0);
            if buf.len() >= header_end + 4 + content_length {
                return text.into_owned();
            }
        }
        if n == 0 {
            return text.into_owned();
        }
    }
}

/// Serves the canned replies in order, one connection each, and returns the
/// raw requests it saw.
fn serve(replies: Vec<Reply>) -> (String, JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/score", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut requests = Vec::new();
        for reply in replies {
            let (mut stream, _) = listener.accept().unwrap();
            requests.push(read_request(&mut stream));
            let response = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.status,
                reply.body.len(),
                reply.body
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
        requests
    });
    (endpoint, handle)
}

fn backend_for(endpoint: String, max_retries: u32) -> HttpBackend {
    HttpBackend::new(HttpBackendConfig {
        endpoint,
        token: Some(String::from("test-token")),
        timeout: Duration::from_secs(5),
        max_retries,
        initial_backoff: Duration::from_millis(1),
        max_context: 8,
    })
    .unwrap()
}

fn example(id: &str, claim: &str) -> Example {
    Example::new(id, TaskKind::YesNo, format!("Claim: {claim}.\nI think this Claim is"), claim)
}

#[test]
fn scores_and_normalizes_candidate_logprobs() {
    let (endpoint, server) = serve(vec![ok(r#"{"logprobs": [-1.0, -3.0]}"#)]);
    let backend = backend_for(endpoint, 0);
    let target = example("t", "target");
    let demo = example("d", "demo");
    let context = ScoringContext { entries: vec![(&demo, 0)] };

    let probs = backend.label_log_probs(&target, &context).unwrap();
    let sum: f64 = probs.iter().map(|p| p.exp()).sum();
    assert!((sum - 1.0).abs() < 1e-12);
    assert!((probs[0] - probs[1] - 2.0).abs() < 1e-12, "raw gap preserved");

    let requests = server.join().unwrap();
    let body = requests[0].split("\r\n\r\n").nth(1).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(body).unwrap();
    let prompt = parsed["prompt"].as_str().unwrap();
    assert!(prompt.starts_with("Claim: demo.\nI think this Claim is True\n\n"));
    assert!(prompt.ends_with("Claim: target.\nI think this Claim is"));
    assert_eq!(parsed["candidates"], serde_json::json!([" True", " False"]));
    assert_eq!(parsed["logprobs"], serde_json::json!(true));
    assert!(requests[0].contains("Bearer test-token"));
}

#[test]
fn retries_after_server_errors() {
    let (endpoint, server) = serve(vec![
        Reply { status: 500, body: String::from("{}") },
        Reply { status: 503, body: String::from("{}") },
        ok(r#"{"logprobs": [0.0, -1.0]}"#),
    ]);
    let backend = backend_for(endpoint, 3);
    let probs = backend.label_log_probs(&example("t", "x"), &ScoringContext::empty()).unwrap();
    assert_eq!(probs.len(), 2);
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn exhausted_retries_surface_backend_unreachable() {
    let (endpoint, server) = serve(vec![
        Reply { status: 500, body: String::from("{}") },
        Reply { status: 500, body: String::from("{}") },
    ]);
    let backend = backend_for(endpoint, 1);
    let err = backend.label_log_probs(&example("t", "x"), &ScoringContext::empty()).unwrap_err();
    match err {
        ScoreError::BackendUnreachable(detail) => {
            assert!(detail.contains("2 attempts"), "{detail}");
            assert!(detail.contains("500"), "{detail}");
        }
        other => panic!("expected BackendUnreachable, got {other:?}"),
    }
    server.join().unwrap();
}

#[test]
fn candidate_count_mismatch_is_an_error() {
    let (endpoint, server) = serve(vec![ok(r#"{"logprobs": [-1.0]}"#)]);
    let backend = backend_for(endpoint, 0);
    let err = backend.label_log_probs(&example("t", "x"), &ScoringContext::empty()).unwrap_err();
    assert!(matches!(err, ScoreError::BackendUnreachable(ref d) if d.contains("1 logprobs")), "{err:?}");
    server.join().unwrap();
}

#[test]
fn connection_refused_is_backend_unreachable() {
    // Bind then drop a listener to get a port nothing is listening on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = backend_for(format!("http://127.0.0.1:{port}/score"), 1);
    let err = backend.label_log_probs(&example("t", "x"), &ScoringContext::empty()).unwrap_err();
    assert!(matches!(err, ScoreError::BackendUnreachable(_)), "{err:?}");
}
