//! Remote policy and embedding adapters against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use rescore_agent::agent::{run_episode, EpisodeStatus, RescoreConfig};
use rescore_agent::experience::{ActionText, EnvState, Task};
use rescore_agent::grounding::{Embedder, RemoteEmbedder, TrigramEmbedder};
use rescore_agent::policy::{build_context, Policy, RemotePolicy, SampleRequest};
use rescore_agent::textlab::{EnvSpec, LabEnv};
use rescore_agent::transport::HttpConfig;
use rescore_agent::Error;

type Handler = dyn Fn(&str, &Value) -> (u16, Value) + Send + Sync;

struct Server {
    url: String,
    hits: Arc<AtomicUsize>,
}

fn read_request(stream: &TcpStream) -> Option<(String, Value)> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_owned();
    let mut length = 0;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).ok()?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    let body = if body.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&body).ok()?
    };
    Some((path, body))
}

fn serve(handler: Arc<Handler>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some((path, body)) = read_request(&stream) else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = handler(&path, &body);
            let text = reply.to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    Server { url, hits }
}

fn http(url: &str) -> HttpConfig {
    HttpConfig {
        url: url.to_owned(),
        timeout_ms: 5_000,
        retries: 1,
    }
}

fn context() -> rescore_agent::policy::PolicyContext {
    let task = Task::new("t", "put the key in the box").unwrap();
    let state = EnvState::new("You are in room 0.", "You are carrying: nothing.", "Exits: right.", 0);
    build_context(&task, &[], &state, 10)
}

#[test]
fn candidates_are_normalised_per_token_merged_and_truncated() {
    let server = serve(Arc::new(|path, body| {
        assert_eq!(path, "/candidates");
        assert!(body["context"].as_str().unwrap().starts_with("Task: put the key in the box"));
        assert_eq!(body["k"], 2);
        (
            200,
            json!({"candidates": [
                {"text": "look", "logprob": -3.0},
                {"text": "go right", "logprob": -1.0, "token_count": 2},
                {"text": "go right", "logprob": -0.8},
                {"text": "take key", "logprob": -6.0, "token_count": 2},
                {"text": "  ", "logprob": -0.1}
            ]}),
        )
    }));
    let policy = RemotePolicy::new(&http(&server.url));
    let got = policy.sample_candidates(&context(), &SampleRequest::new(2, 1)).unwrap();
    let texts: Vec<&str> = got.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, vec!["go right", "look"]);
    assert_eq!(got[0].log_likelihood, -0.5);
    assert_eq!(got[1].log_likelihood, -3.0);
}

#[test]
fn score_text_uses_the_score_endpoint() {
    let server = serve(Arc::new(|path, body| {
        assert_eq!(path, "/score");
        assert_eq!(body["text"], "go right");
        (200, json!({"logprob": -4.5, "token_count": 3}))
    }));
    let policy = RemotePolicy::new(&http(&server.url));
    let lp = policy.score_text(&context(), &ActionText::new("go right").unwrap()).unwrap();
    assert_eq!(lp, -1.5);
}

#[test]
fn server_errors_are_retried_then_reported() {
    let server = serve(Arc::new(|_, _| (500, json!({"error": "boom"}))));
    let policy = RemotePolicy::new(&http(&server.url));
    let err = policy.sample_candidates(&context(), &SampleRequest::new(3, 1)).unwrap_err();
    match &err {
        Error::Transport { attempts, .. } => assert_eq!(*attempts, 2),
        other => panic!("{other:?}"),
    }
    assert_eq!(err.exit_code(), 4);
    assert_eq!(server.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn unreachable_service_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let policy = RemotePolicy::new(&http(&format!("http://127.0.0.1:{port}")));
    assert!(matches!(
        policy.score_text(&context(), &ActionText::new("look").unwrap()),
        Err(Error::Transport { .. })
    ));
}

#[test]
fn embedder_handshake_and_batches() {
    let server = serve(Arc::new(|path, body| match path {
        "/info" => (200, json!({"dim": 3})),
        "/embed" => {
            let texts = body["texts"].as_array().unwrap();
            let vectors: Vec<Value> = texts
                .iter()
                .map(|t| {
                    let n = t.as_str().unwrap().len() as f64;
                    json!([n, 1.0, 0.0])
                })
                .collect();
            (200, json!({ "vectors": vectors }))
        }
        _ => (404, json!({})),
    }));
    let emb = RemoteEmbedder::connect(&http(&server.url)).unwrap();
    assert_eq!(emb.dim(), 3);
    let out = emb.embed_batch(&["ab", "abcd"]).unwrap();
    assert_eq!(out[0].vector, vec![2.0, 1.0, 0.0]);
    assert_eq!(out[1].source_text, "abcd");
    assert!(emb.embed_batch(&[]).unwrap().is_empty());
}

#[test]
fn embedder_rejects_wrong_dimensions() {
    let server = serve(Arc::new(|path, _| match path {
        "/info" => (200, json!({"dim": 4})),
        _ => (200, json!({"vectors": [[1.0, 2.0]]})),
    }));
    let emb = RemoteEmbedder::connect(&http(&server.url)).unwrap();
    assert!(matches!(emb.embed_batch(&["x"]), Err(Error::Shape(_))));
}

#[test]
fn failing_policy_ends_the_episode_with_a_status() {
    let server = serve(Arc::new(|_, _| (503, json!({}))));
    let policy = RemotePolicy::new(&http(&server.url));
    let spec = EnvSpec::fixture("lab3").unwrap();
    let mut env = LabEnv::new(&spec, "key-to-box").unwrap();
    let rec = run_episode(&mut env, &policy, None, &TrigramEmbedder::default(), &RescoreConfig::default(), 1).unwrap();
    assert!(matches!(rec.status, EpisodeStatus::Error(_)));
    assert!(rec.steps.is_empty());
}

#[test]
fn remote_policy_drives_an_episode() {
    // Always proposes the same three texts; "go on" is not a valid action and gets mapped.
    let server = serve(Arc::new(|path, _| match path {
        "/candidates" => (
            200,
            json!({"candidates": [
                {"text": "go right", "logprob": -0.1},
                {"text": "go on", "logprob": -1.0},
                {"text": "look", "logprob": -2.0}
            ]}),
        ),
        _ => (200, json!({"logprob": -5.0})),
    }));
    let policy = RemotePolicy::new(&http(&server.url));
    let spec = EnvSpec::fixture("lab3").unwrap();
    let mut env = LabEnv::new(&spec, "key-to-box").unwrap();
    let cfg = RescoreConfig {
        max_steps: 3,
        ..RescoreConfig::default()
    };
    let rec = run_episode(&mut env, &policy, None, &TrigramEmbedder::default(), &cfg, 1).unwrap();
    assert_eq!(rec.status, EpisodeStatus::StepLimit);
    // the third room has no exit to the right, so the valid "look" wins there
    let chosen: Vec<&str> = rec.actions().iter().map(|a| a.as_str()).collect();
    assert_eq!(chosen, vec!["go right", "go right", "look"]);
    let mapped = &rec.steps[0].candidates[2];
    assert_eq!(mapped.p_raw, (-5.0f64).exp());
}
