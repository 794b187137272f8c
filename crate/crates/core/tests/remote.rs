//! The HTTP client against an in-process mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use mia_audit::attacks::neighbourhood_attack;
use mia_audit::corpus::TextSample;
use mia_audit::neighbourhood::NeighbourConfig;
use mia_audit::scoring::{
    replacement_distribution, OracleConfig, Reduction, RemoteConfig, RemoteOracle, ScoringError,
    ScoringOracle, SubstitutionOracle,
};

#[derive(Debug, Clone)]
struct Request {
    method: String,
    path: String,
    body: Value,
}

type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

struct MockServer {
    endpoint: String,
    requests: Arc<Mutex<Vec<Request>>>,
}

impl MockServer {
    /// Serves until the test process exits; every response closes the connection.
    fn start(handler: impl Fn(&Request) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let log = Arc::clone(&log);
                let handler = Arc::clone(&handler);
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let mut parts = line.split_whitespace();
                    let method = parts.next().unwrap_or_default().to_string();
                    let path = parts.next().unwrap_or_default().to_string();
                    let mut length = 0;
                    loop {
                        let mut header = String::new();
                        reader.read_line(&mut header).unwrap();
                        let header = header.trim_end();
                        if header.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = header.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                length = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0; length];
                    reader.read_exact(&mut body).unwrap();
                    let request = Request {
                        method,
                        path,
                        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                    };
                    let (status, body) = handler(&request);
                    log.lock().unwrap().push(request);
                    let response = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(response.as_bytes());
                });
            }
        });
        Self { endpoint, requests }
    }

    fn config(&self) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.endpoint.clone(),
            timeout_secs: 10.0,
            ..RemoteConfig::default()
        }
    }

    fn count(&self, path: &str) -> usize {
        self.requests.lock().unwrap().iter().filter(|r| r.path == path).count()
    }

    fn requests(&self, path: &str) -> Vec<Request> {
        self.requests
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.path == path)
            .cloned()
            .collect()
    }
}

fn health() -> (u16, String) {
    (
        200,
        json!({"status": "ok", "target_model": "gpt2-ft", "substitution_model": "bert-base-uncased"}).to_string(),
    )
}

/// Loss of a text is its word count.
fn word_count_losses(req: &Request) -> (u16, String) {
    let losses: Vec<f64> = req.body["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t.as_str().unwrap().split_whitespace().count() as f64)
        .collect();
    (200, json!({ "losses": losses }).to_string())
}

#[test]
fn losses_come_back_in_order() {
    let server = MockServer::start(|req| match req.path.as_str() {
        "/v1/health" => health(),
        "/v1/loss" => (200, json!({"losses": [1.0, 2.0]}).to_string()),
        _ => (404, "{}".into()),
    });
    let oracle = RemoteOracle::connect(server.config()).unwrap();
    assert_eq!(oracle.health().target_model, "gpt2-ft");
    let losses = oracle.losses(&["a", "b c"], Reduction::Mean).unwrap();
    assert_eq!(losses, vec![1.0, 2.0]);

    let sent = server.requests("/v1/loss");
    assert_eq!(sent[0].method, "POST");
    assert_eq!(sent[0].body, json!({"texts": ["a", "b c"], "reduction": "mean"}));
    assert_eq!(server.requests("/v1/health")[0].method, "GET");
}

#[test]
fn server_error_is_retried() {
    let failures = AtomicUsize::new(0);
    let server = MockServer::start(move |req| match req.path.as_str() {
        "/v1/health" => health(),
        "/v1/loss" if failures.fetch_add(1, Ordering::SeqCst) == 0 => (500, "boom".into()),
        "/v1/loss" => word_count_losses(req),
        _ => (404, "{}".into()),
    });
    let oracle = RemoteOracle::connect(RemoteConfig {
        retries: 2,
        ..server.config()
    })
    .unwrap();
    assert_eq!(oracle.losses(&["a b"], Reduction::Sum).unwrap(), vec![2.0]);
    assert_eq!(server.count("/v1/loss"), 2);
}

#[test]
fn persistent_server_error_exhausts_retries() {
    let server = MockServer::start(|req| match req.path.as_str() {
        "/v1/health" => health(),
        _ => (503, "overloaded".into()),
    });
    let oracle = RemoteOracle::connect(RemoteConfig {
        retries: 1,
        ..server.config()
    })
    .unwrap();
    match oracle.losses(&["a"], Reduction::Mean) {
        Err(ScoringError::Protocol { status: 503, body }) => assert_eq!(body, "overloaded"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.count("/v1/loss"), 2);
}

#[test]
fn client_error_is_not_retried() {
    let server = MockServer::start(|req| match req.path.as_str() {
        "/v1/health" => health(),
        _ => (422, r#"{"detail": "bad reduction"}"#.into()),
    });
    let oracle = RemoteOracle::connect(server.config()).unwrap();
    let err = oracle.losses(&["a"], Reduction::Mean).unwrap_err();
    assert!(matches!(err, ScoringError::Protocol { status: 422, .. }), "{err:?}");
    assert_eq!(server.count("/v1/loss"), 1);
}

#[test]
fn malformed_or_short_loss_responses_are_rejected() {
    let server = MockServer::start(|req| match (req.path.as_str(), req.body["texts"].as_array().map(Vec::len)) {
        ("/v1/health", _) => health(),
        ("/v1/loss", Some(1)) => (200, "not json".into()),
        ("/v1/loss", Some(2)) => (200, json!({"losses": [1.0]}).to_string()),
        _ => (200, json!({"losses": [1.0, -2.0, 3.0]}).to_string()),
    });
    let oracle = RemoteOracle::connect(server.config()).unwrap();
    assert!(matches!(oracle.losses(&["a"], Reduction::Mean), Err(ScoringError::Decode(_))));
    assert!(matches!(oracle.losses(&["a", "b"], Reduction::Mean), Err(ScoringError::Decode(_))));
    assert!(matches!(
        oracle.losses(&["a", "b", "c"], Reduction::Mean),
        Err(ScoringError::ProtocolViolation(_))
    ));
}

#[test]
fn unhealthy_or_unreachable_server_fails_to_connect() {
    let server = MockServer::start(|_| {
        (200, json!({"status": "loading", "target_model": "", "substitution_model": ""}).to_string())
    });
    let err = RemoteOracle::connect(server.config()).err().unwrap();
    assert!(err.to_string().contains("loading"), "{err}");

    // bind then drop to obtain a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = RemoteOracle::connect(RemoteConfig {
        endpoint: format!("http://127.0.0.1:{port}"),
        retries: 0,
        timeout_secs: 2.0,
        ..RemoteConfig::default()
    })
    .err()
    .unwrap();
    assert!(matches!(err, ScoringError::Transport { .. }), "{err:?}");
}

#[test]
fn large_batches_are_chunked_and_reassembled() {
    let server = MockServer::start(|req| match req.path.as_str() {
        "/v1/health" => health(),
        "/v1/loss" => word_count_losses(req),
        _ => (404, "{}".into()),
    });
    let oracle = RemoteOracle::connect(RemoteConfig {
        batch_size: 3,
        max_inflight: 4,
        ..server.config()
    })
    .unwrap();
    let texts: Vec<String> = (1..=20).map(|k| vec!["w"; k].join(" ")).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let losses = oracle.losses(&refs, Reduction::Sum).unwrap();
    assert_eq!(losses, (1..=20).map(|k| k as f64).collect::<Vec<_>>());
    let chunks = server.requests("/v1/loss");
    assert_eq!(chunks.len(), 7);
    assert!(chunks.iter().all(|r| r.body["texts"].as_array().unwrap().len() <= 3));
}

/// A BERT-like server: uncased wordpiece tokens between [CLS] and [SEP], and
/// replacements drawn from a fixed table.
fn substitution_server(original_in_candidates: bool) -> MockServer {
    MockServer::start(move |req| match req.path.as_str() {
        "/v1/health" => health(),
        "/v1/loss" => word_count_losses(req),
        "/v1/tokenize" => {
            let tokens: Vec<Vec<String>> = req.body["texts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| {
                    let mut toks = vec!["[CLS]".to_string()];
                    toks.extend(t.as_str().unwrap().split_whitespace().map(str::to_lowercase));
                    toks.push("[SEP]".into());
                    toks
                })
                .collect();
            (200, json!({ "tokens": tokens }).to_string())
        }
        "/v1/replacements" => {
            let text = req.body["text"].as_str().unwrap();
            let position = req.body["position"].as_u64().unwrap() as usize;
            let original = text.split_whitespace().nth(position - 2).unwrap().to_lowercase();
            let mut candidates = vec![json!({"token": "fine", "prob": 0.3}), json!({"token": "good", "prob": 0.2})];
            if original_in_candidates {
                candidates.push(json!({"token": original, "prob": 0.1}));
            }
            let body = json!({"original_token": original, "original_prob": 0.4, "candidates": candidates});
            (200, body.to_string())
        }
        _ => (404, "{}".into()),
    })
}

#[test]
fn original_token_in_candidates_is_a_protocol_violation() {
    let server = substitution_server(true);
    let oracle = RemoteOracle::connect(server.config()).unwrap();
    let sample = TextSample::new("s", "The movie was great");
    let err = replacement_distribution(&oracle, &sample, 4, &OracleConfig::default()).unwrap_err();
    assert_eq!(err.to_string(), "protocol violation: original token in candidates");
}

#[test]
fn remote_substitution_drives_the_neighbourhood_attack() {
    let server = substitution_server(false);
    let oracle = RemoteOracle::connect(server.config()).unwrap();
    let sample = TextSample::new("s", "The movie  was great");

    let tokenized = oracle.tokenize(&sample.text).unwrap();
    assert_eq!(tokenized.tokens.first().map(String::as_str), Some("[CLS]"));
    assert_eq!(&sample.text[tokenized.spans[1].clone()], "The");

    let config = NeighbourConfig { n: 3, seed: 5, ..NeighbourConfig::default() };
    let dist = replacement_distribution(&oracle, &sample, 2, &OracleConfig { seed: 5, ..OracleConfig::default() })
        .unwrap();
    assert_eq!(dist.original_token, "the");
    let sent = server.requests("/v1/replacements");
    let seed = sent[0].body["seed"].as_u64().unwrap();
    assert!(seed < 1 << 31);
    assert_eq!(sent[0].body["dropout_p"], json!(0.7));

    let outcome = neighbourhood_attack(&oracle, &oracle, std::slice::from_ref(&sample), &config, Reduction::Sum).unwrap();
    assert!(outcome.failures.is_empty());
    // every neighbour keeps the word count, so the score is exactly zero
    assert_eq!(outcome.scores[0].score, 0.0);
    assert_eq!(outcome.scores[0].n_neighbours, Some(3));
    // the top neighbour rewrites the first word in place, keeping the double space
    let loss_texts = server.requests("/v1/loss");
    let neighbour_texts: Vec<&str> = loss_texts
        .iter()
        .flat_map(|r| r.body["texts"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()))
        .collect();
    assert!(neighbour_texts.contains(&"fine movie  was great"), "{neighbour_texts:?}");
}
