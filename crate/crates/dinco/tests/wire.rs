//! HTTP round trips against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use dinco::gateway::{
    DecodeParams, Gateway, GatewayError, HttpNliBackend, OpenAiCompatibleProvider,
    ProviderCapabilities, ProviderConfig, ResponseCache, RetryPolicy,
};
use serde_json::{json, Value};

struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves `replies` in order, one connection each, and records requests.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line
                .split_whitespace()
                .nth(1)
                .unwrap_or_default()
                .to_string();
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                let (name, value) = h.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (url, seen)
}

fn chat_body(text: &str) -> String {
    json!({
        "choices": [{
            "message": {"role": "assistant", "content": text},
            "logprobs": {"content": [
                {"token": text, "logprob": -0.1, "top_logprobs": [
                    {"token": text, "logprob": -0.1},
                    {"token": "Rome", "logprob": -2.5}
                ]}
            ]}
        }]
    })
    .to_string()
}

fn provider(url: &str, key_env: Option<&str>) -> Arc<OpenAiCompatibleProvider> {
    Arc::new(
        OpenAiCompatibleProvider::new(ProviderConfig {
            base_url: format!("{url}/v1/"),
            model: "tiny".into(),
            api_key_env: key_env.map(str::to_string),
            capabilities: ProviderCapabilities::TOP_TOKENS,
            timeout_secs: 10,
        })
        .unwrap(),
    )
}

#[test]
fn chat_request_and_response_round_trip() {
    std::env::set_var("DINCO_WIRE_TEST_KEY", "sk-test");
    let (url, seen) = serve(vec![(200, chat_body("Paris"))]);
    let g = Gateway::new(provider(&url, Some("DINCO_WIRE_TEST_KEY")));
    let c = g
        .complete(
            "Capital of France?",
            &DecodeParams::greedy(8).with_alternatives(2),
        )
        .unwrap();
    assert_eq!(c.text, "Paris");
    assert_eq!(c.alternatives[0][1].token, "Rome");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-test"));
    let b = &seen[0].body;
    assert_eq!(b["model"], "tiny");
    assert_eq!(b["messages"][0]["content"], "Capital of France?");
    assert_eq!(b["logprobs"], true);
    assert_eq!(b["top_logprobs"], 2);
    assert_eq!(b["max_tokens"], 8);
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = serve(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, chat_body("Paris")),
    ]);
    let g = Gateway::new(provider(&url, None)).with_retry(RetryPolicy::immediate(3));
    let c = g.complete("q", &DecodeParams::greedy(4)).unwrap();
    assert_eq!(c.text, "Paris");
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert!(seen.lock().unwrap()[0].auth.is_none());
    assert_eq!(g.stats().backend_generation_calls, 3);
}

#[test]
fn retries_give_up_and_client_errors_do_not_retry() {
    let (url, _) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    let g = Gateway::new(provider(&url, None)).with_retry(RetryPolicy::immediate(2));
    let err = g.complete("q", &DecodeParams::greedy(4)).unwrap_err();
    assert!(
        matches!(err, GatewayError::Transport { attempts: 2, .. }),
        "{err}"
    );

    let (url, seen) = serve(vec![
        (400, r#"{"error":"bad"}"#.into()),
        (200, chat_body("x")),
    ]);
    let g = Gateway::new(provider(&url, None)).with_retry(RetryPolicy::immediate(3));
    let err = g.complete("q", &DecodeParams::greedy(4)).unwrap_err();
    assert!(matches!(err, GatewayError::InvalidResponse(_)), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn null_content_is_a_refusal() {
    let body =
        json!({"choices": [{"message": {"role": "assistant", "content": null}}]}).to_string();
    let (url, _) = serve(vec![(200, body)]);
    let g = Gateway::new(provider(&url, None));
    let err = g.complete("q", &DecodeParams::greedy(4)).unwrap_err();
    assert!(matches!(err, GatewayError::Refusal));
}

#[test]
fn disk_cache_survives_a_new_gateway() {
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = serve(vec![(200, chat_body("Paris"))]);
    let first =
        Gateway::new(provider(&url, None)).with_cache(ResponseCache::open(dir.path()).unwrap());
    let a = first.complete("q", &DecodeParams::greedy(4)).unwrap();
    // the server is gone after one reply; a second request must not reach it
    let second =
        Gateway::new(provider(&url, None)).with_cache(ResponseCache::open(dir.path()).unwrap());
    let b = second.complete("q", &DecodeParams::greedy(4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(seen.lock().unwrap().len(), 1);
    assert_eq!(second.stats().backend_generation_calls, 0);
    assert_eq!(second.stats().cache.hits, 1);
}

#[test]
fn nli_endpoint_round_trip() {
    let (url, seen) = serve(vec![
        (
            200,
            r#"{"entail":0.7,"contradict":0.1,"neutral":0.2}"#.into(),
        ),
        (
            200,
            r#"{"entail":0.7,"contradict":0.7,"neutral":0.2}"#.into(),
        ),
    ]);
    let g = Gateway::new(provider(&url, None))
        .with_nli(Arc::new(
            HttpNliBackend::new(format!("{url}/nli"), 10).unwrap(),
        ))
        .with_retry(RetryPolicy::immediate(1));
    let p = g
        .nli("Paris is in France.", "Paris is French.", None)
        .unwrap();
    assert_eq!(p.entail, 0.7);
    {
        let seen = seen.lock().unwrap();
        assert_eq!(seen[0].path, "/nli");
        assert_eq!(seen[0].body["premise"], "Paris is in France.");
        assert_eq!(seen[0].body["hypothesis"], "Paris is French.");
    }
    let err = g.nli("a", "b", None).unwrap_err();
    assert!(
        matches!(err, GatewayError::NliNormalization { .. }),
        "{err}"
    );
}
