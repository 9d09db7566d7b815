use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use ircontam::llm_client::{ChatModel, ClientConfig, LlmClient, LlmError};

struct Seen {
    bodies: Vec<String>,
    auth: Vec<Option<String>>,
}

/// Serves the given (status, body) pairs in order, one per connection.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Seen>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Seen {
        bodies: Vec::new(),
        auth: Vec::new(),
    }));
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for (status, body) in replies {
            let Ok((mut stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut length, mut auth) = (0, None);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    } else if k.eq_ignore_ascii_case("authorization") {
                        auth = Some(v.trim().to_string());
                    }
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            {
                let mut s = log.lock().unwrap();
                s.bodies.push(String::from_utf8(buf).unwrap());
                s.auth.push(auth);
            }
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 1}
    })
    .to_string()
}

fn config(url: &str, extra: &[(&str, &str)]) -> ClientConfig {
    let mut kv: BTreeMap<String, String> = [
        ("base_url", url),
        ("model", "test-model"),
        ("api_key_env", ""),
        ("retry_base_ms", "5"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    for (k, v) in extra {
        kv.insert(k.to_string(), v.to_string());
    }
    ClientConfig::from_kv(&kv).unwrap()
}

#[test]
fn retries_rate_limit_then_caches() {
    let (url, seen) = serve(vec![
        (429, "{\"error\":\"slow down\"}".into()),
        (200, ok_body("B")),
    ]);
    let cache = tempfile::tempdir().unwrap();
    let dir = cache.path().to_string_lossy().into_owned();
    let client = LlmClient::new(config(&url, &[("cache_dir", &dir)]));
    assert_eq!(client.complete("pick one").unwrap(), "B");
    assert_eq!(client.requests_sent(), 2);
    // second call is served from the cache without touching the server
    assert_eq!(client.complete("pick one").unwrap(), "B");
    assert_eq!(client.requests_sent(), 2);

    let s = seen.lock().unwrap();
    let body: serde_json::Value = serde_json::from_str(&s.bodies[1]).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "pick one");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(s.auth[0], None);

    let replay = LlmClient::new(config("", &[("cache_dir", &dir), ("replay_only", "true")]));
    assert_eq!(replay.complete("pick one").unwrap(), "B");
    assert!(matches!(
        replay.complete("something else"),
        Err(LlmError::MissingFixture { .. })
    ));
    assert_eq!(replay.requests_sent(), 0);
}

#[test]
fn client_errors_fail_fast_and_key_is_sent() {
    std::env::set_var("IRCONTAM_TEST_KEY", "sekrit");
    let (url, seen) = serve(vec![(400, "{\"error\":\"bad request\"}".into())]);
    let client = LlmClient::new(config(&url, &[("api_key_env", "IRCONTAM_TEST_KEY")]));
    match client.complete("x") {
        Err(LlmError::Transport { attempts, detail }) => {
            assert_eq!(attempts, 1);
            assert!(detail.contains("400"), "{detail}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(
        seen.lock().unwrap().auth[0].as_deref(),
        Some("Bearer sekrit")
    );
}

#[test]
fn missing_key_is_reported() {
    let client = LlmClient::new(config(
        "http://127.0.0.1:9/v1",
        &[("api_key_env", "IRCONTAM_UNSET_KEY")],
    ));
    assert!(matches!(
        client.complete("x"),
        Err(LlmError::MissingApiKey(_))
    ));
    assert_eq!(client.requests_sent(), 0);
}

#[test]
fn server_errors_exhaust_attempts() {
    let (url, _) = serve(vec![
        (503, "{}".into()),
        (503, "{}".into()),
        (503, "{}".into()),
    ]);
    let client = LlmClient::new(config(&url, &[("max_attempts", "3")]));
    assert!(matches!(
        client.complete("x"),
        Err(LlmError::Transport { attempts: 3, .. })
    ));
}
