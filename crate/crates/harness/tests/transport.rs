use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use tilecheck_harness::transport::{Purpose, TransportError};
use tilecheck_harness::{HttpTransport, Message, ScriptedTransport, Transport};

#[test]
fn script_file_replays_per_purpose_with_shared_fallback() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("reply.md"), "from a file").unwrap();
    std::fs::write(
        dir.path().join("s.json"),
        r#"{"plan": ["p1", {"error": "boom"}], "lower": [{"file": "reply.md"}], "any": ["fallback"]}"#,
    )
    .unwrap();
    let mut t = ScriptedTransport::load(&dir.path().join("s.json")).unwrap();
    let m = [Message::user("hi")];
    assert_eq!(t.complete(Purpose::Plan, &m).unwrap(), "p1");
    assert!(matches!(t.complete(Purpose::Plan, &m), Err(TransportError::Injected(e)) if e == "boom"));
    assert_eq!(t.complete(Purpose::Plan, &m).unwrap(), "fallback");
    assert_eq!(t.complete(Purpose::Lower, &m).unwrap(), "from a file");
    assert!(matches!(t.complete(Purpose::Update, &m), Err(TransportError::Exhausted("update"))));
    assert_eq!(t.requests.len(), 5);
    assert_eq!(t.requests[3].1, m);
}

#[test]
fn bad_script_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    for text in [r#"{"planner": ["x"]}"#, r#"{"plan": [{"file": "missing.md"}]}"#, "not json"] {
        std::fs::write(&p, text).unwrap();
        assert!(matches!(ScriptedTransport::load(&p), Err(TransportError::Script { .. })), "{text}");
    }
    assert!(ScriptedTransport::load(&dir.path().join("absent.json")).is_err());
}

/// Serves one canned HTTP response and returns the request body.
fn serve_once(body: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    let h = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut req = vec![0; len];
        reader.read_exact(&mut req).unwrap();
        let mut w = stream;
        write!(
            w,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            body.len(),
            body
        )
        .unwrap();
        String::from_utf8(req).unwrap()
    });
    (url, h)
}

#[test]
fn http_transport_posts_messages_and_reads_choices() {
    let (url, h) = serve_once(r#"{"choices": [{"message": {"role": "assistant", "content": "hello"}}]}"#);
    let mut t = HttpTransport::new(url, Some("m1".into()), None, Duration::from_secs(10));
    let reply = t
        .complete(Purpose::Plan, &[Message::system("sys"), Message::user("question")])
        .unwrap();
    assert_eq!(reply, "hello");
    let sent: serde_json::Value = serde_json::from_str(&h.join().unwrap()).unwrap();
    assert_eq!(
        sent,
        serde_json::json!({"model": "m1", "messages": [
            {"role": "system", "content": "sys"}, {"role": "user", "content": "question"}]})
    );
}

#[test]
fn http_transport_accepts_bare_content_and_rejects_empty() {
    let (url, h) = serve_once(r#"{"content": "bare"}"#);
    let mut t = HttpTransport::new(url, None, None, Duration::from_secs(10));
    assert_eq!(t.complete(Purpose::Lower, &[Message::user("q")]).unwrap(), "bare");
    assert!(!h.join().unwrap().contains("model"));
    let (url, h) = serve_once(r#"{"choices": []}"#);
    let mut t = HttpTransport::new(url, None, None, Duration::from_secs(10));
    assert!(matches!(t.complete(Purpose::Lower, &[Message::user("q")]), Err(TransportError::EmptyReply)));
    h.join().unwrap();
}

#[test]
fn unreachable_endpoint_is_an_http_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut t = HttpTransport::new(format!("http://127.0.0.1:{port}/"), None, None, Duration::from_secs(5));
    assert!(matches!(t.complete(Purpose::Plan, &[Message::user("q")]), Err(TransportError::Http(_))));
}
