use std::path::Path;
use std::time::Duration;

use deskbot_cli::protocol::{decode_frame, ServerMessage, SCHEMA};
use deskbot_cli::server::start_on;
use deskbot_cli::{Mode, Session, SessionConfig};
use deskbot_core::datakit::{self, read_png, CollectConfig};
use deskbot_core::sim::route::builtin_route;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(addr: std::net::SocketAddr) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    ws
}

async fn next_text(ws: &mut Ws) -> ServerMessage {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(30), ws.next())
            .await
            .expect("bridge went quiet")
            .unwrap()
            .unwrap();
        if let Message::Text(t) = m {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn next_matching(ws: &mut Ws, f: impl Fn(&ServerMessage) -> bool) -> ServerMessage {
    loop {
        let m = next_text(ws).await;
        if f(&m) {
            return m;
        }
    }
}

async fn bridge(cfg: SessionConfig) -> deskbot_cli::server::BridgeHandle {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    start_on(listener, Session::new(cfg).unwrap()).await.unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn control_token_and_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let handle = bridge(SessionConfig {
        mode: Mode::Teleop,
        route: "R2".into(),
        out: dir.path().to_path_buf(),
        ..Default::default()
    })
    .await;
    let mut a = connect(handle.addr).await;
    let ServerMessage::Hello { controller, mode, .. } = next_text(&mut a).await else {
        panic!("expected hello")
    };
    assert!(controller);
    assert_eq!(mode, "teleop");
    let mut b = connect(handle.addr).await;
    let ServerMessage::Hello { controller, .. } = next_text(&mut b).await else {
        panic!("expected hello")
    };
    assert!(!controller);

    // malformed input is answered and does not disturb the session
    a.send(Message::Text(r#"{"t":"warp"}"#.into())).await.unwrap();
    next_matching(&mut a, |m| matches!(m, ServerMessage::Err { .. })).await;
    b.send(Message::Text(r#"{"t":"ctrl","al":1,"ar":1}"#.into())).await.unwrap();
    next_matching(&mut b, |m| matches!(m, ServerMessage::Err { .. })).await;

    a.send(Message::Text(r#"{"t":"ctrl","al":5,"ar":1}"#.into())).await.unwrap();
    let m = next_matching(&mut b, |m| matches!(m, ServerMessage::Telemetry(t) if t.pwm_l == 255)).await;
    let ServerMessage::Telemetry(t) = m else { unreachable!() };
    assert_eq!(t.pwm_r, 255);

    // the token passes on once the holder leaves
    a.close(None).await.unwrap();
    drop(a);
    tokio::time::sleep(Duration::from_millis(200)).await;
    b.send(Message::Text(r#"{"t":"ctrl","al":0,"ar":0}"#.into())).await.unwrap();
    next_matching(&mut b, |m| matches!(m, ServerMessage::Telemetry(t) if t.pwm_l == 0 && t.pwm_r == 0)).await;
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_reports_version() {
    let dir = tempfile::tempdir().unwrap();
    let handle = bridge(SessionConfig {
        out: dir.path().to_path_buf(),
        ..Default::default()
    })
    .await;
    let mut stream = tokio::net::TcpStream::connect(handle.addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream
        .write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut body = String::new();
    stream.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    let json = &body[body.find('{').unwrap()..];
    let v: serde_json::Value = serde_json::from_str(json.trim()).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    handle.shutdown().await.unwrap();
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        out.push((e.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn headless_collect_matches_direct_collection() {
    let dir = tempfile::tempdir().unwrap();
    let via_bridge = dir.path().join("bridge");
    let direct = dir.path().join("direct");
    let cfg = SessionConfig {
        mode: Mode::Collect,
        route: "R2".into(),
        seed: 11,
        noise: true,
        minutes: 0.25,
        headless: true,
        out: via_bridge.clone(),
        ..Default::default()
    };
    let mut handle = bridge(cfg.clone()).await;
    let mut ws = connect(handle.addr).await;
    let mut frames = 0u64;
    let mut telemetry = 0u64;
    let end = loop {
        let m = tokio::time::timeout(Duration::from_secs(120), ws.next()).await.unwrap().unwrap().unwrap();
        match m {
            Message::Binary(b) => {
                let (id, png) = decode_frame(&b).unwrap();
                let (w, h, _) = read_png(png).unwrap();
                assert_eq!((w, h), (256, 96));
                // the closing tick carries id 300
                assert!(id <= 300);
                frames += 1;
            }
            Message::Text(t) => match serde_json::from_str::<ServerMessage>(&t).unwrap() {
                ServerMessage::Telemetry(_) => telemetry += 1,
                e @ ServerMessage::End { .. } => break e,
                _ => {}
            },
            _ => {}
        }
    };
    let ServerMessage::End { reason, dir: out } = end else { unreachable!() };
    assert_eq!(reason, "complete");
    assert_eq!(out.as_deref(), Some(via_bridge.to_str().unwrap()));
    handle.finished().await;
    handle.shutdown().await.unwrap();
    // a lagging observer may skip ticks but never sees more than were stepped
    assert!(frames > 0 && telemetry > 0 && telemetry <= 301);

    let route = builtin_route("R2").unwrap();
    let ccfg = CollectConfig {
        seed: 11,
        ..cfg.collect_config()
    };
    datakit::collect(&route, &ccfg, &direct).unwrap();
    let a = tree(&via_bridge);
    let b = tree(&direct);
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), 300 + 2);
    for ((pa, da), (pb, db)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert!(da == db, "{pa} differs");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn outbound_messages_follow_the_schema() {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
    let validator = jsonschema::JSONSchema::compile(&schema).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let handle = bridge(SessionConfig {
        mode: Mode::Teleop,
        route: "EVAL1".into(),
        out: dir.path().to_path_buf(),
        ..Default::default()
    })
    .await;
    let mut ws = connect(handle.addr).await;
    for m in [
        r#"{"t":"toggle","what":"logging","on":true}"#,
        r#"{"t":"cmd","dir":"right"}"#,
        r#"{"t":"ctrl","al":0.5,"ar":-0.25}"#,
        r#"{"t":"toggle","what":"noise","on":true}"#,
        r#"{"t":"toggle","what":"policy","on":true}"#,
    ] {
        let v: serde_json::Value = serde_json::from_str(m).unwrap();
        assert!(validator.is_valid(&v), "{m}");
        ws.send(Message::Text(m.into())).await.unwrap();
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut count = 0;
    while count < 30 {
        let m = tokio::time::timeout(Duration::from_secs(30), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = m {
            let v: serde_json::Value = serde_json::from_str(&t).unwrap();
            if let Err(errors) = validator.validate(&v) {
                let msgs: Vec<String> = errors.map(|e| e.to_string()).collect();
                panic!("{t}: {msgs:?}");
            }
            seen.insert(v["t"].as_str().unwrap().to_string());
            count += 1;
        }
    }
    assert!(seen.contains("hello") && seen.contains("telemetry") && seen.contains("err"));
    for bad in [r#"{"t":"ctrl","al":2,"ar":0}"#, r#"{"t":"toggle","what":"turbo","on":true}"#, r#"{"t":"nope"}"#] {
        let v: serde_json::Value = serde_json::from_str(bad).unwrap();
        assert!(!validator.is_valid(&v), "{bad}");
    }
    handle.shutdown().await.unwrap();
}
