//! Websocket service around a [`Session`]. A dedicated thread owns the
//! session and steps it; sockets talk to it only through channels.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc as std_mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot, watch};
use tower_http::services::ServeDir;

use crate::protocol::{encode_frame, parse_client, ClientMessage, ServerMessage};
use crate::session::{Session, SessionConfig, SessionError};

pub const PROTOCOL_VERSION: u32 = 1;
const TICK: Duration = Duration::from_millis(50);

/// Outbound traffic shared by every observer.
#[derive(Debug, Clone)]
pub enum Outbound {
    Text(Arc<str>),
    Binary(Arc<[u8]>),
}

enum Inbound {
    /// A message from the token holder and where to send a rejection.
    Client(ClientMessage, tokio::sync::mpsc::UnboundedSender<String>),
    Shutdown,
}

struct Shared {
    inbound: std_mpsc::Sender<Inbound>,
    outbound: broadcast::Sender<Outbound>,
    controller: Mutex<Option<u64>>,
    next_client: AtomicU64,
    clients: watch::Sender<usize>,
    mode: &'static str,
}

/// A running bridge.
pub struct BridgeHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    server: tokio::task::JoinHandle<()>,
    sim: Option<std::thread::JoinHandle<Result<(), SessionError>>>,
    inbound: std_mpsc::Sender<Inbound>,
    finished: watch::Receiver<bool>,
}

impl BridgeHandle {
    /// Resolves once the session has ended on its own.
    pub async fn finished(&mut self) {
        let _ = self.finished.wait_for(|f| *f).await;
    }

    /// Stops the sim loop and the server; open recordings are closed.
    pub async fn shutdown(mut self) -> Result<(), SessionError> {
        let _ = self.inbound.send(Inbound::Shutdown);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.server.await;
        let sim = self.sim.take().expect("joined once");
        tokio::task::spawn_blocking(move || sim.join().expect("sim thread panicked"))
            .await
            .expect("join task")
    }
}

pub fn health() -> serde_json::Value {
    serde_json::json!({
        "status": "ok",
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "protocol": PROTOCOL_VERSION,
    })
}

/// Binds, starts the sim thread and serves until shut down.
pub async fn start(cfg: SessionConfig) -> Result<BridgeHandle, SessionError> {
    let session = Session::new(cfg.clone())?;
    let listener = TcpListener::bind((cfg.host.as_str(), cfg.port)).await?;
    start_on(listener, session).await
}

pub async fn start_on(listener: TcpListener, session: Session) -> Result<BridgeHandle, SessionError> {
    let addr = listener.local_addr()?;
    let (in_tx, in_rx) = std_mpsc::channel();
    let (out_tx, _) = broadcast::channel(256);
    let (clients_tx, clients_rx) = watch::channel(0usize);
    let (done_tx, done_rx) = watch::channel(false);
    let ui_dir = session.config().ui_dir.clone();
    let shared = Arc::new(Shared {
        inbound: in_tx.clone(),
        outbound: out_tx.clone(),
        controller: Mutex::new(None),
        next_client: AtomicU64::new(0),
        clients: clients_tx,
        mode: session.mode().as_str(),
    });

    let sim = std::thread::Builder::new()
        .name("sim".into())
        .spawn(move || sim_loop(session, in_rx, out_tx, clients_rx, done_tx))?;

    let mut app = Router::new()
        .route("/ws", get(ws_handler))
        .route("/health", get(|| async { Json(health()) }))
        .with_state(shared);
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stop_rx.await;
            })
            .await;
    });
    Ok(BridgeHandle {
        addr,
        shutdown: Some(stop_tx),
        server,
        sim: Some(sim),
        inbound: in_tx,
        finished: done_rx,
    })
}

fn broadcast_tick(out: &broadcast::Sender<Outbound>, text: String, frame: Option<Vec<u8>>) {
    let _ = out.send(Outbound::Text(text.into()));
    if let Some(f) = frame {
        let _ = out.send(Outbound::Binary(f.into()));
    }
}

/// Applies everything queued since the last tick, then steps once. In
/// headless mode stepping starts when the first client connects and runs
/// unpaced; otherwise it runs at 20 Hz from startup.
fn sim_loop(
    mut session: Session,
    inbound: std_mpsc::Receiver<Inbound>,
    out: broadcast::Sender<Outbound>,
    clients: watch::Receiver<usize>,
    done: watch::Sender<bool>,
) -> Result<(), SessionError> {
    let headless = session.config().headless;
    let mut next = Instant::now();
    let result = 'run: loop {
        if headless && *clients.borrow() == 0 && !session.is_finished() {
            match inbound.recv_timeout(Duration::from_millis(5)) {
                Ok(Inbound::Shutdown) => break 'run Ok(()),
                Ok(Inbound::Client(m, reply)) => apply(&mut session, m, &reply),
                Err(std_mpsc::RecvTimeoutError::Timeout) => {}
                Err(std_mpsc::RecvTimeoutError::Disconnected) => break 'run Ok(()),
            }
            continue;
        }
        loop {
            match inbound.try_recv() {
                Ok(Inbound::Shutdown) | Err(std_mpsc::TryRecvError::Disconnected) => break 'run Ok(()),
                Ok(Inbound::Client(m, reply)) => apply(&mut session, m, &reply),
                Err(std_mpsc::TryRecvError::Empty) => break,
            }
        }
        if session.is_finished() {
            match inbound.recv_timeout(TICK) {
                Ok(Inbound::Shutdown) | Err(std_mpsc::RecvTimeoutError::Disconnected) => break 'run Ok(()),
                _ => continue,
            }
        }
        match session.tick() {
            Ok(Some(t)) => {
                let png = t.frame_png();
                let id = t.telemetry.frame_id;
                broadcast_tick(&out, ServerMessage::Telemetry(t.telemetry).to_json(), Some(encode_frame(id, &png)));
                if let Some(end) = t.end {
                    let _ = out.send(Outbound::Text(end.to_json().into()));
                    let _ = done.send(true);
                }
            }
            Ok(None) => {}
            Err(e) => {
                let _ = out.send(Outbound::Text(ServerMessage::err(e.to_string()).to_json().into()));
                let _ = done.send(true);
                break 'run Err(e);
            }
        }
        if !headless {
            next += TICK;
            let now = Instant::now();
            if next > now {
                std::thread::sleep(next - now);
            } else {
                next = now;
            }
        }
    };
    session.close()?;
    result
}

fn apply(session: &mut Session, m: ClientMessage, reply: &tokio::sync::mpsc::UnboundedSender<String>) {
    if let Err(e) = session.apply(m) {
        let _ = reply.send(ServerMessage::err(e).to_json());
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, shared))
}

async fn client(socket: WebSocket, shared: Arc<Shared>) {
    let id = shared.next_client.fetch_add(1, Ordering::SeqCst);
    let controller = {
        let mut c = shared.controller.lock().expect("token lock");
        if c.is_none() {
            *c = Some(id);
        }
        *c == Some(id)
    };
    let mut rx = shared.outbound.subscribe();
    let (mut sink, mut stream) = socket.split();
    let hello = ServerMessage::Hello {
        client: id,
        controller,
        version: env!("CARGO_PKG_VERSION").into(),
        mode: shared.mode.into(),
    };
    if sink.send(WsMessage::Text(hello.to_json())).await.is_err() {
        release(&shared, id);
        return;
    }
    shared.clients.send_modify(|n| *n += 1);

    let (reply_tx, mut reply_rx) = tokio::sync::mpsc::unbounded_channel::<String>();
    let writer = tokio::spawn(async move {
        loop {
            tokio::select! {
                r = reply_rx.recv() => match r {
                    Some(text) => if sink.send(WsMessage::Text(text)).await.is_err() { break },
                    None => break,
                },
                m = rx.recv() => match m {
                    Ok(Outbound::Text(t)) => if sink.send(WsMessage::Text(t.to_string())).await.is_err() { break },
                    Ok(Outbound::Binary(b)) => if sink.send(WsMessage::Binary(b.to_vec())).await.is_err() { break },
                    // a slow observer skips ahead to the newest traffic
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            WsMessage::Text(t) => t,
            WsMessage::Close(_) => break,
            WsMessage::Binary(_) => {
                let _ = reply_tx.send(ServerMessage::err("binary frames are server to client only").to_json());
                continue;
            }
            _ => continue,
        };
        match parse_client(&text) {
            Err(e) => {
                let _ = reply_tx.send(ServerMessage::err(format!("malformed message: {e}")).to_json());
            }
            Ok(m) => {
                let holds = {
                    let mut c = shared.controller.lock().expect("token lock");
                    if c.is_none() {
                        *c = Some(id);
                    }
                    *c == Some(id)
                };
                if holds {
                    let _ = shared.inbound.send(Inbound::Client(m, reply_tx.clone()));
                } else {
                    let _ = reply_tx.send(ServerMessage::err("another client holds the control token").to_json());
                }
            }
        }
    }
    drop(reply_tx);
    writer.abort();
    shared.clients.send_modify(|n| *n = n.saturating_sub(1));
    release(&shared, id);
}

fn release(shared: &Shared, id: u64) {
    let mut c = shared.controller.lock().expect("token lock");
    if *c == Some(id) {
        *c = None;
    }
}
