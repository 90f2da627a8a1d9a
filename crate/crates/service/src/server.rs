//! WebSocket endpoint `/ws`.
//!
//! Each connection gets `model_info` first, then `state_update` at the state
//! rate, `feedback_update` when new torques exist (at most 60 Hz) and
//! `session_event` for every notice the session emits after the client
//! connected. Handlers only sample mailboxes, so a slow client misses
//! intermediate states instead of queueing them.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio::time::{interval, MissedTickBehavior};
use tower_http::services::ServeDir;

use crate::engine::EngineHandle;
use crate::protocol::{
    ErrorPayload, EventName, FeedbackUpdate, LeaderInput, MessageKind, SessionEventPayload,
    StateUpdate, WireMessage, DEFAULT_PORT,
};
use teleop_core::leader::ConsoleInput;

pub const DEFAULT_STATE_RATE_HZ: f64 = 30.0;
pub const MAX_FEEDBACK_RATE_HZ: f64 = 60.0;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("bad service config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub state_rate_hz: f64,
    /// Rate of the feedback loop; updates go out at no more than 60 Hz.
    pub feedback_rate_hz: f64,
    /// Console bundle served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            state_rate_hz: DEFAULT_STATE_RATE_HZ,
            feedback_rate_hz: MAX_FEEDBACK_RATE_HZ,
            static_dir: None,
        }
    }
}

impl ServiceConfig {
    fn validate(&self) -> Result<(), ServiceError> {
        for (name, v) in [
            ("state_rate_hz", self.state_rate_hz),
            ("feedback_rate_hz", self.feedback_rate_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ServiceError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn feedback_period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.feedback_rate_hz.min(MAX_FEEDBACK_RATE_HZ))
    }
}

#[derive(Clone)]
struct AppState {
    engine: EngineHandle,
    cfg: Arc<ServiceConfig>,
}

pub fn router(engine: EngineHandle, cfg: ServiceConfig) -> Router {
    let static_dir = cfg.static_dir.clone();
    let app = Router::new()
        .route("/ws", get(upgrade))
        .with_state(AppState {
            engine,
            cfg: Arc::new(cfg),
        });
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// A running server. Dropping it stops accepting connections.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    /// The bound address (useful with port 0).
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

pub async fn serve(engine: EngineHandle, cfg: ServiceConfig) -> Result<ServerHandle, ServiceError> {
    cfg.validate()?;
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: cfg.bind,
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| ServiceError::Bind {
        addr: cfg.bind,
        source,
    })?;
    let app = router(engine, cfg);
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            log::error!("server stopped: {e}");
        }
    });
    log::info!("serving /ws on {addr}");
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(app): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, app))
}

/// Outgoing half of a connection with its own sequence counter.
struct Outbox<S> {
    sink: S,
    seq: u64,
}

impl<S> Outbox<S>
where
    S: futures_util::Sink<Message> + Unpin,
{
    async fn send<T: serde::Serialize>(&mut self, kind: MessageKind, payload: &T) -> bool {
        self.seq += 1;
        let text = WireMessage::new(kind, self.seq, payload).encode();
        self.sink.send(Message::Text(text.into())).await.is_ok()
    }

    async fn error(&mut self, message: String, in_reply_to: Option<u64>) -> bool {
        self.send(
            MessageKind::Error,
            &ErrorPayload {
                message,
                in_reply_to,
            },
        )
        .await
    }
}

async fn connection(socket: WebSocket, app: AppState) {
    let (sink, mut stream) = socket.split();
    let mut out = Outbox { sink, seq: 0 };
    let engine = &app.engine;
    if !out
        .send(MessageKind::ModelInfo, engine.model_info.as_ref())
        .await
    {
        return;
    }
    let mut state_tick = interval(Duration::from_secs_f64(1.0 / app.cfg.state_rate_hz));
    state_tick.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let mut feedback_tick = interval(app.cfg.feedback_period());
    feedback_tick.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let mut notices_seen = engine.events.last_seq();
    let mut feedback_seen = engine.feedback.last_seq();
    let mut last_in: Option<u64> = None;

    loop {
        let ok = tokio::select! {
            _ = state_tick.tick() => {
                let mut ok = true;
                if let Some(s) = engine.snapshots.latest_value() {
                    ok = out.send(MessageKind::StateUpdate, &StateUpdate::from_snapshot(&s, &engine.model)).await;
                }
                for n in engine.events.since(notices_seen) {
                    notices_seen = n.seq;
                    ok = ok && out.send(MessageKind::SessionEvent, &SessionEventPayload::from(&n)).await;
                }
                ok
            }
            _ = feedback_tick.tick() => {
                match engine.feedback.newer_than(feedback_seen) {
                    Some(f) => {
                        feedback_seen = f.seq;
                        out.send(MessageKind::FeedbackUpdate, &FeedbackUpdate::from(&f.value)).await
                    }
                    None => true,
                }
            }
            msg = stream.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let reply = handle_client_text(text.as_str(), engine, &mut last_in);
                    match reply {
                        Some((message, seq)) => out.error(message, seq).await,
                        None => true,
                    }
                }
                Some(Ok(Message::Binary(_))) => out.error("binary frames are not supported; send JSON text".into(), None).await,
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => false,
                Some(Ok(_)) => true,
            },
        };
        if !ok {
            break;
        }
    }
}

/// Applies one client message. Returns an error to send back, if any.
pub fn handle_client_text(
    text: &str,
    engine: &EngineHandle,
    last_in: &mut Option<u64>,
) -> Option<(String, Option<u64>)> {
    let msg = match WireMessage::decode(text) {
        Ok(m) => m,
        Err(e) => return Some((e.to_string(), None)),
    };
    let seq = Some(msg.seq);
    if last_in.is_some_and(|last| msg.seq <= last) {
        return Some((
            format!(
                "seq {} is not above the previous {}",
                msg.seq,
                last_in.unwrap_or(0)
            ),
            seq,
        ));
    }
    *last_in = Some(msg.seq);
    match msg.kind {
        MessageKind::LeaderInput => {
            let Some(console) = &engine.console else {
                return Some((
                    "leader_input needs a console leader; this session has none".into(),
                    seq,
                ));
            };
            let input: LeaderInput = match msg.payload_as() {
                Ok(i) => i,
                Err(e) => return Some((e.to_string(), seq)),
            };
            console
                .submit(&ConsoleInput::from(&input))
                .err()
                .map(|e| (e.to_string(), seq))
        }
        MessageKind::SessionEvent => {
            let ev: SessionEventPayload = match msg.payload_as() {
                Ok(e) => e,
                Err(e) => return Some((e.to_string(), seq)),
            };
            match (ev.event, &engine.console) {
                (EventName::Cancel, _) => {
                    engine.cancel.store(true, Ordering::SeqCst);
                    None
                }
                (EventName::Start, Some(c)) => {
                    c.request_start();
                    None
                }
                (EventName::End, Some(c)) => {
                    c.request_end();
                    None
                }
                (EventName::Start | EventName::End, None) => Some((
                    "start and end come from the leader device in this session".into(),
                    seq,
                )),
                (other, _) => Some((format!("clients cannot send '{other:?}' events"), seq)),
            }
        }
        other => Some((format!("clients may not send {}", other.as_str()), seq)),
    }
}
