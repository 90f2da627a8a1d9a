#![allow(dead_code)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use teleop_core::config::{EnvConfig, FeedbackConfig};
use teleop_core::fixtures;
use teleop_core::leader::{ConsoleHandle, ConsoleLeader, LimbBinding};
use teleop_core::session::{assemble, build_session, SessionConfig};
use teleop_service::protocol::{MessageKind, WireMessage};
use teleop_service::{serve, Engine, ServerHandle, ServiceConfig};

pub type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub fn console_engine(follower_toml: &str) -> (Engine, ConsoleHandle) {
    let model = Arc::new(fixtures::follower_model(follower_toml));
    let cfg = fixtures::follower_config(follower_toml);
    let bindings = model
        .limb_names()
        .iter()
        .map(|n| LimbBinding::identity(n))
        .collect();
    let (leader, handle) = ConsoleLeader::new(bindings).unwrap();
    let env = EnvConfig {
        realtime: true,
        approach_min_seconds: 0.2,
        ..EnvConfig::default()
    };
    let session = assemble(
        Box::new(leader),
        &cfg,
        model,
        &env,
        &FeedbackConfig::default(),
        0.02,
        None,
    )
    .unwrap();
    (Engine::spawn(session, Some(handle.clone())), handle)
}

/// The UR5 puppeteer fixture session: no console.
pub fn puppeteer_engine() -> Engine {
    let d = fixtures::fixture_dir();
    let cfg = SessionConfig::new(
        d.join("ur5_leader.toml"),
        d.join("arm7_follower.toml"),
        d.join("sim_env.toml"),
    );
    let built = build_session(&cfg).unwrap();
    Engine::spawn(built.session, built.console)
}

pub async fn start_server(engine: &Engine) -> ServerHandle {
    let cfg = ServiceConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        ..ServiceConfig::default()
    };
    serve(engine.handle(), cfg).await.unwrap()
}

pub async fn connect(server: &ServerHandle) -> Client {
    let (ws, _) = connect_async(format!("ws://{}/ws", server.addr()))
        .await
        .unwrap();
    ws
}

pub async fn next_message(ws: &mut Client, timeout: Duration) -> Option<WireMessage> {
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.checked_duration_since(Instant::now())?;
        match tokio::time::timeout(left, ws.next()).await {
            Ok(Some(Ok(Message::Text(t)))) => {
                return Some(WireMessage::decode(t.as_str()).unwrap())
            }
            Ok(Some(Ok(_))) => continue,
            _ => return None,
        }
    }
}

/// Everything received for `d`.
pub async fn collect_for(ws: &mut Client, d: Duration) -> Vec<WireMessage> {
    let end = Instant::now() + d;
    let mut out = Vec::new();
    while let Some(m) = next_message(ws, end.saturating_duration_since(Instant::now())).await {
        out.push(m);
    }
    out
}

/// Reads until `pred` holds or `timeout` passes.
pub async fn wait_for(
    ws: &mut Client,
    timeout: Duration,
    mut pred: impl FnMut(&WireMessage) -> bool,
) -> Option<WireMessage> {
    let end = Instant::now() + timeout;
    while let Some(m) = next_message(ws, end.saturating_duration_since(Instant::now())).await {
        if pred(&m) {
            return Some(m);
        }
    }
    None
}

pub async fn send(ws: &mut Client, seq: u64, kind: MessageKind, payload: serde_json::Value) {
    let m = WireMessage { kind, seq, payload };
    ws.send(Message::Text(m.encode().into())).await.unwrap();
}
