//! Network boundary of the teleoperation engine: streams session state over
//! WebSocket and feeds console input back into the session.

pub mod engine;
pub mod protocol;
pub mod server;

pub use engine::{Engine, EngineHandle};
pub use protocol::{MessageKind, WireMessage, DEFAULT_PORT, SCHEMA_VERSION};
pub use server::{serve, ServerHandle, ServiceConfig, ServiceError};
