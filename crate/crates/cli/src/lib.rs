//! The `deskbot` command line and the websocket bridge that exposes the
//! simulator, the emulated board and the policy runner to clients.

pub mod commands;
pub mod protocol;
pub mod server;
pub mod session;

pub use commands::run;
pub use protocol::{ClientMessage, ServerMessage, Telemetry, Toggle};
pub use session::{Mode, Session, SessionConfig, SessionError};
