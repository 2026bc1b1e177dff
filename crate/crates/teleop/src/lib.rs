//! Live teleoperation gateway.
//!
//! Streams one JSON frame per environment tick over a websocket and lets a
//! connected operator take over, steer and hand back control. The deployment
//! loop sees the operator as a [`LiveIntervenor`], so live trajectories go
//! through the same relabeling and buffer path as scripted ones.

pub mod protocol;
pub mod record;
pub mod server;
pub mod session;

pub use protocol::{decode_command, decode_frame, encode_command, encode_frame, Command, Frame, ProtocolError};
pub use record::Recorder;
pub use server::{Gateway, GatewayConfig, GatewayError};
pub use session::{LiveIntervenor, Session};
