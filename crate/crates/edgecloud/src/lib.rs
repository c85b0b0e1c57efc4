//! Edge/cloud split of the fall detection pipeline over TCP.
//!
//! [`wire`] is the framing protocol, [`service`] the cloud side that turns
//! windows into verdicts, and [`edge`] the device side: a blocking client
//! and a simulator that replays recordings through the RMS gate.

pub mod edge;
pub mod service;
pub mod wire;

pub use edge::{edge_sim, Client, ClientError, EdgeConfig, EdgeError, SessionLog, WindowLog};
pub use service::{serve, ServiceConfig, ServiceError, ServiceHandle, ServiceStats};
