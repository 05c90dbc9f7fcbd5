//! HTTP gateway and command line client for the OaaS platform.

pub mod cli;
pub mod config;
pub mod server;

pub use config::GatewayConfig;
pub use server::{router, serve, ApiError};
