//! HTTP facade for the tenet control plane: OAuth2 endpoints, the tenant
//! and vault REST API, the built-in mock IdP, and a uniform error envelope.

pub mod auth;
pub mod config;
pub mod error;
pub mod routes;
pub mod server;
pub mod wire;

pub use config::ServerConfig;
pub use error::ErrorEnvelope;
pub use server::{start, start_with_clock, AppState, Handle, StartError};
