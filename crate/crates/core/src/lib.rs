//! Core of the tenet control plane.
//!
//! Everything hangs off [`Tenet`]: tenant lifecycle, OAuth token issuance,
//! federated login brokering, users and groups, service accounts, the
//! credential vault and the agent retrieval schemes. State lives in a
//! transactional [`store::Store`] that can be purely in memory or backed by
//! a commit log and snapshots on disk.

pub mod agent;
pub mod clock;
pub mod error;
pub mod id;
pub mod idp;
pub mod mockidp;
pub mod oauth;
pub mod secret;
mod service;
pub mod service_account;
pub mod store;
pub mod tenant;
pub mod token;
pub mod users;
pub mod vault;

#[cfg(test)]
mod testing;

pub use error::{Error, ErrorCode, Result};
pub use service::{ClientCredentials, Tenet, TenetConfig};
