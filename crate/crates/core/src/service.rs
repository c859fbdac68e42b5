use std::fmt;
use std::sync::Arc;

use aes_gcm::{Aes256Gcm, KeyInit};

use crate::clock::{SharedClock, SystemClock, Timestamp};
use crate::mockidp::{MockIdp, Persona};
use crate::store::Store;
use crate::token::TokenCodec;

/// A client id and secret as presented by a caller (HTTP basic auth, CLI flags).
#[derive(Clone, PartialEq, Eq)]
pub struct ClientCredentials {
    pub client_id: String,
    pub client_secret: String,
}

impl ClientCredentials {
    pub fn new(client_id: impl Into<String>, client_secret: impl Into<String>) -> Self {
        ClientCredentials {
            client_id: client_id.into(),
            client_secret: client_secret.into(),
        }
    }
}

impl fmt::Debug for ClientCredentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientCredentials")
            .field("client_id", &self.client_id)
            .field("client_secret", &"<redacted>")
            .finish()
    }
}

pub struct TenetConfig {
    pub signing_key: [u8; 32],
    pub master_key: [u8; 32],
    pub operator_key: String,
    /// Where external IdPs send users back to (the broker callback).
    pub callback_url: String,
    pub personas: Vec<Persona>,
}

impl fmt::Debug for TenetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TenetConfig")
            .field("callback_url", &self.callback_url)
            .field("personas", &self.personas.len())
            .finish_non_exhaustive()
    }
}

/// The control plane. Every operation is a method on this type; the
/// per-module `impl Tenet` blocks live next to their domain types.
pub struct Tenet {
    pub(crate) store: Store,
    pub(crate) clock: SharedClock,
    pub(crate) codec: TokenCodec,
    pub(crate) cipher: Aes256Gcm,
    pub(crate) operator_key: String,
    pub(crate) callback_url: String,
    pub(crate) mock_idp: MockIdp,
}

impl Tenet {
    pub fn new(store: Store, config: TenetConfig) -> Arc<Tenet> {
        Tenet::with_clock(store, config, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(store: Store, config: TenetConfig, clock: SharedClock) -> Arc<Tenet> {
        Arc::new(Tenet {
            store,
            codec: TokenCodec::new(&config.signing_key),
            cipher: Aes256Gcm::new(&config.master_key.into()),
            operator_key: config.operator_key,
            callback_url: config.callback_url,
            mock_idp: MockIdp::new(config.personas, clock.clone()),
            clock,
        })
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn mock_idp(&self) -> &MockIdp {
        &self.mock_idp
    }

    pub fn codec(&self) -> &TokenCodec {
        &self.codec
    }
}
