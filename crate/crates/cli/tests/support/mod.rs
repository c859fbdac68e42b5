//! A live service on an ephemeral port, driven from blocking test code.
#![allow(dead_code)]

use tenet_api::{Handle, ServerConfig};
use tenet_cli::harness::Env;

pub const OPERATOR_KEY: &str = "cli-test-operator";

pub struct Server {
    rt: tokio::runtime::Runtime,
    handle: Option<Handle>,
    pub base: String,
}

impl Server {
    pub fn start() -> Server {
        Server::start_with(ServerConfig::ephemeral(OPERATOR_KEY))
    }

    pub fn start_with(config: ServerConfig) -> Server {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        let handle = rt.block_on(tenet_api::start(config)).unwrap();
        let base = handle.base_url();
        Server { rt, handle: Some(handle), base }
    }

    pub fn env(&self) -> Env {
        Env::new(&self.base, OPERATOR_KEY)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            let _ = self.rt.block_on(h.shutdown());
        }
    }
}
