//! Test fixtures and independent oracles shared by the integration tests
//! and the acceptance suite.
#![allow(dead_code)]

pub mod acl;
pub mod atrest;
pub mod crash;
pub mod dedup;
pub mod fixture;
pub mod lifecycle;
pub mod schemes;
pub mod tokens;
