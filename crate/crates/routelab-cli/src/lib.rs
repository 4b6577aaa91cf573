//! Library surface of the CLI crate: config parsing and the gateway,
//! shared by the binary and the integration tests.

pub mod config;
pub mod gateway;
