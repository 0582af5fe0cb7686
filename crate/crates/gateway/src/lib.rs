//! WebSocket gateway for full-duplex voice sessions, plus the `duplex`
//! command-line tools for simulation and evaluation.

pub mod cli;
pub mod config;
pub mod protocol;
pub mod server;
