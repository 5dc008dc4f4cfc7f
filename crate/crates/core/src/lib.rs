//! Cycle-driven simulator for hub-based decentralized learning on a
//! self-healing overlay, with federated, multi-server, gossip and epidemic
//! baselines.

pub mod datasets;
pub mod engine;
pub mod error;
pub mod exec;
pub mod models;
pub mod overlay;
pub mod protocols;
pub mod rng;

pub use error::{Error, Result};
