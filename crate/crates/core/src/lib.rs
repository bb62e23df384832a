//! Deterministic round-based simulator for maintaining a bounded-degree
//! expander overlay of honest nodes under stochastic churn and Byzantine
//! adversaries.
//!
//! The crate is organized around the moving parts of one simulated run:
//!
//! - [`churn`]: M/M/∞ join/leave schedules and their statistical validators.
//! - [`overlay`]: the dynamic graph with in/out connection ledgers and the
//!   one-round synchronous mailbox.
//! - [`entry`]: the entry manager that hands newcomers random prior joiners.
//! - [`walk`]: capped random-walk token circulation with blacklisting and
//!   verified-token return.
//! - [`construct`]: the join procedure and per-phase drop/replenish/accept
//!   policy.
//! - [`adversary`]: corruption-on-join under a budget and Byzantine behaviors.
//! - [`metrics`]: conductance (exact and spectral), core extraction and
//!   per-phase reports.
//! - [`engine`]: the round loop, run configuration, sweeps and log audits.

pub mod adversary;
pub mod churn;
pub mod construct;
pub mod engine;
pub mod entry;
pub mod error;
pub mod events;
pub mod metrics;
pub mod overlay;
pub mod params;
pub mod rng;
pub mod walk;

mod id;

pub use error::{Error, Result};
pub use id::NodeId;
pub use params::ProtocolParams;
