//! Discrete-event simulation of a BLE mesh with multipath routing, adaptive
//! failure recovery and a flooding baseline.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod discovery;
pub mod engine;
pub mod flooding;
pub mod mac;
pub mod metrics;
pub mod recovery;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod topology;

pub use engine::SimTime;
pub use topology::NodeId;
