//! Multi-shard private transactions with a privacy-preserving atomic commit
//! protocol, a two-phase-commit baseline and a deterministic simulator.

pub mod audit;
pub mod codec;
pub mod crypto;
pub mod graph;
pub mod harness;
pub mod ledger;
pub mod message;
pub mod model;
pub mod runner;
pub mod scenario;
pub mod shard;
pub mod simnet;
pub mod stakeholder;
