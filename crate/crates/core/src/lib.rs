//! Blockchain-backed direct load control: protocol nodes, ledger and a
//! deterministic network simulator.

pub mod codec;
pub mod crypto;
pub mod disco;
pub mod identity;
pub mod ledger;
pub mod merkle;
pub mod netsim;
pub mod participant;
pub mod policy;
pub mod scenario;
pub mod transactions;
