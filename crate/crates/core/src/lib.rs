//! Oblivious remote attestation over a simulated TPM 2.0.
//!
//! The crate models an orchestrator, a set of virtual functions each with
//! its own software TPM, and a Dolev-Yao network between them. Scenarios
//! drive the protocols end to end and check invariants after every round.

pub mod agent;
pub mod bench;
pub mod crypto;
pub mod encoding;
pub mod messages;
pub mod netsim;
pub mod orchestrator;
pub mod vtpm;

#[cfg(test)]
mod testkit;
