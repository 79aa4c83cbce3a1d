//! Discrete-event network between the orchestrator and the VFs, with a
//! scripted adversary on every link.

pub mod adversary;
pub mod scenario;
pub mod trace;
pub mod world;

use serde::{Deserialize, Serialize};

use crate::messages::Message;

pub use adversary::{Action, Adversary, Match, Rule};
pub use scenario::{Assertion, Expectation, Op, Scenario, ScenarioError, Step};
pub use trace::{Trace, TraceError};
pub use world::{run_scenario, Failure, RunReport, StepReport, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Protocol {
    Enroll,
    Update,
    Ora,
    Attach,
    Detach,
    Advertise,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::Enroll,
        Protocol::Update,
        Protocol::Ora,
        Protocol::Attach,
        Protocol::Detach,
        Protocol::Advertise,
    ];

    pub fn of(msg: &Message) -> Protocol {
        match msg {
            Message::AkCreationRequest { .. } | Message::AkCertificate { .. } => Protocol::Enroll,
            Message::Advertisement(_) | Message::Revocation { .. } => Protocol::Advertise,
            Message::UpdateRequest(_) | Message::AuditReport { .. } => Protocol::Update,
            Message::Challenge { .. } | Message::ChallengeResponse { .. } => Protocol::Ora,
            Message::AttachRequest { .. } | Message::NvCertificate { .. } => Protocol::Attach,
            Message::DetachRequest { .. }
            | Message::DetachSessionNonce { .. }
            | Message::DeletionGrant(_) => Protocol::Detach,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Enroll => "ENROLL",
            Protocol::Update => "UPDATE",
            Protocol::Ora => "ORA",
            Protocol::Attach => "ATTACH",
            Protocol::Detach => "DETACH",
            Protocol::Advertise => "ADVERTISE",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown protocol {s}"))
    }
}

/// One message in flight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub from: String,
    pub to: String,
    pub protocol: Protocol,
    /// Label of the scenario step that caused the send.
    pub step: String,
    pub payload: Message,
}
