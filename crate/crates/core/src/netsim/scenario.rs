//! Scenario files: parties, steps, adversary script and assertions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adversary::{Match, Rule};
use crate::crypto::Digest;
use crate::messages::Message;
use crate::orchestrator::Slot;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VfSpec {
    pub id: String,
    #[serde(default = "default_chain")]
    pub chain: String,
    /// Measurement key as hex; derived from the seed when absent.
    #[serde(default)]
    pub hk: Option<Digest>,
    /// Initial configuration store, path to hex content.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
}

fn default_chain() -> String {
    "chain".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assertion {
    /// Mock and real PCR values agree for every VF with nothing in flight.
    Sync,
    /// Each agent's own record of its PCRs matches its TPM.
    LocalSync,
    /// No accepted attestation of a prover outside its authorized state.
    Soundness,
    /// At most one policy held by a VF unlocks its AK.
    Freshness,
    /// No secret byte string appears in the trace.
    NoSecrets,
    /// Every step ended with its expected outcome.
    Outcomes,
}

impl Assertion {
    pub fn name(self) -> &'static str {
        match self {
            Assertion::Sync => "sync",
            Assertion::LocalSync => "local_sync",
            Assertion::Soundness => "soundness",
            Assertion::Freshness => "freshness",
            Assertion::NoSecrets => "no_secrets",
            Assertion::Outcomes => "outcomes",
        }
    }
}

fn default_assertions() -> BTreeSet<Assertion> {
    [Assertion::Soundness, Assertion::NoSecrets, Assertion::Outcomes].into()
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    #[default]
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Op {
    Enroll { vf: String },
    Attach {
        vf: String,
        slot: Slot,
        #[serde(default)]
        iv: Option<Digest>,
    },
    /// Orchestrator-side deployment: the VF and the reference copy change
    /// together.
    Deploy { vf: String, path: String, content: String },
    Update { vf: String, slot: Slot, path: String },
    Detach { vf: String, slot: Slot },
    Attest { verifier: String, prover: String },
    Revoke { vf: String },
    /// Local attacker rewrites a file on the VF only.
    TamperFile { vf: String, path: String, content: String },
    /// Local attacker extends a PCR directly through the TPM.
    RogueExtend { vf: String, slot: Slot, data: String },
    Restart { vf: String },
    /// Replaces the adversary script from this step on.
    Adversary { rules: Vec<Rule> },
    /// Re-sends an envelope the adversary observed earlier.
    Replay {
        #[serde(default)]
        when: Match,
        /// Index among matches; negative counts from the most recent.
        #[serde(default = "last")]
        nth: i64,
        #[serde(default)]
        to: Option<String>,
    },
    Inject { from: String, to: String, payload: Message },
    Tick { ticks: u64 },
    SetEnforce { on: bool },
    /// State probe; fails the step with `check-failed` on mismatch.
    Check {
        vf: String,
        #[serde(default)]
        nv_present: Vec<u32>,
        #[serde(default)]
        nv_absent: Vec<u32>,
        /// Number of held policies that unlock the AK right now.
        #[serde(default)]
        unlocking: Option<usize>,
        #[serde(default)]
        knows_peer: Vec<String>,
        #[serde(default)]
        forgot_peer: Vec<String>,
        /// Only these payload fields appear in any observed envelope of
        /// the given message kind.
        #[serde(default)]
        payload_fields: Option<(String, Vec<String>)>,
    },
}

fn last() -> i64 {
    -1
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Enroll { .. } => "enroll",
            Op::Attach { .. } => "attach",
            Op::Deploy { .. } => "deploy",
            Op::Update { .. } => "update",
            Op::Detach { .. } => "detach",
            Op::Attest { .. } => "attest",
            Op::Revoke { .. } => "revoke",
            Op::TamperFile { .. } => "tamper_file",
            Op::RogueExtend { .. } => "rogue_extend",
            Op::Restart { .. } => "restart",
            Op::Adversary { .. } => "adversary",
            Op::Replay { .. } => "replay",
            Op::Inject { .. } => "inject",
            Op::Tick { .. } => "tick",
            Op::SetEnforce { .. } => "set_enforce",
            Op::Check { .. } => "check",
        }
    }

    fn parties(&self) -> Vec<&str> {
        match self {
            Op::Enroll { vf }
            | Op::Attach { vf, .. }
            | Op::Deploy { vf, .. }
            | Op::Update { vf, .. }
            | Op::Detach { vf, .. }
            | Op::Revoke { vf }
            | Op::TamperFile { vf, .. }
            | Op::RogueExtend { vf, .. }
            | Op::Restart { vf }
            | Op::Check { vf, .. } => vec![vf],
            Op::Attest { verifier, prover } => vec![verifier, prover],
            Op::Inject { to, .. } => vec![to],
            Op::Replay { to: Some(to), .. } => vec![to],
            _ => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(flatten)]
    pub op: Op,
    #[serde(default)]
    pub label: Option<String>,
    /// Expected outcome: `ok`, `incomplete` or an error code.
    #[serde(default)]
    pub expect: Option<String>,
    /// Error codes that must be reported somewhere during the step.
    #[serde(default)]
    pub expect_errors: Vec<String>,
}

impl Step {
    pub fn label(&self, index: usize) -> String {
        self.label.clone().unwrap_or_else(|| format!("{}#{index}", self.op.name()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub enforce_supersession: bool,
    pub vfs: Vec<VfSpec>,
    #[serde(default)]
    pub adversary: Vec<Rule>,
    pub steps: Vec<Step>,
    #[serde(default = "default_assertions")]
    pub assertions: BTreeSet<Assertion>,
    #[serde(default)]
    pub expect: Expectation,
    /// With `expect: fail`, the assertion that must be the one to fail.
    #[serde(default)]
    pub expect_assertion: Option<Assertion>,
    /// Marks attacks counted in the Dolev-Yao sweep.
    #[serde(default)]
    pub adversarial: bool,
}

fn yes() -> bool {
    true
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut ids = BTreeSet::new();
        for vf in &self.vfs {
            if vf.id == crate::agent::ORCHESTRATOR || vf.id.is_empty() {
                return Err(ScenarioError::Invalid(format!("reserved party id {:?}", vf.id)));
            }
            if !ids.insert(vf.id.as_str()) {
                return Err(ScenarioError::Invalid(format!("duplicate party id {}", vf.id)));
            }
            for content in vf.files.values() {
                hex::decode(content)
                    .map_err(|e| ScenarioError::Invalid(format!("{}: file content: {e}", vf.id)))?;
            }
        }
        for (i, step) in self.steps.iter().enumerate() {
            for p in step.op.parties() {
                if !ids.contains(p) && p != crate::agent::ORCHESTRATOR {
                    return Err(ScenarioError::Invalid(format!("step {i} names unknown party {p}")));
                }
            }
        }
        if self.expect_assertion.is_some() && self.expect != Expectation::Fail {
            return Err(ScenarioError::Invalid("expect_assertion needs expect: fail".into()));
        }
        Ok(())
    }
}
