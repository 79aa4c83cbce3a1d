//! Wire messages between the orchestrator and VFs, and between VFs.
//!
//! Every message is plain data. Authenticity comes from the signatures
//! and TPM structures inside, never from the transport.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::crypto::{hex_bytes, Digest, Name, Nonce, Signature};
use crate::vtpm::{NvTemplate, ObjectPublic, ObjectTemplate};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advertisement {
    pub vf_id: String,
    pub chain: String,
    pub ak_public: ObjectPublic,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRequest {
    /// Path of the configuration file the VF must measure.
    pub fqpn: String,
    pub idx: u32,
    pub is_nv: bool,
    pub policy: Digest,
    /// H(policy), the digest the signature covers.
    pub policy_hash: Digest,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NvAttachSpec {
    pub template: NvTemplate,
    pub policy: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletionGrant {
    pub idx: u32,
    pub cp_hash: Digest,
    pub a_hash_signature: Signature,
    pub policy: Digest,
    pub policy_hash: Digest,
    pub policy_signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    AkCreationRequest {
        template: ObjectTemplate,
        policy: Digest,
    },
    AkCertificate {
        ak_public: ObjectPublic,
        #[serde(with = "hex_bytes")]
        cert_info: Vec<u8>,
        signature: Signature,
    },
    Advertisement(Advertisement),
    Revocation {
        vf_id: String,
        ak_name: Name,
        signature: Signature,
    },
    UpdateRequest(UpdateRequest),
    AuditReport {
        idx: u32,
        is_nv: bool,
        #[serde(with = "hex_bytes")]
        audit_info: Vec<u8>,
        signature: Signature,
    },
    AttachRequest {
        idx: u32,
        is_nv: bool,
        /// Extended into the fresh PCR so it starts at H(0 || iv).
        iv: Digest,
        nv: Option<NvAttachSpec>,
    },
    NvCertificate {
        idx: u32,
        #[serde(with = "hex_bytes")]
        cert_info: Vec<u8>,
        signature: Signature,
    },
    DetachRequest {
        idx: u32,
        is_nv: bool,
    },
    DetachSessionNonce {
        idx: u32,
        nonce: Nonce,
    },
    DeletionGrant(DeletionGrant),
    Challenge {
        nonce: Nonce,
    },
    ChallengeResponse {
        signature: Signature,
    },
}

/// Field a tamper flips when the rule does not name one.
fn default_tamper_field(kind: &str) -> &'static str {
    match kind {
        "ak_creation_request" => "policy",
        "ak_certificate" | "nv_certificate" => "cert_info",
        "audit_report" => "audit_info",
        "update_request" => "policy",
        "attach_request" | "detach_request" | "detach_session_nonce" => "idx",
        "deletion_grant" => "cp_hash",
        "challenge" => "nonce",
        _ => "signature",
    }
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::AkCreationRequest { .. } => "ak_creation_request",
            Message::AkCertificate { .. } => "ak_certificate",
            Message::Advertisement(_) => "advertisement",
            Message::Revocation { .. } => "revocation",
            Message::UpdateRequest(_) => "update_request",
            Message::AuditReport { .. } => "audit_report",
            Message::AttachRequest { .. } => "attach_request",
            Message::NvCertificate { .. } => "nv_certificate",
            Message::DetachRequest { .. } => "detach_request",
            Message::DetachSessionNonce { .. } => "detach_session_nonce",
            Message::DeletionGrant(_) => "deletion_grant",
            Message::Challenge { .. } => "challenge",
            Message::ChallengeResponse { .. } => "challenge_response",
        }
    }

    /// Flips one bit of a field. Hex fields get their last byte's low bit
    /// flipped, integers are incremented, booleans negated. Returns `None`
    /// if the field does not exist or cannot be altered.
    pub fn tampered(&self, field: Option<&str>) -> Option<Message> {
        self.with_field(field, None)
    }

    /// Sets `field` to `value`, or flips it as [`Message::tampered`] does
    /// when no value is given. The result must still parse.
    pub fn with_field(&self, field: Option<&str>, value: Option<&Value>) -> Option<Message> {
        let field = field.unwrap_or_else(|| default_tamper_field(self.kind()));
        let mut v = serde_json::to_value(self).ok()?;
        let slot = lookup_mut(&mut v, field)?;
        if let Some(value) = value {
            *slot = value.clone();
            return serde_json::from_value(v).ok();
        }
        match slot {
            Value::String(s) if s.len() >= 2 && s.len() % 2 == 0 => {
                let mut bytes = hex::decode(&*s).ok()?;
                *bytes.last_mut()? ^= 0x01;
                *s = hex::encode(bytes);
            }
            Value::Number(n) => *slot = Value::from(n.as_u64()?.wrapping_add(1)),
            Value::Bool(b) => *b = !*b,
            _ => return None,
        }
        serde_json::from_value(v).ok()
    }
}

/// Dotted path lookup, e.g. `ak_public.auth_policy`.
fn lookup_mut<'a>(v: &'a mut Value, path: &str) -> Option<&'a mut Value> {
    path.split('.').try_fold(v, |cur, key| cur.get_mut(key))
}
