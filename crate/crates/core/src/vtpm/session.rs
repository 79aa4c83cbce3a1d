use serde::{Deserialize, Serialize};

use crate::crypto::{hash_parts, Digest, Nonce, ZERO_DIGEST};
use crate::encoding::{enc_u32, CommandCode};

pub const MAX_SESSIONS: usize = 8;

pub(crate) const HMAC_SESSION_BASE: u32 = 0x0200_0000;
pub(crate) const POLICY_SESSION_BASE: u32 = 0x0300_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionKind {
    Policy,
    Hmac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionHandle(pub u32);

#[derive(Clone, Debug)]
pub struct Session {
    pub handle: SessionHandle,
    pub kind: SessionKind,
    pub policy_digest: Digest,
    pub audit_digest: Digest,
    pub cp_hash: Option<Digest>,
    pub command_locked: Option<CommandCode>,
    pub nonce_tpm: Nonce,
}

impl Session {
    pub(crate) fn new(handle: SessionHandle, kind: SessionKind, nonce_tpm: Nonce) -> Self {
        Session {
            handle,
            kind,
            policy_digest: ZERO_DIGEST,
            audit_digest: ZERO_DIGEST,
            cp_hash: None,
            command_locked: None,
            nonce_tpm,
        }
    }
}

/// The audit-chain update for one command.
///
/// `names` are the handle names in order (for a PCR that is its 4-byte
/// index), `params` the already-encoded command parameters.
pub fn witness(
    audit: &Digest,
    cc: CommandCode,
    names: &[&[u8]],
    params: &[u8],
    rc: u32,
    rparams: &[u8],
) -> Digest {
    let cc_bytes = cc.to_bytes();
    let mut parts: Vec<&[u8]> = Vec::with_capacity(names.len() + 2);
    parts.push(&cc_bytes);
    parts.extend_from_slice(names);
    parts.push(params);
    let cp_hash = hash_parts(&parts);
    let rp_hash = hash_parts(&[&enc_u32(rc), &cc_bytes, rparams]);
    hash_parts(&[&audit.0, &cp_hash.0, &rp_hash.0])
}
