//! Digests the orchestrator predicts without a TPM: policy compositions,
//! deletion authorizations and expected audit digests.

use crate::crypto::{hash, hash_parts, Digest, Name, Nonce, ZERO_DIGEST};
use crate::encoding::{enc_pcr_selection, enc_u16, enc_u32, CommandCode, Writer, ALG_SHA256, RC_SUCCESS, RH_PLATFORM};

/// Flexible policy bound to the authorizer's key name. Both the AK and,
/// as a prefix, every NV PCR are locked to it.
pub fn ak_policy(authorizer: &Name) -> Digest {
    let inner = hash_parts(&[
        &ZERO_DIGEST.0,
        &CommandCode::POLICY_AUTHORIZE.to_bytes(),
        &authorizer.0,
    ]);
    hash(&inner.0)
}

/// Policy an NV PCR is created with: the flexible policy followed by a
/// command-code lock on `NV_UndefineSpaceSpecial`.
pub fn nv_deletion_policy(authorizer: &Name) -> Digest {
    hash_parts(&[
        &ak_policy(authorizer).0,
        &CommandCode::POLICY_COMMAND_CODE.to_bytes(),
        &CommandCode::NV_UNDEFINE_SPACE_SPECIAL.to_bytes(),
    ])
}

/// The policy a deletion grant authorizes: one `PolicySigned` by the
/// authorizer, with an empty policyRef.
pub fn deletion_signed_policy(authorizer: &Name) -> Digest {
    let inner = hash_parts(&[
        &ZERO_DIGEST.0,
        &CommandCode::POLICY_SIGNED.to_bytes(),
        &authorizer.0,
    ]);
    hash(&inner.0)
}

pub fn deletion_cp_hash(nv_name: &Name) -> Digest {
    hash_parts(&[
        &CommandCode::NV_UNDEFINE_SPACE_SPECIAL.to_bytes(),
        &nv_name.0,
        &enc_u32(RH_PLATFORM),
    ])
}

/// What a `PolicySigned` signature covers, with expiration 0.
pub fn policy_signed_a_hash(nonce: &Nonce, cp_hash: &Digest) -> Digest {
    hash_parts(&[&nonce.0, &enc_u32(0), &cp_hash.0])
}

/// A mock NV PCR in policy order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NvTerm {
    pub name: Name,
    pub value: Digest,
}

/// Policy composition over mock state: one `PolicyNV` per NV PCR in the
/// order given, then a single `PolicyPCR` over all PCRs if there are any.
/// `pcrs` must be sorted by index.
pub fn compose_policy_digest(nv: &[NvTerm], pcrs: &[(u32, Digest)]) -> Digest {
    let mut h_pol = ZERO_DIGEST;
    for term in nv {
        let args = hash_parts(&[&term.value.0, &[0x00, 0x00], &[0x00, 0x00]]);
        h_pol = hash_parts(&[
            &h_pol.0,
            &CommandCode::POLICY_NV.to_bytes(),
            &args.0,
            &term.name.0,
        ]);
    }
    if !pcrs.is_empty() {
        debug_assert!(pcrs.windows(2).all(|w| w[0].0 < w[1].0));
        let mut h_pcr = Vec::with_capacity(32 * pcrs.len());
        let mut indices = Vec::with_capacity(pcrs.len());
        for (idx, value) in pcrs {
            h_pcr.extend_from_slice(&value.0);
            indices.push(*idx);
        }
        h_pol = hash_parts(&[
            &h_pol.0,
            &CommandCode::POLICY_PCR.to_bytes(),
            &enc_pcr_selection(&indices),
            &hash(&h_pcr).0,
        ]);
    }
    h_pol
}

pub fn pcr_extend_cp_hash(idx: u32, update: &Digest) -> Digest {
    hash_parts(&[
        &CommandCode::PCR_EXTEND.to_bytes(),
        &enc_u32(idx),
        &enc_u32(idx),
        &enc_u16(ALG_SHA256),
        &update.0,
    ])
}

pub fn nv_extend_cp_hash(nv_name: &Name, update: &Digest) -> Digest {
    hash_parts(&[
        &CommandCode::NV_EXTEND.to_bytes(),
        &nv_name.0,
        &nv_name.0,
        &enc_u16(32),
        &update.0,
    ])
}

pub fn success_rp_hash(cc: CommandCode) -> Digest {
    hash_parts(&[&enc_u32(RC_SUCCESS), &cc.to_bytes()])
}

/// Audit digest of a fresh session after exactly one audited command.
pub fn single_command_audit(cp_hash: &Digest, rp_hash: &Digest) -> Digest {
    hash_parts(&[&ZERO_DIGEST.0, &cp_hash.0, &rp_hash.0])
}

/// Bytes the orchestrator signs to advertise an enrolled AK.
pub fn advertisement_message(vf_id: &str, ak_public: &[u8]) -> Vec<u8> {
    Writer::new()
        .raw(b"ADVERTISE")
        .sized(vf_id.as_bytes())
        .sized(ak_public)
        .finish()
}

pub fn revocation_message(vf_id: &str, ak_name: &Name) -> Vec<u8> {
    Writer::new()
        .raw(b"REVOKE")
        .sized(vf_id.as_bytes())
        .sized(&ak_name.0)
        .finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::compute_name;

    fn cat(parts: &[&[u8]]) -> Vec<u8> {
        parts.concat()
    }

    #[test]
    fn empty_state_composes_to_zero() {
        assert_eq!(compose_policy_digest(&[], &[]), ZERO_DIGEST);
    }

    #[test]
    fn single_nv_term() {
        let name = compute_name(b"nv");
        let v = hash(b"v");
        let args = hash(&cat(&[&v.0, &[0, 0, 0, 0]]));
        let expected = hash(&cat(&[&[0; 32], &[0, 0, 1, 0x49], &args.0, &name.0]));
        assert_eq!(compose_policy_digest(&[NvTerm { name, value: v }], &[]), expected);
    }

    #[test]
    fn pcr_only_skips_nv_loop() {
        let v = hash(b"v");
        let expected = hash(&cat(&[&[0; 32], &[0, 0, 1, 0x7f], &[1, 0, 0, 0, 9], &hash(&v.0).0]));
        assert_eq!(compose_policy_digest(&[], &[(9, v)]), expected);
    }

    #[test]
    fn deletion_policy_extends_ak_policy() {
        let n = compute_name(b"orc");
        let ak = hash(&hash(&cat(&[&[0; 32], &[0, 0, 1, 0x6a], &n.0])).0);
        assert_eq!(ak_policy(&n), ak);
        assert_eq!(
            nv_deletion_policy(&n),
            hash(&cat(&[&ak.0, &[0, 0, 1, 0x6c], &[0, 0, 1, 0x1f]]))
        );
        assert_ne!(deletion_signed_policy(&n), ak);
    }

    #[test]
    fn ak_policy_is_constant_per_authorizer() {
        let n = compute_name(b"orc");
        assert_eq!(ak_policy(&n), ak_policy(&n));
        assert_ne!(ak_policy(&n), ak_policy(&compute_name(b"other")));
    }

    #[test]
    fn cp_hash_binds_nv_name() {
        assert_ne!(
            deletion_cp_hash(&compute_name(b"a")),
            deletion_cp_hash(&compute_name(b"b"))
        );
    }
}
