//! The trusted orchestrator: enrolls VFs, keeps a mock copy of every
//! attached PCR and authorizes state changes by signing policies.

pub mod graph;
pub mod policy;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::crypto::{hash, hash_parts, hmac, verify, Digest, HmacKey, Name, Nonce, Signature, SigningKeyPair, ZERO_DIGEST};
use crate::messages::{Advertisement, DeletionGrant, Message, NvAttachSpec, UpdateRequest};
use crate::vtpm::{
    Attest, NvTemplate, ObjectAttributes, ObjectPublic, ObjectTemplate, NV_INDEX_FIRST, NV_INDEX_LAST, PCR_COUNT,
};
use graph::ServiceGraph;
use policy::NvTerm;

/// A PCR slot as the orchestrator addresses it. Written `pcr:16` or
/// `nv:0x01000010` in scenario files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Slot {
    pub idx: u32,
    pub is_nv: bool,
}

impl Slot {
    pub fn pcr(idx: u32) -> Self {
        Slot { idx, is_nv: false }
    }

    pub fn nv(idx: u32) -> Self {
        Slot { idx, is_nv: true }
    }
}

impl std::str::FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad slot {s:?}, want pcr:N or nv:0xHHHHHHHH");
        let (kind, idx) = s.split_once(':').ok_or_else(bad)?;
        let idx = match idx.strip_prefix("0x") {
            Some(h) => u32::from_str_radix(h, 16),
            None => idx.parse(),
        }
        .map_err(|_| bad())?;
        match kind {
            "pcr" => Ok(Slot::pcr(idx)),
            "nv" => Ok(Slot::nv(idx)),
            _ => Err(bad()),
        }
    }
}

impl From<Slot> for String {
    fn from(s: Slot) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Slot {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl std::fmt::Display for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_nv {
            write!(f, "nv:0x{:08x}", self.idx)
        } else {
            write!(f, "pcr:{}", self.idx)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrcError {
    #[error("unknown VF {0}")]
    UnknownVf(String),
    #[error("VF {0} already exists")]
    DuplicateVf(String),
    #[error("VF {0} has no enrolled AK")]
    NotEnrolled(String),
    #[error("{0} is not attached")]
    NotAttached(Slot),
    #[error("{0} is already attached or pending")]
    InUse(Slot),
    #[error("{0} was detached and cannot be attached again")]
    Retired(Slot),
    #[error("{0} is out of range")]
    OutOfRange(Slot),
    #[error("{target} is not in the preceding policy; allowed: {allowed:?}")]
    SupersessionViolation { target: Slot, allowed: Vec<Slot> },
    #[error("detaching {0} leaves no index of the preceding policy attached")]
    OrphansPolicy(Slot),
    #[error("no {0} in progress")]
    NothingPending(&'static str),
}

impl OrcError {
    pub fn code(&self) -> &'static str {
        match self {
            OrcError::UnknownVf(_) => "unknown-vf",
            OrcError::DuplicateVf(_) => "duplicate-vf",
            OrcError::NotEnrolled(_) => "not-enrolled",
            OrcError::NotAttached(_) => "not-attached",
            OrcError::InUse(_) => "in-use",
            OrcError::Retired(_) => "retired",
            OrcError::OutOfRange(_) => "out-of-range",
            OrcError::SupersessionViolation { .. } => "supersession-violation",
            OrcError::OrphansPolicy(_) => "orphans-policy",
            OrcError::NothingPending(_) => "nothing-pending",
        }
    }
}

/// Why a TPM-signed structure from a VF was rejected. Checks run in the
/// order the variants are listed for each structure.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    #[error("nothing pending for this message")]
    Unsolicited,
    #[error("structure does not parse")]
    Malformed,
    #[error("certified name does not match")]
    Name,
    #[error("magic or template mismatch")]
    Template,
    #[error("certified policy does not match")]
    Policy,
    #[error("certified contents do not match")]
    Contents,
    #[error("audit digest does not match")]
    Digest,
    #[error("signature does not verify under the VF's EK")]
    Signature,
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::Unsolicited => "unsolicited",
            Rejection::Malformed => "malformed",
            Rejection::Name => "name",
            Rejection::Template => "template",
            Rejection::Policy => "policy",
            Rejection::Contents => "contents",
            Rejection::Digest => "digest",
            Rejection::Signature => "signature",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MockNvPcr {
    pub handle: u32,
    pub value: Digest,
    pub name: Name,
}

/// A policy as released to a VF, with the state it expects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IssuedPolicy {
    pub digest: Digest,
    pub nv: Vec<MockNvPcr>,
    pub pcrs: Vec<(u32, Digest)>,
    pub committed: bool,
}

impl IssuedPolicy {
    pub fn slots(&self) -> BTreeSet<Slot> {
        self.nv
            .iter()
            .map(|n| Slot::nv(n.handle))
            .chain(self.pcrs.iter().map(|(i, _)| Slot::pcr(*i)))
            .collect()
    }
}

#[derive(Clone, Debug)]
struct PendingUpdate {
    target: Slot,
    update: Digest,
    new_value: Digest,
    /// NV name at the time of the extend; unused for PCRs.
    nv_name: Option<Name>,
    issued: usize,
}

#[derive(Clone, Debug)]
struct PendingAttach {
    template: NvTemplate,
    policy: Digest,
    iv: Digest,
}

#[derive(Clone, Debug)]
pub struct VfRecord {
    pub vf_id: String,
    pub ek_public: ObjectPublic,
    hk: HmacKey,
    pub ak: Option<ObjectPublic>,
    pub mock_pcr: BTreeMap<u32, Digest>,
    /// Attach order, which is also policy order.
    pub mock_nvpcr: Vec<MockNvPcr>,
    pub retired_pcrs: BTreeSet<u32>,
    pub issued: Vec<IssuedPolicy>,
    pub last_committed: Option<usize>,
    enrollment_pending: Option<Digest>,
    pending_update: Option<PendingUpdate>,
    pending_attach: BTreeMap<u32, PendingAttach>,
    pending_detach: BTreeSet<u32>,
}

impl VfRecord {
    pub fn slots(&self) -> BTreeSet<Slot> {
        self.mock_nvpcr
            .iter()
            .map(|n| Slot::nv(n.handle))
            .chain(self.mock_pcr.keys().map(|i| Slot::pcr(*i)))
            .collect()
    }

    pub fn latest_issued(&self) -> Option<&IssuedPolicy> {
        self.issued.last()
    }

    pub fn has_pending_update(&self) -> bool {
        self.pending_update.is_some()
    }

    fn nv_terms(&self) -> Vec<NvTerm> {
        self.mock_nvpcr.iter().map(|n| NvTerm { name: n.name, value: n.value }).collect()
    }

    /// Policy digest of the current mock state.
    pub fn mock_policy(&self) -> Digest {
        let pcrs: Vec<_> = self.mock_pcr.iter().map(|(i, v)| (*i, *v)).collect();
        policy::compose_policy_digest(&self.nv_terms(), &pcrs)
    }
}

pub struct Orchestrator {
    ek: SigningKeyPair,
    ek_public: ObjectPublic,
    records: BTreeMap<String, VfRecord>,
    pub graph: ServiceGraph,
    enforce_supersession: bool,
    hazards: Vec<String>,
    default_iv: Digest,
}

impl Orchestrator {
    pub fn new(seed: &[u8; 32]) -> Self {
        let ek = SigningKeyPair::from_seed(&hash_parts(&[b"orchestrator-ek", seed]).0);
        let ek_public = ObjectPublic {
            attributes: ObjectAttributes::endorsement_key(),
            auth_policy: ZERO_DIGEST,
            public_key: ek.public().clone(),
        };
        Orchestrator {
            ek,
            ek_public,
            records: BTreeMap::new(),
            graph: ServiceGraph::default(),
            enforce_supersession: true,
            hazards: Vec::new(),
            default_iv: ZERO_DIGEST,
        }
    }

    /// Turning this off lets a policy update target any attached index,
    /// which reproduces the double-unlock hazard.
    pub fn set_enforce_supersession(&mut self, on: bool) {
        self.enforce_supersession = on;
    }

    pub fn enforces_supersession(&self) -> bool {
        self.enforce_supersession
    }

    /// Notes about updates whose policy shares no index with its predecessor.
    pub fn hazards(&self) -> &[String] {
        &self.hazards
    }

    pub fn ek_public(&self) -> &ObjectPublic {
        &self.ek_public
    }

    pub fn ek_name(&self) -> Name {
        self.ek_public.name()
    }

    pub fn ak_policy(&self) -> Digest {
        policy::ak_policy(&self.ek_name())
    }

    pub fn record(&self, vf_id: &str) -> Option<&VfRecord> {
        self.records.get(vf_id)
    }

    pub fn vf_ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    fn rec(&self, vf_id: &str) -> Result<&VfRecord, OrcError> {
        self.records.get(vf_id).ok_or_else(|| OrcError::UnknownVf(vf_id.into()))
    }

    fn rec_mut(&mut self, vf_id: &str) -> Result<&mut VfRecord, OrcError> {
        self.records.get_mut(vf_id).ok_or_else(|| OrcError::UnknownVf(vf_id.into()))
    }

    /// Registers a VF created by the orchestrator. The measurement key is
    /// shared with the VF's tracer at creation.
    pub fn register_vf(
        &mut self,
        vf_id: &str,
        chain: &str,
        ek_public: ObjectPublic,
        hk: HmacKey,
    ) -> Result<(), OrcError> {
        if self.records.contains_key(vf_id) {
            return Err(OrcError::DuplicateVf(vf_id.into()));
        }
        self.records.insert(
            vf_id.to_string(),
            VfRecord {
                vf_id: vf_id.to_string(),
                ek_public,
                hk,
                ak: None,
                mock_pcr: BTreeMap::new(),
                mock_nvpcr: Vec::new(),
                retired_pcrs: BTreeSet::new(),
                issued: Vec::new(),
                last_committed: None,
                enrollment_pending: None,
                pending_update: None,
                pending_attach: BTreeMap::new(),
                pending_detach: BTreeSet::new(),
            },
        );
        self.graph.add_member(chain, vf_id);
        Ok(())
    }

    pub fn begin_enrollment(&mut self, vf_id: &str) -> Result<Message, OrcError> {
        let policy = self.ak_policy();
        self.rec_mut(vf_id)?.enrollment_pending = Some(policy);
        Ok(Message::AkCreationRequest { template: ObjectTemplate::attestation_key(), policy })
    }

    /// Checks a certified AK and, if it passes, advertises it to the
    /// directory. Name, then magic and template, then policy, then the
    /// signature.
    pub fn verify_ak_certificate(
        &mut self,
        vf_id: &str,
        ak_public: &ObjectPublic,
        cert_info: &[u8],
        signature: &Signature,
    ) -> Result<Advertisement, Rejection> {
        let rec = self.records.get_mut(vf_id).ok_or(Rejection::Unsolicited)?;
        let expected_policy = rec.enrollment_pending.take().ok_or(Rejection::Unsolicited)?;
        let (magic, attest) = Attest::decode_any_magic(cert_info).map_err(|_| Rejection::Malformed)?;
        let Attest::Creation { object_name, auth_policy, attributes, .. } = attest else {
            return Err(Rejection::Malformed);
        };
        if object_name != ak_public.name() {
            return Err(Rejection::Name);
        }
        let template = ObjectTemplate::attestation_key().attributes;
        if magic != crate::encoding::TPM_GENERATED || attributes != template || ak_public.attributes != template {
            return Err(Rejection::Template);
        }
        if auth_policy != expected_policy {
            return Err(Rejection::Policy);
        }
        if !verify(&rec.ek_public.public_key, cert_info, signature) {
            return Err(Rejection::Signature);
        }
        rec.ak = Some(ak_public.clone());
        let chain = self.graph.chain_of(vf_id).unwrap_or_default().to_string();
        let msg = policy::advertisement_message(vf_id, &ak_public.encode());
        let ad = Advertisement {
            vf_id: vf_id.to_string(),
            chain,
            ak_public: ak_public.clone(),
            signature: self.ek.sign(&msg),
        };
        self.graph.advertise(ad.clone());
        Ok(ad)
    }

    /// Reference measurement: keyed digest of the expected file bytes.
    pub fn authenticate_measurement(&self, vf_id: &str, measured: &[u8]) -> Result<Digest, OrcError> {
        Ok(hmac(&self.rec(vf_id)?.hk, &hash(measured).0))
    }

    /// Composes and signs the policy that will hold once `target` is
    /// extended by `update`. Mock state is only committed when the audit
    /// report checks out.
    pub fn compose_policy_update(
        &mut self,
        vf_id: &str,
        target: Slot,
        update: Digest,
        fqpn: &str,
    ) -> Result<UpdateRequest, OrcError> {
        let enforce = self.enforce_supersession;
        let rec = self.rec(vf_id)?;
        if rec.ak.is_none() {
            return Err(OrcError::NotEnrolled(vf_id.into()));
        }
        let current = rec.slots();
        if !current.contains(&target) {
            return Err(OrcError::NotAttached(target));
        }
        let mut hazard = None;
        if let Some(prev) = rec.latest_issued() {
            let common: Vec<Slot> = prev.slots().intersection(&current).copied().collect();
            if common.is_empty() {
                if enforce {
                    return Err(OrcError::SupersessionViolation { target, allowed: common });
                }
                hazard = Some(format!(
                    "{vf_id}: policy for {target} shares no index with policy {}",
                    prev.digest
                ));
            } else if enforce && !common.contains(&target) {
                return Err(OrcError::SupersessionViolation { target, allowed: common });
            }
        }

        let mut nv = rec.mock_nvpcr.clone();
        let mut pcrs: Vec<(u32, Digest)> = rec.mock_pcr.iter().map(|(i, v)| (*i, *v)).collect();
        let (new_value, nv_name) = if target.is_nv {
            let entry = nv.iter_mut().find(|n| n.handle == target.idx).expect("attached");
            entry.value = hash_parts(&[&entry.value.0, &update.0]);
            (entry.value, Some(entry.name))
        } else {
            let entry = pcrs.iter_mut().find(|(i, _)| *i == target.idx).expect("attached");
            entry.1 = hash_parts(&[&entry.1 .0, &update.0]);
            (entry.1, None)
        };
        let terms: Vec<NvTerm> = nv.iter().map(|n| NvTerm { name: n.name, value: n.value }).collect();
        let digest = policy::compose_policy_digest(&terms, &pcrs);
        let policy_hash = hash(&digest.0);
        let signature = self.ek.sign(&policy_hash.0);

        if let Some(h) = hazard {
            self.hazards.push(h);
        }
        let rec = self.rec_mut(vf_id)?;
        rec.issued.push(IssuedPolicy { digest, nv, pcrs, committed: false });
        rec.pending_update = Some(PendingUpdate {
            target,
            update,
            new_value,
            nv_name,
            issued: rec.issued.len() - 1,
        });
        Ok(UpdateRequest {
            fqpn: fqpn.to_string(),
            idx: target.idx,
            is_nv: target.is_nv,
            policy: digest,
            policy_hash,
            signature,
        })
    }

    /// Commits the pending update if the signed audit digest matches the
    /// single extend the orchestrator expects, and rolls back otherwise.
    pub fn verify_audit(
        &mut self,
        vf_id: &str,
        audit_info: &[u8],
        signature: &Signature,
    ) -> Result<Slot, Rejection> {
        let rec = self.records.get_mut(vf_id).ok_or(Rejection::Unsolicited)?;
        let pending = rec.pending_update.take().ok_or(Rejection::Unsolicited)?;
        let (cp, cc) = match pending.nv_name {
            Some(name) => (
                policy::nv_extend_cp_hash(&name, &pending.update),
                crate::encoding::CommandCode::NV_EXTEND,
            ),
            None => (
                policy::pcr_extend_cp_hash(pending.target.idx, &pending.update),
                crate::encoding::CommandCode::PCR_EXTEND,
            ),
        };
        let expected = policy::single_command_audit(&cp, &policy::success_rp_hash(cc));
        match Attest::decode(audit_info) {
            Ok(Attest::SessionAudit { session_digest, .. }) if session_digest == expected => {}
            Ok(_) => return Err(Rejection::Digest),
            Err(_) => return Err(Rejection::Malformed),
        }
        if !verify(&rec.ek_public.public_key, audit_info, signature) {
            return Err(Rejection::Signature);
        }
        if pending.target.is_nv {
            if let Some(n) = rec.mock_nvpcr.iter_mut().find(|n| n.handle == pending.target.idx) {
                n.value = pending.new_value;
            }
        } else {
            rec.mock_pcr.insert(pending.target.idx, pending.new_value);
        }
        rec.issued[pending.issued].committed = true;
        rec.last_committed = Some(pending.issued);
        Ok(pending.target)
    }

    /// Starts tracking a new PCR. Normal PCRs are in the mock at once with
    /// value H(0 || IV); NV PCRs only after their creation is certified.
    pub fn request_pcr_attach(
        &mut self,
        vf_id: &str,
        slot: Slot,
        iv: Option<Digest>,
    ) -> Result<Message, OrcError> {
        let iv = iv.unwrap_or(self.default_iv);
        let policy = policy::nv_deletion_policy(&self.ek_name());
        let rec = self.rec_mut(vf_id)?;
        if rec.slots().contains(&slot) || (slot.is_nv && rec.pending_attach.contains_key(&slot.idx)) {
            return Err(OrcError::InUse(slot));
        }
        if slot.is_nv {
            if !(NV_INDEX_FIRST..=NV_INDEX_LAST).contains(&slot.idx) {
                return Err(OrcError::OutOfRange(slot));
            }
            let template = NvTemplate::nv_pcr();
            rec.pending_attach.insert(slot.idx, PendingAttach { template, policy, iv });
            Ok(Message::AttachRequest {
                idx: slot.idx,
                is_nv: true,
                iv,
                nv: Some(NvAttachSpec { template, policy }),
            })
        } else {
            if slot.idx as usize >= PCR_COUNT {
                return Err(OrcError::OutOfRange(slot));
            }
            if rec.retired_pcrs.contains(&slot.idx) {
                return Err(OrcError::Retired(slot));
            }
            rec.mock_pcr.insert(slot.idx, hash_parts(&[&ZERO_DIGEST.0, &iv.0]));
            Ok(Message::AttachRequest { idx: slot.idx, is_nv: false, iv, nv: None })
        }
    }

    /// Magic, then contents, then name, then the signature.
    pub fn verify_nvpcr_certificate(
        &mut self,
        vf_id: &str,
        idx: u32,
        cert_info: &[u8],
        signature: &Signature,
    ) -> Result<(), Rejection> {
        let rec = self.records.get_mut(vf_id).ok_or(Rejection::Unsolicited)?;
        let pending = rec.pending_attach.remove(&idx).ok_or(Rejection::Unsolicited)?;
        let (magic, attest) = Attest::decode_any_magic(cert_info).map_err(|_| Rejection::Malformed)?;
        let Attest::Nv { object_name, nv_contents, .. } = attest else {
            return Err(Rejection::Malformed);
        };
        if magic != crate::encoding::TPM_GENERATED {
            return Err(Rejection::Template);
        }
        let value = hash_parts(&[&ZERO_DIGEST.0, &pending.iv.0]);
        if nv_contents != value {
            return Err(Rejection::Contents);
        }
        let name = pending.template.public(idx, pending.policy, true).name();
        if object_name != name {
            return Err(Rejection::Name);
        }
        if !verify(&rec.ek_public.public_key, cert_info, signature) {
            return Err(Rejection::Signature);
        }
        rec.mock_nvpcr.push(MockNvPcr { handle: idx, value, name });
        Ok(())
    }

    fn check_orphan(&self, rec: &VfRecord, slot: Slot) -> Result<(), OrcError> {
        if !self.enforce_supersession {
            return Ok(());
        }
        let Some(prev) = rec.latest_issued() else { return Ok(()) };
        let mut remaining = rec.slots();
        remaining.remove(&slot);
        let prev = prev.slots();
        if prev.contains(&slot) && prev.is_disjoint(&remaining) {
            return Err(OrcError::OrphansPolicy(slot));
        }
        Ok(())
    }

    /// Normal PCRs leave the mock immediately and are retired, since the
    /// real register keeps its value. NV PCRs wait for the session nonce.
    pub fn request_pcr_detach(&mut self, vf_id: &str, slot: Slot) -> Result<Message, OrcError> {
        let rec = self.rec(vf_id)?;
        if !rec.slots().contains(&slot) {
            return Err(OrcError::NotAttached(slot));
        }
        self.check_orphan(rec, slot)?;
        let rec = self.rec_mut(vf_id)?;
        if slot.is_nv {
            rec.pending_detach.insert(slot.idx);
        } else {
            rec.mock_pcr.remove(&slot.idx);
            rec.retired_pcrs.insert(slot.idx);
        }
        Ok(Message::DetachRequest { idx: slot.idx, is_nv: slot.is_nv })
    }

    /// Signs a one-shot deletion authorization bound to the VF's session
    /// nonce and to this index, then drops the index from the mock.
    pub fn authorize_nv_deletion(
        &mut self,
        vf_id: &str,
        idx: u32,
        nonce: &Nonce,
    ) -> Result<DeletionGrant, OrcError> {
        let policy = policy::deletion_signed_policy(&self.ek_name());
        let rec = self.rec(vf_id)?;
        if !rec.pending_detach.contains(&idx) {
            return Err(OrcError::NothingPending("detach"));
        }
        let entry = rec
            .mock_nvpcr
            .iter()
            .find(|n| n.handle == idx)
            .ok_or(OrcError::NotAttached(Slot::nv(idx)))?;
        let cp_hash = policy::deletion_cp_hash(&entry.name);
        let a_hash = policy::policy_signed_a_hash(nonce, &cp_hash);
        let policy_hash = hash(&policy.0);
        let grant = DeletionGrant {
            idx,
            cp_hash,
            a_hash_signature: self.ek.sign(&a_hash.0),
            policy,
            policy_hash,
            policy_signature: self.ek.sign(&policy_hash.0),
        };
        let rec = self.rec_mut(vf_id)?;
        rec.pending_detach.remove(&idx);
        rec.mock_nvpcr.retain(|n| n.handle != idx);
        Ok(grant)
    }

    /// Removes the VF's AK from the directory and returns a signed notice.
    pub fn revoke(&mut self, vf_id: &str) -> Result<Message, OrcError> {
        let rec = self.rec_mut(vf_id)?;
        let ak = rec.ak.take().ok_or_else(|| OrcError::NotEnrolled(vf_id.into()))?;
        rec.pending_update = None;
        self.graph.remove(vf_id);
        let ak_name = ak.name();
        let signature = self.ek.sign(&policy::revocation_message(vf_id, &ak_name));
        Ok(Message::Revocation { vf_id: vf_id.to_string(), ak_name, signature })
    }

    /// Records without measurement keys, for traces and the CLI.
    pub fn export(&self) -> Value {
        let vfs: BTreeMap<_, _> = self
            .records
            .iter()
            .map(|(id, r)| {
                let v = json!({
                    "ek_name": r.ek_public.name().to_hex(),
                    "ak_name": r.ak.as_ref().map(|a| a.name().to_hex()),
                    "mock_pcr": r.mock_pcr.iter().map(|(i, v)| (i.to_string(), v.to_hex())).collect::<BTreeMap<_, _>>(),
                    "mock_nvpcr": r.mock_nvpcr,
                    "retired_pcrs": r.retired_pcrs,
                    "issued": r.issued.len(),
                    "mock_policy": r.mock_policy(),
                });
                (id.clone(), v)
            })
            .collect();
        json!({ "ek_name": self.ek_name().to_hex(), "vfs": vfs, "graph": self.graph })
    }

    /// Key material that must never appear in a trace.
    pub fn secret_canaries(&self) -> Vec<[u8; 32]> {
        let mut out = vec![self.ek.secret_bytes()];
        out.extend(self.records.values().map(|r| r.hk.0));
        out
    }
}

#[cfg(test)]
mod tests;
