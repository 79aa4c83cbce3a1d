//! VF-side agent: owns the VF's TPM and tracer, runs the VF half of every
//! protocol and verifies peers.

pub mod tracer;

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::crypto::{hash, hash_parts, verify, Digest, HmacKey, Name, Nonce, Signature, NONCE_LEN, ZERO_DIGEST};
use crate::encoding::CommandCode;
use crate::messages::{DeletionGrant, Message, UpdateRequest};
use crate::orchestrator::policy;
use crate::vtpm::{
    ObjectPublic, SessionHandle, SessionKind, Ticket, TpmError, VTpm, EK_HANDLE, PCR_COUNT, SK_HANDLE,
};
use tracer::Tracer;

pub const ORCHESTRATOR: &str = "orchestrator";

/// A challenge older than this many ticks is discarded unanswered.
pub const CHALLENGE_TIMEOUT: u64 = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error(transparent)]
    Tpm(#[from] TpmError),
    #[error("message was not expected")]
    Unsolicited,
    #[error("VF has no AK")]
    NotEnrolled,
    #[error("VF has no policy yet")]
    NoPolicy,
    #[error("index {0} is not attached here")]
    NotAttached(u32),
    #[error("index {0} is already attached")]
    AlreadyAttached(u32),
    #[error("no file at {0}")]
    MeasurementMissing(String),
    #[error("signed digest is not the hash of the policy")]
    PolicyHashMismatch,
    #[error("orchestrator signature does not verify")]
    BadOrchestratorSignature,
    #[error("unknown or revoked peer {0}")]
    UnknownPeer(String),
    #[error("AK of {0} has been revoked")]
    RevokedPeer(String),
    #[error("could not satisfy the AK policy: {0}")]
    AttestationFailed(TpmError),
    #[error("response does not verify under the peer's AK")]
    AttestationRejected,
    #[error("challenge expired")]
    ChallengeTimeout,
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::Tpm(e) => e.code(),
            AgentError::Unsolicited => "unsolicited",
            AgentError::NotEnrolled => "not-enrolled",
            AgentError::NoPolicy => "no-policy",
            AgentError::NotAttached(_) => "not-attached",
            AgentError::AlreadyAttached(_) => "already-attached",
            AgentError::MeasurementMissing(_) => "measurement-missing",
            AgentError::PolicyHashMismatch => "policy-hash-mismatch",
            AgentError::BadOrchestratorSignature => "bad-orchestrator-signature",
            AgentError::UnknownPeer(_) => "unknown-peer",
            AgentError::RevokedPeer(_) => "revoked-peer",
            AgentError::AttestationFailed(_) => "attestation-failed",
            AgentError::AttestationRejected => "attestation-rejected",
            AgentError::ChallengeTimeout => "challenge-timeout",
        }
    }
}

pub type AgentResult<T> = Result<T, AgentError>;

/// Messages to send plus an optional note for the trace.
#[derive(Debug, Default)]
pub struct Reply {
    pub out: Vec<(String, Message)>,
    pub note: Option<&'static str>,
}

impl Reply {
    fn to(to: &str, msg: Message) -> Self {
        Reply { out: vec![(to.to_string(), msg)], note: None }
    }

    fn noted(note: &'static str) -> Self {
        Reply { out: Vec::new(), note: Some(note) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetainedPolicy {
    pub policy: Digest,
    pub ticket: Ticket,
    /// NV handles, in attach order, and PCR indices attached when the
    /// policy arrived. The orchestrator composed it over the same set.
    pub nv: Vec<u32>,
    pub pcrs: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct VfAgent {
    pub vf_id: String,
    pub tpm: VTpm,
    pub tracer: Tracer,
    orc_ek: ObjectPublic,
    orc_handle: Option<u32>,
    ak_handle: Option<u32>,
    ak_public: Option<ObjectPublic>,
    pcrs: BTreeSet<u32>,
    /// Attach order, with the value this agent expects each index to hold.
    nvpcrs: Vec<(u32, Digest)>,
    /// Every extend this agent issued on a normal PCR, in order.
    extend_log: Vec<(u32, Digest)>,
    /// Newest last.
    retained: Vec<RetainedPolicy>,
    pending_detach: BTreeMap<u32, SessionHandle>,
    peers: BTreeMap<String, ObjectPublic>,
    revoked: BTreeSet<Name>,
    challenges: BTreeMap<String, (Nonce, u64)>,
    rng: ChaCha20Rng,
}

impl VfAgent {
    pub fn new(vf_id: &str, seed: &[u8; 32], hk: HmacKey, orc_ek: ObjectPublic) -> Self {
        VfAgent {
            vf_id: vf_id.to_string(),
            tpm: VTpm::manufacture(&hash_parts(&[b"vf-tpm", seed]).0),
            tracer: Tracer::new(hk),
            orc_ek,
            orc_handle: None,
            ak_handle: None,
            ak_public: None,
            pcrs: BTreeSet::new(),
            nvpcrs: Vec::new(),
            extend_log: Vec::new(),
            retained: Vec::new(),
            pending_detach: BTreeMap::new(),
            peers: BTreeMap::new(),
            revoked: BTreeSet::new(),
            challenges: BTreeMap::new(),
            rng: ChaCha20Rng::from_seed(hash_parts(&[b"vf-nonce", seed]).0),
        }
    }

    pub fn ek_public(&self) -> ObjectPublic {
        self.tpm.read_public(EK_HANDLE).expect("EK is persistent")
    }

    pub fn ak_public(&self) -> Option<&ObjectPublic> {
        self.ak_public.as_ref()
    }

    pub fn ak_handle(&self) -> Option<u32> {
        self.ak_handle
    }

    pub fn attached_pcrs(&self) -> &BTreeSet<u32> {
        &self.pcrs
    }

    pub fn attached_nvpcrs(&self) -> &[(u32, Digest)] {
        &self.nvpcrs
    }

    pub fn retained(&self) -> &[RetainedPolicy] {
        &self.retained
    }

    pub fn current_policy(&self) -> Option<&RetainedPolicy> {
        self.retained.last()
    }

    pub fn knows_peer(&self, vf_id: &str) -> bool {
        self.peers.contains_key(vf_id)
    }

    pub fn orc_name(&self) -> Name {
        self.orc_ek.name()
    }

    /// Loads the orchestrator's public key once; again after a restart.
    fn orc_key(&mut self) -> AgentResult<u32> {
        if let Some(h) = self.orc_handle {
            if self.tpm.read_public(h).is_ok() {
                return Ok(h);
            }
        }
        let (h, _) = self.tpm.load_external(&self.orc_ek)?;
        self.orc_handle = Some(h);
        Ok(h)
    }

    pub fn restart(&mut self) {
        self.tpm.restart();
        self.orc_handle = None;
        self.pending_detach.clear();
        self.extend_log.clear();
    }

    /// Dispatches one inbound message.
    pub fn handle(&mut self, from: &str, msg: Message, now: u64) -> AgentResult<Reply> {
        match (from, msg) {
            (ORCHESTRATOR, Message::AkCreationRequest { template, policy }) => {
                self.create_ak(template, policy)
            }
            (ORCHESTRATOR, Message::UpdateRequest(req)) => self.apply_update(&req),
            (ORCHESTRATOR, Message::AttachRequest { idx, is_nv, iv, nv }) => {
                self.attach(idx, is_nv, iv, nv)
            }
            (ORCHESTRATOR, Message::DetachRequest { idx, is_nv }) => self.detach(idx, is_nv),
            (ORCHESTRATOR, Message::DeletionGrant(g)) => self.delete_nv(&g),
            (ORCHESTRATOR, Message::Advertisement(ad)) => {
                let msg = policy::advertisement_message(&ad.vf_id, &ad.ak_public.encode());
                if !verify(&self.orc_ek.public_key, &msg, &ad.signature) {
                    return Err(AgentError::BadOrchestratorSignature);
                }
                if self.revoked.contains(&ad.ak_public.name()) {
                    return Err(AgentError::RevokedPeer(ad.vf_id));
                }
                if ad.vf_id != self.vf_id {
                    self.peers.insert(ad.vf_id, ad.ak_public);
                }
                Ok(Reply::default())
            }
            (ORCHESTRATOR, Message::Revocation { vf_id, ak_name, signature }) => {
                let msg = policy::revocation_message(&vf_id, &ak_name);
                if !verify(&self.orc_ek.public_key, &msg, &signature) {
                    return Err(AgentError::BadOrchestratorSignature);
                }
                self.revoked.insert(ak_name);
                if self.peers.get(&vf_id).is_some_and(|ak| ak.name() == ak_name) {
                    self.peers.remove(&vf_id);
                }
                self.challenges.remove(&vf_id);
                Ok(Reply::default())
            }
            (peer, Message::Challenge { nonce }) => self.respond(peer, &nonce),
            (peer, Message::ChallengeResponse { signature }) => {
                self.check_response(peer, &signature, now)
            }
            _ => Err(AgentError::Unsolicited),
        }
    }

    fn create_ak(&mut self, template: crate::vtpm::ObjectTemplate, policy: Digest) -> AgentResult<Reply> {
        let (blob, creation_hash, ticket) = self.tpm.create(SK_HANDLE, template, policy)?;
        let (h, _) = self.tpm.load(SK_HANDLE, &blob)?;
        let cert = self.tpm.certify_creation(h, EK_HANDLE, &creation_hash, &ticket)?;
        let persistent = self.tpm.evict_control(h)?;
        self.tpm.flush_context(h)?;
        self.ak_handle = Some(persistent);
        self.ak_public = Some(blob.public.clone());
        Ok(Reply::to(
            ORCHESTRATOR,
            Message::AkCertificate { ak_public: blob.public, cert_info: cert.bytes, signature: cert.signature },
        ))
    }

    fn apply_update(&mut self, req: &UpdateRequest) -> AgentResult<Reply> {
        if self.ak_handle.is_none() {
            return Err(AgentError::NotEnrolled);
        }
        let attached = if req.is_nv {
            self.nvpcrs.iter().any(|(h, _)| *h == req.idx)
        } else {
            self.pcrs.contains(&req.idx)
        };
        if !attached {
            return Err(AgentError::NotAttached(req.idx));
        }
        if hash(&req.policy.0) != req.policy_hash {
            return Err(AgentError::PolicyHashMismatch);
        }
        let orc = self.orc_key()?;
        let ticket = self.tpm.verify_signature(orc, &req.policy_hash, &req.signature)?;
        let d = self
            .tracer
            .measure(&req.fqpn)
            .ok_or_else(|| AgentError::MeasurementMissing(req.fqpn.clone()))?;
        let (s, _) = self.tpm.start_auth_session(SessionKind::Hmac)?;
        let result = self.audited_extend(req.idx, req.is_nv, &d, s);
        let _ = self.tpm.flush_context(s.0);
        let attest = result?;
        self.retained.push(RetainedPolicy {
            policy: req.policy,
            ticket,
            nv: self.nvpcrs.iter().map(|(h, _)| *h).collect(),
            pcrs: self.pcrs.iter().copied().collect(),
        });
        Ok(Reply::to(
            ORCHESTRATOR,
            Message::AuditReport {
                idx: req.idx,
                is_nv: req.is_nv,
                audit_info: attest.bytes,
                signature: attest.signature,
            },
        ))
    }

    fn audited_extend(
        &mut self,
        idx: u32,
        is_nv: bool,
        d: &Digest,
        s: SessionHandle,
    ) -> AgentResult<crate::vtpm::SignedAttest> {
        if is_nv {
            self.tpm.nv_extend(idx, d, Some(s))?;
            if let Some(e) = self.nvpcrs.iter_mut().find(|(h, _)| *h == idx) {
                e.1 = hash_parts(&[&e.1 .0, &d.0]);
            }
        } else {
            self.tpm.pcr_extend(idx, d, Some(s))?;
            self.extend_log.push((idx, *d));
        }
        Ok(self.tpm.get_session_audit_digest(EK_HANDLE, s)?)
    }

    fn attach(
        &mut self,
        idx: u32,
        is_nv: bool,
        iv: Digest,
        nv: Option<crate::messages::NvAttachSpec>,
    ) -> AgentResult<Reply> {
        if !is_nv {
            if idx as usize >= PCR_COUNT {
                return Err(TpmError::BadIndex(idx).into());
            }
            if !self.pcrs.insert(idx) {
                return Err(AgentError::AlreadyAttached(idx));
            }
            self.tpm.pcr_extend(idx, &iv, None)?;
            self.extend_log.push((idx, iv));
            return Ok(Reply::default());
        }
        if self.nvpcrs.iter().any(|(h, _)| *h == idx) {
            return Err(AgentError::AlreadyAttached(idx));
        }
        let spec = nv.ok_or(AgentError::Unsolicited)?;
        self.tpm.nv_define_space(idx, spec.template, spec.policy)?;
        self.tpm.nv_extend(idx, &iv, None)?;
        let cert = self.tpm.nv_certify(idx, EK_HANDLE)?;
        self.nvpcrs.push((idx, hash_parts(&[&ZERO_DIGEST.0, &iv.0])));
        Ok(Reply::to(
            ORCHESTRATOR,
            Message::NvCertificate { idx, cert_info: cert.bytes, signature: cert.signature },
        ))
    }

    fn detach(&mut self, idx: u32, is_nv: bool) -> AgentResult<Reply> {
        if !is_nv {
            return if self.pcrs.remove(&idx) {
                Ok(Reply::default())
            } else {
                Err(AgentError::NotAttached(idx))
            };
        }
        if !self.nvpcrs.iter().any(|(h, _)| *h == idx) {
            return Err(AgentError::NotAttached(idx));
        }
        if let Some(old) = self.pending_detach.remove(&idx) {
            let _ = self.tpm.flush_context(old.0);
        }
        let (s, nonce) = self.tpm.start_auth_session(SessionKind::Policy)?;
        self.pending_detach.insert(idx, s);
        Ok(Reply::to(ORCHESTRATOR, Message::DetachSessionNonce { idx, nonce }))
    }

    fn delete_nv(&mut self, g: &DeletionGrant) -> AgentResult<Reply> {
        let s = self.pending_detach.remove(&g.idx).ok_or(AgentError::Unsolicited)?;
        let result = self.run_deletion(g, s);
        if result.is_err() {
            let _ = self.tpm.flush_context(s.0);
        }
        result?;
        self.nvpcrs.retain(|(h, _)| *h != g.idx);
        Ok(Reply::noted("nv-deleted"))
    }

    fn run_deletion(&mut self, g: &DeletionGrant, s: SessionHandle) -> AgentResult<()> {
        if hash(&g.policy.0) != g.policy_hash {
            return Err(AgentError::PolicyHashMismatch);
        }
        let orc = self.orc_key()?;
        let ticket = self.tpm.verify_signature(orc, &g.policy_hash, &g.policy_signature)?;
        self.tpm.policy_signed(s, orc, &g.a_hash_signature, &g.cp_hash, 0)?;
        self.tpm.policy_authorize(s, &g.policy, &ticket, &self.orc_ek.name())?;
        self.tpm.policy_command_code(s, CommandCode::NV_UNDEFINE_SPACE_SPECIAL)?;
        self.tpm.nv_undefine_space_special(g.idx, s)?;
        Ok(())
    }

    /// Prover side: satisfy the newest policy over the selection it was
    /// issued for and sign the verifier's nonce.
    fn respond(&mut self, peer: &str, nonce: &Nonce) -> AgentResult<Reply> {
        let ak = self.ak_handle.ok_or(AgentError::NotEnrolled)?;
        let current = self.retained.last().cloned().ok_or(AgentError::NoPolicy)?;
        let nv = current
            .nv
            .iter()
            .map(|h| {
                self.nvpcrs
                    .iter()
                    .find(|(x, _)| x == h)
                    .copied()
                    .ok_or(AgentError::AttestationFailed(TpmError::NvUndefined(*h)))
            })
            .collect::<AgentResult<Vec<_>>>()?;
        let pcrs = current.pcrs.clone();
        let orc_name = self.orc_ek.name();
        let signature = prove(&mut self.tpm, ak, &nv, &pcrs, &current, &orc_name, &nonce.0)
            .map_err(AgentError::AttestationFailed)?;
        Ok(Reply::to(peer, Message::ChallengeResponse { signature }))
    }

    /// Verifier side: issue a fresh nonce to a known peer.
    pub fn challenge(&mut self, peer: &str, now: u64) -> AgentResult<Message> {
        if !self.peers.contains_key(peer) {
            return Err(AgentError::UnknownPeer(peer.to_string()));
        }
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let nonce = Nonce(nonce);
        self.challenges.insert(peer.to_string(), (nonce, now));
        Ok(Message::Challenge { nonce })
    }

    fn check_response(&mut self, peer: &str, signature: &Signature, now: u64) -> AgentResult<Reply> {
        let (nonce, issued) = self.challenges.remove(peer).ok_or(AgentError::Unsolicited)?;
        if now.saturating_sub(issued) > CHALLENGE_TIMEOUT {
            return Err(AgentError::ChallengeTimeout);
        }
        let ak = self.peers.get(peer).ok_or_else(|| AgentError::UnknownPeer(peer.to_string()))?;
        if !verify_attestation(&nonce, signature, ak) {
            return Err(AgentError::AttestationRejected);
        }
        Ok(Reply::noted("attestation-accepted"))
    }

    /// Drops challenges that can no longer be answered in time.
    pub fn expire_challenges(&mut self, now: u64) -> Vec<String> {
        let expired: Vec<String> = self
            .challenges
            .iter()
            .filter(|(_, (_, t))| now.saturating_sub(*t) > CHALLENGE_TIMEOUT)
            .map(|(p, _)| p.clone())
            .collect();
        for p in &expired {
            self.challenges.remove(p);
        }
        expired
    }

    /// Whether a policy session replaying the given selection could unlock
    /// the AK right now. Runs on a copy of the TPM, so nothing changes.
    pub fn policy_unlocks(&self, nv: &[(u32, Digest)], pcrs: &[u32], retained: &RetainedPolicy) -> bool {
        let Some(ak) = self.ak_handle else { return false };
        let mut tpm = self.tpm.clone();
        prove(&mut tpm, ak, nv, pcrs, retained, &self.orc_ek.name(), b"probe").is_ok()
    }

    /// Differences between what this agent believes its PCRs hold and what
    /// the TPM reports.
    pub fn local_sync_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (h, want) in &self.nvpcrs {
            match self.tpm.nv_value(*h) {
                Some(v) if v == *want => {}
                other => errs.push(format!("nv 0x{h:08x}: expected {want}, TPM has {other:?}")),
            }
        }
        for idx in &self.pcrs {
            let replay = self
                .extend_log
                .iter()
                .filter(|(i, _)| i == idx)
                .fold(ZERO_DIGEST, |acc, (_, d)| hash_parts(&[&acc.0, &d.0]));
            let live = self.tpm.pcr_value(*idx).unwrap_or(ZERO_DIGEST);
            if replay != live {
                errs.push(format!("pcr {idx}: log replays to {replay}, TPM has {live}"));
            }
        }
        errs
    }

    /// Seeds, proofs, private keys and the measurement key.
    pub fn secret_canaries(&self) -> Vec<[u8; 32]> {
        let mut out = self.tpm.secret_canaries();
        out.push(self.tracer.key_bytes());
        out
    }

    pub fn snapshot(&self) -> Value {
        json!({
            "ak_name": self.ak_public.as_ref().map(|a| a.name().to_hex()),
            "pcrs": self.pcrs,
            "nvpcrs": self.nvpcrs.iter().map(|(h, v)| json!({"handle": h, "expected": v})).collect::<Vec<_>>(),
            "policies_held": self.retained.len(),
            "peers": self.peers.keys().collect::<Vec<_>>(),
            "files": self.tracer.paths().collect::<Vec<_>>(),
            "tpm": self.tpm.snapshot(),
        })
    }
}

/// The verifier's whole decision. It sees the nonce it issued, the
/// response signature and the advertised AK, and nothing about the
/// prover's configuration.
pub fn verify_attestation(nonce: &Nonce, signature: &Signature, ak_public: &ObjectPublic) -> bool {
    verify(&ak_public.public_key, &nonce.0, signature)
}

/// The prover's command sequence: one PolicyNV per NV PCR, one PolicyPCR,
/// PolicyAuthorize, then Sign. The session is flushed on failure.
pub fn prove(
    tpm: &mut VTpm,
    ak: u32,
    nv: &[(u32, Digest)],
    pcrs: &[u32],
    policy: &RetainedPolicy,
    orc_name: &Name,
    message: &[u8],
) -> Result<Signature, TpmError> {
    let (s, _) = tpm.start_auth_session(SessionKind::Policy)?;
    let run = |tpm: &mut VTpm| -> Result<Signature, TpmError> {
        for (h, v) in nv {
            tpm.policy_nv(s, *h, v)?;
        }
        if !pcrs.is_empty() {
            tpm.policy_pcr(s, pcrs)?;
        }
        tpm.policy_authorize(s, &policy.policy, &policy.ticket, orc_name)?;
        tpm.sign(ak, message, Some(s))
    };
    let out = run(tpm);
    if out.is_err() {
        let _ = tpm.flush_context(s.0);
    }
    out
}
