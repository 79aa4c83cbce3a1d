//! Software TPM covering the command subset the attestation protocols use.
//!
//! One [`VTpm`] per virtual function. Commands run serially; every command
//! is recorded in a log (mnemonic plus result code) that the scenario engine
//! copies into traces, and optionally timed for the benchmark.

mod session;
mod structures;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::crypto::{
    hash, hash_parts, hmac_raw, verify, Digest, Name, Nonce, Signature, SigningKeyPair,
    ZERO_DIGEST,
};
use crate::encoding::{
    enc_pcr_selection, enc_u16, enc_u32, CommandCode, ALG_SHA256, RC_SUCCESS, RH_PLATFORM,
    ST_CREATION, ST_VERIFIED,
};

pub use session::{witness, Session, SessionHandle, SessionKind, MAX_SESSIONS};
pub use structures::{
    Attest, NvAttributes, NvPublic, NvTemplate, ObjectAttributes, ObjectBlob, ObjectPublic,
    ObjectTemplate, SealedSecret, Ticket, TicketTag,
};

pub const PCR_COUNT: usize = 24;

pub const NV_INDEX_FIRST: u32 = 0x0100_0000;
pub const NV_INDEX_LAST: u32 = 0x0100_FFFF;

pub const SK_HANDLE: u32 = 0x8100_0001;
pub const EK_HANDLE: u32 = 0x8101_0001;

const TRANSIENT_BASE: u32 = 0x8000_0000;
const EVICT_BASE: u32 = 0x8100_0100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TpmError {
    #[error("all {MAX_SESSIONS} session slots in use")]
    SessionSlotsExhausted,
    #[error("no session 0x{0:08x}")]
    UnknownSession(u32),
    #[error("session is the wrong kind for this command")]
    WrongSessionKind,
    #[error("PCR index {0} out of range")]
    BadIndex(u32),
    #[error("PCR selection must be non-empty, ascending and in range")]
    BadSelection,
    #[error("NV handle 0x{0:08x} outside the index range")]
    NvHandleOutOfRange(u32),
    #[error("NV index 0x{0:08x} already defined")]
    IndexCollision(u32),
    #[error("NV index 0x{0:08x} not defined")]
    NvUndefined(u32),
    #[error("NV index 0x{0:08x} has not been written")]
    NvUnwritten(u32),
    #[error("NV index 0x{0:08x} does not hold the expected value")]
    NvMismatch(u32),
    #[error("attribute check failed: {0}")]
    Attributes(&'static str),
    #[error("no object at handle 0x{0:08x}")]
    UnknownHandle(u32),
    #[error("handle 0x{0:08x} is not a loaded storage key")]
    BadParent(u32),
    #[error("blob was not sealed under this parent")]
    WrongParent,
    #[error("object 0x{0:08x} has no private part")]
    NoPrivatePart(u32),
    #[error("ticket does not verify")]
    TicketMismatch,
    #[error("signature does not verify")]
    BadSignature,
    #[error("session policy digest differs from the approved policy")]
    PolicyMismatch,
    #[error("policy session does not satisfy the object's policy")]
    PolicyUnsatisfied,
    #[error("restricted key refuses externally supplied data")]
    RestrictedKeyRefusal,
    #[error("session cpHash does not match the command")]
    CpHashMismatch,
    #[error("session is locked to a different command")]
    CommandCodeMismatch,
}

impl TpmError {
    /// Stable short code used in traces and scenario expectations.
    pub fn code(&self) -> &'static str {
        match self {
            TpmError::SessionSlotsExhausted => "session-slots-exhausted",
            TpmError::UnknownSession(_) => "unknown-session",
            TpmError::WrongSessionKind => "wrong-session-kind",
            TpmError::BadIndex(_) => "bad-index",
            TpmError::BadSelection => "bad-selection",
            TpmError::NvHandleOutOfRange(_) => "nv-handle-out-of-range",
            TpmError::IndexCollision(_) => "index-collision",
            TpmError::NvUndefined(_) => "nv-undefined",
            TpmError::NvUnwritten(_) => "nv-unwritten",
            TpmError::NvMismatch(_) => "nv-mismatch",
            TpmError::Attributes(_) => "attributes",
            TpmError::UnknownHandle(_) => "unknown-handle",
            TpmError::BadParent(_) => "bad-parent",
            TpmError::WrongParent => "wrong-parent",
            TpmError::NoPrivatePart(_) => "no-private-part",
            TpmError::TicketMismatch => "ticket-mismatch",
            TpmError::BadSignature => "bad-signature",
            TpmError::PolicyMismatch => "policy-mismatch",
            TpmError::PolicyUnsatisfied => "policy-unsatisfied",
            TpmError::RestrictedKeyRefusal => "restricted-key-refusal",
            TpmError::CpHashMismatch => "cp-hash-mismatch",
            TpmError::CommandCodeMismatch => "command-code-mismatch",
        }
    }
}

pub type TpmResult<T> = Result<T, TpmError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    StorageKey,
    EndorsementKey,
    AttestationKey,
    ExternalPublic,
}

#[derive(Clone, Debug)]
struct LoadedObject {
    kind: ObjectKind,
    public: ObjectPublic,
    name: Name,
    key: Option<SigningKeyPair>,
    /// Only storage keys carry one.
    seal_key: Option<[u8; 32]>,
}

impl LoadedObject {
    fn new(kind: ObjectKind, public: ObjectPublic, key: Option<SigningKeyPair>) -> Self {
        let name = public.name();
        LoadedObject { kind, public, name, key, seal_key: None }
    }
}

#[derive(Clone, Debug)]
struct NvIndex {
    template: NvTemplate,
    handle: u32,
    auth_policy: Digest,
    value: Digest,
    written: bool,
}

impl NvIndex {
    fn public(&self) -> NvPublic {
        self.template.public(self.handle, self.auth_policy, self.written)
    }
}

/// One executed command, as it appears in a trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CommandRecord {
    pub cc: CommandCode,
    pub result: &'static str,
}

/// Signed attestation structure as returned by the certify commands.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedAttest {
    pub bytes: Vec<u8>,
    pub signature: Signature,
}

#[derive(Clone)]
pub struct VTpm {
    pcrs: [Digest; PCR_COUNT],
    nv: BTreeMap<u32, NvIndex>,
    transient: BTreeMap<u32, LoadedObject>,
    persistent: BTreeMap<u32, LoadedObject>,
    sessions: BTreeMap<u32, Session>,
    pps: [u8; 32],
    hierarchy_proof: [u8; 32],
    rng: ChaCha20Rng,
    clock: u64,
    next_transient: u32,
    next_evict: u32,
    next_session: u32,
    profile: Option<Vec<(CommandCode, Duration)>>,
    log: Vec<CommandRecord>,
}

impl std::fmt::Debug for VTpm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VTpm")
            .field("nv", &self.nv.keys().collect::<Vec<_>>())
            .field("sessions", &self.sessions.len())
            .finish_non_exhaustive()
    }
}

fn xor32(a: &[u8; 32], b: &[u8; 32]) -> [u8; 32] {
    std::array::from_fn(|i| a[i] ^ b[i])
}

impl VTpm {
    /// Builds a TPM whose seeds, primary keys and nonce stream are all a
    /// function of `seed`. The storage key and endorsement key are persistent
    /// at [`SK_HANDLE`] and [`EK_HANDLE`].
    pub fn manufacture(seed: &[u8; 32]) -> Self {
        let pps = hash_parts(&[b"vtpm-pps", seed]).0;
        let hierarchy_proof = hash_parts(&[b"vtpm-proof", seed]).0;
        let rng = ChaCha20Rng::from_seed(hash_parts(&[b"vtpm-rng", seed]).0);

        let sk_key = SigningKeyPair::from_seed(&hmac_raw(&pps, &[b"storage-primary"]).0);
        let sk_public = ObjectPublic {
            attributes: ObjectAttributes::storage_key(),
            auth_policy: ZERO_DIGEST,
            public_key: sk_key.public().clone(),
        };
        let mut sk = LoadedObject::new(ObjectKind::StorageKey, sk_public, Some(sk_key));
        sk.seal_key = Some(hmac_raw(&pps, &[b"storage-seal", &sk.name.0]).0);

        let ek_key = SigningKeyPair::from_seed(&hmac_raw(&pps, &[b"endorsement-primary"]).0);
        let ek_public = ObjectPublic {
            attributes: ObjectAttributes::endorsement_key(),
            auth_policy: ZERO_DIGEST,
            public_key: ek_key.public().clone(),
        };
        let ek = LoadedObject::new(ObjectKind::EndorsementKey, ek_public, Some(ek_key));

        let mut persistent = BTreeMap::new();
        persistent.insert(SK_HANDLE, sk);
        persistent.insert(EK_HANDLE, ek);

        VTpm {
            pcrs: [ZERO_DIGEST; PCR_COUNT],
            nv: BTreeMap::new(),
            transient: BTreeMap::new(),
            persistent,
            sessions: BTreeMap::new(),
            pps,
            hierarchy_proof,
            rng,
            clock: 0,
            next_transient: 0,
            next_evict: 0,
            next_session: 0,
            profile: None,
            log: Vec::new(),
        }
    }

    // ---- instrumentation -------------------------------------------------

    pub fn enable_profiling(&mut self) {
        self.profile = Some(Vec::new());
    }

    pub fn take_profile(&mut self) -> Vec<(CommandCode, Duration)> {
        self.profile.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn drain_log(&mut self) -> Vec<CommandRecord> {
        std::mem::take(&mut self.log)
    }

    fn run<T>(
        &mut self,
        cc: CommandCode,
        f: impl FnOnce(&mut Self) -> TpmResult<T>,
    ) -> TpmResult<T> {
        let start = self.profile.is_some().then(Instant::now);
        let out = f(self);
        if let (Some(profile), Some(start)) = (self.profile.as_mut(), start) {
            profile.push((cc, start.elapsed()));
        }
        let result = match &out {
            Ok(_) => "success",
            Err(e) => e.code(),
        };
        self.log.push(CommandRecord { cc, result });
        out
    }

    // ---- lookups ----------------------------------------------------------

    fn object(&self, handle: u32) -> TpmResult<&LoadedObject> {
        self.transient
            .get(&handle)
            .or_else(|| self.persistent.get(&handle))
            .ok_or(TpmError::UnknownHandle(handle))
    }

    fn session_mut(&mut self, handle: SessionHandle) -> TpmResult<&mut Session> {
        self.sessions.get_mut(&handle.0).ok_or(TpmError::UnknownSession(handle.0))
    }

    fn policy_session_mut(&mut self, handle: SessionHandle) -> TpmResult<&mut Session> {
        let s = self.session_mut(handle)?;
        if s.kind != SessionKind::Policy {
            return Err(TpmError::WrongSessionKind);
        }
        Ok(s)
    }

    fn nv_index(&self, handle: u32) -> TpmResult<&NvIndex> {
        self.nv.get(&handle).ok_or(TpmError::NvUndefined(handle))
    }

    /// Public area of a loaded object; needs no authorization.
    pub fn read_public(&self, handle: u32) -> TpmResult<ObjectPublic> {
        Ok(self.object(handle)?.public.clone())
    }

    pub fn object_name(&self, handle: u32) -> TpmResult<Name> {
        Ok(self.object(handle)?.name)
    }

    pub fn nv_public(&self, handle: u32) -> TpmResult<NvPublic> {
        Ok(self.nv_index(handle)?.public())
    }

    /// Direct register view for invariant checks; not a TPM command.
    pub fn pcr_value(&self, idx: u32) -> Option<Digest> {
        self.pcrs.get(idx as usize).copied()
    }

    /// Direct NV view for invariant checks; `None` when undefined or unwritten.
    pub fn nv_value(&self, handle: u32) -> Option<Digest> {
        self.nv.get(&handle).filter(|i| i.written).map(|i| i.value)
    }

    pub fn nv_handles(&self) -> Vec<u32> {
        self.nv.keys().copied().collect()
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn session(&self, handle: SessionHandle) -> Option<&Session> {
        self.sessions.get(&handle.0)
    }

    // ---- sessions -----------------------------------------------------------

    pub fn start_auth_session(&mut self, kind: SessionKind) -> TpmResult<(SessionHandle, Nonce)> {
        self.run(CommandCode::START_AUTH_SESSION, |t| {
            if t.sessions.len() >= MAX_SESSIONS {
                return Err(TpmError::SessionSlotsExhausted);
            }
            let base = match kind {
                SessionKind::Policy => session::POLICY_SESSION_BASE,
                SessionKind::Hmac => session::HMAC_SESSION_BASE,
            };
            let handle = SessionHandle(base | (t.next_session & 0x00FF_FFFF));
            t.next_session += 1;
            let mut nonce = Nonce::default();
            t.rng.fill_bytes(&mut nonce.0);
            t.sessions.insert(handle.0, Session::new(handle, kind, nonce));
            Ok((handle, nonce))
        })
    }

    /// Releases a transient object or a session. Persistent objects stay.
    pub fn flush_context(&mut self, handle: u32) -> TpmResult<()> {
        self.run(CommandCode::FLUSH_CONTEXT, |t| {
            if t.transient.remove(&handle).is_some() || t.sessions.remove(&handle).is_some() {
                Ok(())
            } else {
                Err(TpmError::UnknownHandle(handle))
            }
        })
    }

    /// Simulated reboot: PCRs reset, transient objects and sessions lost.
    pub fn restart(&mut self) {
        self.pcrs = [ZERO_DIGEST; PCR_COUNT];
        self.transient.clear();
        self.sessions.clear();
    }

    // ---- PCRs -------------------------------------------------------------

    pub fn pcr_extend(
        &mut self,
        idx: u32,
        d: &Digest,
        audit: Option<SessionHandle>,
    ) -> TpmResult<()> {
        self.run(CommandCode::PCR_EXTEND, |t| {
            if idx as usize >= PCR_COUNT {
                return Err(TpmError::BadIndex(idx));
            }
            if let Some(h) = audit {
                if t.session_mut(h)?.kind != SessionKind::Hmac {
                    return Err(TpmError::WrongSessionKind);
                }
            }
            let slot = &mut t.pcrs[idx as usize];
            *slot = hash_parts(&[&slot.0, &d.0]);
            if let Some(h) = audit {
                let handle = enc_u32(idx);
                let params = [&enc_u16(ALG_SHA256)[..], &d.0].concat();
                let s = t.session_mut(h)?;
                s.audit_digest = witness(
                    &s.audit_digest,
                    CommandCode::PCR_EXTEND,
                    &[&handle, &handle],
                    &params,
                    RC_SUCCESS,
                    &[],
                );
            }
            Ok(())
        })
    }

    pub fn pcr_read(&mut self, selection: &[u32]) -> TpmResult<Vec<Digest>> {
        self.run(CommandCode::PCR_READ, |t| {
            selection
                .iter()
                .map(|&i| t.pcrs.get(i as usize).copied().ok_or(TpmError::BadIndex(i)))
                .collect()
        })
    }

    // ---- NV -----------------------------------------------------------------

    pub fn nv_define_space(
        &mut self,
        handle: u32,
        template: NvTemplate,
        auth_policy: Digest,
    ) -> TpmResult<()> {
        self.run(CommandCode::NV_DEFINE_SPACE, |t| {
            if !(NV_INDEX_FIRST..=NV_INDEX_LAST).contains(&handle) {
                return Err(TpmError::NvHandleOutOfRange(handle));
            }
            if t.nv.contains_key(&handle) {
                return Err(TpmError::IndexCollision(handle));
            }
            let template = NvTemplate {
                attributes: template.attributes.without(NvAttributes::WRITTEN),
                ..template
            };
            t.nv.insert(
                handle,
                NvIndex { template, handle, auth_policy, value: ZERO_DIGEST, written: false },
            );
            Ok(())
        })
    }

    pub fn nv_extend(
        &mut self,
        handle: u32,
        d: &Digest,
        audit: Option<SessionHandle>,
    ) -> TpmResult<()> {
        self.run(CommandCode::NV_EXTEND, |t| {
            let index = t.nv_index(handle)?;
            if !index.template.attributes.has(NvAttributes::NT_EXTEND) {
                return Err(TpmError::Attributes("index is not extend-only"));
            }
            // The handle's name at command time, i.e. before WRITTEN flips.
            let name = index.public().name();
            if let Some(h) = audit {
                if t.session_mut(h)?.kind != SessionKind::Hmac {
                    return Err(TpmError::WrongSessionKind);
                }
            }
            let index = t.nv.get_mut(&handle).expect("checked above");
            index.value = hash_parts(&[&index.value.0, &d.0]);
            index.written = true;
            if let Some(h) = audit {
                let params = [&enc_u16(d.0.len() as u16)[..], &d.0].concat();
                let s = t.session_mut(h)?;
                s.audit_digest = witness(
                    &s.audit_digest,
                    CommandCode::NV_EXTEND,
                    &[&name.0, &name.0],
                    &params,
                    RC_SUCCESS,
                    &[],
                );
            }
            Ok(())
        })
    }

    pub fn nv_read(&mut self, handle: u32) -> TpmResult<Digest> {
        self.run(CommandCode::NV_READ, |t| {
            let index = t.nv_index(handle)?;
            if !index.written {
                return Err(TpmError::NvUnwritten(handle));
            }
            Ok(index.value)
        })
    }

    pub fn nv_certify(&mut self, handle: u32, signer: u32) -> TpmResult<SignedAttest> {
        self.run(CommandCode::NV_CERTIFY, |t| {
            let index = t.nv_index(handle)?;
            if !index.written {
                return Err(TpmError::NvUnwritten(handle));
            }
            let attest = Attest::Nv {
                object_name: index.public().name(),
                offset: 0,
                nv_contents: index.value,
            };
            t.sign_attest(signer, &attest)
        })
    }

    pub fn nv_undefine_space_special(
        &mut self,
        handle: u32,
        session: SessionHandle,
    ) -> TpmResult<()> {
        self.run(CommandCode::NV_UNDEFINE_SPACE_SPECIAL, |t| {
            let index = t.nv_index(handle)?;
            if !index.template.attributes.has(NvAttributes::POLICY_DELETE) {
                return Err(TpmError::Attributes("index is not policy-deletable"));
            }
            let name = index.public().name();
            let auth_policy = index.auth_policy;
            let s = t.session_mut(session)?;
            if s.kind != SessionKind::Policy {
                return Err(TpmError::PolicyUnsatisfied);
            }
            if s.command_locked != Some(CommandCode::NV_UNDEFINE_SPACE_SPECIAL) {
                return Err(TpmError::CommandCodeMismatch);
            }
            let expected_cp = hash_parts(&[
                &CommandCode::NV_UNDEFINE_SPACE_SPECIAL.to_bytes(),
                &name.0,
                &enc_u32(RH_PLATFORM),
            ]);
            if s.cp_hash != Some(expected_cp) {
                return Err(TpmError::CpHashMismatch);
            }
            if s.policy_digest != auth_policy {
                return Err(TpmError::PolicyUnsatisfied);
            }
            t.nv.remove(&handle);
            t.sessions.remove(&session.0);
            Ok(())
        })
    }

    // ---- objects ------------------------------------------------------------

    fn storage_parent(&self, parent: u32) -> TpmResult<&LoadedObject> {
        let obj = self.object(parent).map_err(|_| TpmError::BadParent(parent))?;
        match obj.seal_key {
            Some(_) => Ok(obj),
            None => Err(TpmError::BadParent(parent)),
        }
    }

    fn creation_ticket(&self, name: &Name, creation_hash: &Digest) -> Ticket {
        Ticket {
            tag: TicketTag::Creation,
            digest: hmac_raw(
                &self.hierarchy_proof,
                &[&ST_CREATION.to_be_bytes(), &name.0, &creation_hash.0],
            ),
        }
    }

    fn verified_ticket(&self, digest: &Digest, key_name: &Name) -> Ticket {
        Ticket {
            tag: TicketTag::Verified,
            digest: hmac_raw(
                &self.hierarchy_proof,
                &[&ST_VERIFIED.to_be_bytes(), &digest.0, &key_name.0],
            ),
        }
    }

    /// Generates a key under `parent`. Returns the blob, the creation hash
    /// and a creation ticket.
    pub fn create(
        &mut self,
        parent: u32,
        template: ObjectTemplate,
        auth_policy: Digest,
    ) -> TpmResult<(ObjectBlob, Digest, Ticket)> {
        self.run(CommandCode::CREATE, |t| {
            let parent_obj = t.storage_parent(parent)?;
            let seal_key = parent_obj.seal_key.expect("storage parent");
            let parent_name = parent_obj.name;

            let mut seed = [0u8; 32];
            t.rng.fill_bytes(&mut seed);
            let key = SigningKeyPair::from_seed(&seed);
            let public = ObjectPublic {
                attributes: template.attributes,
                auth_policy,
                public_key: key.public().clone(),
            };
            let name = public.name();
            let sealed = seal(&seal_key, &name, &key.secret_bytes());

            t.clock += 1;
            let creation_hash = hash_parts(&[
                &parent_name.0,
                &template.encode(),
                &t.clock.to_be_bytes(),
            ]);
            let ticket = t.creation_ticket(&name, &creation_hash);
            Ok((ObjectBlob { public, sealed }, creation_hash, ticket))
        })
    }

    pub fn load(&mut self, parent: u32, blob: &ObjectBlob) -> TpmResult<(u32, Name)> {
        self.run(CommandCode::LOAD, |t| {
            let seal_key = t.storage_parent(parent)?.seal_key.expect("storage parent");
            let name = blob.public.name();
            let secret = unseal(&seal_key, &name, &blob.sealed).ok_or(TpmError::WrongParent)?;
            let key = SigningKeyPair::from_secret_bytes(&secret).ok_or(TpmError::WrongParent)?;
            if key.public() != &blob.public.public_key {
                return Err(TpmError::WrongParent);
            }
            let kind = if blob.public.attributes.has(ObjectAttributes::DECRYPT) {
                ObjectKind::StorageKey
            } else {
                ObjectKind::AttestationKey
            };
            let mut obj = LoadedObject::new(kind, blob.public.clone(), Some(key));
            if kind == ObjectKind::StorageKey {
                obj.seal_key = Some(hmac_raw(&t.pps, &[b"storage-seal", &name.0]).0);
            }
            let handle = TRANSIENT_BASE + t.next_transient;
            t.next_transient += 1;
            t.transient.insert(handle, obj);
            Ok((handle, name))
        })
    }

    /// Loads a public key with no private part, e.g. the orchestrator's EK.
    pub fn load_external(&mut self, public: &ObjectPublic) -> TpmResult<(u32, Name)> {
        self.run(CommandCode::LOAD_EXTERNAL, |t| {
            let obj = LoadedObject::new(ObjectKind::ExternalPublic, public.clone(), None);
            let name = obj.name;
            let handle = TRANSIENT_BASE + t.next_transient;
            t.next_transient += 1;
            t.transient.insert(handle, obj);
            Ok((handle, name))
        })
    }

    /// Copies a transient object to the persistent store and returns its new
    /// handle. The transient copy remains until flushed.
    pub fn evict_control(&mut self, handle: u32) -> TpmResult<u32> {
        self.run(CommandCode::EVICT_CONTROL, |t| {
            let obj = t.transient.get(&handle).ok_or(TpmError::UnknownHandle(handle))?.clone();
            let persistent = EVICT_BASE + t.next_evict;
            t.next_evict += 1;
            t.persistent.insert(persistent, obj);
            Ok(persistent)
        })
    }

    fn sign_attest(&self, signer: u32, attest: &Attest) -> TpmResult<SignedAttest> {
        let obj = self.object(signer)?;
        let attrs = obj.public.attributes;
        if !attrs.has(ObjectAttributes::SIGN) || !attrs.has(ObjectAttributes::RESTRICTED) {
            return Err(TpmError::Attributes("attestations need a restricted signing key"));
        }
        let key = obj.key.as_ref().ok_or(TpmError::NoPrivatePart(signer))?;
        let bytes = attest.encode();
        let signature = key.sign(&bytes);
        Ok(SignedAttest { bytes, signature })
    }

    pub fn certify_creation(
        &mut self,
        object: u32,
        signer: u32,
        creation_hash: &Digest,
        ticket: &Ticket,
    ) -> TpmResult<SignedAttest> {
        self.run(CommandCode::CERTIFY_CREATION, |t| {
            let obj = t.object(object)?;
            let expected = t.creation_ticket(&obj.name, creation_hash);
            if *ticket != expected {
                return Err(TpmError::TicketMismatch);
            }
            let attest = Attest::Creation {
                object_name: obj.name,
                creation_hash: *creation_hash,
                auth_policy: obj.public.auth_policy,
                attributes: obj.public.attributes,
            };
            t.sign_attest(signer, &attest)
        })
    }

    pub fn verify_signature(
        &mut self,
        key: u32,
        digest: &Digest,
        signature: &Signature,
    ) -> TpmResult<Ticket> {
        self.run(CommandCode::VERIFY_SIGNATURE, |t| {
            let obj = t.object(key)?;
            if !verify(&obj.public.public_key, &digest.0, signature) {
                return Err(TpmError::BadSignature);
            }
            Ok(t.verified_ticket(digest, &obj.name))
        })
    }

    pub fn get_session_audit_digest(
        &mut self,
        signer: u32,
        session: SessionHandle,
    ) -> TpmResult<SignedAttest> {
        self.run(CommandCode::GET_SESSION_AUDIT_DIGEST, |t| {
            let s = t.sessions.get(&session.0).ok_or(TpmError::UnknownSession(session.0))?;
            if s.kind != SessionKind::Hmac {
                return Err(TpmError::WrongSessionKind);
            }
            let attest = Attest::SessionAudit { exclusive: false, session_digest: s.audit_digest };
            t.sign_attest(signer, &attest)
        })
    }

    /// Signs caller-supplied bytes. Restricted keys refuse outright; keys
    /// with a policy need a satisfied policy session, which is consumed.
    pub fn sign(
        &mut self,
        key: u32,
        message: &[u8],
        session: Option<SessionHandle>,
    ) -> TpmResult<Signature> {
        self.run(CommandCode::SIGN, |t| {
            let obj = t.object(key)?;
            let attrs = obj.public.attributes;
            if !attrs.has(ObjectAttributes::SIGN) {
                return Err(TpmError::Attributes("not a signing key"));
            }
            if attrs.has(ObjectAttributes::RESTRICTED) {
                return Err(TpmError::RestrictedKeyRefusal);
            }
            let signer = obj.key.clone().ok_or(TpmError::NoPrivatePart(key))?;
            let auth_policy = obj.public.auth_policy;
            let name = obj.name;
            let needs_policy =
                auth_policy != ZERO_DIGEST || !attrs.has(ObjectAttributes::USER_WITH_AUTH);
            match session {
                None if needs_policy => return Err(TpmError::PolicyUnsatisfied),
                None => {}
                Some(h) => {
                    let s = t.session_mut(h)?;
                    if s.kind != SessionKind::Policy {
                        return Err(TpmError::PolicyUnsatisfied);
                    }
                    if s.command_locked.is_some_and(|cc| cc != CommandCode::SIGN) {
                        return Err(TpmError::CommandCodeMismatch);
                    }
                    if let Some(cp) = s.cp_hash {
                        let own = hash_parts(&[
                            &CommandCode::SIGN.to_bytes(),
                            &name.0,
                            &enc_u16(message.len() as u16),
                            message,
                        ]);
                        if cp != own {
                            return Err(TpmError::CpHashMismatch);
                        }
                    }
                    if s.policy_digest != auth_policy {
                        return Err(TpmError::PolicyUnsatisfied);
                    }
                    t.sessions.remove(&h.0);
                }
            }
            Ok(signer.sign(message))
        })
    }

    // ---- policy commands ------------------------------------------------------

    pub fn policy_nv(
        &mut self,
        session: SessionHandle,
        handle: u32,
        expected: &Digest,
    ) -> TpmResult<()> {
        self.run(CommandCode::POLICY_NV, |t| {
            t.policy_session_mut(session)?;
            let index = t.nv_index(handle)?;
            if !index.written {
                return Err(TpmError::NvUnwritten(handle));
            }
            if index.value != *expected {
                return Err(TpmError::NvMismatch(handle));
            }
            let name = index.public().name();
            // offset 0, operation EQ
            let args = hash_parts(&[&expected.0, &enc_u16(0), &enc_u16(0)]);
            let s = t.policy_session_mut(session)?;
            s.policy_digest = hash_parts(&[
                &s.policy_digest.0,
                &CommandCode::POLICY_NV.to_bytes(),
                &args.0,
                &name.0,
            ]);
            Ok(())
        })
    }

    pub fn policy_pcr(&mut self, session: SessionHandle, selection: &[u32]) -> TpmResult<()> {
        self.run(CommandCode::POLICY_PCR, |t| {
            t.policy_session_mut(session)?;
            let ascending = selection.windows(2).all(|w| w[0] < w[1]);
            let in_range = selection.iter().all(|&i| (i as usize) < PCR_COUNT);
            if selection.is_empty() || !ascending || !in_range {
                return Err(TpmError::BadSelection);
            }
            let concat: Vec<u8> =
                selection.iter().flat_map(|&i| t.pcrs[i as usize].0).collect();
            let pcr_digest = hash(&concat);
            let s = t.policy_session_mut(session)?;
            s.policy_digest = hash_parts(&[
                &s.policy_digest.0,
                &CommandCode::POLICY_PCR.to_bytes(),
                &enc_pcr_selection(selection),
                &pcr_digest.0,
            ]);
            Ok(())
        })
    }

    /// `expiration` is always 0 in the protocols but is hashed as given.
    /// A signature over another session's nonce surfaces as `BadSignature`.
    pub fn policy_signed(
        &mut self,
        session: SessionHandle,
        key: u32,
        signature: &Signature,
        cp_hash: &Digest,
        expiration: u32,
    ) -> TpmResult<()> {
        self.run(CommandCode::POLICY_SIGNED, |t| {
            let nonce = t.policy_session_mut(session)?.nonce_tpm;
            let obj = t.object(key)?;
            let a_hash = hash_parts(&[&nonce.0, &enc_u32(expiration), &cp_hash.0]);
            if !verify(&obj.public.public_key, &a_hash.0, signature) {
                return Err(TpmError::BadSignature);
            }
            let key_name = obj.name;
            let s = t.policy_session_mut(session)?;
            if s.cp_hash.is_some_and(|c| c != *cp_hash) {
                return Err(TpmError::CpHashMismatch);
            }
            let inner = hash_parts(&[
                &s.policy_digest.0,
                &CommandCode::POLICY_SIGNED.to_bytes(),
                &key_name.0,
            ]);
            s.policy_digest = hash(&inner.0);
            s.cp_hash = Some(*cp_hash);
            Ok(())
        })
    }

    pub fn policy_command_code(&mut self, session: SessionHandle, cc: CommandCode) -> TpmResult<()> {
        self.run(CommandCode::POLICY_COMMAND_CODE, |t| {
            let s = t.policy_session_mut(session)?;
            if s.command_locked.is_some_and(|locked| locked != cc) {
                return Err(TpmError::CommandCodeMismatch);
            }
            s.command_locked = Some(cc);
            s.policy_digest = hash_parts(&[
                &s.policy_digest.0,
                &CommandCode::POLICY_COMMAND_CODE.to_bytes(),
                &cc.to_bytes(),
            ]);
            Ok(())
        })
    }

    pub fn policy_authorize(
        &mut self,
        session: SessionHandle,
        approved: &Digest,
        ticket: &Ticket,
        signer_name: &Name,
    ) -> TpmResult<()> {
        self.run(CommandCode::POLICY_AUTHORIZE, |t| {
            let current = t.policy_session_mut(session)?.policy_digest;
            if current != *approved {
                return Err(TpmError::PolicyMismatch);
            }
            if *ticket != t.verified_ticket(&hash(&approved.0), signer_name) {
                return Err(TpmError::TicketMismatch);
            }
            let inner = hash_parts(&[
                &ZERO_DIGEST.0,
                &CommandCode::POLICY_AUTHORIZE.to_bytes(),
                &signer_name.0,
            ]);
            t.policy_session_mut(session)?.policy_digest = hash(&inner.0);
            Ok(())
        })
    }

    // ---- introspection --------------------------------------------------------

    /// Every secret this TPM holds, for canary scans over traces and messages.
    pub fn secret_canaries(&self) -> Vec<[u8; 32]> {
        let mut out = vec![self.pps, self.hierarchy_proof];
        for obj in self.transient.values().chain(self.persistent.values()) {
            if let Some(k) = &obj.key {
                out.push(k.secret_bytes());
            }
            if let Some(s) = obj.seal_key {
                out.push(s);
            }
        }
        out
    }

    /// JSON dump of the observable state. Seeds, proofs and private keys are
    /// never included.
    pub fn snapshot(&self) -> serde_json::Value {
        let pcrs: BTreeMap<String, String> = self
            .pcrs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != ZERO_DIGEST)
            .map(|(i, v)| (i.to_string(), v.to_hex()))
            .collect();
        let nv: Vec<_> = self
            .nv
            .values()
            .map(|i| {
                json!({
                    "handle": format!("0x{:08x}", i.handle),
                    "name": i.public().name(),
                    "written": i.written,
                    "value": i.written.then(|| i.value.to_hex()),
                })
            })
            .collect();
        let objects = |m: &BTreeMap<u32, LoadedObject>| -> Vec<serde_json::Value> {
            m.iter()
                .map(|(h, o)| json!({ "handle": format!("0x{h:08x}"), "kind": o.kind, "name": o.name }))
                .collect()
        };
        let sessions: Vec<_> = self
            .sessions
            .values()
            .map(|s| {
                json!({
                    "handle": format!("0x{:08x}", s.handle.0),
                    "kind": s.kind,
                    "policy_digest": s.policy_digest,
                    "audit_digest": s.audit_digest,
                })
            })
            .collect();
        json!({
            "pcrs": pcrs,
            "nv": nv,
            "transient": objects(&self.transient),
            "persistent": objects(&self.persistent),
            "sessions": sessions,
        })
    }
}

fn seal(seal_key: &[u8; 32], name: &Name, secret: &[u8; 32]) -> SealedSecret {
    let pad = hmac_raw(seal_key, &[b"SEAL", &name.0]);
    let ciphertext = Digest(xor32(secret, &pad.0));
    let integrity = hmac_raw(seal_key, &[b"INTEGRITY", &name.0, &ciphertext.0]);
    SealedSecret { ciphertext, integrity }
}

fn unseal(seal_key: &[u8; 32], name: &Name, sealed: &SealedSecret) -> Option<[u8; 32]> {
    let integrity = hmac_raw(seal_key, &[b"INTEGRITY", &name.0, &sealed.ciphertext.0]);
    if integrity != sealed.integrity {
        return None;
    }
    let pad = hmac_raw(seal_key, &[b"SEAL", &name.0]);
    Some(xor32(&sealed.ciphertext.0, &pad.0))
}

#[cfg(test)]
mod tests;
