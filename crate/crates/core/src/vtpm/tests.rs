use super::*;
use crate::crypto::{compute_name, PublicKeyBytes};

fn h(parts: &[&[u8]]) -> Digest {
    hash(&parts.concat())
}

fn tpm(n: u8) -> VTpm {
    VTpm::manufacture(&[n; 32])
}

fn d(tag: &str) -> Digest {
    hash(tag.as_bytes())
}

const CC_PA: [u8; 4] = [0, 0, 0x01, 0x6A];
const CC_PS: [u8; 4] = [0, 0, 0x01, 0x60];
const CC_PCC: [u8; 4] = [0, 0, 0x01, 0x6C];
const CC_USS: [u8; 4] = [0, 0, 0x01, 0x1F];

struct Orc {
    key: SigningKeyPair,
    public: ObjectPublic,
}

impl Orc {
    fn new() -> Self {
        let key = SigningKeyPair::from_seed(&[0xAA; 32]);
        let public = ObjectPublic {
            attributes: ObjectAttributes::endorsement_key(),
            auth_policy: ZERO_DIGEST,
            public_key: key.public().clone(),
        };
        Orc { key, public }
    }

    fn name(&self) -> Name {
        self.public.name()
    }

    fn ak_policy(&self) -> Digest {
        hash(&h(&[&[0; 32], &CC_PA, &self.name().0]).0)
    }
}

fn make_ak(t: &mut VTpm, policy: Digest) -> u32 {
    let (blob, _, _) = t.create(SK_HANDLE, ObjectTemplate::attestation_key(), policy).unwrap();
    let (handle, _) = t.load(SK_HANDLE, &blob).unwrap();
    handle
}

#[test]
fn sessions_start_fresh_and_distinct() {
    let mut t = tpm(1);
    let (h1, n1) = t.start_auth_session(SessionKind::Policy).unwrap();
    let (h2, n2) = t.start_auth_session(SessionKind::Policy).unwrap();
    assert_ne!(h1, h2);
    assert_ne!(n1, n2);
    assert_eq!(t.session(h1).unwrap().policy_digest, ZERO_DIGEST);
    assert_eq!(t.session(h1).unwrap().audit_digest, ZERO_DIGEST);

    let mut again = tpm(1);
    assert_eq!(again.start_auth_session(SessionKind::Policy).unwrap().1, n1);
}

#[test]
fn session_slots_run_out() {
    let mut t = tpm(1);
    for _ in 0..MAX_SESSIONS {
        t.start_auth_session(SessionKind::Hmac).unwrap();
    }
    assert_eq!(
        t.start_auth_session(SessionKind::Hmac),
        Err(TpmError::SessionSlotsExhausted)
    );
}

#[test]
fn pcr_extend_chains() {
    let mut t = tpm(1);
    let (a, b) = (d("a"), d("b"));
    t.pcr_extend(0, &a, None).unwrap();
    assert_eq!(t.pcr_value(0).unwrap(), h(&[&[0; 32], &a.0]));
    t.pcr_extend(0, &b, None).unwrap();
    t.pcr_extend(1, &b, None).unwrap();
    t.pcr_extend(1, &a, None).unwrap();
    assert_ne!(t.pcr_value(0), t.pcr_value(1));
    assert_eq!(t.pcr_extend(24, &a, None), Err(TpmError::BadIndex(24)));
}

#[test]
fn boot_chain_matches_fold() {
    let mut t = tpm(1);
    let values: Vec<Digest> = (0..6).map(|i| d(&format!("stage{i}"))).collect();
    for v in &values {
        t.pcr_extend(7, v, None).unwrap();
    }
    let folded = values.iter().fold(ZERO_DIGEST, |acc, v| h(&[&acc.0, &v.0]));
    assert_eq!(t.pcr_value(7).unwrap(), folded);
}

#[test]
fn nv_lifecycle() {
    let mut t = tpm(1);
    let idx = NV_INDEX_FIRST + 5;
    t.nv_define_space(idx, NvTemplate::nv_pcr(), d("pol")).unwrap();
    assert_eq!(t.nv_read(idx), Err(TpmError::NvUnwritten(idx)));
    assert_eq!(t.nv_certify(idx, EK_HANDLE), Err(TpmError::NvUnwritten(idx)));
    assert_eq!(
        t.nv_define_space(idx, NvTemplate::nv_pcr(), d("pol")),
        Err(TpmError::IndexCollision(idx))
    );
    assert_eq!(
        t.nv_define_space(0x0200_0000, NvTemplate::nv_pcr(), d("pol")),
        Err(TpmError::NvHandleOutOfRange(0x0200_0000))
    );
    assert_eq!(t.nv_extend(idx + 1, &d("x"), None), Err(TpmError::NvUndefined(idx + 1)));

    let iv = ZERO_DIGEST;
    t.nv_extend(idx, &iv, None).unwrap();
    assert_eq!(t.nv_read(idx).unwrap(), h(&[&[0; 32], &iv.0]));
    let x = d("x");
    t.nv_extend(idx, &x, None).unwrap();
    assert_eq!(t.nv_read(idx).unwrap(), h(&[&h(&[&[0; 32], &iv.0]).0, &x.0]));
}

#[test]
fn nv_name_depends_on_policy_and_written() {
    let mut t = tpm(1);
    t.nv_define_space(NV_INDEX_FIRST, NvTemplate::nv_pcr(), d("p1")).unwrap();
    t.nv_define_space(NV_INDEX_FIRST + 1, NvTemplate::nv_pcr(), d("p2")).unwrap();
    let a = t.nv_public(NV_INDEX_FIRST).unwrap();
    let mut b = t.nv_public(NV_INDEX_FIRST + 1).unwrap();
    b.handle = a.handle;
    assert_ne!(a.name(), b.name());
    let before = a.name();
    t.nv_extend(NV_INDEX_FIRST, &ZERO_DIGEST, None).unwrap();
    assert_ne!(t.nv_public(NV_INDEX_FIRST).unwrap().name(), before);
}

#[test]
fn audited_nv_extend_matches_reconstruction() {
    let mut t = tpm(2);
    let idx = NV_INDEX_FIRST + 9;
    t.nv_define_space(idx, NvTemplate::nv_pcr(), d("pol")).unwrap();
    t.nv_extend(idx, &ZERO_DIGEST, None).unwrap();
    let name = t.nv_public(idx).unwrap().name();
    let (hs, _) = t.start_auth_session(SessionKind::Hmac).unwrap();
    let upd = d("update");
    t.nv_extend(idx, &upd, Some(hs)).unwrap();

    let cp = h(&[&[0, 0, 1, 0x36], &name.0, &name.0, &[0, 32], &upd.0]);
    let rp = h(&[&[0; 4], &[0, 0, 1, 0x36]]);
    let expected = h(&[&[0; 32], &cp.0, &rp.0]);
    assert_eq!(t.session(hs).unwrap().audit_digest, expected);

    let signed = t.get_session_audit_digest(EK_HANDLE, hs).unwrap();
    let ek = t.read_public(EK_HANDLE).unwrap();
    assert!(verify(&ek.public_key, &signed.bytes, &signed.signature));
    assert_eq!(
        Attest::decode(&signed.bytes).unwrap(),
        Attest::SessionAudit { exclusive: false, session_digest: expected }
    );
}

#[test]
fn audited_pcr_extend_matches_reconstruction() {
    let mut t = tpm(2);
    let (hs, _) = t.start_auth_session(SessionKind::Hmac).unwrap();
    let upd = d("update");
    t.pcr_extend(16, &upd, Some(hs)).unwrap();
    let cp = h(&[&[0, 0, 1, 0x82], &[0, 0, 0, 16], &[0, 0, 0, 16], &[0, 0x0b], &upd.0]);
    let rp = h(&[&[0; 4], &[0, 0, 1, 0x82]]);
    assert_eq!(t.session(hs).unwrap().audit_digest, h(&[&[0; 32], &cp.0, &rp.0]));
}

#[test]
fn unaudited_session_reports_zero() {
    let mut t = tpm(2);
    let (hs, _) = t.start_auth_session(SessionKind::Hmac).unwrap();
    let signed = t.get_session_audit_digest(EK_HANDLE, hs).unwrap();
    assert_eq!(
        Attest::decode(&signed.bytes).unwrap(),
        Attest::SessionAudit { exclusive: false, session_digest: ZERO_DIGEST }
    );
    let (ps, _) = t.start_auth_session(SessionKind::Policy).unwrap();
    assert_eq!(t.get_session_audit_digest(EK_HANDLE, ps), Err(TpmError::WrongSessionKind));
    assert_eq!(t.pcr_extend(0, &ZERO_DIGEST, Some(ps)), Err(TpmError::WrongSessionKind));
}

#[test]
fn nv_certify_binds_contents() {
    let mut t = tpm(3);
    let idx = NV_INDEX_FIRST;
    t.nv_define_space(idx, NvTemplate::nv_pcr(), d("pol")).unwrap();
    t.nv_extend(idx, &ZERO_DIGEST, None).unwrap();
    let mut signed = t.nv_certify(idx, EK_HANDLE).unwrap();
    let ek = t.read_public(EK_HANDLE).unwrap();
    assert!(verify(&ek.public_key, &signed.bytes, &signed.signature));
    match Attest::decode(&signed.bytes).unwrap() {
        Attest::Nv { object_name, nv_contents, .. } => {
            assert_eq!(nv_contents, h(&[&[0; 32], &[0; 32]]));
            let expected = NvTemplate::nv_pcr().public(idx, d("pol"), true);
            assert_eq!(object_name, compute_name(&expected.encode()));
        }
        other => panic!("unexpected {other:?}"),
    }
    let last = signed.bytes.len() - 1;
    signed.bytes[last] ^= 1;
    assert!(!verify(&ek.public_key, &signed.bytes, &signed.signature));
}

#[test]
fn create_load_certify_and_ticket_separation() {
    let mut a = tpm(4);
    let mut b = tpm(5);
    let policy = d("policy");
    let (blob, creation, ticket) = a.create(SK_HANDLE, ObjectTemplate::attestation_key(), policy).unwrap();
    assert_eq!(blob.public.auth_policy, policy);
    let (handle, name) = a.load(SK_HANDLE, &blob).unwrap();
    assert_eq!(name, compute_name(&blob.public.encode()));

    let signed = a.certify_creation(handle, EK_HANDLE, &creation, &ticket).unwrap();
    match Attest::decode(&signed.bytes).unwrap() {
        Attest::Creation { object_name, auth_policy, attributes, .. } => {
            assert_eq!(object_name, name);
            assert_eq!(auth_policy, policy);
            assert_eq!(attributes, ObjectAttributes::attestation_key());
        }
        other => panic!("unexpected {other:?}"),
    }

    let forged = Ticket { tag: TicketTag::Creation, digest: d("random") };
    assert_eq!(
        a.certify_creation(handle, EK_HANDLE, &creation, &forged),
        Err(TpmError::TicketMismatch)
    );

    // The same blob cannot be loaded under another TPM's storage key.
    assert_eq!(b.load(SK_HANDLE, &blob), Err(TpmError::WrongParent));
    // And B does not accept A's ticket for a key B holds the same public for.
    let (b_handle, _) = b.load_external(&blob.public).unwrap();
    assert_eq!(
        b.certify_creation(b_handle, EK_HANDLE, &creation, &ticket),
        Err(TpmError::TicketMismatch)
    );
}

#[test]
fn tampered_blob_fails_to_load() {
    let mut t = tpm(4);
    let (mut blob, _, _) =
        t.create(SK_HANDLE, ObjectTemplate::attestation_key(), d("p")).unwrap();
    blob.public.auth_policy = ZERO_DIGEST;
    assert_eq!(t.load(SK_HANDLE, &blob), Err(TpmError::WrongParent));
    assert_eq!(t.load(EK_HANDLE, &blob), Err(TpmError::BadParent(EK_HANDLE)));
}

#[test]
fn persistent_object_survives_flush_and_restart() {
    let mut t = tpm(6);
    let template = ObjectTemplate {
        attributes: ObjectAttributes(ObjectAttributes::SIGN | ObjectAttributes::USER_WITH_AUTH),
    };
    let (blob, _, _) = t.create(SK_HANDLE, template, ZERO_DIGEST).unwrap();
    let (transient, _) = t.load(SK_HANDLE, &blob).unwrap();
    let persistent = t.evict_control(transient).unwrap();
    t.flush_context(transient).unwrap();
    assert_eq!(t.sign(transient, b"m", None), Err(TpmError::UnknownHandle(transient)));
    t.restart();
    let sig = t.sign(persistent, b"m", None).unwrap();
    assert!(verify(&blob.public.public_key, b"m", &sig));
    assert_eq!(t.flush_context(persistent), Err(TpmError::UnknownHandle(persistent)));
}

#[test]
fn ek_refuses_external_data() {
    let mut t = tpm(7);
    assert_eq!(t.sign(EK_HANDLE, b"adversary bytes", None), Err(TpmError::RestrictedKeyRefusal));
    let mut with_magic = TPM_GENERATED_PREFIX.to_vec();
    with_magic.extend_from_slice(b"forged attest");
    assert_eq!(t.sign(EK_HANDLE, &with_magic, None), Err(TpmError::RestrictedKeyRefusal));
}

const TPM_GENERATED_PREFIX: [u8; 4] = [0xff, 0x54, 0x43, 0x47];

#[test]
fn verify_signature_tickets_are_tpm_bound() {
    let orc = Orc::new();
    let mut a = tpm(8);
    let mut b = tpm(9);
    let approved = d("approved");
    let digest = hash(&approved.0);
    let sig = orc.key.sign(&digest.0);
    let (ka, _) = a.load_external(&orc.public).unwrap();
    let (kb, _) = b.load_external(&orc.public).unwrap();
    let ticket = a.verify_signature(ka, &digest, &sig).unwrap();
    assert_eq!(ticket.tag, TicketTag::Verified);

    let rogue = SigningKeyPair::from_seed(&[0xBB; 32]);
    assert_eq!(
        a.verify_signature(ka, &digest, &rogue.sign(&digest.0)),
        Err(TpmError::BadSignature)
    );

    // With a matching session digest, A accepts its own ticket; B does not.
    let _ = kb;
    for (t, ok) in [(&mut a, true), (&mut b, false)] {
        let (s, _) = t.start_auth_session(SessionKind::Policy).unwrap();
        t.sessions.get_mut(&s.0).unwrap().policy_digest = approved;
        let r = t.policy_authorize(s, &approved, &ticket, &orc.name());
        assert_eq!(r.is_ok(), ok, "{r:?}");
    }
}

#[test]
fn policy_nv_step_and_mismatch() {
    let mut t = tpm(10);
    let idx = NV_INDEX_FIRST + 1;
    t.nv_define_space(idx, NvTemplate::nv_pcr(), d("pol")).unwrap();
    let (s, _) = t.start_auth_session(SessionKind::Policy).unwrap();
    assert_eq!(t.policy_nv(s, idx, &ZERO_DIGEST), Err(TpmError::NvUnwritten(idx)));
    t.nv_extend(idx, &ZERO_DIGEST, None).unwrap();
    let value = t.nv_read(idx).unwrap();
    let name = t.nv_public(idx).unwrap().name();

    t.policy_nv(s, idx, &value).unwrap();
    let args = h(&[&value.0, &[0, 0], &[0, 0]]);
    let expected = h(&[&[0; 32], &[0, 0, 1, 0x49], &args.0, &name.0]);
    assert_eq!(t.session(s).unwrap().policy_digest, expected);

    t.nv_extend(idx, &d("more"), None).unwrap();
    assert_eq!(t.policy_nv(s, idx, &value), Err(TpmError::NvMismatch(idx)));
    assert_eq!(t.session(s).unwrap().policy_digest, expected);
}

#[test]
fn policy_pcr_step_and_selection_rules() {
    let mut t = tpm(11);
    let (s, _) = t.start_auth_session(SessionKind::Policy).unwrap();
    t.policy_pcr(s, &[3]).unwrap();
    let expected = h(&[&[0; 32], &[0, 0, 1, 0x7F], &[1, 0, 0, 0, 3], &hash(&[0; 32]).0]);
    assert_eq!(t.session(s).unwrap().policy_digest, expected);

    for bad in [&[][..], &[4, 2], &[2, 2], &[24]] {
        assert_eq!(t.policy_pcr(s, bad), Err(TpmError::BadSelection));
    }
    let (hs, _) = t.start_auth_session(SessionKind::Hmac).unwrap();
    assert_eq!(t.policy_pcr(hs, &[1]), Err(TpmError::WrongSessionKind));
}

#[test]
fn full_attestation_unlocks_ak_once() {
    let orc = Orc::new();
    let mut t = tpm(12);
    let ak = make_ak(&mut t, orc.ak_policy());
    let (orc_h, _) = t.load_external(&orc.public).unwrap();

    t.pcr_extend(16, &d("config"), None).unwrap();
    let approved = {
        let (s, _) = t.start_auth_session(SessionKind::Policy).unwrap();
        t.policy_pcr(s, &[16]).unwrap();
        let p = t.session(s).unwrap().policy_digest;
        t.flush_context(s.0).unwrap();
        p
    };
    let ticket = t
        .verify_signature(orc_h, &hash(&approved.0), &orc.key.sign(&hash(&approved.0).0))
        .unwrap();

    assert_eq!(t.sign(ak, b"nonce", None), Err(TpmError::PolicyUnsatisfied));

    let (s, _) = t.start_auth_session(SessionKind::Policy).unwrap();
    t.policy_pcr(s, &[16]).unwrap();
    t.policy_authorize(s, &approved, &ticket, &orc.name()).unwrap();
    assert_eq!(t.session(s).unwrap().policy_digest, orc.ak_policy());
    let ak_public = t.read_public(ak).unwrap();
    let sig = t.sign(ak, b"nonce", Some(s)).unwrap();
    assert!(verify(&ak_public.public_key, b"nonce", &sig));
    // consumed
    assert_eq!(t.sign(ak, b"nonce", Some(s)), Err(TpmError::UnknownSession(s.0)));

    // One more extend and the old approval no longer matches.
    t.pcr_extend(16, &d("drift"), None).unwrap();
    let (s, _) = t.start_auth_session(SessionKind::Policy).unwrap();
    t.policy_pcr(s, &[16]).unwrap();
    assert_eq!(
        t.policy_authorize(s, &approved, &ticket, &orc.name()),
        Err(TpmError::PolicyMismatch)
    );
    // Failure leaves the session alive.
    assert!(t.session(s).is_some());
    assert_eq!(t.sign(ak, b"nonce", Some(s)), Err(TpmError::PolicyUnsatisfied));
    assert!(t.session(s).is_some());
}

#[test]
fn policy_authorize_rejects_ticket_for_other_policy() {
    let orc = Orc::new();
    let mut t = tpm(13);
    let (orc_h, _) = t.load_external(&orc.public).unwrap();
    let other = d("other");
    let ticket = t
        .verify_signature(orc_h, &hash(&other.0), &orc.key.sign(&hash(&other.0).0))
        .unwrap();
    let (s, _) = t.start_auth_session(SessionKind::Policy).unwrap();
    assert_eq!(
        t.policy_authorize(s, &ZERO_DIGEST, &ticket, &orc.name()),
        Err(TpmError::TicketMismatch)
    );
}

struct DeletionSetup {
    t: VTpm,
    orc: Orc,
    orc_h: u32,
    idx: u32,
}

fn deletion_setup() -> DeletionSetup {
    let orc = Orc::new();
    let mut t = tpm(14);
    let (orc_h, _) = t.load_external(&orc.public).unwrap();
    let del_policy = h(&[&orc.ak_policy().0, &CC_PCC, &CC_USS]);
    let idx = NV_INDEX_FIRST + 0x10;
    t.nv_define_space(idx, NvTemplate::nv_pcr(), del_policy).unwrap();
    t.nv_extend(idx, &ZERO_DIGEST, None).unwrap();
    t.nv_define_space(idx + 1, NvTemplate::nv_pcr(), del_policy).unwrap();
    t.nv_extend(idx + 1, &ZERO_DIGEST, None).unwrap();
    DeletionSetup { t, orc, orc_h, idx }
}

/// Drives the VF half of the deletion flow for a grant minted for `grant_for`
/// and tries to delete `target`.
fn run_deletion(s: &mut DeletionSetup, grant_for: u32, target: u32, lock: bool) -> TpmResult<()> {
    let t = &mut s.t;
    let (ps, nonce) = t.start_auth_session(SessionKind::Policy).unwrap();
    let h_pol = hash(&h(&[&[0; 32], &CC_PS, &s.orc.name().0]).0);
    let ticket = t
        .verify_signature(s.orc_h, &hash(&h_pol.0), &s.orc.key.sign(&hash(&h_pol.0).0))
        .unwrap();
    let name = t.nv_public(grant_for).unwrap().name();
    let h_cp = h(&[&CC_USS, &name.0, &[0x40, 0, 0, 0x0C]]);
    let a_hash = h(&[&nonce.0, &[0; 4], &h_cp.0]);
    t.policy_signed(ps, s.orc_h, &s.orc.key.sign(&a_hash.0), &h_cp, 0)?;
    assert_eq!(t.session(ps).unwrap().policy_digest, h_pol);
    assert_eq!(t.session(ps).unwrap().cp_hash, Some(h_cp));
    t.policy_authorize(ps, &h_pol, &ticket, &s.orc.name())?;
    if lock {
        t.policy_command_code(ps, CommandCode::NV_UNDEFINE_SPACE_SPECIAL)?;
    }
    t.nv_undefine_space_special(target, ps)
}

#[test]
fn deletion_flow_removes_index() {
    let mut s = deletion_setup();
    let idx = s.idx;
    run_deletion(&mut s, idx, idx, true).unwrap();
    assert_eq!(s.t.nv_read(idx), Err(TpmError::NvUndefined(idx)));
    assert_eq!(s.t.live_sessions(), 0);
}

#[test]
fn deletion_grant_is_index_bound() {
    let mut s = deletion_setup();
    let idx = s.idx;
    assert_eq!(run_deletion(&mut s, idx, idx + 1, true), Err(TpmError::CpHashMismatch));
    assert!(s.t.nv_read(idx + 1).is_ok());
}

#[test]
fn deletion_needs_command_lock() {
    let mut s = deletion_setup();
    let idx = s.idx;
    assert_eq!(run_deletion(&mut s, idx, idx, false), Err(TpmError::CommandCodeMismatch));
    assert!(s.t.nv_read(idx).is_ok());
}

#[test]
fn deletion_with_plain_session_refused() {
    let mut s = deletion_setup();
    let (hs, _) = s.t.start_auth_session(SessionKind::Hmac).unwrap();
    assert_eq!(s.t.nv_undefine_space_special(s.idx, hs), Err(TpmError::PolicyUnsatisfied));
    let (ps, _) = s.t.start_auth_session(SessionKind::Policy).unwrap();
    assert_eq!(s.t.nv_undefine_space_special(s.idx, ps), Err(TpmError::CommandCodeMismatch));
}

#[test]
fn policy_signed_is_nonce_bound() {
    let mut s = deletion_setup();
    let t = &mut s.t;
    let (_, first_nonce) = t.start_auth_session(SessionKind::Policy).unwrap();
    let (second, _) = t.start_auth_session(SessionKind::Policy).unwrap();
    let h_cp = d("cp");
    let sig = s.orc.key.sign(&h(&[&first_nonce.0, &[0; 4], &h_cp.0]).0);
    assert_eq!(t.policy_signed(second, s.orc_h, &sig, &h_cp, 0), Err(TpmError::BadSignature));
}

#[test]
fn command_lock_blocks_other_commands() {
    let orc = Orc::new();
    let mut t = tpm(15);
    let ak = make_ak(&mut t, ZERO_DIGEST);
    let (s, _) = t.start_auth_session(SessionKind::Policy).unwrap();
    t.policy_command_code(s, CommandCode::NV_UNDEFINE_SPACE_SPECIAL).unwrap();
    assert_eq!(t.sign(ak, b"m", Some(s)), Err(TpmError::CommandCodeMismatch));
    assert_eq!(
        t.policy_command_code(s, CommandCode::SIGN),
        Err(TpmError::CommandCodeMismatch)
    );
    let _ = orc;
}

#[test]
fn snapshot_and_log_carry_no_secrets() {
    let orc = Orc::new();
    let mut t = tpm(16);
    make_ak(&mut t, orc.ak_policy());
    t.nv_define_space(NV_INDEX_FIRST, NvTemplate::nv_pcr(), d("p")).unwrap();
    t.nv_extend(NV_INDEX_FIRST, &ZERO_DIGEST, None).unwrap();
    let dump = serde_json::to_string(&t.snapshot()).unwrap()
        + &serde_json::to_string(&t.drain_log()).unwrap();
    let canaries = t.secret_canaries();
    assert!(canaries.len() >= 5);
    for c in canaries {
        assert!(!dump.contains(&hex::encode(c)));
    }
}

#[test]
fn log_records_mnemonics_and_results() {
    let mut t = tpm(17);
    t.pcr_extend(1, &ZERO_DIGEST, None).unwrap();
    let _ = t.nv_read(NV_INDEX_FIRST);
    let log = t.drain_log();
    assert_eq!(log[0], CommandRecord { cc: CommandCode::PCR_EXTEND, result: "success" });
    assert_eq!(log[1], CommandRecord { cc: CommandCode::NV_READ, result: "nv-undefined" });
    assert!(t.drain_log().is_empty());
}

#[test]
fn profiling_records_each_command() {
    let mut t = tpm(18);
    t.enable_profiling();
    t.pcr_extend(1, &ZERO_DIGEST, None).unwrap();
    t.start_auth_session(SessionKind::Hmac).unwrap();
    let p = t.take_profile();
    assert_eq!(
        p.iter().map(|(cc, _)| *cc).collect::<Vec<_>>(),
        vec![CommandCode::PCR_EXTEND, CommandCode::START_AUTH_SESSION]
    );
}

#[test]
fn external_key_cannot_sign() {
    let orc = Orc::new();
    let mut t = tpm(19);
    let mut public = orc.public.clone();
    public.attributes = ObjectAttributes(ObjectAttributes::SIGN | ObjectAttributes::USER_WITH_AUTH);
    let (h_ext, _) = t.load_external(&public).unwrap();
    assert_eq!(t.sign(h_ext, b"m", None), Err(TpmError::NoPrivatePart(h_ext)));
    let _ = PublicKeyBytes(vec![]);
}
