use super::*;
use crate::agent::ORCHESTRATOR;
use crate::encoding::TPM_GENERATED;
use crate::testkit::*;
use crate::vtpm::{NvAttributes, TpmError};

const NV: u32 = 0x0100_0010;

fn enrolled() -> Bed {
    let mut b = bed();
    enroll(&mut b.orc, &mut b.vf).unwrap();
    b
}

fn ak_cert(b: &mut Bed, policy: Digest) -> (ObjectPublic, Vec<u8>, Signature) {
    b.orc.begin_enrollment("fw").unwrap();
    let req = Message::AkCreationRequest { template: ObjectTemplate::attestation_key(), policy };
    match to_vf(&mut b.vf, req).remove(0) {
        Message::AkCertificate { ak_public, cert_info, signature } => (ak_public, cert_info, signature),
        _ => unreachable!(),
    }
}

#[test]
fn enrollment_advertises_ak() {
    let b = enrolled();
    let rec = b.orc.record("fw").unwrap();
    assert_eq!(rec.ak.as_ref(), b.vf.ak_public());
    assert_eq!(rec.ak.as_ref().unwrap().auth_policy, b.orc.ak_policy());
    let ad = &b.orc.graph.directory["fw"];
    assert_eq!(ad.chain, "chain");
    assert!(crate::crypto::verify(
        &b.orc.ek_public().public_key,
        &policy::advertisement_message("fw", &ad.ak_public.encode()),
        &ad.signature
    ));
}

#[test]
fn ak_certificate_rejections_follow_check_order() {
    let mut b = bed();
    let good = b.orc.ak_policy();

    // A swapped public area fails on the name first, even with a bad magic.
    let (mut pk, mut cert, sig) = ak_cert(&mut b, good);
    pk.auth_policy = ZERO_DIGEST;
    cert[0] ^= 0xff;
    assert_eq!(b.orc.verify_ak_certificate("fw", &pk, &cert, &sig), Err(Rejection::Name));

    let (pk, mut cert, sig) = ak_cert(&mut b, good);
    cert[..4].copy_from_slice(&0xdead_beefu32.to_be_bytes());
    assert_eq!(b.orc.verify_ak_certificate("fw", &pk, &cert, &sig), Err(Rejection::Template));

    let (pk, cert, sig) = ak_cert(&mut b, crate::crypto::hash(b"other policy"));
    assert_eq!(b.orc.verify_ak_certificate("fw", &pk, &cert, &sig), Err(Rejection::Policy));

    let (pk, cert, mut sig) = ak_cert(&mut b, good);
    sig.0[10] ^= 1;
    assert_eq!(b.orc.verify_ak_certificate("fw", &pk, &cert, &sig), Err(Rejection::Signature));
    assert!(b.orc.record("fw").unwrap().ak.is_none());

    // Without a fresh request nothing is accepted, not even a valid cert.
    let (pk, cert, sig) = ak_cert(&mut b, good);
    assert_eq!(b.orc.verify_ak_certificate("fw", &pk, &cert, &sig), Ok(b.orc.graph.directory["fw"].clone()));
    assert_eq!(b.orc.verify_ak_certificate("fw", &pk, &cert, &sig), Err(Rejection::Unsolicited));
}

#[test]
fn template_with_extra_attribute_is_rejected() {
    let mut b = bed();
    b.orc.begin_enrollment("fw").unwrap();
    let mut attrs = ObjectTemplate::attestation_key();
    attrs.attributes = ObjectAttributes(attrs.attributes.0 | ObjectAttributes::USER_WITH_AUTH);
    let req = Message::AkCreationRequest { template: attrs, policy: b.orc.ak_policy() };
    let reply = to_vf(&mut b.vf, req).remove(0);
    assert_eq!(deliver_ak_cert(&mut b.orc, "fw", reply), Err(Rejection::Template));
}

#[test]
fn pcr_update_commits_and_matches_policy() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(16)).unwrap();
    let rec = b.orc.record("fw").unwrap();
    assert_eq!(rec.mock_pcr[&16], b.vf.tpm.pcr_value(16).unwrap());
    let policy = update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"v1").unwrap();
    let rec = b.orc.record("fw").unwrap();
    assert_eq!(rec.mock_pcr[&16], b.vf.tpm.pcr_value(16).unwrap());
    assert_eq!(rec.mock_policy(), policy);
    assert!(rec.issued[0].committed);
    assert_eq!(b.vf.current_policy().unwrap().policy, policy);
    assert!(b.vf.local_sync_errors().is_empty());
}

#[test]
fn nv_update_commits() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::nv(NV)).unwrap();
    let rec = b.orc.record("fw").unwrap();
    assert_eq!(rec.mock_nvpcr[0].value, b.vf.tpm.nv_value(NV).unwrap());
    assert_eq!(rec.mock_nvpcr[0].name, b.vf.tpm.nv_public(NV).unwrap().name());
    update(&mut b.orc, &mut b.vf, Slot::nv(NV), b"v1").unwrap();
    update(&mut b.orc, &mut b.vf, Slot::nv(NV), b"v2").unwrap();
    let rec = b.orc.record("fw").unwrap();
    assert_eq!(rec.mock_nvpcr[0].value, b.vf.tpm.nv_value(NV).unwrap());
}

#[test]
fn tampered_audit_rolls_back() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(16)).unwrap();
    let before = b.orc.record("fw").unwrap().mock_pcr[&16];
    let (report, _) = issue_update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"v1");
    let Message::AuditReport { mut audit_info, signature, .. } = report else { unreachable!() };
    let n = audit_info.len();
    audit_info[n - 1] ^= 1;
    assert_eq!(b.orc.verify_audit("fw", &audit_info, &signature), Err(Rejection::Digest));
    let rec = b.orc.record("fw").unwrap();
    assert_eq!(rec.mock_pcr[&16], before);
    assert!(!rec.has_pending_update());
    assert!(!rec.issued[0].committed);

    let (report, _) = issue_update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"v2");
    let Message::AuditReport { audit_info, mut signature, .. } = report else { unreachable!() };
    signature.0[0] ^= 1;
    assert_eq!(b.orc.verify_audit("fw", &audit_info, &signature), Err(Rejection::Signature));
}

#[test]
fn audit_of_a_different_measurement_is_rejected() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(16)).unwrap();
    b.vf.tracer.deploy(PATH, b"expected");
    let measured = b.vf.tracer.measured_bytes(PATH).unwrap();
    let d = b.orc.authenticate_measurement("fw", &measured).unwrap();
    let req = b.orc.compose_policy_update("fw", Slot::pcr(16), d, PATH).unwrap();
    b.vf.tracer.tamper(PATH, b"expected");
    let Message::AuditReport { audit_info, signature, .. } = to_vf(&mut b.vf, Message::UpdateRequest(req)).remove(0)
    else {
        unreachable!()
    };
    assert_eq!(b.orc.verify_audit("fw", &audit_info, &signature), Err(Rejection::Digest));
}

#[test]
fn update_before_enrollment_or_attach_is_refused() {
    let mut b = bed();
    assert_eq!(
        b.orc.compose_policy_update("fw", Slot::pcr(16), ZERO_DIGEST, PATH).unwrap_err().code(),
        "not-enrolled"
    );
    enroll(&mut b.orc, &mut b.vf).unwrap();
    assert_eq!(
        b.orc.compose_policy_update("fw", Slot::pcr(16), ZERO_DIGEST, PATH),
        Err(OrcError::NotAttached(Slot::pcr(16)))
    );
}

#[test]
fn update_must_target_an_index_of_the_preceding_policy() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(16)).unwrap();
    update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"a").unwrap();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(17)).unwrap();
    let err = b.orc.compose_policy_update("fw", Slot::pcr(17), ZERO_DIGEST, PATH).unwrap_err();
    assert_eq!(
        err,
        OrcError::SupersessionViolation { target: Slot::pcr(17), allowed: vec![Slot::pcr(16)] }
    );
    update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"b").unwrap();
    update(&mut b.orc, &mut b.vf, Slot::pcr(17), b"c").unwrap();
    assert!(b.orc.hazards().is_empty());
}

#[test]
fn detach_may_not_orphan_the_preceding_policy() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(16)).unwrap();
    update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"a").unwrap();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(17)).unwrap();
    assert_eq!(b.orc.request_pcr_detach("fw", Slot::pcr(16)), Err(OrcError::OrphansPolicy(Slot::pcr(16))));
    update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"b").unwrap();
    let msg = b.orc.request_pcr_detach("fw", Slot::pcr(16)).unwrap();
    to_vf(&mut b.vf, msg);
    assert!(!b.vf.attached_pcrs().contains(&16));
    assert_eq!(
        b.orc.request_pcr_attach("fw", Slot::pcr(16), None).unwrap_err(),
        OrcError::Retired(Slot::pcr(16))
    );
    update(&mut b.orc, &mut b.vf, Slot::pcr(17), b"c").unwrap();
}

fn unlocking(b: &Bed) -> Vec<Digest> {
    let rec = b.orc.record("fw").unwrap();
    b.vf.retained()
        .iter()
        .filter(|r| {
            let Some(p) = rec.issued.iter().find(|p| p.digest == r.policy) else { return false };
            let nv: Vec<_> = p.nv.iter().map(|n| (n.handle, n.value)).collect();
            let pcrs: Vec<_> = p.pcrs.iter().map(|(i, _)| *i).collect();
            b.vf.policy_unlocks(&nv, &pcrs, r)
        })
        .map(|r| r.policy)
        .collect()
}

#[test]
fn disjoint_policies_both_unlock_without_enforcement() {
    let mut b = enrolled();
    b.orc.set_enforce_supersession(false);
    attach(&mut b.orc, &mut b.vf, Slot::pcr(16)).unwrap();
    let p1 = update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"a").unwrap();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(17)).unwrap();
    let msg = b.orc.request_pcr_detach("fw", Slot::pcr(16)).unwrap();
    to_vf(&mut b.vf, msg);
    let p2 = update(&mut b.orc, &mut b.vf, Slot::pcr(17), b"b").unwrap();
    assert_eq!(unlocking(&b), vec![p1, p2]);
    assert_eq!(b.orc.hazards().len(), 1);
}

#[test]
fn superseded_policy_stops_unlocking() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(16)).unwrap();
    update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"a").unwrap();
    attach(&mut b.orc, &mut b.vf, Slot::nv(NV)).unwrap();
    update(&mut b.orc, &mut b.vf, Slot::pcr(16), b"b").unwrap();
    let p3 = update(&mut b.orc, &mut b.vf, Slot::nv(NV), b"c").unwrap();
    assert_eq!(unlocking(&b), vec![p3]);
}

#[test]
fn nv_certificate_checks() {
    let mut b = enrolled();
    let reply = |b: &mut Bed, idx| {
        let req = b.orc.request_pcr_attach("fw", Slot::nv(idx), None).unwrap();
        match to_vf(&mut b.vf, req).remove(0) {
            Message::NvCertificate { cert_info, signature, .. } => (cert_info, signature),
            _ => unreachable!(),
        }
    };
    let (mut cert, sig) = reply(&mut b, NV);
    let n = cert.len();
    cert[n - 1] ^= 1;
    assert_eq!(b.orc.verify_nvpcr_certificate("fw", NV, &cert, &sig), Err(Rejection::Contents));

    let (mut cert, sig) = reply(&mut b, NV + 1);
    cert[0] = 0;
    assert_eq!(b.orc.verify_nvpcr_certificate("fw", NV + 1, &cert, &sig), Err(Rejection::Template));

    let (cert, mut sig) = reply(&mut b, NV + 2);
    sig.0[3] ^= 1;
    assert_eq!(b.orc.verify_nvpcr_certificate("fw", NV + 2, &cert, &sig), Err(Rejection::Signature));

    // A certificate for a different index carries the wrong name.
    let (cert, sig) = reply(&mut b, NV + 3);
    b.orc.request_pcr_attach("fw", Slot::nv(NV + 4), None).unwrap();
    assert_eq!(b.orc.verify_nvpcr_certificate("fw", NV + 4, &cert, &sig), Err(Rejection::Name));
    assert!(b.orc.record("fw").unwrap().mock_nvpcr.is_empty());
}

#[test]
fn nv_index_is_created_with_the_deletion_policy() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::nv(NV)).unwrap();
    let public = b.vf.tpm.nv_public(NV).unwrap();
    assert_eq!(public.auth_policy, policy::nv_deletion_policy(&b.orc.ek_name()));
    assert!(public.attributes.has(NvAttributes::WRITTEN));
    assert_eq!(
        b.orc.request_pcr_attach("fw", Slot::nv(NV), None),
        Err(OrcError::InUse(Slot::nv(NV)))
    );
    assert_eq!(
        b.orc.request_pcr_attach("fw", Slot::nv(0x0200_0000), None),
        Err(OrcError::OutOfRange(Slot::nv(0x0200_0000)))
    );
}

#[test]
fn nv_detach_deletes_the_index() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::pcr(16)).unwrap();
    attach(&mut b.orc, &mut b.vf, Slot::nv(NV)).unwrap();
    update(&mut b.orc, &mut b.vf, Slot::nv(NV), b"a").unwrap();
    detach_nv(&mut b.orc, &mut b.vf, NV).unwrap();
    assert!(b.vf.tpm.nv_value(NV).is_none());
    assert!(b.vf.tpm.nv_handles().is_empty());
    assert!(b.orc.record("fw").unwrap().mock_nvpcr.is_empty());
    assert!(b.vf.attached_nvpcrs().is_empty());
}

#[test]
fn deletion_grant_needs_a_detach_request() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::nv(NV)).unwrap();
    assert_eq!(
        b.orc.authorize_nv_deletion("fw", NV, &Nonce([0; 16])),
        Err(OrcError::NothingPending("detach"))
    );
}

#[test]
fn deletion_grant_is_bound_to_the_session_nonce() {
    let mut b = enrolled();
    attach(&mut b.orc, &mut b.vf, Slot::nv(NV)).unwrap();
    let req = b.orc.request_pcr_detach("fw", Slot::nv(NV)).unwrap();
    to_vf(&mut b.vf, req);
    let grant = b.orc.authorize_nv_deletion("fw", NV, &Nonce([0; 16])).unwrap();
    let err = b.vf.handle(ORCHESTRATOR, Message::DeletionGrant(grant), 0).unwrap_err();
    assert_eq!(err, crate::agent::AgentError::Tpm(TpmError::BadSignature));
    assert!(b.vf.tpm.nv_value(NV).is_some());
    assert_eq!(b.vf.tpm.live_sessions(), 0);
}

#[test]
fn revocation_removes_directory_entry() {
    let mut b = enrolled();
    let mut peer = add_vf(&mut b.orc, "lb", 3);
    enroll(&mut b.orc, &mut peer).unwrap();
    sync_directory(&b.orc, &mut peer);
    assert!(peer.knows_peer("fw"));
    let notice = b.orc.revoke("fw").unwrap();
    assert!(!b.orc.graph.directory.contains_key("fw"));
    to_vf(&mut peer, notice);
    assert!(!peer.knows_peer("fw"));
    assert_eq!(b.orc.revoke("fw"), Err(OrcError::NotEnrolled("fw".into())));
}

#[test]
fn export_has_no_measurement_keys() {
    let b = enrolled();
    let text = b.orc.export().to_string();
    for canary in b.orc.secret_canaries() {
        assert!(!text.contains(&hex::encode(canary)));
    }
    assert!(text.contains(&b.orc.ek_name().to_hex()));
}

#[test]
fn magic_constant_is_checked_by_value() {
    assert_eq!(TPM_GENERATED.to_be_bytes(), [0xff, b'T', b'C', b'G']);
}
