//! Direct wiring of an orchestrator and agents for unit tests, without the
//! network simulator.

use crate::agent::{VfAgent, ORCHESTRATOR};
use crate::crypto::{Digest, HmacKey};
use crate::messages::Message;
use crate::orchestrator::{Orchestrator, Rejection, Slot};

pub const PATH: &str = "/etc/vf.conf";

pub struct Bed {
    pub orc: Orchestrator,
    pub vf: VfAgent,
}

pub fn bed() -> Bed {
    bed_named("fw", 2)
}

pub fn bed_named(id: &str, seed: u8) -> Bed {
    let mut orc = Orchestrator::new(&[1; 32]);
    let vf = add_vf(&mut orc, id, seed);
    Bed { orc, vf }
}

pub fn add_vf(orc: &mut Orchestrator, id: &str, seed: u8) -> VfAgent {
    let hk = HmacKey([seed ^ 0x5a; 32]);
    let vf = VfAgent::new(id, &[seed; 32], hk.clone(), orc.ek_public().clone());
    orc.register_vf(id, "chain", vf.ek_public(), hk).unwrap();
    vf
}

/// Hands one orchestrator message to the VF and returns what it sends back.
pub fn to_vf(vf: &mut VfAgent, msg: Message) -> Vec<Message> {
    vf.handle(ORCHESTRATOR, msg, 0)
        .unwrap_or_else(|e| panic!("vf refused: {e}"))
        .out
        .into_iter()
        .map(|(_, m)| m)
        .collect()
}

pub fn enroll(orc: &mut Orchestrator, vf: &mut VfAgent) -> Result<(), Rejection> {
    let req = orc.begin_enrollment(&vf.vf_id).unwrap();
    let reply = to_vf(vf, req).remove(0);
    deliver_ak_cert(orc, &vf.vf_id, reply)
}

pub fn deliver_ak_cert(orc: &mut Orchestrator, id: &str, msg: Message) -> Result<(), Rejection> {
    match msg {
        Message::AkCertificate { ak_public, cert_info, signature } => {
            orc.verify_ak_certificate(id, &ak_public, &cert_info, &signature).map(|_| ())
        }
        other => panic!("unexpected {}", other.kind()),
    }
}

pub fn attach(orc: &mut Orchestrator, vf: &mut VfAgent, slot: Slot) -> Result<(), Rejection> {
    let req = orc.request_pcr_attach(&vf.vf_id, slot, None).unwrap();
    let mut replies = to_vf(vf, req);
    if !slot.is_nv {
        return Ok(());
    }
    match replies.remove(0) {
        Message::NvCertificate { idx, cert_info, signature } => {
            orc.verify_nvpcr_certificate(&vf.vf_id, idx, &cert_info, &signature)
        }
        other => panic!("unexpected {}", other.kind()),
    }
}

/// Deploys `content` and runs one full policy update on `slot`.
pub fn update(
    orc: &mut Orchestrator,
    vf: &mut VfAgent,
    slot: Slot,
    content: &[u8],
) -> Result<Digest, Rejection> {
    let (report, policy) = issue_update(orc, vf, slot, content);
    match report {
        Message::AuditReport { audit_info, signature, .. } => {
            orc.verify_audit(&vf.vf_id, &audit_info, &signature).map(|_| policy)
        }
        other => panic!("unexpected {}", other.kind()),
    }
}

/// Runs the update up to the VF's audit report without delivering it.
pub fn issue_update(orc: &mut Orchestrator, vf: &mut VfAgent, slot: Slot, content: &[u8]) -> (Message, Digest) {
    vf.tracer.deploy(PATH, content);
    let measured = vf.tracer.measured_bytes(PATH).unwrap();
    let d = orc.authenticate_measurement(&vf.vf_id, &measured).unwrap();
    let req = orc.compose_policy_update(&vf.vf_id, slot, d, PATH).unwrap();
    let policy = req.policy;
    (to_vf(vf, Message::UpdateRequest(req)).remove(0), policy)
}

pub fn detach_nv(orc: &mut Orchestrator, vf: &mut VfAgent, idx: u32) -> Result<(), String> {
    let req = orc.request_pcr_detach(&vf.vf_id, Slot::nv(idx)).map_err(|e| e.to_string())?;
    let nonce = match to_vf(vf, req).remove(0) {
        Message::DetachSessionNonce { nonce, .. } => nonce,
        other => panic!("unexpected {}", other.kind()),
    };
    let grant = orc.authorize_nv_deletion(&vf.vf_id, idx, &nonce).map_err(|e| e.to_string())?;
    vf.handle(ORCHESTRATOR, Message::DeletionGrant(grant), 0)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Challenges `prover` from `verifier` and returns the verifier's verdict.
pub fn attest(verifier: &mut VfAgent, prover: &mut VfAgent) -> Result<(), String> {
    let ch = verifier.challenge(&prover.vf_id, 0).map_err(|e| e.code().to_string())?;
    let resp = prover
        .handle(&verifier.vf_id, ch, 0)
        .map_err(|e| e.code().to_string())?
        .out
        .remove(0)
        .1;
    verifier
        .handle(&prover.vf_id, resp, 0)
        .map(|_| ())
        .map_err(|e| e.code().to_string())
}

/// Sends every directory entry to `vf`.
pub fn sync_directory(orc: &Orchestrator, vf: &mut VfAgent) {
    for ad in orc.graph.directory.values() {
        to_vf(vf, Message::Advertisement(ad.clone()));
    }
}
