//! Runs a scenario: the orchestrator, one agent per VF, the adversary
//! and a delivery queue ordered by (tick, sequence number).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::{json, Value};

use super::adversary::Adversary;
use super::scenario::{Assertion, Expectation, Op, Scenario, Step};
use super::trace::{canary_digests, secret_hits, Trace};
use super::{Envelope, Protocol};
use crate::agent::tracer::Tracer;
use crate::agent::{RetainedPolicy, VfAgent, CHALLENGE_TIMEOUT, ORCHESTRATOR};
use crate::crypto::{hash, hash_parts, Digest, HmacKey};
use crate::messages::Message;
use crate::orchestrator::{IssuedPolicy, OrcError, Orchestrator, Rejection, Slot};

/// Deliveries allowed within one step before the run is declared stuck.
const MAX_DELIVERIES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub label: String,
    pub op: &'static str,
    pub outcome: String,
    pub errors: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub detail: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    /// Index of the step after which the failure was seen; `None` for
    /// checks that run on the finished trace.
    pub step: Option<usize>,
    pub label: String,
    pub assertion: &'static str,
    pub detail: Vec<String>,
    /// Mock against live register values, per VF, where they differ.
    pub diff: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub steps: Vec<StepReport>,
    pub failure: Option<Failure>,
    /// Attestations accepted by some verifier.
    pub accepted: usize,
    /// Of those, how many matched only a policy whose audit never came back.
    pub soundness_violations: usize,
    /// Non-pass adversary actions, by name.
    pub adversary_actions: BTreeMap<String, usize>,
    pub hazards: Vec<String>,
    pub expectation_met: bool,
}

#[derive(Default)]
struct StepState {
    label: String,
    errors: Vec<String>,
    events: BTreeSet<&'static str>,
    detail: Vec<String>,
    unsound: Vec<String>,
}

pub struct World {
    scenario: Scenario,
    seed: u64,
    pub orc: Orchestrator,
    pub agents: BTreeMap<String, VfAgent>,
    /// Orchestrator-side copies of each VF's files, used to compute the
    /// expected measurement.
    reference: BTreeMap<String, Tracer>,
    adversary: Adversary,
    queue: BTreeMap<(u64, u64), Envelope>,
    next_seq: u64,
    tick: u64,
    trace: Trace,
    cur: StepState,
    steps: Vec<StepReport>,
    failure: Option<Failure>,
    accepted: usize,
    soundness_violations: usize,
    actions: BTreeMap<String, usize>,
    /// Sends made while handling a delivery go out after its trace lines.
    outbox: Vec<(String, String, Message)>,
}

fn derive(master: &Digest, label: &str, id: &str) -> [u8; 32] {
    hash_parts(&[&master.0, label.as_bytes(), &[0], id.as_bytes()]).0
}

impl World {
    pub fn new(scenario: &Scenario, seed: u64) -> Self {
        let master = hash_parts(&[b"scenario-seed", &seed.to_be_bytes()]);
        let mut orc = Orchestrator::new(&derive(&master, "orchestrator", ""));
        orc.set_enforce_supersession(scenario.enforce_supersession);
        let mut agents = BTreeMap::new();
        let mut reference = BTreeMap::new();
        for spec in &scenario.vfs {
            let hk = HmacKey(spec.hk.map(|d| d.0).unwrap_or_else(|| derive(&master, "hk", &spec.id)));
            let mut agent =
                VfAgent::new(&spec.id, &derive(&master, "vf", &spec.id), hk.clone(), orc.ek_public().clone());
            orc.register_vf(&spec.id, &spec.chain, agent.ek_public(), hk)
                .expect("ids are validated unique");
            let mut refc = Tracer::new(HmacKey([0; 32]));
            agent.tracer.load_manifest(&spec.files).expect("manifest is validated hex");
            refc.load_manifest(&spec.files).expect("manifest is validated hex");
            agent.tpm.drain_log();
            agents.insert(spec.id.clone(), agent);
            reference.insert(spec.id.clone(), refc);
        }
        World {
            scenario: scenario.clone(),
            seed,
            orc,
            agents,
            reference,
            adversary: Adversary::new(scenario.adversary.clone()),
            queue: BTreeMap::new(),
            next_seq: 1,
            tick: 0,
            trace: Trace::new(),
            cur: StepState::default(),
            steps: Vec::new(),
            failure: None,
            accepted: 0,
            soundness_violations: 0,
            actions: BTreeMap::new(),
            outbox: Vec::new(),
        }
    }

    /// Runs every step, halting at the first failed assertion.
    pub fn run(mut self) -> (RunReport, Trace) {
        let steps = self.scenario.steps.clone();
        for (i, step) in steps.iter().enumerate() {
            self.run_step(i, step);
            if self.failure.is_some() {
                break;
            }
        }
        self.finish()
    }

    fn enabled(&self, a: Assertion) -> bool {
        self.scenario.assertions.contains(&a)
    }

    fn run_step(&mut self, index: usize, step: &Step) {
        let label = step.label(index);
        self.cur = StepState { label: label.clone(), ..StepState::default() };
        self.trace.push("step", json!({"index": index, "label": label, "op": step.op}));
        self.execute(&step.op);
        self.drain_local_logs();
        self.flush();
        self.pump();
        self.expire();

        let outcome = match terminal_event(&step.op) {
            Some(ev) if self.cur.events.contains(ev) => "ok".to_string(),
            Some(_) => self.cur.errors.first().cloned().unwrap_or_else(|| "incomplete".into()),
            None => self.cur.errors.first().cloned().unwrap_or_else(|| "ok".into()),
        };
        let report = StepReport {
            index,
            label: label.clone(),
            op: step.op.name(),
            outcome: outcome.clone(),
            errors: self.cur.errors.clone(),
            detail: self.cur.detail.clone(),
        };
        self.trace.push("step_result", serde_json::to_value(&report).expect("report serializes"));
        self.steps.push(report);

        let mut checks: Vec<(Assertion, Vec<String>)> = Vec::new();
        if self.enabled(Assertion::Outcomes) {
            let want = step.expect.clone().unwrap_or_else(|| "ok".into());
            let mut bad = Vec::new();
            if want != outcome {
                bad.push(format!("outcome {outcome}, expected {want}"));
            }
            for e in &step.expect_errors {
                if !self.cur.errors.contains(e) {
                    bad.push(format!("error {e} was not reported"));
                }
            }
            checks.push((Assertion::Outcomes, bad));
        }
        if self.enabled(Assertion::Soundness) {
            checks.push((Assertion::Soundness, std::mem::take(&mut self.cur.unsound)));
        }
        if self.enabled(Assertion::Sync) {
            checks.push((Assertion::Sync, self.sync_errors()));
        }
        if self.enabled(Assertion::LocalSync) {
            let errs = self
                .agents
                .iter()
                .flat_map(|(id, a)| a.local_sync_errors().into_iter().map(move |e| format!("{id}: {e}")))
                .collect();
            checks.push((Assertion::LocalSync, errs));
        }
        if self.enabled(Assertion::Freshness) {
            let errs = self
                .agents
                .keys()
                .filter_map(|id| {
                    let n = self.unlocking(id);
                    (n > 1).then(|| format!("{id}: {n} held policies unlock the AK"))
                })
                .collect();
            checks.push((Assertion::Freshness, errs));
        }
        for (a, errs) in checks {
            self.trace.push(
                "assertion",
                json!({"step": index, "name": a.name(), "ok": errs.is_empty(), "detail": errs}),
            );
            if !errs.is_empty() && self.failure.is_none() {
                self.failure = Some(Failure {
                    step: Some(index),
                    label: label.clone(),
                    assertion: a.name(),
                    detail: errs,
                    diff: self.state_diff(),
                });
            }
        }
        self.trace.push("checkpoint", json!({"step": index, "orchestrator": self.orc.export(), "agents": self.snapshots()}));
    }

    fn finish(mut self) -> (RunReport, Trace) {
        let mut canaries = self.orc.secret_canaries();
        for a in self.agents.values() {
            canaries.extend(a.secret_canaries());
        }
        let digests = canary_digests(&canaries);
        let mut trace = Trace::new();
        trace.push(
            "scenario",
            json!({
                "name": self.scenario.name,
                "seed": self.seed,
                "canaries": digests,
                "vfs": self.scenario.vfs.iter().map(|v| json!({"id": v.id, "chain": v.chain})).collect::<Vec<_>>(),
                "enforce_supersession": self.scenario.enforce_supersession,
            }),
        );
        for l in self.trace.lines() {
            let Value::Object(m) = l else { continue };
            let mut m = m.clone();
            let kind = m.remove("type").and_then(|t| t.as_str().map(String::from)).unwrap_or_default();
            trace.push(&kind, Value::Object(m));
        }
        if self.enabled(Assertion::NoSecrets) {
            let hits = secret_hits(&trace.to_jsonl(), &digests);
            let detail: Vec<String> = hits.iter().map(|l| format!("secret on trace line {l}")).collect();
            trace.push("assertion", json!({"step": null, "name": "no_secrets", "ok": hits.is_empty(), "detail": detail}));
            if !hits.is_empty() && self.failure.is_none() {
                self.failure = Some(Failure {
                    step: None,
                    label: "end".into(),
                    assertion: Assertion::NoSecrets.name(),
                    detail,
                    diff: Value::Null,
                });
            }
        }
        let expectation_met = match self.scenario.expect {
            Expectation::Pass => self.failure.is_none(),
            Expectation::Fail => self.failure.as_ref().is_some_and(|f| {
                self.scenario.expect_assertion.map_or(true, |a| a.name() == f.assertion)
            }),
        };
        let report = RunReport {
            name: self.scenario.name.clone(),
            seed: self.seed,
            steps: self.steps,
            failure: self.failure,
            accepted: self.accepted,
            soundness_violations: self.soundness_violations,
            adversary_actions: self.actions,
            hazards: self.orc.hazards().to_vec(),
            expectation_met,
        };
        trace.push("result", serde_json::to_value(&report).expect("report serializes"));
        (report, trace)
    }

    fn err(&mut self, code: &str) {
        self.cur.errors.push(code.to_string());
    }

    // ---- ops --------------------------------------------------------------

    fn execute(&mut self, op: &Op) {
        match op {
            Op::Enroll { vf } => match self.orc.begin_enrollment(vf) {
                Ok(m) => self.send(ORCHESTRATOR, vf, m),
                Err(e) => self.err(e.code()),
            },
            Op::Attach { vf, slot, iv } => match self.orc.request_pcr_attach(vf, *slot, *iv) {
                Ok(m) => self.send(ORCHESTRATOR, vf, m),
                Err(e) => self.err(e.code()),
            },
            Op::Deploy { vf, path, content } => {
                self.reference.get_mut(vf).expect("validated").deploy(path, content.as_bytes());
                self.agents.get_mut(vf).expect("validated").tracer.deploy(path, content.as_bytes());
            }
            Op::Update { vf, slot, path } => {
                let Some(bytes) = self.reference[vf].measured_bytes(path) else {
                    return self.err("measurement-missing");
                };
                let req = self
                    .orc
                    .authenticate_measurement(vf, &bytes)
                    .and_then(|d| self.orc.compose_policy_update(vf, *slot, d, path));
                match req {
                    Ok(r) => self.send(ORCHESTRATOR, vf, Message::UpdateRequest(r)),
                    Err(e) => self.err(e.code()),
                }
            }
            Op::Detach { vf, slot } => match self.orc.request_pcr_detach(vf, *slot) {
                Ok(m) => self.send(ORCHESTRATOR, vf, m),
                Err(e) => self.err(e.code()),
            },
            Op::Attest { verifier, prover } => {
                let now = self.tick;
                match self.agents.get_mut(verifier).expect("validated").challenge(prover, now) {
                    Ok(m) => self.send(verifier, prover, m),
                    Err(e) => self.err(e.code()),
                }
            }
            Op::Revoke { vf } => {
                if let Err(e) = self.revoke(vf) {
                    self.err(e.code());
                }
            }
            Op::TamperFile { vf, path, content } => {
                self.agents.get_mut(vf).expect("validated").tracer.tamper(path, content.as_bytes());
            }
            Op::RogueExtend { vf, slot, data } => {
                let d = hash(data.as_bytes());
                let tpm = &mut self.agents.get_mut(vf).expect("validated").tpm;
                let r = if slot.is_nv { tpm.nv_extend(slot.idx, &d, None) } else { tpm.pcr_extend(slot.idx, &d, None) };
                if let Err(e) = r {
                    self.err(e.code());
                }
            }
            Op::Restart { vf } => self.agents.get_mut(vf).expect("validated").restart(),
            Op::Adversary { rules } => self.adversary.set_rules(rules.clone()),
            Op::Replay { when, nth, to } => match self.adversary.recall(when, *nth).cloned() {
                Some(mut env) => {
                    if let Some(to) = to {
                        env.to = to.clone();
                    }
                    env.step = self.cur.label.clone();
                    self.enqueue_forged(env, 0);
                }
                None => self.err("nothing-to-replay"),
            },
            Op::Inject { from, to, payload } => {
                let env = Envelope {
                    seq: 0,
                    from: from.clone(),
                    to: to.clone(),
                    protocol: Protocol::of(payload),
                    step: self.cur.label.clone(),
                    payload: payload.clone(),
                };
                self.enqueue_forged(env, 0);
            }
            Op::Tick { ticks } => self.tick += ticks,
            Op::SetEnforce { on } => self.orc.set_enforce_supersession(*on),
            Op::Check { vf, nv_present, nv_absent, unlocking, knows_peer, forgot_peer, payload_fields } => {
                let bad = self.check(vf, nv_present, nv_absent, *unlocking, knows_peer, forgot_peer, payload_fields);
                if !bad.is_empty() {
                    self.cur.detail.extend(bad);
                    self.err("check-failed");
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn check(
        &self,
        vf: &str,
        nv_present: &[u32],
        nv_absent: &[u32],
        unlocking: Option<usize>,
        knows_peer: &[String],
        forgot_peer: &[String],
        payload_fields: &Option<(String, Vec<String>)>,
    ) -> Vec<String> {
        let agent = &self.agents[vf];
        let handles = agent.tpm.nv_handles();
        let mut bad = Vec::new();
        for h in nv_present {
            if !handles.contains(h) {
                bad.push(format!("nv 0x{h:08x} is not defined"));
            }
        }
        for h in nv_absent {
            if handles.contains(h) {
                bad.push(format!("nv 0x{h:08x} is still defined"));
            }
        }
        if let Some(want) = unlocking {
            let n = self.unlocking(vf);
            if n != want {
                bad.push(format!("{n} held policies unlock, expected {want}"));
            }
        }
        for p in knows_peer {
            if !agent.knows_peer(p) {
                bad.push(format!("{vf} does not know {p}"));
            }
        }
        for p in forgot_peer {
            if agent.knows_peer(p) {
                bad.push(format!("{vf} still knows {p}"));
            }
        }
        if let Some((kind, allowed)) = payload_fields {
            let mut seen = 0;
            for env in self.adversary.knowledge().iter().filter(|e| e.payload.kind() == kind) {
                seen += 1;
                if let Ok(Value::Object(m)) = serde_json::to_value(&env.payload) {
                    for k in m.keys().filter(|k| *k != "type") {
                        if !allowed.contains(k) {
                            bad.push(format!("{kind} #{} carries {k}", env.seq));
                        }
                    }
                }
            }
            if seen == 0 {
                bad.push(format!("no {kind} was observed"));
            }
        }
        bad
    }

    // ---- network ----------------------------------------------------------

    fn send(&mut self, from: &str, to: &str, payload: Message) {
        self.outbox.push((from.to_string(), to.to_string(), payload));
    }

    fn flush(&mut self) {
        for (from, to, payload) in std::mem::take(&mut self.outbox) {
            self.transmit(&from, &to, payload);
        }
    }

    fn transmit(&mut self, from: &str, to: &str, payload: Message) {
        let env = Envelope {
            seq: self.next_seq,
            from: from.to_string(),
            to: to.to_string(),
            protocol: Protocol::of(&payload),
            step: self.cur.label.clone(),
            payload,
        };
        self.next_seq += 1;
        self.trace_envelope(&env, None);
        let verdict = self.adversary.intercept(env.clone());
        if verdict.rule.is_some() {
            *self.actions.entry(verdict.action.to_string()).or_default() += 1;
            self.trace.push(
                "adversary",
                json!({"seq": env.seq, "protocol": env.protocol, "action": verdict.action, "rule": verdict.rule}),
            );
        }
        for r in verdict.releases {
            if r.fresh {
                self.enqueue_forged(r.envelope, r.delay);
            } else {
                if r.envelope != env {
                    self.trace_envelope(&r.envelope, Some("altered"));
                }
                self.queue.insert((self.tick + r.delay, r.envelope.seq), r.envelope);
            }
        }
    }

    /// Queues an adversary-made envelope under a new sequence number.
    fn enqueue_forged(&mut self, mut env: Envelope, delay: u64) {
        env.seq = self.next_seq;
        self.next_seq += 1;
        self.trace_envelope(&env, Some("adversary"));
        self.queue.insert((self.tick + delay, env.seq), env);
    }

    fn trace_envelope(&mut self, env: &Envelope, origin: Option<&str>) {
        let mut line = json!({
            "seq": env.seq,
            "from": env.from,
            "to": env.to,
            "protocol": env.protocol,
            "step": env.step,
            "kind": env.payload.kind(),
            "payload": env.payload,
        });
        if let Some(o) = origin {
            line["origin"] = json!(o);
        }
        self.trace.push("envelope", line);
    }

    fn pump(&mut self) {
        let mut n = 0;
        while let Some(((at, _), env)) = self.queue.pop_first() {
            n += 1;
            if n > MAX_DELIVERIES {
                self.err("livelock");
                self.queue.clear();
                return;
            }
            self.tick = (self.tick + 1).max(at);
            self.deliver(env);
        }
    }

    fn deliver(&mut self, env: Envelope) {
        let (result, note) = if env.to == ORCHESTRATOR {
            self.orc_receive(&env)
        } else if self.agents.contains_key(&env.to) {
            self.agent_receive(&env)
        } else {
            (Err("undeliverable".to_string()), None)
        };
        let mut line = json!({
            "seq": env.seq,
            "protocol": env.protocol,
            "to": env.to,
            "tick": self.tick,
            "result": if result.is_ok() { "ok" } else { "error" },
        });
        if let Err(code) = &result {
            line["error"] = json!(code);
            if code != "undeliverable" {
                self.err(code);
            }
        }
        if let Some(n) = note {
            line["note"] = json!(n);
        }
        self.trace.push("delivery", line);
        if let Some(agent) = self.agents.get_mut(&env.to) {
            let cmds = agent.tpm.drain_log();
            if !cmds.is_empty() {
                self.trace.push(
                    "tpm",
                    json!({"party": env.to, "seq": env.seq, "protocol": env.protocol, "commands": cmds}),
                );
            }
        }
        self.flush();
    }

    fn orc_receive(&mut self, env: &Envelope) -> (Result<(), String>, Option<&'static str>) {
        let vf = env.from.as_str();
        match &env.payload {
            Message::AkCertificate { ak_public, cert_info, signature } => {
                match self.orc.verify_ak_certificate(vf, ak_public, cert_info, signature) {
                    Ok(ad) => {
                        self.cur.events.insert("enrolled");
                        let peers = self.orc.graph.peers_of(vf);
                        for p in &peers {
                            self.send(ORCHESTRATOR, p, Message::Advertisement(ad.clone()));
                        }
                        for p in &peers {
                            if let Some(other) = self.orc.graph.directory.get(p).cloned() {
                                self.send(ORCHESTRATOR, vf, Message::Advertisement(other));
                            }
                        }
                        (Ok(()), Some("enrolled"))
                    }
                    Err(r) => (Err(r.code().into()), None),
                }
            }
            Message::AuditReport { audit_info, signature, .. } => {
                match self.orc.verify_audit(vf, audit_info, signature) {
                    Ok(_) => {
                        self.cur.events.insert("committed");
                        (Ok(()), Some("committed"))
                    }
                    // The VF may or may not have extended; it cannot be vouched for.
                    Err(r) if r != Rejection::Unsolicited => {
                        let note = self.revoke(vf).ok().map(|_| "revoked");
                        (Err(r.code().into()), note)
                    }
                    Err(r) => (Err(r.code().into()), None),
                }
            }
            Message::NvCertificate { idx, cert_info, signature } => {
                match self.orc.verify_nvpcr_certificate(vf, *idx, cert_info, signature) {
                    Ok(()) => {
                        self.cur.events.insert("attached");
                        (Ok(()), Some("attached"))
                    }
                    Err(r) => (Err(r.code().into()), None),
                }
            }
            Message::DetachSessionNonce { idx, nonce } => match self.orc.authorize_nv_deletion(vf, *idx, nonce) {
                Ok(g) => {
                    self.send(ORCHESTRATOR, vf, Message::DeletionGrant(g));
                    (Ok(()), None)
                }
                Err(e) => (Err(e.code().into()), None),
            },
            _ => (Err("unsolicited".into()), None),
        }
    }

    fn agent_receive(&mut self, env: &Envelope) -> (Result<(), String>, Option<&'static str>) {
        let now = self.tick;
        let agent = self.agents.get_mut(&env.to).expect("checked by caller");
        match agent.handle(&env.from, env.payload.clone(), now) {
            Ok(reply) => {
                match (&env.payload, reply.note) {
                    (Message::AttachRequest { is_nv: false, .. }, _) => {
                        self.cur.events.insert("attached");
                    }
                    (Message::DetachRequest { is_nv: false, .. }, _) | (_, Some("nv-deleted")) => {
                        self.cur.events.insert("detached");
                    }
                    (_, Some("attestation-accepted")) => {
                        self.cur.events.insert("attestation-accepted");
                        self.judge_acceptance(&env.from);
                    }
                    _ => {}
                }
                let from = env.to.clone();
                for (to, msg) in reply.out {
                    self.send(&from, &to, msg);
                }
                (Ok(()), reply.note)
            }
            Err(e) => (Err(e.code().into()), None),
        }
    }

    /// Challenges nobody answered in time are dropped after a jump of the
    /// clock past the timeout. A VF whose update is still unconfirmed by
    /// then counts as unresponsive and is revoked.
    fn expire(&mut self) {
        let later = self.tick + CHALLENGE_TIMEOUT + 1;
        let mut any = false;
        for a in self.agents.values_mut() {
            if !a.expire_challenges(later).is_empty() {
                any = true;
            }
        }
        let silent: Vec<String> = self
            .agents
            .keys()
            .filter(|id| self.orc.record(id).is_some_and(|r| r.has_pending_update()))
            .cloned()
            .collect();
        if any || !silent.is_empty() {
            self.tick = later;
        }
        if any {
            self.err("challenge-timeout");
        }
        for id in &silent {
            self.err("update-timeout");
            self.cur.detail.push(format!("{id} did not confirm its update and is revoked"));
            let _ = self.revoke(id);
        }
        if !silent.is_empty() {
            self.flush();
            self.pump();
        }
    }

    /// Removes the VF from the directory and tells its chain peers.
    fn revoke(&mut self, vf: &str) -> Result<(), OrcError> {
        let peers = self.orc.graph.peers_of(vf);
        let notice = self.orc.revoke(vf)?;
        for p in peers {
            self.send(ORCHESTRATOR, &p, notice.clone());
        }
        Ok(())
    }

    /// TPM commands run outside any delivery, such as a rogue extend.
    fn drain_local_logs(&mut self) {
        for (id, a) in self.agents.iter_mut() {
            let cmds = a.tpm.drain_log();
            if !cmds.is_empty() {
                self.trace.push("tpm", json!({"party": id, "seq": 0, "protocol": null, "commands": cmds}));
            }
        }
    }

    // ---- invariants -------------------------------------------------------

    fn live(&self, vf: &str, slot: Slot) -> Option<Digest> {
        let tpm = &self.agents[vf].tpm;
        if slot.is_nv {
            tpm.nv_value(slot.idx)
        } else {
            tpm.pcr_value(slot.idx)
        }
    }

    fn state_matches(&self, vf: &str, nv: &[(u32, Digest)], pcrs: &[(u32, Digest)]) -> bool {
        nv.iter().all(|(h, v)| self.live(vf, Slot::nv(*h)) == Some(*v))
            && pcrs.iter().all(|(i, v)| self.live(vf, Slot::pcr(*i)) == Some(*v))
    }

    /// An accepted prover must be in the state the orchestrator has
    /// committed.
    fn judge_acceptance(&mut self, prover: &str) {
        self.accepted += 1;
        let Some(rec) = self.orc.record(prover) else {
            self.soundness_violations += 1;
            self.cur.unsound.push(format!("{prover} has no orchestrator record"));
            return;
        };
        if !self.agents.contains_key(prover) {
            return;
        }
        let mock_nv: Vec<_> = rec.mock_nvpcr.iter().map(|n| (n.handle, n.value)).collect();
        let mock_pcr: Vec<_> = rec.mock_pcr.iter().map(|(i, v)| (*i, *v)).collect();
        if !self.state_matches(prover, &mock_nv, &mock_pcr) {
            self.soundness_violations += 1;
            self.cur.unsound.push(format!("{prover} was accepted outside its committed state"));
        }
    }

    fn sync_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (id, agent) in &self.agents {
            let Some(rec) = self.orc.record(id) else { continue };
            if rec.has_pending_update() {
                continue;
            }
            for (i, v) in &rec.mock_pcr {
                if agent.tpm.pcr_value(*i) != Some(*v) {
                    errs.push(format!("{id} pcr:{i} differs from the mock"));
                }
            }
            for n in &rec.mock_nvpcr {
                if agent.tpm.nv_value(n.handle) != Some(n.value) {
                    errs.push(format!("{id} nv:0x{:08x} differs from the mock", n.handle));
                }
            }
        }
        errs
    }

    /// Held policies, one per digest, that would unlock the VF's AK now.
    pub fn unlocking(&self, vf: &str) -> usize {
        let (Some(agent), Some(rec)) = (self.agents.get(vf), self.orc.record(vf)) else { return 0 };
        let mut seen = BTreeSet::new();
        agent
            .retained()
            .iter()
            .rev()
            .filter(|r| seen.insert(r.policy))
            .filter(|r| {
                rec.issued
                    .iter()
                    .rev()
                    .find(|p| p.digest == r.policy)
                    .is_some_and(|p| probe(agent, p, r))
            })
            .count()
    }

    fn state_diff(&self) -> Value {
        let mut out = BTreeMap::new();
        for id in self.agents.keys() {
            let Some(rec) = self.orc.record(id) else { continue };
            let mut d = BTreeMap::new();
            let slots = rec
                .mock_pcr
                .iter()
                .map(|(i, v)| (Slot::pcr(*i), *v))
                .chain(rec.mock_nvpcr.iter().map(|n| (Slot::nv(n.handle), n.value)));
            for (slot, mock) in slots {
                let live = self.live(id, slot);
                if live != Some(mock) {
                    d.insert(slot.to_string(), json!({"mock": mock, "live": live}));
                }
            }
            if !d.is_empty() {
                out.insert(id.clone(), d);
            }
        }
        json!(out)
    }

    fn snapshots(&self) -> Value {
        let m: BTreeMap<_, _> = self.agents.iter().map(|(id, a)| (id.clone(), a.snapshot())).collect();
        json!(m)
    }
}

fn probe(agent: &VfAgent, p: &IssuedPolicy, r: &RetainedPolicy) -> bool {
    let nv: Vec<_> = p.nv.iter().map(|n| (n.handle, n.value)).collect();
    let pcrs: Vec<u32> = p.pcrs.iter().map(|(i, _)| *i).collect();
    agent.policy_unlocks(&nv, &pcrs, r)
}

fn terminal_event(op: &Op) -> Option<&'static str> {
    match op {
        Op::Enroll { .. } => Some("enrolled"),
        Op::Attach { .. } => Some("attached"),
        Op::Update { .. } => Some("committed"),
        Op::Detach { .. } => Some("detached"),
        Op::Attest { .. } => Some("attestation-accepted"),
        _ => None,
    }
}

/// Parses and runs a scenario; `seed` overrides the file's.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>) -> (RunReport, Trace) {
    World::new(scenario, seed.unwrap_or(scenario.seed)).run()
}
