//! Per-operation latency of the VF-side TPM work for each protocol.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::agent::{VfAgent, ORCHESTRATOR};
use crate::crypto::{hash_parts, HmacKey};
use crate::encoding::CommandCode;
use crate::messages::Message;
use crate::orchestrator::{Orchestrator, Slot};
use crate::vtpm::NV_INDEX_FIRST;

const FILE: &str = "/etc/bench.conf";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl Stat {
    fn of(samples: &[Duration]) -> Stat {
        let ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        let n = ms.len().max(1) as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = if ms.len() > 1 {
            ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Stat { mean_ms: mean, sd_ms: var.sqrt(), samples_ms: ms }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommandStat {
    pub command: &'static str,
    #[serde(flatten)]
    pub stat: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub operation: &'static str,
    #[serde(flatten)]
    pub total: Stat,
    pub commands: Vec<CommandStat>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub host: String,
    pub iterations: usize,
    pub rows: Vec<Row>,
}

impl BenchReport {
    pub fn row(&self, operation: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.operation == operation)
    }

    pub fn render(&self) -> String {
        let mut out = format!("host: {}\niterations: {}\n", self.host, self.iterations);
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:>9.3} ms  sd {:>8.3}\n",
                r.operation, r.total.mean_ms, r.total.sd_ms
            ));
            for c in &r.commands {
                out.push_str(&format!(
                    "    {:<30} {:>9.3} ms  sd {:>8.3}\n",
                    c.command, c.stat.mean_ms, c.stat.sd_ms
                ));
            }
        }
        out
    }
}

pub fn host() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    format!("{}-{} cpus={} build={}", std::env::consts::ARCH, std::env::consts::OS, cpus, profile)
}

/// Collects one row: wall time of each timed section plus the TPM's own
/// per-command timings, listed commands first.
struct Collector {
    operation: &'static str,
    order: &'static [CommandCode],
    totals: Vec<Duration>,
    per_cmd: BTreeMap<u32, Vec<Duration>>,
}

impl Collector {
    fn new(operation: &'static str, order: &'static [CommandCode]) -> Self {
        Collector { operation, order, totals: Vec::new(), per_cmd: BTreeMap::new() }
    }

    fn time<T>(&mut self, vf: &mut VfAgent, f: impl FnOnce(&mut VfAgent) -> T) -> T {
        vf.tpm.take_profile();
        let start = Instant::now();
        let out = f(vf);
        self.totals.push(start.elapsed());
        let mut iter: BTreeMap<u32, Duration> = BTreeMap::new();
        for (cc, d) in vf.tpm.take_profile() {
            *iter.entry(cc.0).or_default() += d;
        }
        for (cc, d) in iter {
            self.per_cmd.entry(cc).or_default().push(d);
        }
        out
    }

    fn finish(self) -> Row {
        let mut keys: Vec<u32> = self.order.iter().map(|c| c.0).filter(|c| self.per_cmd.contains_key(c)).collect();
        keys.extend(self.per_cmd.keys().filter(|k| !keys.contains(k)).copied().collect::<Vec<_>>());
        let commands = keys
            .into_iter()
            .map(|k| CommandStat { command: CommandCode(k).mnemonic(), stat: Stat::of(&self.per_cmd[&k]) })
            .collect();
        Row { operation: self.operation, total: Stat::of(&self.totals), commands }
    }
}

struct Bed {
    orc: Orchestrator,
    vf: VfAgent,
    peer: VfAgent,
}

fn first_reply(vf: &mut VfAgent, msg: Message) -> Option<Message> {
    vf.handle(ORCHESTRATOR, msg, 0).expect("bench step").out.into_iter().next().map(|(_, m)| m)
}

fn enroll(orc: &mut Orchestrator, vf: &mut VfAgent) {
    let req = orc.begin_enrollment(&vf.vf_id).expect("registered");
    let Some(Message::AkCertificate { ak_public, cert_info, signature }) = first_reply(vf, req) else {
        panic!("no AK certificate")
    };
    orc.verify_ak_certificate(&vf.vf_id, &ak_public, &cert_info, &signature).expect("AK accepted");
}

fn new_vf(orc: &mut Orchestrator, id: &str, seed: u64) -> VfAgent {
    let s = hash_parts(&[b"bench", id.as_bytes(), &seed.to_be_bytes()]).0;
    let hk = HmacKey(hash_parts(&[b"bench-hk", &s]).0);
    let vf = VfAgent::new(id, &s, hk.clone(), orc.ek_public().clone());
    orc.register_vf(id, "bench", vf.ek_public(), hk).expect("fresh id");
    vf
}

fn bed(seed: u64) -> Bed {
    let mut orc = Orchestrator::new(&hash_parts(&[b"bench-orc", &seed.to_be_bytes()]).0);
    let mut vf = new_vf(&mut orc, "vf", seed);
    let mut peer = new_vf(&mut orc, "peer", seed);
    enroll(&mut orc, &mut vf);
    enroll(&mut orc, &mut peer);
    peer.handle(ORCHESTRATOR, Message::Advertisement(orc.graph.directory["vf"].clone()), 0)
        .expect("advertisement");
    vf.tpm.enable_profiling();
    Bed { orc, vf, peer }
}

fn attach(b: &mut Bed, slot: Slot, c: Option<&mut Collector>) {
    let req = b.orc.request_pcr_attach("vf", slot, None).expect("attach");
    let reply = match c {
        Some(c) => c.time(&mut b.vf, |vf| first_reply(vf, req)),
        None => first_reply(&mut b.vf, req),
    };
    if let Some(Message::NvCertificate { idx, cert_info, signature }) = reply {
        b.orc.verify_nvpcr_certificate("vf", idx, &cert_info, &signature).expect("NV cert");
    }
}

fn update(b: &mut Bed, slot: Slot, n: u64, c: Option<&mut Collector>) {
    b.vf.tracer.deploy(FILE, &n.to_be_bytes());
    let bytes = b.vf.tracer.measured_bytes(FILE).expect("deployed");
    let d = b.orc.authenticate_measurement("vf", &bytes).expect("known vf");
    let req = Message::UpdateRequest(b.orc.compose_policy_update("vf", slot, d, FILE).expect("update"));
    let reply = match c {
        Some(c) => c.time(&mut b.vf, |vf| first_reply(vf, req)),
        None => first_reply(&mut b.vf, req),
    };
    let Some(Message::AuditReport { audit_info, signature, .. }) = reply else { panic!("no audit") };
    b.orc.verify_audit("vf", &audit_info, &signature).expect("audit");
}

/// Runs every row `iters` times.
pub fn run(iters: usize) -> BenchReport {
    let iters = iters.max(1);
    let mut ak = Collector::new(
        "AK creation",
        &[
            CommandCode::CREATE,
            CommandCode::LOAD,
            CommandCode::CERTIFY_CREATION,
            CommandCode::EVICT_CONTROL,
            CommandCode::FLUSH_CONTEXT,
        ],
    );
    for i in 0..iters {
        let mut orc = Orchestrator::new(&[7; 32]);
        let mut vf = new_vf(&mut orc, "vf", i as u64);
        vf.tpm.enable_profiling();
        let req = orc.begin_enrollment("vf").expect("registered");
        ak.time(&mut vf, |vf| first_reply(vf, req));
    }

    let nv = NV_INDEX_FIRST + 0x10;
    let mut b = bed(1);
    attach(&mut b, Slot::pcr(16), None);
    attach(&mut b, Slot::nv(nv), None);
    let mut upd = Collector::new(
        "Measurement update",
        &[
            CommandCode::VERIFY_SIGNATURE,
            CommandCode::START_AUTH_SESSION,
            CommandCode::NV_EXTEND,
            CommandCode::PCR_EXTEND,
            CommandCode::GET_SESSION_AUDIT_DIGEST,
        ],
    );
    // Untimed: the first update also loads the orchestrator key, once.
    update(&mut b, Slot::pcr(16), u64::MAX, None);
    for i in 0..iters {
        let slot = if i % 2 == 0 { Slot::pcr(16) } else { Slot::nv(nv) };
        update(&mut b, slot, i as u64, Some(&mut upd));
    }

    let mut ora = Collector::new(
        "ORA (prover)",
        &[
            CommandCode::START_AUTH_SESSION,
            CommandCode::POLICY_NV,
            CommandCode::POLICY_PCR,
            CommandCode::POLICY_AUTHORIZE,
            CommandCode::SIGN,
        ],
    );
    for i in 0..iters {
        let ch = b.peer.challenge("vf", i as u64).expect("peer known");
        let resp = ora.time(&mut b.vf, |vf| vf.handle("peer", ch, i as u64).expect("prover answers"));
        let (_, msg) = resp.out.into_iter().next().expect("response");
        let verdict = b.peer.handle("vf", msg, i as u64).expect("accepted");
        assert_eq!(verdict.note, Some("attestation-accepted"));
    }

    let mut att = Collector::new(
        "Attaching a NVPCR",
        &[CommandCode::NV_DEFINE_SPACE, CommandCode::NV_EXTEND, CommandCode::NV_CERTIFY],
    );
    let mut det = Collector::new(
        "Detaching a NVPCR",
        &[
            CommandCode::START_AUTH_SESSION,
            CommandCode::VERIFY_SIGNATURE,
            CommandCode::POLICY_SIGNED,
            CommandCode::POLICY_AUTHORIZE,
            CommandCode::POLICY_COMMAND_CODE,
            CommandCode::NV_UNDEFINE_SPACE_SPECIAL,
        ],
    );
    for i in 0..iters {
        let idx = nv + 1 + i as u32;
        attach(&mut b, Slot::nv(idx), Some(&mut att));
        let req = b.orc.request_pcr_detach("vf", Slot::nv(idx)).expect("detach");
        let grant_for = |orc: &mut Orchestrator, reply: Option<Message>| match reply {
            Some(Message::DetachSessionNonce { idx, nonce }) => {
                Message::DeletionGrant(orc.authorize_nv_deletion("vf", idx, &nonce).expect("grant"))
            }
            _ => panic!("no session nonce"),
        };
        // Both VF halves are timed as one operation; the orchestrator's
        // signing in between is not.
        b.vf.tpm.take_profile();
        let t0 = Instant::now();
        let reply = first_reply(&mut b.vf, req);
        let first = t0.elapsed();
        let mut profile = b.vf.tpm.take_profile();
        let grant = grant_for(&mut b.orc, reply);
        let t1 = Instant::now();
        let out = b.vf.handle(ORCHESTRATOR, grant, 0).expect("deleted");
        let second = t1.elapsed();
        assert_eq!(out.note, Some("nv-deleted"));
        profile.extend(b.vf.tpm.take_profile());
        det.totals.push(first + second);
        let mut iter: BTreeMap<u32, Duration> = BTreeMap::new();
        for (cc, d) in profile {
            *iter.entry(cc.0).or_default() += d;
        }
        for (cc, d) in iter {
            det.per_cmd.entry(cc).or_default().push(d);
        }
    }

    BenchReport {
        host: host(),
        iterations: iters,
        rows: vec![ak.finish(), upd.finish(), ora.finish(), att.finish(), det.finish()],
    }
}
