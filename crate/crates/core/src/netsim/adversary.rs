//! Scriptable Dolev-Yao adversary. It sees every envelope, remembers all
//! of them, and can drop, alter, duplicate, delay, reroute or inject. It
//! holds no key material.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Envelope, Protocol};
use crate::messages::Message;

/// Predicate over an envelope. Absent fields match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Match {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
}

impl Match {
    pub fn matches(&self, env: &Envelope) -> bool {
        self.protocol.map_or(true, |p| p == env.protocol)
            && self.kind.as_deref().map_or(true, |k| k == env.payload.kind())
            && self.from.as_deref().map_or(true, |f| f == env.from)
            && self.to.as_deref().map_or(true, |t| t == env.to)
            && self.step.as_deref().map_or(true, |s| s == env.step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Pass,
    Drop,
    /// Replaces `field` (dotted path into the payload) with `value`, or
    /// flips a bit of it when no value is given.
    Tamper {
        #[serde(default)]
        field: Option<String>,
        #[serde(default)]
        value: Option<Value>,
    },
    /// Delivers the envelope, then a stored one or a duplicate. The stored
    /// one is picked by `seq`, or as the `nth` earlier envelope matching
    /// `like`. With `instead`, its payload replaces the original's and
    /// goes to the original recipient.
    Replay {
        #[serde(default)]
        seq: Option<u64>,
        #[serde(default)]
        like: Option<Match>,
        #[serde(default)]
        nth: i64,
        #[serde(default)]
        instead: bool,
    },
    /// Delivers the envelope, then an adversary-built one.
    Inject { from: String, to: String, payload: Message },
    Delay { ticks: u64 },
    Redirect { to: String },
    Spoof { from: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default)]
    pub when: Match,
    #[serde(flatten)]
    pub action: Action,
    /// Matching envelopes to let through before the rule starts firing.
    #[serde(default)]
    pub skip: u32,
    /// How often the rule fires; unlimited when absent.
    #[serde(default)]
    pub times: Option<u32>,
}

/// One envelope the adversary releases, possibly later than now.
#[derive(Clone, Debug, PartialEq)]
pub struct Release {
    pub envelope: Envelope,
    pub delay: u64,
    /// True for envelopes the adversary created (duplicates, replays,
    /// injections); these need a fresh sequence number.
    pub fresh: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub action: &'static str,
    pub rule: Option<usize>,
    pub releases: Vec<Release>,
}

#[derive(Clone, Debug, Default)]
pub struct Adversary {
    rules: Vec<Rule>,
    seen: Vec<u32>,
    fired: Vec<u32>,
    knowledge: Vec<Envelope>,
}

impl Adversary {
    pub fn new(rules: Vec<Rule>) -> Self {
        let n = rules.len();
        Adversary { rules, seen: vec![0; n], fired: vec![0; n], knowledge: Vec::new() }
    }

    /// Replaces the script. Knowledge is kept.
    pub fn set_rules(&mut self, rules: Vec<Rule>) {
        let n = rules.len();
        self.rules = rules;
        self.seen = vec![0; n];
        self.fired = vec![0; n];
    }

    pub fn knowledge(&self) -> &[Envelope] {
        &self.knowledge
    }

    /// The `nth` observed envelope matching `m`; negative counts from the end.
    pub fn recall(&self, m: &Match, nth: i64) -> Option<&Envelope> {
        recall_in(&self.knowledge, m, nth)
    }

    /// Applies the first rule that matches and still has budget.
    pub fn intercept(&mut self, env: Envelope) -> Verdict {
        self.knowledge.push(env.clone());
        for (i, rule) in self.rules.iter().enumerate() {
            if !rule.when.matches(&env) {
                continue;
            }
            self.seen[i] += 1;
            if self.seen[i] <= rule.skip || rule.times.is_some_and(|t| self.fired[i] >= t) {
                continue;
            }
            self.fired[i] += 1;
            return self.apply(i, env);
        }
        Verdict { action: "pass", rule: None, releases: vec![now(env)] }
    }

    fn apply(&self, i: usize, env: Envelope) -> Verdict {
        let rule = Some(i);
        let (action, releases) = match &self.rules[i].action {
            Action::Pass => ("pass", vec![now(env)]),
            Action::Drop => ("drop", vec![]),
            Action::Tamper { field, value } => {
                match env.payload.with_field(field.as_deref(), value.as_ref()) {
                    Some(payload) => ("tamper", vec![now(Envelope { payload, ..env })]),
                    None => ("tamper-noop", vec![now(env)]),
                }
            }
            Action::Replay { seq, like, nth, instead } => {
                let earlier = &self.knowledge[..self.knowledge.len() - 1];
                let extra = match (seq, like) {
                    (Some(s), _) => earlier.iter().find(|e| e.seq == *s).cloned(),
                    (None, Some(m)) => recall_in(earlier, m, *nth).cloned(),
                    (None, None) => Some(env.clone()),
                };
                match extra {
                    Some(e) if *instead => {
                        let envelope = Envelope { payload: e.payload, protocol: e.protocol, ..env };
                        ("replay", vec![Release { envelope, delay: 0, fresh: true }])
                    }
                    Some(e) => ("replay", vec![now(env), Release { envelope: e, delay: 0, fresh: true }]),
                    None => ("replay-noop", vec![now(env)]),
                }
            }
            Action::Inject { from, to, payload } => {
                let forged = Envelope {
                    seq: 0,
                    from: from.clone(),
                    to: to.clone(),
                    protocol: Protocol::of(payload),
                    step: env.step.clone(),
                    payload: payload.clone(),
                };
                ("inject", vec![now(env), Release { envelope: forged, delay: 0, fresh: true }])
            }
            Action::Delay { ticks } => ("delay", vec![Release { envelope: env, delay: *ticks, fresh: false }]),
            Action::Redirect { to } => ("redirect", vec![now(Envelope { to: to.clone(), ..env })]),
            Action::Spoof { from } => ("spoof", vec![now(Envelope { from: from.clone(), ..env })]),
        };
        Verdict { action, rule, releases }
    }
}

fn recall_in<'a>(seen: &'a [Envelope], m: &Match, nth: i64) -> Option<&'a Envelope> {
    let hits: Vec<&Envelope> = seen.iter().filter(|e| m.matches(e)).collect();
    let i = if nth < 0 { hits.len() as i64 + nth } else { nth };
    usize::try_from(i).ok().and_then(|i| hits.get(i).copied())
}

fn now(envelope: Envelope) -> Release {
    Release { envelope, delay: 0, fresh: false }
}
