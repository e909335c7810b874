//! Byte-level privacy audit over simulator traces.
//!
//! Every secret is searched for by its canonical encoding in the bytes a
//! party received, so a hit means the party could decode it. Shard
//! identifiers are encoded with their length prefix; keys, payloads and
//! dependency sets as they appear inside an update request.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::codec::Canonical;
use crate::message::Message;
use crate::model::ShardId;
use crate::shard::Protocol;
use crate::simnet::trace::{Trace, TraceEvent, TraceKind};
use crate::simnet::{NodeId, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SecretClass {
    ShardId,
    LongTermKey,
    EphemeralKey,
    Payload,
    DependencySet,
    /// An inter-shard commit message other than a pull, reply or denial.
    NonMinimalMessage,
}

impl fmt::Display for SecretClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SecretClass::ShardId => "shard-id",
            SecretClass::LongTermKey => "long-term-key",
            SecretClass::EphemeralKey => "ephemeral-key",
            SecretClass::Payload => "payload",
            SecretClass::DependencySet => "dependency-set",
            SecretClass::NonMinimalMessage => "non-minimal-message",
        })
    }
}

/// What a request reveals, as canonical byte strings.
#[derive(Clone, Debug)]
pub struct RequestSecrets {
    pub shard: ShardId,
    /// The full encoded request, as its shard receives it.
    pub encoded: Vec<u8>,
    pub payload: Vec<u8>,
    pub deps: Vec<u8>,
    pub pks: Vec<Vec<u8>>,
    pub epks: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, Default)]
pub struct AuditContext {
    pub protocol: Protocol,
    pub ledger_nodes: BTreeSet<NodeId>,
    pub client_nodes: BTreeSet<NodeId>,
    pub shard_of: BTreeMap<NodeId, ShardId>,
    /// Shards each shard is entitled to know: itself and the shards named in
    /// its own declared dependency sets.
    pub entitled: BTreeMap<ShardId, BTreeSet<ShardId>>,
    pub requests: Vec<RequestSecrets>,
}

impl AuditContext {
    pub fn shard_ids(&self) -> BTreeSet<&ShardId> {
        self.shard_of.values().collect()
    }

    fn nodes_of(&self, shard: &ShardId) -> BTreeSet<NodeId> {
        self.shard_of
            .iter()
            .filter(|(_, s)| *s == shard)
            .map(|(n, _)| *n)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub role: String,
    pub time: Time,
    pub class: SecretClass,
    /// Summary of the message that carried the secret.
    pub message: String,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} t={} {} in [{}]: {}",
            self.role, self.time, self.class, self.message, self.detail
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct AuditReport {
    pub findings: Vec<Finding>,
    /// Counts that are visible by design, such as entries per transaction.
    pub info: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn extend(&mut self, other: AuditReport) {
        self.findings.extend(other.findings);
        self.info.extend(other.info);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for f in &self.findings {
            out.push_str(&format!("finding {f}\n"));
        }
        for i in &self.info {
            out.push_str(&format!("info {i}\n"));
        }
        out.push_str(&format!("findings: {}\n", self.findings.len()));
        out
    }
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty()
        && needle.len() <= hay.len()
        && hay.windows(needle.len()).any(|w| w == needle)
}

struct Secret {
    class: SecretClass,
    bytes: Vec<u8>,
    detail: String,
}

fn received<'a>(
    trace: &'a Trace,
    nodes: &'a BTreeSet<NodeId>,
) -> impl Iterator<Item = &'a TraceEvent> + 'a {
    trace
        .events()
        .iter()
        .filter(move |e| e.kind == TraceKind::Deliver && e.to.is_some_and(|t| nodes.contains(&t)))
}

fn scan(role: &str, trace: &Trace, nodes: &BTreeSet<NodeId>, secrets: &[Secret]) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut reported = BTreeSet::new();
    for e in received(trace, nodes) {
        for (i, s) in secrets.iter().enumerate() {
            if !reported.contains(&i) && contains(&e.bytes, &s.bytes) {
                reported.insert(i);
                out.push(Finding {
                    role: role.to_string(),
                    time: e.time,
                    class: s.class,
                    message: e.summary.clone(),
                    detail: s.detail.clone(),
                });
            }
        }
    }
    out
}

fn shard_secret(s: &ShardId) -> Secret {
    Secret {
        class: SecretClass::ShardId,
        bytes: s.to_canonical(),
        detail: format!("shard {s}"),
    }
}

fn request_secrets(r: &RequestSecrets) -> Vec<Secret> {
    let mut v = vec![Secret {
        class: SecretClass::Payload,
        bytes: r.payload.clone(),
        detail: format!("payload of request to {}", r.shard),
    }];
    if r.deps.len() > 4 {
        v.push(Secret {
            class: SecretClass::DependencySet,
            bytes: r.deps.clone(),
            detail: format!("dependency set of {}", r.shard),
        });
    }
    v.extend(r.pks.iter().map(|k| Secret {
        class: SecretClass::LongTermKey,
        bytes: k.clone(),
        detail: format!(
            "stakeholder key {} of {}",
            hex::encode(&k[..4.min(k.len())]),
            r.shard
        ),
    }));
    v.extend(r.epks.iter().map(|k| Secret {
        class: SecretClass::EphemeralKey,
        bytes: k.clone(),
        detail: format!(
            "ephemeral key {} of {}",
            hex::encode(&k[..4.min(k.len())]),
            r.shard
        ),
    }));
    v
}

/// The ledger and the clients may see hash lists, signatures and counts only.
pub fn audit_ledger_view(trace: &Trace, ctx: &AuditContext) -> AuditReport {
    let mut secrets: Vec<Secret> = ctx.shard_ids().into_iter().map(shard_secret).collect();
    for r in &ctx.requests {
        secrets.extend(request_secrets(r));
    }
    let mut report = AuditReport::default();
    for (role, nodes) in [("ledger", &ctx.ledger_nodes), ("client", &ctx.client_nodes)] {
        report.findings.extend(scan(role, trace, nodes, &secrets));
    }
    for e in received(trace, &ctx.ledger_nodes) {
        if let Ok(Message::Submit(tx)) = Message::from_canonical(&e.bytes) {
            let sigs: usize = tx.entries.iter().map(|x| x.ephemeral_sigs.len()).sum();
            report.info.push(format!(
                "ledger t={} submit: {} entries, {} ephemeral signatures",
                e.time,
                tx.entries.len(),
                sigs
            ));
        }
    }
    report
}

/// A shard may see its own requests, the blocks and the beliefs of its
/// declared neighbours. Anything else it can decode is a finding.
pub fn audit_shard_view(trace: &Trace, shard: &ShardId, ctx: &AuditContext) -> AuditReport {
    let own: Vec<&RequestSecrets> = ctx.requests.iter().filter(|r| &r.shard == shard).collect();
    let known = |bytes: &[u8]| own.iter().any(|r| contains(&r.encoded, bytes));
    let entitled = ctx
        .entitled
        .get(shard)
        .cloned()
        .unwrap_or_else(|| BTreeSet::from([shard.clone()]));
    let mut secrets: Vec<Secret> = ctx
        .shard_ids()
        .into_iter()
        .filter(|s| !entitled.contains(*s))
        .map(shard_secret)
        .collect();
    for r in ctx.requests.iter().filter(|r| &r.shard != shard) {
        secrets.extend(request_secrets(r).into_iter().filter(|s| !known(&s.bytes)));
    }
    let nodes = ctx.nodes_of(shard);
    AuditReport {
        findings: scan(&format!("shard {shard}"), trace, &nodes, &secrets),
        info: Vec::new(),
    }
}

/// Inter-shard traffic of a PPAC run must consist of pulls, replies and denials.
pub fn audit_minimality(trace: &Trace, ctx: &AuditContext) -> AuditReport {
    let mut report = AuditReport::default();
    if ctx.protocol != Protocol::Ppac {
        return report;
    }
    for e in trace
        .events()
        .iter()
        .filter(|e| e.kind == TraceKind::Deliver)
    {
        let (Some(from), Some(to)) = (e.from, e.to) else {
            continue;
        };
        let (Some(a), Some(b)) = (ctx.shard_of.get(&from), ctx.shard_of.get(&to)) else {
            continue;
        };
        if a == b {
            continue;
        }
        let ok = matches!(
            Message::from_canonical(&e.bytes),
            Ok(Message::Pull { .. } | Message::PullReply { .. } | Message::PullDenied { .. })
        );
        if !ok {
            report.findings.push(Finding {
                role: format!("shard {b}"),
                time: e.time,
                class: SecretClass::NonMinimalMessage,
                message: e.summary.clone(),
                detail: format!("from shard {a}"),
            });
        }
    }
    report
}

/// Ledger view, every shard view and, for PPAC, message minimality.
pub fn audit_all(trace: &Trace, ctx: &AuditContext) -> AuditReport {
    let mut report = audit_ledger_view(trace, ctx);
    let shards: Vec<ShardId> = ctx.shard_ids().into_iter().cloned().collect();
    for s in &shards {
        report.extend(audit_shard_view(trace, s, ctx));
    }
    report.extend(audit_minimality(trace, ctx));
    report
}

/// A deliberately broken encoding: every delivery to the ledger carries the
/// encoded id of the first shard. Used to check the audit catches leaks.
pub fn leaky_mutant(trace: &Trace, ctx: &AuditContext) -> Trace {
    let mut t = trace.clone();
    let Some(leak) = ctx.shard_ids().into_iter().next().map(|s| s.to_canonical()) else {
        return t;
    };
    for e in t.events_mut() {
        if e.kind == TraceKind::Deliver && e.to.is_some_and(|n| ctx.ledger_nodes.contains(&n)) {
            e.bytes.extend_from_slice(&leak);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> ShardId {
        ShardId::new(s).unwrap()
    }

    fn deliver(to: u32, bytes: Vec<u8>) -> TraceEvent {
        TraceEvent {
            time: 5,
            kind: TraceKind::Deliver,
            from: Some(NodeId(9)),
            to: Some(NodeId(to)),
            summary: "m".into(),
            bytes,
        }
    }

    fn ctx() -> AuditContext {
        AuditContext {
            protocol: Protocol::Ppac,
            ledger_nodes: [NodeId(0)].into(),
            client_nodes: BTreeSet::new(),
            shard_of: [
                (NodeId(1), sid("shard-aaaa")),
                (NodeId(2), sid("shard-bbbb")),
                (NodeId(3), sid("shard-cccc")),
            ]
            .into(),
            entitled: [
                (
                    sid("shard-aaaa"),
                    [sid("shard-aaaa"), sid("shard-bbbb")].into(),
                ),
                (
                    sid("shard-bbbb"),
                    [sid("shard-aaaa"), sid("shard-bbbb")].into(),
                ),
                (sid("shard-cccc"), [sid("shard-cccc")].into()),
            ]
            .into(),
            requests: Vec::new(),
        }
    }

    #[test]
    fn ledger_sees_encoded_shard_id() {
        let c = ctx();
        let mut t = Trace::default();
        t.push(deliver(
            0,
            [vec![1, 2], sid("shard-bbbb").to_canonical()].concat(),
        ));
        let r = audit_ledger_view(&t, &c);
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].class, SecretClass::ShardId);
    }

    #[test]
    fn neighbour_id_is_entitled_but_stranger_is_not() {
        let c = ctx();
        let mut t = Trace::default();
        t.push(deliver(1, sid("shard-bbbb").to_canonical()));
        assert!(audit_shard_view(&t, &sid("shard-aaaa"), &c).is_clean());
        t.push(deliver(1, sid("shard-cccc").to_canonical()));
        assert_eq!(
            audit_shard_view(&t, &sid("shard-aaaa"), &c).findings.len(),
            1
        );
    }

    #[test]
    fn mutant_leaks() {
        let c = ctx();
        let mut t = Trace::default();
        t.push(deliver(0, vec![7, 7, 7]));
        assert!(audit_ledger_view(&t, &c).is_clean());
        assert!(!audit_ledger_view(&leaky_mutant(&t, &c), &c).is_clean());
    }
}
