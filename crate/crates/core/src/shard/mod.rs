//! Shard nodes: update-request validation, the transient store, block
//! scanning, execution and the two commit engines.
//!
//! A shard may run on several nodes. They share the shard's key pair, so
//! their responses are byte-identical, and each runs validation and the
//! commit protocol on its own.

pub mod ppac;
pub mod state;
pub mod twopc;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError};
use crate::crypto::{self, Digest, KeyPair, Scheme};
use crate::ledger::Block;
use crate::message::Message;
use crate::model::{
    Belief, BeliefValue, Decision, DependencySet, ModelError, Nonce, RequestId, ShardId,
    ShardResponse, Transaction, UpdateRequest,
};
use crate::simnet::broadcast::BroadcastState;
use crate::simnet::{Context, NodeId, Time, TraceKind};

use ppac::{Action, PpacSession};
use state::{Policy, SimulationError, StateDb, WriteSet};
use twopc::{TwoPcAction, TwoPcSession};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecuteMode {
    /// Simulate when the request arrives; re-check for staleness at commit time.
    #[default]
    Xo,
    /// Simulate when the transaction is ordered.
    Ox,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[default]
    #[serde(rename = "ppac")]
    Ppac,
    #[serde(rename = "2pc")]
    TwoPc,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Ppac => "ppac",
            Protocol::TwoPc => "2pc",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ppac" => Ok(Protocol::Ppac),
            "2pc" => Ok(Protocol::TwoPc),
            other => Err(format!("unknown protocol `{other}` (expected ppac or 2pc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShardError {
    #[error("malformed request: {0}")]
    Malformed(#[from] ModelError),
    #[error("request (id, nonce) already seen")]
    DuplicateRequest,
    #[error("a stakeholder signature does not verify")]
    InvalidSignature,
    #[error("stakeholder policy of account {0} not satisfied")]
    PolicyViolation(String),
    #[error("undecodable payload: {0}")]
    BadPayload(#[from] DecodeError),
    #[error("simulation failed: {0}")]
    SimulationFailure(#[from] SimulationError),
}

#[derive(Clone, Debug)]
pub struct ShardConfig {
    pub shard_id: ShardId,
    pub scheme: Scheme,
    pub keys: KeyPair,
    pub balances: BTreeMap<String, i64>,
    pub policies: BTreeMap<String, Policy>,
    pub mode: ExecuteMode,
    pub protocol: Protocol,
    pub optimize: bool,
    /// Finished sessions are dropped after this long even if some caller never pulled.
    pub gc_timeout: Time,
    /// Never send anything to other shards.
    pub stalled: bool,
    /// Forces the validation outcome of a session, for fault injection.
    pub belief_overrides: BTreeMap<RequestId, BeliefValue>,
    pub broadcast_hop_limit: u32,
}

#[derive(Clone, Debug)]
struct Pending {
    request: UpdateRequest,
    write_set: Option<WriteSet>,
}

#[derive(Clone, Debug)]
enum Engine {
    Ppac(PpacSession),
    TwoPc(TwoPcSession),
}

#[derive(Clone, Debug)]
struct Session {
    requests: Vec<UpdateRequest>,
    write_sets: Vec<Option<WriteSet>>,
    signatures_ok: bool,
    accounts: BTreeSet<String>,
    expected_callers: BTreeSet<ShardId>,
    engine: Engine,
    write_set: Option<WriteSet>,
    finalized: bool,
    gc_token: Option<u64>,
}

/// What a node observed for one session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionReport {
    pub request_id: RequestId,
    pub protocol: Protocol,
    pub hash_count: usize,
    pub contacts: usize,
    pub budget: u32,
    pub initial: Option<BeliefValue>,
    pub decision: Option<Decision>,
    /// Round in which the session finalized.
    pub final_round: Option<u32>,
    /// Round in which the belief became discard (0 when it started as discard).
    pub discard_round: Option<u32>,
    pub scanned_at: Time,
    pub started_at: Option<Time>,
    pub decided_at: Option<Time>,
}

pub struct ShardNode {
    pub cfg: ShardConfig,
    pub me: NodeId,
    /// All nodes of this shard, including this one.
    pub peers: Vec<NodeId>,
    directory: BTreeMap<ShardId, Vec<NodeId>>,
    node_shard: BTreeMap<NodeId, ShardId>,
    pub state: StateDb,
    transient: BTreeMap<Digest, Pending>,
    seen: BTreeSet<(RequestId, Nonce)>,
    broadcast: BroadcastState,
    sessions: BTreeMap<RequestId, Session>,
    /// Sessions waiting for earlier overlapping sessions, in ledger order.
    queue: Vec<RequestId>,
    early: BTreeMap<RequestId, Vec<(NodeId, Message)>>,
    finished: BTreeMap<RequestId, BeliefValue>,
    reports: BTreeMap<RequestId, SessionReport>,
    gc_timers: BTreeMap<u64, RequestId>,
    next_timer: u64,
    pub blocks_seen: Vec<u64>,
}

impl ShardNode {
    /// `directory` maps every shard (this one included) to its nodes.
    pub fn new(cfg: ShardConfig, me: NodeId, directory: BTreeMap<ShardId, Vec<NodeId>>) -> Self {
        let peers = directory
            .get(&cfg.shard_id)
            .cloned()
            .unwrap_or_else(|| vec![me]);
        let node_shard = directory
            .iter()
            .flat_map(|(s, nodes)| nodes.iter().map(move |n| (*n, s.clone())))
            .collect();
        let state = StateDb::new(cfg.balances.clone());
        let broadcast = BroadcastState::new(cfg.broadcast_hop_limit);
        Self {
            cfg,
            me,
            peers,
            directory,
            node_shard,
            state,
            transient: BTreeMap::new(),
            seen: BTreeSet::new(),
            broadcast,
            sessions: BTreeMap::new(),
            queue: Vec::new(),
            early: BTreeMap::new(),
            finished: BTreeMap::new(),
            reports: BTreeMap::new(),
            gc_timers: BTreeMap::new(),
            next_timer: 1,
            blocks_seen: Vec::new(),
        }
    }

    pub fn shard_id(&self) -> &ShardId {
        &self.cfg.shard_id
    }

    pub fn reports(&self) -> &BTreeMap<RequestId, SessionReport> {
        &self.reports
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn transient_len(&self) -> usize {
        self.transient.len()
    }

    pub fn has_pending_work(&self) -> bool {
        self.sessions.values().any(|s| !s.finalized)
    }

    /// Validates a request and, on success, stores it and returns the signed hash.
    pub fn handle_update_request(
        &mut self,
        req: UpdateRequest,
    ) -> Result<ShardResponse, ShardError> {
        req.check_shape(&self.cfg.shard_id)?;
        if self.seen.contains(&(req.id, req.nonce)) {
            return Err(ShardError::DuplicateRequest);
        }
        if !req.signatures_valid(self.cfg.scheme) {
            return Err(ShardError::InvalidSignature);
        }
        let payload = req.decode_payload()?;
        let signers: BTreeSet<_> = req.stakeholder_pks.iter().collect();
        for account in payload.accounts() {
            match self.cfg.policies.get(account) {
                Some(p) if p.satisfied_by(&signers) => {}
                Some(_) => return Err(ShardError::PolicyViolation(account.to_string())),
                None => {
                    return Err(ShardError::SimulationFailure(
                        SimulationError::UnknownAccount(account.to_string()),
                    ))
                }
            }
        }
        let write_set = match self.cfg.mode {
            ExecuteMode::Xo => Some(self.state.simulate(&payload, None)?),
            ExecuteMode::Ox => None,
        };
        self.seen.insert((req.id, req.nonce));
        let request_hash = req.hash();
        let shard_signature = self.cfg.keys.sign(request_hash.as_bytes());
        self.transient.insert(
            request_hash,
            Pending {
                request: req,
                write_set,
            },
        );
        Ok(ShardResponse {
            request_hash,
            shard_signature,
        })
    }

    pub fn on_message(&mut self, ctx: &mut Context<Message>, from: NodeId, msg: Message) {
        match msg {
            Message::Request {
                origin,
                hops,
                request,
            } => self.on_request(ctx, origin, hops, request),
            Message::Block(block) => {
                self.scan_block(ctx, block);
            }
            Message::Pull { request_id, caller } => {
                if self.sessions.contains_key(&request_id) {
                    let actions = match &mut self.sessions.get_mut(&request_id).unwrap().engine {
                        Engine::Ppac(s) => s.on_pull(&caller, from),
                        Engine::TwoPc(_) => vec![Action::Deny { to: from }],
                    };
                    self.run_ppac(ctx, request_id, actions);
                } else if let Some(v) = self.finished.get(&request_id) {
                    let belief = Belief::finalized(*v);
                    self.send_remote(ctx, from, Message::PullReply { request_id, belief });
                } else {
                    self.early
                        .entry(request_id)
                        .or_default()
                        .push((from, Message::Pull { request_id, caller }));
                }
            }
            Message::PullReply { request_id, belief } => {
                let Some(contact) = self.node_shard.get(&from).cloned() else {
                    return;
                };
                if let Some(Session {
                    engine: Engine::Ppac(s),
                    ..
                }) = self.sessions.get_mut(&request_id)
                {
                    let actions = s.on_reply(&contact, from, belief);
                    self.run_ppac(ctx, request_id, actions);
                }
            }
            Message::PullDenied { request_id } => {
                let Some(contact) = self.node_shard.get(&from).cloned() else {
                    return;
                };
                if let Some(Session {
                    engine: Engine::Ppac(s),
                    ..
                }) = self.sessions.get_mut(&request_id)
                {
                    let actions = s.on_denied(&contact, from);
                    self.run_ppac(ctx, request_id, actions);
                }
            }
            Message::Vote {
                request_id,
                ref voter,
                commit,
            } => {
                if let Some(Session {
                    engine: Engine::TwoPc(s),
                    ..
                }) = self.sessions.get_mut(&request_id)
                {
                    let actions = s.on_vote(voter, commit);
                    self.run_twopc(ctx, request_id, actions);
                } else if !self.finished.contains_key(&request_id) {
                    self.early.entry(request_id).or_default().push((from, msg));
                }
            }
            Message::Decision {
                request_id,
                decision,
            } => {
                if let Some(Session {
                    engine: Engine::TwoPc(s),
                    ..
                }) = self.sessions.get_mut(&request_id)
                {
                    let actions = s.on_decision(decision);
                    self.run_twopc(ctx, request_id, actions);
                } else if !self.finished.contains_key(&request_id) {
                    self.early.entry(request_id).or_default().push((from, msg));
                }
            }
            _ => {}
        }
    }

    pub fn on_timer(&mut self, _ctx: &mut Context<Message>, token: u64) {
        if let Some(id) = self.gc_timers.remove(&token) {
            self.drop_session(id);
        }
    }

    fn on_request(
        &mut self,
        ctx: &mut Context<Message>,
        origin: NodeId,
        hops: u32,
        request: UpdateRequest,
    ) {
        let key = crypto::hash(&request.to_canonical());
        let receipt = self.broadcast.on_receive(key, hops, self.me, &self.peers);
        if !receipt.deliver {
            return;
        }
        for peer in receipt.relay_to {
            ctx.send(
                peer,
                Message::Request {
                    origin,
                    hops: receipt.relay_hops,
                    request: request.clone(),
                },
            );
        }
        let nonce = request.nonce;
        match self.handle_update_request(request) {
            Ok(resp) => ctx.send(origin, Message::Response(resp)),
            Err(e) => ctx.send(
                origin,
                Message::Rejected {
                    nonce,
                    reason: e.to_string(),
                },
            ),
        }
    }

    /// Starts sessions for every transaction in the block that carries a hash
    /// this node holds. Returns the ids of the sessions created.
    pub fn scan_block(&mut self, ctx: &mut Context<Message>, block: Block) -> Vec<RequestId> {
        self.blocks_seen.push(block.height);
        let mut created = Vec::new();
        for tx in &block.txs {
            if let Some(id) = self.register_transaction(ctx, tx) {
                created.push(id);
            }
        }
        self.start_ready(ctx);
        created
    }

    fn register_transaction(
        &mut self,
        ctx: &mut Context<Message>,
        tx: &Transaction,
    ) -> Option<RequestId> {
        let mut requests = Vec::new();
        let mut write_sets = Vec::new();
        let mut signatures_ok = true;
        for (i, entry) in tx.entries.iter().enumerate() {
            let Some(p) = self.transient.remove(&entry.request_hash) else {
                continue;
            };
            signatures_ok &=
                tx.entry_signatures_valid(i, &p.request.stakeholder_epks, self.cfg.scheme);
            requests.push(p.request);
            write_sets.push(p.write_set);
        }
        let first = requests.first()?;
        let id = first.id;
        if self.sessions.contains_key(&id) || self.finished.contains_key(&id) {
            return None;
        }
        let mut deps = DependencySet::new();
        let mut accounts = BTreeSet::new();
        for r in &requests {
            for d in r.deps.iter() {
                if !deps.contains(&d.shard) {
                    deps.insert(d).expect("checked above");
                }
            }
            if r.id != id {
                signatures_ok = false;
            }
            if let Ok(p) = r.decode_payload() {
                accounts.extend(p.ops.into_iter().map(|op| op.account));
            }
        }
        let contacts: Vec<ShardId> = deps.contacts().cloned().collect();
        let expected_callers: BTreeSet<ShardId> = deps.expected_callers().cloned().collect();
        let engine = match self.cfg.protocol {
            Protocol::Ppac => Engine::Ppac(PpacSession::new(
                id,
                contacts.clone(),
                expected_callers.clone(),
                tx.entries.len(),
                self.cfg.optimize,
            )),
            Protocol::TwoPc => {
                let mut participants: BTreeSet<ShardId> = deps.shards().cloned().collect();
                participants.insert(self.cfg.shard_id.clone());
                Engine::TwoPc(TwoPcSession::new(
                    id,
                    self.cfg.shard_id.clone(),
                    &participants,
                ))
            }
        };
        let budget = match &engine {
            Engine::Ppac(s) => s.budget(),
            Engine::TwoPc(_) => 1,
        };
        self.reports.insert(
            id,
            SessionReport {
                request_id: id,
                protocol: self.cfg.protocol,
                hash_count: tx.entries.len(),
                contacts: contacts.len(),
                budget,
                initial: None,
                decision: None,
                final_round: None,
                discard_round: None,
                scanned_at: ctx.now(),
                started_at: None,
                decided_at: None,
            },
        );
        self.sessions.insert(
            id,
            Session {
                requests,
                write_sets,
                signatures_ok,
                accounts,
                expected_callers,
                engine,
                write_set: None,
                finalized: false,
                gc_token: None,
            },
        );
        self.queue.push(id);
        // Messages that arrived before the block are handled once the session exists.
        for (from, msg) in self.early.remove(&id).unwrap_or_default() {
            self.on_message(ctx, from, msg);
        }
        Some(id)
    }

    /// Starts queued sessions whose accounts don't overlap any running session
    /// or any earlier queued one.
    fn start_ready(&mut self, ctx: &mut Context<Message>) {
        let mut blocked: BTreeSet<String> = self
            .sessions
            .iter()
            .filter(|(id, s)| !s.finalized && !self.queue.contains(id))
            .flat_map(|(_, s)| s.accounts.iter().cloned())
            .collect();
        let mut i = 0;
        while i < self.queue.len() {
            let id = self.queue[i];
            let accounts = self.sessions[&id].accounts.clone();
            if accounts.is_disjoint(&blocked) {
                self.queue.remove(i);
                blocked.extend(accounts);
                self.start_session(ctx, id);
            } else {
                blocked.extend(accounts);
                i += 1;
            }
        }
    }

    fn initial_belief(&self, s: &Session) -> (BeliefValue, Option<WriteSet>) {
        if !s.signatures_ok {
            return (BeliefValue::Discard, None);
        }
        let mut combined = WriteSet::default();
        let mut written: BTreeSet<String> = BTreeSet::new();
        for (req, ws) in s.requests.iter().zip(&s.write_sets) {
            let next = match (self.cfg.mode, ws) {
                (ExecuteMode::Xo, Some(ws)) => {
                    // A request simulated against state an earlier request of
                    // this session (or an earlier session) changed is stale.
                    if self.state.is_stale(ws)
                        || ws.read_versions.keys().any(|k| written.contains(k))
                    {
                        return (BeliefValue::Discard, None);
                    }
                    ws.clone()
                }
                _ => {
                    let Ok(payload) = req.decode_payload() else {
                        return (BeliefValue::Discard, None);
                    };
                    match self.state.simulate(&payload, Some(&combined)) {
                        Ok(ws) => ws,
                        Err(_) => return (BeliefValue::Discard, None),
                    }
                }
            };
            written.extend(next.writes.keys().cloned());
            combined.merge(next);
        }
        (BeliefValue::TentativeCommit, Some(combined))
    }

    fn start_session(&mut self, ctx: &mut Context<Message>, id: RequestId) {
        let (mut initial, write_set) = self.initial_belief(&self.sessions[&id]);
        if self.cfg.belief_overrides.get(&id) == Some(&BeliefValue::Discard) {
            initial = BeliefValue::Discard;
        }
        let report = self.reports.get_mut(&id).unwrap();
        report.initial = Some(initial);
        report.started_at = Some(ctx.now());
        let session = self.sessions.get_mut(&id).unwrap();
        session.write_set = write_set;
        match &mut session.engine {
            Engine::Ppac(s) => {
                let actions = s.start(initial);
                self.run_ppac(ctx, id, actions);
            }
            Engine::TwoPc(s) => {
                let actions = s.start(initial);
                self.run_twopc(ctx, id, actions);
            }
        }
    }

    fn send_remote(&self, ctx: &mut Context<Message>, to: NodeId, msg: Message) {
        if !self.cfg.stalled {
            ctx.send(to, msg);
        }
    }

    fn send_to_shard(&self, ctx: &mut Context<Message>, shard: &ShardId, msg: &Message) {
        for n in self
            .directory
            .get(shard)
            .map(Vec::as_slice)
            .unwrap_or_default()
        {
            self.send_remote(ctx, *n, msg.clone());
        }
    }

    fn run_ppac(&mut self, ctx: &mut Context<Message>, id: RequestId, actions: Vec<Action>) {
        let mut replied = false;
        for a in actions {
            match a {
                Action::Pull { contact } => {
                    let msg = Message::Pull {
                        request_id: id,
                        caller: self.cfg.shard_id.clone(),
                    };
                    self.send_to_shard(ctx, &contact, &msg);
                }
                Action::Reply { to, belief } => {
                    replied = true;
                    self.send_remote(
                        ctx,
                        to,
                        Message::PullReply {
                            request_id: id,
                            belief,
                        },
                    );
                }
                Action::Deny { to } => {
                    self.send_remote(ctx, to, Message::PullDenied { request_id: id })
                }
                Action::RoundAdvance { round } => {
                    ctx.note(
                        TraceKind::RoundAdvance,
                        format!("{} id={} round={round}", self.cfg.shard_id, id.short()),
                    );
                }
                Action::StateChange { round } => {
                    if let Some(r) = self.reports.get_mut(&id) {
                        r.discard_round = Some(round);
                    }
                    ctx.note(
                        TraceKind::StateChange,
                        format!(
                            "{} id={} round={round} discard",
                            self.cfg.shard_id,
                            id.short()
                        ),
                    );
                }
                Action::Finalized { value, round } => {
                    self.finalize(ctx, id, value.decision(), round)
                }
            }
        }
        if replied {
            self.maybe_collect(id);
        }
    }

    fn run_twopc(&mut self, ctx: &mut Context<Message>, id: RequestId, actions: Vec<TwoPcAction>) {
        for a in actions {
            match a {
                TwoPcAction::SendVote { to, commit } => {
                    let msg = Message::Vote {
                        request_id: id,
                        voter: self.cfg.shard_id.clone(),
                        commit,
                    };
                    self.send_to_shard(ctx, &to, &msg);
                }
                TwoPcAction::Broadcast { to, decision } => {
                    let msg = Message::Decision {
                        request_id: id,
                        decision,
                    };
                    for shard in &to {
                        self.send_to_shard(ctx, shard, &msg);
                    }
                }
                TwoPcAction::Finalized { decision, round } => {
                    self.finalize(ctx, id, decision, round)
                }
            }
        }
    }

    fn finalize(
        &mut self,
        ctx: &mut Context<Message>,
        id: RequestId,
        decision: Decision,
        round: u32,
    ) {
        let session = self.sessions.get_mut(&id).unwrap();
        session.finalized = true;
        if decision == Decision::Commit {
            if let Some(ws) = session.write_set.take() {
                self.state.apply(&ws);
            }
        }
        session.write_set = None;
        let token = self.next_timer;
        self.next_timer += 1;
        session.gc_token = Some(token);
        self.gc_timers.insert(token, id);
        ctx.set_background_timer(self.cfg.gc_timeout, token);

        let report = self.reports.get_mut(&id).unwrap();
        report.decision = Some(decision);
        report.final_round = Some(round);
        report.decided_at = Some(ctx.now());
        if decision == Decision::Discard
            && report.discard_round.is_none()
            && report.protocol == Protocol::Ppac
        {
            report.discard_round = Some(round);
        }
        ctx.note(
            TraceKind::Finalize,
            format!(
                "{} id={} round={round} {decision}",
                self.cfg.shard_id,
                id.short()
            ),
        );
        if self.cfg.protocol == Protocol::TwoPc {
            self.drop_session(id);
        } else {
            self.maybe_collect(id);
        }
        self.start_ready(ctx);
    }

    /// Drops a finished session once every node of every expected caller holds our final belief.
    fn maybe_collect(&mut self, id: RequestId) {
        let Some(s) = self.sessions.get(&id) else {
            return;
        };
        let Engine::Ppac(p) = &s.engine else {
            return;
        };
        if !s.finalized {
            return;
        }
        let all_informed = s.expected_callers.iter().all(|c| {
            self.directory
                .get(c)
                .is_some_and(|nodes| nodes.iter().all(|n| p.answered_final().contains(n)))
        });
        if all_informed {
            self.drop_session(id);
        }
    }

    fn drop_session(&mut self, id: RequestId) {
        if let Some(s) = self.sessions.remove(&id) {
            if let Some(t) = s.gc_token {
                self.gc_timers.remove(&t);
            }
            let value = match &s.engine {
                Engine::Ppac(p) => p.belief().value,
                Engine::TwoPc(t) => t.decision().map_or(BeliefValue::Discard, |d| d.0.into()),
            };
            self.finished.insert(id, value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Signature;
    use crate::crypto::{KeyKind, PublicKey};
    use crate::model::{Op, Payload};

    fn sid(s: &str) -> ShardId {
        ShardId::new(s).unwrap()
    }

    struct Fixture {
        alice: KeyPair,
        bob: KeyPair,
    }

    fn fixture() -> Fixture {
        Fixture {
            alice: Scheme::Ed25519.keygen([1; 32], KeyKind::LongTerm),
            bob: Scheme::Ed25519.keygen([2; 32], KeyKind::LongTerm),
        }
    }

    fn shard(f: &Fixture, mode: ExecuteMode) -> ShardNode {
        let cfg = ShardConfig {
            shard_id: sid("SA"),
            scheme: Scheme::Ed25519,
            keys: Scheme::Ed25519.keygen([9; 32], KeyKind::LongTerm),
            balances: [
                ("alice".to_string(), 100),
                ("bob".to_string(), 0),
                ("poor".to_string(), 50),
            ]
            .into(),
            policies: [
                (
                    "alice".to_string(),
                    Policy::all_of([f.alice.public.clone()]),
                ),
                ("bob".to_string(), Policy::all_of([f.bob.public.clone()])),
                ("poor".to_string(), Policy::all_of([f.alice.public.clone()])),
            ]
            .into(),
            mode,
            protocol: Protocol::Ppac,
            optimize: true,
            gc_timeout: 1000,
            stalled: false,
            belief_overrides: BTreeMap::new(),
            broadcast_hop_limit: 1,
        };
        let dir = BTreeMap::from([(sid("SA"), vec![NodeId(0)])]);
        ShardNode::new(cfg, NodeId(0), dir)
    }

    fn request(ops: &[(&str, i64)], signers: &[&KeyPair]) -> UpdateRequest {
        let payload = Payload::new(
            ops.iter()
                .map(|(a, d)| Op {
                    account: a.to_string(),
                    delta: *d,
                })
                .collect(),
        )
        .unwrap();
        let mut req = UpdateRequest {
            id: RequestId([3; 16]),
            nonce: Nonce([4; 16]),
            payload: payload.to_canonical(),
            deps: DependencySet::new(),
            stakeholder_pks: signers.iter().map(|k| k.public.clone()).collect(),
            stakeholder_epks: signers.iter().map(|_| PublicKey(vec![5; 32])).collect(),
            signatures: Vec::new(),
        };
        let msg = req.signing_bytes();
        req.signatures = signers.iter().map(|k| k.sign(&msg)).collect();
        req
    }

    #[test]
    fn coin_transfer_gets_signed_hash() {
        let f = fixture();
        let mut s = shard(&f, ExecuteMode::Xo);
        let req = request(&[("alice", -100), ("bob", 100)], &[&f.alice, &f.bob]);
        let resp = s.handle_update_request(req.clone()).unwrap();
        assert_eq!(resp.request_hash, req.hash());
        assert!(Scheme::Ed25519.verify(
            &s.cfg.keys.public,
            req.hash().as_bytes(),
            &resp.shard_signature
        ));
        assert_eq!(
            s.handle_update_request(req),
            Err(ShardError::DuplicateRequest)
        );
    }

    #[test]
    fn missing_owner_signature_violates_policy() {
        let f = fixture();
        let mut s = shard(&f, ExecuteMode::Xo);
        let req = request(&[("alice", -100), ("bob", 100)], &[&f.alice]);
        assert_eq!(
            s.handle_update_request(req),
            Err(ShardError::PolicyViolation("bob".into()))
        );
    }

    #[test]
    fn forged_signature_rejected() {
        let f = fixture();
        let mut s = shard(&f, ExecuteMode::Xo);
        let mut req = request(&[("alice", -1)], &[&f.alice]);
        req.signatures[0] = Signature(vec![0; 64]);
        assert_eq!(
            s.handle_update_request(req),
            Err(ShardError::InvalidSignature)
        );
    }

    #[test]
    fn overdraft_fails_in_xo_but_not_at_request_time_in_ox() {
        let f = fixture();
        let req = request(&[("poor", -100)], &[&f.alice]);
        let mut xo = shard(&f, ExecuteMode::Xo);
        assert!(matches!(
            xo.handle_update_request(req.clone()),
            Err(ShardError::SimulationFailure(_))
        ));
        let mut ox = shard(&f, ExecuteMode::Ox);
        assert!(ox.handle_update_request(req).is_ok());
    }

    #[test]
    fn self_dependency_rejected() {
        let f = fixture();
        let mut s = shard(&f, ExecuteMode::Xo);
        let mut req = request(&[("alice", -1)], &[&f.alice]);
        req.deps = DependencySet::parse(&["SA+"]).unwrap();
        assert!(matches!(
            s.handle_update_request(req),
            Err(ShardError::Malformed(_))
        ));
    }
}
