//! Builds a simulated deployment from a scenario and runs it.
//!
//! Node layout: the ledger is node 0, clients follow, then every replica of
//! every shard in scenario order, then one stakeholder agent per transaction.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audit::{AuditContext, RequestSecrets};
use crate::codec::Canonical;
use crate::crypto::{KeyKind, PublicKey};
use crate::ledger::{BlockPolicy, Ledger, LedgerNode};
use crate::message::Message;
use crate::model::{
    BeliefValue, Decision, DependencySet, Op, Payload, RequestId, ShardId, Sign, SignedDependency,
};
use crate::scenario::Scenario;
use crate::shard::state::Policy;
use crate::shard::{Protocol, SessionReport, ShardConfig, ShardNode};
use crate::simnet::trace::{Trace, TraceKind};
use crate::simnet::{Actor, Context, CrashPoint, NodeId, Outcome, SimConfig, Simulator, Time};
use crate::stakeholder::{
    negotiate, ClientNode, RequestTerms, StakeholderAgent, StakeholderIdentity, TxStatus,
};

pub enum Node {
    Ledger(LedgerNode),
    Client(ClientNode),
    Shard(Box<ShardNode>),
    Stakeholder(Box<StakeholderAgent>),
}

impl Actor for Node {
    type Msg = Message;

    fn on_start(&mut self, ctx: &mut Context<Message>) {
        if let Node::Stakeholder(s) = self {
            s.on_start(ctx);
        }
    }

    fn on_message(&mut self, ctx: &mut Context<Message>, from: NodeId, msg: Message) {
        match self {
            Node::Ledger(l) => l.on_message(ctx, msg),
            Node::Client(c) => c.on_message(ctx, msg),
            Node::Shard(s) => s.on_message(ctx, from, msg),
            Node::Stakeholder(s) => s.on_message(ctx, from, msg),
        }
    }

    fn on_timer(&mut self, ctx: &mut Context<Message>, token: u64) {
        match self {
            Node::Ledger(l) => l.on_timer(ctx, token),
            Node::Shard(s) => s.on_timer(ctx, token),
            Node::Stakeholder(s) => s.on_timer(ctx, token),
            Node::Client(_) => {}
        }
    }

    fn has_pending_work(&self) -> bool {
        match self {
            Node::Shard(s) => s.has_pending_work(),
            Node::Stakeholder(s) => s.has_pending_work(),
            Node::Ledger(_) | Node::Client(_) => false,
        }
    }
}

/// Command-line style overrides applied on top of a scenario.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub protocol: Option<Protocol>,
    pub optimize: Option<bool>,
    pub replication: Option<usize>,
}

impl RunOverrides {
    pub fn apply(&self, scenario: &Scenario) -> Scenario {
        let mut s = scenario.clone();
        if let Some(seed) = self.seed {
            s.network.seed = seed;
        }
        if let Some(p) = self.protocol {
            s.protocol.kind = p;
        }
        if let Some(o) = self.optimize {
            s.protocol.optimize = o;
        }
        if let Some(r) = self.replication {
            for shard in &mut s.shards {
                shard.replication = r;
                shard.crash.retain(|c| c.node < r);
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Role {
    Ledger,
    Client,
    Shard { shard: ShardId, replica: usize },
    Stakeholder { tx: usize },
}

#[derive(Clone, Debug)]
pub struct TxReport {
    pub index: usize,
    pub request_id: RequestId,
    pub status: TxStatus,
    pub shards: Vec<ShardId>,
    /// Dependency sets as declared in the scenario.
    pub declared: BTreeMap<ShardId, DependencySet>,
    /// Number of hashes the stakeholders put in the transaction.
    pub hash_count: usize,
    pub start: Time,
    pub responses_received: BTreeMap<ShardId, usize>,
}

#[derive(Clone, Debug)]
pub struct SessionObservation {
    pub node: NodeId,
    pub shard: ShardId,
    pub tx: usize,
    pub report: SessionReport,
}

pub struct RunReport {
    /// The scenario after overrides.
    pub scenario: Scenario,
    pub outcome: Outcome,
    pub trace: Trace,
    pub crashed: BTreeSet<NodeId>,
    pub roles: BTreeMap<NodeId, Role>,
    pub txs: Vec<TxReport>,
    pub sessions: Vec<SessionObservation>,
    pub balances: BTreeMap<NodeId, BTreeMap<String, i64>>,
    /// Sessions still held in memory when the run ended.
    pub live_sessions: BTreeMap<NodeId, usize>,
    pub blocks: usize,
    pub audit: AuditContext,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Completion {
    /// Every correct node of every shard finalized.
    Decided,
    /// Some correct node never finalized before the run ended.
    Incomplete,
    /// The stakeholders gave up before the transaction reached the ledger.
    Aborted(String),
}

/// Per-transaction figures for benchmarks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxMetrics {
    pub rounds: u32,
    pub virtual_latency: Time,
    pub messages: usize,
    pub decided: bool,
}

impl RunReport {
    pub fn correct_nodes(&self, shard: &ShardId) -> Vec<NodeId> {
        self.roles
            .iter()
            .filter(|(n, r)| {
                matches!(r, Role::Shard { shard: s, .. } if s == shard) && !self.crashed.contains(n)
            })
            .map(|(n, _)| *n)
            .collect()
    }

    /// Session reports of the correct nodes of `shard` for transaction `tx`.
    pub fn views(&self, tx: usize, shard: &ShardId) -> Vec<&SessionObservation> {
        self.sessions
            .iter()
            .filter(|o| o.tx == tx && &o.shard == shard && !self.crashed.contains(&o.node))
            .collect()
    }

    /// The decision every correct node of `shard` reached, if they all did and agree.
    pub fn decision(&self, tx: usize, shard: &ShardId) -> Option<Decision> {
        let nodes = self.correct_nodes(shard);
        let views = self.views(tx, shard);
        if nodes.is_empty() || views.len() != nodes.len() {
            return None;
        }
        let first = views[0].report.decision?;
        views
            .iter()
            .all(|v| v.report.decision == Some(first))
            .then_some(first)
    }

    pub fn decisions(&self, tx: usize) -> BTreeMap<ShardId, Option<Decision>> {
        self.txs[tx]
            .shards
            .iter()
            .map(|s| (s.clone(), self.decision(tx, s)))
            .collect()
    }

    /// Observed initial validation outcome per shard (first correct node).
    pub fn initial_beliefs(&self, tx: usize) -> BTreeMap<ShardId, Decision> {
        let mut out = BTreeMap::new();
        for s in &self.txs[tx].shards {
            if let Some(v) = self.views(tx, s).first().and_then(|v| v.report.initial) {
                out.insert(s.clone(), v.decision());
            }
        }
        out
    }

    /// Whether every correct node of every shard of `tx` finalized.
    pub fn tx_decided(&self, tx: usize) -> bool {
        self.txs[tx]
            .shards
            .iter()
            .all(|s| self.decision(tx, s).is_some())
    }

    pub fn completion(&self, tx: usize) -> Completion {
        if let TxStatus::Aborted(reason) = &self.txs[tx].status {
            return Completion::Aborted(reason.clone());
        }
        if self.tx_decided(tx) {
            Completion::Decided
        } else {
            Completion::Incomplete
        }
    }

    /// Commit protocol messages (pull, reply, denial, vote, decision) sent for `tx`.
    pub fn protocol_messages(&self, tx: usize) -> usize {
        let id = self.txs[tx].request_id;
        self.trace
            .of_kind(TraceKind::Send)
            .filter(|e| match Message::from_canonical(&e.bytes) {
                Ok(
                    Message::Pull { request_id, .. }
                    | Message::PullReply { request_id, .. }
                    | Message::PullDenied { request_id }
                    | Message::Vote { request_id, .. }
                    | Message::Decision { request_id, .. },
                ) => request_id == id,
                _ => false,
            })
            .count()
    }

    pub fn metrics(&self, tx: usize) -> TxMetrics {
        let mut rounds = 0;
        let mut last = 0;
        let mut first_start: Option<Time> = None;
        for s in &self.txs[tx].shards {
            for v in self.views(tx, s) {
                rounds = rounds.max(v.report.final_round.unwrap_or(0));
                last = last.max(v.report.decided_at.unwrap_or(0));
                if let Some(t) = v.report.started_at {
                    first_start = Some(first_start.map_or(t, |f: Time| f.min(t)));
                }
            }
        }
        TxMetrics {
            rounds,
            virtual_latency: last.saturating_sub(first_start.unwrap_or(last)),
            messages: self.protocol_messages(tx),
            decided: self.tx_decided(tx),
        }
    }

    /// Balances per shard as held by its first correct node.
    pub fn committed_state(&self) -> BTreeMap<ShardId, BTreeMap<String, i64>> {
        let mut out = BTreeMap::new();
        for (n, r) in &self.roles {
            if let Role::Shard { shard, .. } = r {
                if !self.crashed.contains(n) && !out.contains_key(shard) {
                    out.insert(shard.clone(), self.balances[n].clone());
                }
            }
        }
        out
    }

    /// Whether all correct replicas of each shard hold the same balances.
    pub fn replicas_agree(&self) -> bool {
        let state = self.committed_state();
        self.roles.iter().all(|(n, r)| match r {
            Role::Shard { shard, .. } if !self.crashed.contains(n) => {
                state.get(shard) == self.balances.get(n)
            }
            _ => true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("transaction {tx}: stakeholder `{name}` owns nothing and has no key")]
    UnknownSigner { tx: usize, name: String },
}

/// In the baseline the smallest participant coordinates and learns every
/// participant; everyone else only knows the coordinator.
pub fn star_rewrite(
    declared: &BTreeMap<ShardId, DependencySet>,
) -> BTreeMap<ShardId, DependencySet> {
    let Some(coord) = declared.keys().next().cloned() else {
        return BTreeMap::new();
    };
    declared
        .keys()
        .map(|s| {
            let mut d = DependencySet::new();
            if *s == coord {
                for other in declared.keys().filter(|o| **o != coord) {
                    d.insert(SignedDependency {
                        shard: other.clone(),
                        sign: Sign::Unsigned,
                    })
                    .unwrap();
                }
            } else {
                d.insert(SignedDependency {
                    shard: coord.clone(),
                    sign: Sign::Unsigned,
                })
                .unwrap();
            }
            (s.clone(), d)
        })
        .collect()
}

pub struct World {
    pub scenario: Scenario,
    pub simulator: Simulator<Node>,
    pub roles: BTreeMap<NodeId, Role>,
    pub request_ids: Vec<RequestId>,
    pub audit: AuditContext,
}

pub fn build(scenario: &Scenario, overrides: &RunOverrides) -> Result<World, BuildError> {
    let sc = overrides.apply(scenario);
    let scheme = sc.protocol.scheme;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.network.seed);
    rng.set_stream(1);

    let mut roles = BTreeMap::new();
    let mut next = 0u32;
    let mut alloc = |role: Role, roles: &mut BTreeMap<NodeId, Role>| {
        let n = NodeId(next);
        next += 1;
        roles.insert(n, role);
        n
    };
    let ledger_node = alloc(Role::Ledger, &mut roles);
    let clients: Vec<NodeId> = (0..sc.network.clients.max(1))
        .map(|_| alloc(Role::Client, &mut roles))
        .collect();
    let mut directory: BTreeMap<ShardId, Vec<NodeId>> = BTreeMap::new();
    for s in &sc.shards {
        let id = ShardId::new(s.id.clone()).expect("validated");
        let nodes = (0..s.replication)
            .map(|replica| {
                alloc(
                    Role::Shard {
                        shard: id.clone(),
                        replica,
                    },
                    &mut roles,
                )
            })
            .collect();
        directory.insert(id, nodes);
    }
    let agents: Vec<NodeId> = (0..sc.transactions.len())
        .map(|tx| alloc(Role::Stakeholder { tx }, &mut roles))
        .collect();

    // Long-term keys, in name order so they don't depend on file layout.
    let mut names: BTreeSet<String> = BTreeSet::new();
    for s in &sc.shards {
        for a in &s.accounts {
            names.extend(a.owners.iter().cloned());
        }
    }
    for tx in &sc.transactions {
        for r in &tx.requests {
            names.extend(r.signers.iter().flatten().cloned());
        }
    }
    let name_index: BTreeMap<String, usize> = names
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, n)| (n, i))
        .collect();
    let mut parties: Vec<StakeholderIdentity> = names
        .iter()
        .map(|_| StakeholderIdentity::new(scheme.keygen_from_rng(&mut rng, KeyKind::LongTerm)))
        .collect();
    let shard_keys: BTreeMap<ShardId, _> = directory
        .keys()
        .map(|s| {
            (
                s.clone(),
                scheme.keygen_from_rng(&mut rng, KeyKind::LongTerm),
            )
        })
        .collect();
    let client_keys: Vec<_> = clients
        .iter()
        .map(|_| scheme.keygen_from_rng(&mut rng, KeyKind::LongTerm))
        .collect();

    // Off-chain negotiation happens before the simulation starts.
    let mut overrides_by_shard: BTreeMap<ShardId, BTreeMap<RequestId, BeliefValue>> =
        BTreeMap::new();
    let mut per_tx = Vec::new();
    let mut request_ids = Vec::new();
    let mut secrets = Vec::new();
    let mut entitled: BTreeMap<ShardId, BTreeSet<ShardId>> = directory
        .keys()
        .map(|s| (s.clone(), BTreeSet::from([s.clone()])))
        .collect();
    for (t, tx) in sc.transactions.iter().enumerate() {
        let id = RequestId::random(&mut rng);
        request_ids.push(id);
        let declared = sc.declared_deps(t);
        for (s, d) in &declared {
            entitled
                .entry(s.clone())
                .or_default()
                .extend(d.shards().cloned());
        }
        let deps = match sc.protocol.kind {
            Protocol::Ppac => declared.clone(),
            Protocol::TwoPc => star_rewrite(&declared),
        };
        let mut terms = Vec::new();
        for r in &tx.requests {
            let shard = ShardId::new(r.shard.clone()).expect("validated");
            let decl = sc.shard(&r.shard).expect("validated");
            let signer_names: BTreeSet<String> = match &r.signers {
                Some(v) => v.iter().cloned().collect(),
                None => r
                    .ops
                    .iter()
                    .flat_map(|op| {
                        decl.accounts
                            .iter()
                            .filter(|a| a.name == op.account)
                            .flat_map(|a| a.owners.clone())
                    })
                    .collect(),
            };
            let stakeholders = signer_names
                .iter()
                .map(|n| {
                    name_index
                        .get(n)
                        .copied()
                        .ok_or_else(|| BuildError::UnknownSigner {
                            tx: t,
                            name: n.clone(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let payload = Payload::new(
                r.ops
                    .iter()
                    .map(|o| Op {
                        account: o.account.clone(),
                        delta: o.delta,
                    })
                    .collect(),
            )
            .expect("validated");
            if r.initial_belief == Some(Decision::Discard) {
                overrides_by_shard
                    .entry(shard.clone())
                    .or_default()
                    .insert(id, BeliefValue::Discard);
            }
            terms.push(RequestTerms {
                deps: deps[&shard].clone(),
                shard,
                payload,
                stakeholders,
            });
        }
        let negotiated = negotiate(id, &terms, &mut parties, &mut rng);
        if let Ok(reqs) = &negotiated {
            for (shard, req) in reqs {
                secrets.push(RequestSecrets {
                    shard: shard.clone(),
                    encoded: req.to_canonical(),
                    payload: req.payload.clone(),
                    deps: req.deps.to_canonical(),
                    pks: req.stakeholder_pks.iter().map(|k| k.0.clone()).collect(),
                    epks: req.stakeholder_epks.iter().map(|k| k.0.clone()).collect(),
                });
            }
        }
        per_tx.push((negotiated, declared));
    }

    let shard_pks: BTreeMap<ShardId, PublicKey> = shard_keys
        .iter()
        .map(|(s, k)| (s.clone(), k.public.clone()))
        .collect();
    let mut actors: Vec<Node> = Vec::new();
    let enrolled: BTreeSet<PublicKey> = client_keys.iter().map(|k| k.public.clone()).collect();
    let all_shard_nodes: Vec<NodeId> = directory.values().flatten().copied().collect();
    actors.push(Node::Ledger(LedgerNode::new(
        Ledger::new(
            scheme,
            enrolled,
            BlockPolicy {
                max_txs: sc.network.block_size.max(1),
                timeout: sc.network.block_timeout,
            },
        ),
        all_shard_nodes,
    )));
    for key in client_keys {
        actors.push(Node::Client(ClientNode {
            key,
            ledger: ledger_node,
            submitted: 0,
        }));
    }
    let mut crash_plan = BTreeMap::new();
    for s in &sc.shards {
        let id = ShardId::new(s.id.clone()).expect("validated");
        let mut policies = BTreeMap::new();
        for a in &s.accounts {
            let owners = a
                .owners
                .iter()
                .map(|o| parties[name_index[o]].long_term.public.clone());
            policies.insert(a.name.clone(), Policy::all_of(owners));
        }
        for (replica, node) in directory[&id].iter().enumerate() {
            let cfg = ShardConfig {
                shard_id: id.clone(),
                scheme,
                keys: shard_keys[&id].clone(),
                balances: s
                    .accounts
                    .iter()
                    .map(|a| (a.name.clone(), a.balance))
                    .collect(),
                policies: policies.clone(),
                mode: sc.protocol.mode,
                protocol: sc.protocol.kind,
                optimize: sc.protocol.optimize,
                gc_timeout: sc.protocol.gc_timeout,
                stalled: s.stalled,
                belief_overrides: overrides_by_shard.get(&id).cloned().unwrap_or_default(),
                broadcast_hop_limit: sc.protocol.broadcast_hops,
            };
            actors.push(Node::Shard(Box::new(ShardNode::new(
                cfg,
                *node,
                directory.clone(),
            ))));
            for c in s.crash.iter().filter(|c| c.node == replica) {
                let point = match (c.at, c.after_sends) {
                    (Some(t), _) => CrashPoint::At(t),
                    (None, Some(k)) => CrashPoint::AfterSends(k),
                    (None, None) => unreachable!("validated"),
                };
                crash_plan.insert(*node, point);
            }
        }
    }
    for (t, (negotiated, _)) in per_tx.iter().enumerate() {
        let tx = &sc.transactions[t];
        let agent_rng = ChaCha8Rng::seed_from_u64(
            sc.network.seed ^ (t as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let (requests, aborted) = match negotiated {
            Ok(r) => (r.clone(), None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
        let mut agent = StakeholderAgent::new(
            parties.clone(),
            requests,
            directory.clone(),
            shard_pks.clone(),
            clients.clone(),
            scheme,
            tx.start,
            tx.pad_to,
            agent_rng,
        );
        if let Some(reason) = aborted {
            agent.status = TxStatus::Aborted(reason);
        }
        debug_assert_eq!(NodeId(actors.len() as u32), agents[t]);
        actors.push(Node::Stakeholder(Box::new(agent)));
    }

    let audit = AuditContext {
        protocol: sc.protocol.kind,
        ledger_nodes: BTreeSet::from([ledger_node]),
        client_nodes: clients.iter().copied().collect(),
        shard_of: directory
            .iter()
            .flat_map(|(s, ns)| ns.iter().map(move |n| (*n, s.clone())))
            .collect(),
        entitled,
        requests: secrets,
    };
    let config = SimConfig {
        seed: sc.network.seed,
        delta_max: sc.network.delta,
        crash_plan,
        horizon: sc.network.horizon,
        reliable_broadcast_fanout_rounds: sc.protocol.broadcast_hops,
    };
    Ok(World {
        simulator: Simulator::new(config, actors),
        scenario: sc,
        roles,
        request_ids,
        audit,
    })
}

pub fn run(scenario: &Scenario, overrides: &RunOverrides) -> Result<RunReport, BuildError> {
    let mut world = build(scenario, overrides)?;
    let outcome = world.simulator.run();
    let (actors, trace, crashed) = world.simulator.into_parts();
    let sc = world.scenario;
    let id_to_tx: BTreeMap<RequestId, usize> = world
        .request_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();

    let mut sessions = Vec::new();
    let mut balances = BTreeMap::new();
    let mut live_sessions = BTreeMap::new();
    let mut txs = Vec::new();
    let mut blocks = 0;
    for (i, a) in actors.iter().enumerate() {
        let node = NodeId(i as u32);
        match a {
            Node::Ledger(l) => blocks = l.blocks.len(),
            Node::Shard(s) => {
                balances.insert(node, s.state.balances().clone());
                live_sessions.insert(node, s.live_sessions());
                for (id, r) in s.reports() {
                    if let Some(&tx) = id_to_tx.get(id) {
                        sessions.push(SessionObservation {
                            node,
                            shard: s.shard_id().clone(),
                            tx,
                            report: r.clone(),
                        });
                    }
                }
            }
            Node::Stakeholder(agent) => {
                let Role::Stakeholder { tx } = world.roles[&node] else {
                    unreachable!()
                };
                let declared = sc.declared_deps(tx);
                txs.push(TxReport {
                    index: tx,
                    request_id: world.request_ids[tx],
                    status: agent.status.clone(),
                    shards: declared.keys().cloned().collect(),
                    hash_count: sc.transactions[tx].pad_to.unwrap_or(0).max(declared.len()),
                    declared,
                    start: sc.transactions[tx].start,
                    responses_received: agent.responses_received.clone(),
                });
            }
            Node::Client(_) => {}
        }
    }
    Ok(RunReport {
        scenario: sc,
        outcome,
        trace,
        crashed,
        roles: world.roles,
        txs,
        sessions,
        balances,
        live_sessions,
        blocks,
        audit: world.audit,
    })
}
