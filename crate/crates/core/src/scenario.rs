//! Declarative scenario files (TOML) and built-in scenario families.
//!
//! ```toml
//! name = "coin-exchange"
//!
//! [network]
//! seed = 7
//! delta = 10          # latency bound, ticks
//! block_size = 10
//! block_timeout = 100
//! clients = 3
//!
//! [protocol]
//! kind = "ppac"       # or "2pc"
//! optimize = true
//! mode = "xo"         # or "ox"
//!
//! [[shards]]
//! id = "SA"
//! replication = 1
//! accounts = [{ name = "alice", balance = 100, owners = ["alice"] }]
//!
//! [[transaction]]
//! [[transaction.requests]]
//! shard = "SA"
//! deps = ["SB"]
//! ops = [{ account = "alice", delta = -100 }]
//! initial_belief = "discard"   # optional fault injection
//! ```

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Scheme;
use crate::graph::DependencyGraph;
use crate::model::{Decision, DependencySet, ModelError, ShardId};
use crate::shard::{ExecuteMode, Protocol};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown shard `{0}`")]
    UnknownShard(String),
    #[error("duplicate shard `{0}`")]
    DuplicateShard(String),
    #[error("shard `{shard}` has no account `{account}`")]
    UnknownAccount { shard: String, account: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkParams {
    pub seed: u64,
    pub delta: u64,
    pub block_size: usize,
    pub block_timeout: u64,
    pub horizon: u64,
    pub clients: usize,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            seed: 0,
            delta: 10,
            block_size: 10,
            block_timeout: 100,
            horizon: 10_000_000,
            clients: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    pub kind: Protocol,
    pub optimize: bool,
    pub mode: ExecuteMode,
    pub scheme: Scheme,
    pub gc_timeout: u64,
    pub broadcast_hops: u32,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            kind: Protocol::Ppac,
            optimize: true,
            mode: ExecuteMode::Xo,
            scheme: Scheme::Ed25519,
            gc_timeout: 1_000_000,
            broadcast_hops: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountDecl {
    pub name: String,
    pub balance: i64,
    /// Stakeholder names; all of them must sign any update to the account.
    pub owners: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashDecl {
    /// Node index within the shard, `0..replication`.
    pub node: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_sends: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardDecl {
    pub id: String,
    #[serde(default = "one")]
    pub replication: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    pub stalled: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crash: Vec<CrashDecl>,
    pub accounts: Vec<AccountDecl>,
}

fn one() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpDecl {
    pub account: String,
    pub delta: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestDecl {
    pub shard: String,
    #[serde(default)]
    pub deps: Vec<String>,
    pub ops: Vec<OpDecl>,
    /// Defaults to the owners of every touched account.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_belief: Option<Decision>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxDecl {
    #[serde(default)]
    pub start: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_to: Option<usize>,
    pub requests: Vec<RequestDecl>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub network: NetworkParams,
    #[serde(default)]
    pub protocol: ProtocolParams,
    pub shards: Vec<ShardDecl>,
    #[serde(default, rename = "transaction")]
    pub transactions: Vec<TxDecl>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |r| line_col(text, r.start));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut accounts: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for s in &self.shards {
            ShardId::new(s.id.clone())?;
            if accounts
                .insert(&s.id, s.accounts.iter().map(|a| a.name.as_str()).collect())
                .is_some()
            {
                return Err(ScenarioError::DuplicateShard(s.id.clone()));
            }
            if s.replication == 0 {
                return Err(ScenarioError::Invalid(format!(
                    "shard {} has replication 0",
                    s.id
                )));
            }
            for c in &s.crash {
                if c.node >= s.replication {
                    return Err(ScenarioError::Invalid(format!(
                        "shard {} has no node {}",
                        s.id, c.node
                    )));
                }
                if c.at.is_some() == c.after_sends.is_some() {
                    return Err(ScenarioError::Invalid(format!(
                        "crash of {} node {} needs exactly one of `at` or `after_sends`",
                        s.id, c.node
                    )));
                }
            }
        }
        if self.network.delta == 0 {
            return Err(ScenarioError::Invalid(
                "network.delta must be at least 1".into(),
            ));
        }
        for tx in &self.transactions {
            if tx.requests.is_empty() {
                return Err(ScenarioError::Invalid(
                    "transaction without requests".into(),
                ));
            }
            for r in &tx.requests {
                let Some(accts) = accounts.get(r.shard.as_str()) else {
                    return Err(ScenarioError::UnknownShard(r.shard.clone()));
                };
                let deps = DependencySet::parse(&r.deps)?;
                for d in deps.shards() {
                    if !accounts.contains_key(d.as_str()) {
                        return Err(ScenarioError::UnknownShard(d.to_string()));
                    }
                }
                if r.ops.is_empty() {
                    return Err(ScenarioError::Invalid(format!(
                        "request to {} has no ops",
                        r.shard
                    )));
                }
                for op in &r.ops {
                    if !accts.contains(op.account.as_str()) {
                        return Err(ScenarioError::UnknownAccount {
                            shard: r.shard.clone(),
                            account: op.account.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn shard(&self, id: &str) -> Option<&ShardDecl> {
        self.shards.iter().find(|s| s.id == id)
    }

    /// Dependency sets of one transaction as declared, keyed by shard.
    pub fn declared_deps(&self, tx: usize) -> BTreeMap<ShardId, DependencySet> {
        self.transactions[tx]
            .requests
            .iter()
            .map(|r| {
                (
                    ShardId::new(r.shard.clone()).expect("validated"),
                    DependencySet::parse(&r.deps).expect("validated"),
                )
            })
            .collect()
    }

    pub fn graph(&self, tx: usize) -> DependencyGraph {
        let n = self.transactions[tx]
            .pad_to
            .unwrap_or(0)
            .max(self.transactions[tx].requests.len());
        DependencyGraph::induce(&self.declared_deps(tx), n)
    }

    /// Validation outcomes the scenario forces, everything else assumed commit.
    pub fn forced_beliefs(&self, tx: usize) -> BTreeMap<ShardId, Decision> {
        self.transactions[tx]
            .requests
            .iter()
            .map(|r| {
                (
                    ShardId::new(r.shard.clone()).expect("validated"),
                    r.initial_belief.unwrap_or(Decision::Commit),
                )
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// built-in families
// ---------------------------------------------------------------------------

fn account_shard(id: &str, account: &str, owner: &str, balance: i64) -> ShardDecl {
    ShardDecl {
        id: id.into(),
        replication: 1,
        stalled: false,
        crash: Vec::new(),
        accounts: vec![AccountDecl {
            name: account.into(),
            balance,
            owners: vec![owner.into()],
        }],
    }
}

fn credit(shard: &str, account: &str, deps: &[&str]) -> RequestDecl {
    RequestDecl {
        shard: shard.into(),
        deps: deps.iter().map(|d| d.to_string()).collect(),
        ops: vec![OpDecl {
            account: account.into(),
            delta: 1,
        }],
        signers: None,
        initial_belief: None,
    }
}

/// One shard per dependency set, each holding one account `a<i>` owned by
/// stakeholder `h<i>`; the transaction credits every account by 1.
pub fn from_dependency_sets(name: &str, sets: &[(&str, &[&str])]) -> Scenario {
    let shards = sets
        .iter()
        .enumerate()
        .map(|(i, (id, _))| account_shard(id, &format!("a{i}"), &format!("h{i}"), 100))
        .collect();
    let requests = sets
        .iter()
        .enumerate()
        .map(|(i, (id, deps))| credit(id, &format!("a{i}"), deps))
        .collect();
    Scenario {
        name: name.into(),
        network: NetworkParams::default(),
        protocol: ProtocolParams::default(),
        shards,
        transactions: vec![TxDecl {
            start: 0,
            pad_to: None,
            requests,
        }],
    }
}

pub fn single() -> Scenario {
    from_dependency_sets("single", &[("S1", &[])])
}

/// Mutual dependency on a 4-cycle.
pub fn figure1a() -> Scenario {
    from_dependency_sets(
        "figure1a",
        &[
            ("S0", &["S1", "S3"]),
            ("S1", &["S0", "S2"]),
            ("S2", &["S1", "S3"]),
            ("S3", &["S0", "S2"]),
        ],
    )
}

/// Transitively directed chain `S1 -> S2 -> S3`. The verbatim variant keeps
/// the printed `dep_3 = {S1-}`, which cannot be reciprocated.
pub fn figure1b(verbatim: bool) -> Scenario {
    let dep3: &[&str] = if verbatim { &["S1-"] } else { &["S2-"] };
    from_dependency_sets(
        if verbatim {
            "figure1b-verbatim"
        } else {
            "figure1b"
        },
        &[("S1", &["S2+"]), ("S2", &["S1-", "S3+"]), ("S3", dep3)],
    )
}

/// Discard propagation over `S4 -> S3 -> S2 -> S1` with `S2 -> S4`; S1 starts
/// with discard. The verbatim variant drops `S1+` from the second set.
pub fn figure2(verbatim: bool) -> Scenario {
    let dep2: &[&str] = if verbatim {
        &["S3-", "S4+"]
    } else {
        &["S1+", "S3-", "S4+"]
    };
    let mut s = from_dependency_sets(
        if verbatim {
            "figure2-verbatim"
        } else {
            "figure2"
        },
        &[
            ("S1", &["S2-"]),
            ("S2", dep2),
            ("S3", &["S2+", "S4-"]),
            ("S4", &["S2-", "S3+"]),
        ],
    );
    s.transactions[0].requests[0].initial_belief = Some(Decision::Discard);
    s
}

/// Directed chain of `k` shards, `S1 -> S2 -> ... -> Sk`.
pub fn chain(k: usize) -> Scenario {
    assert!(k >= 1);
    let ids: Vec<String> = (1..=k).map(|i| format!("S{i}")).collect();
    let deps: Vec<Vec<String>> = (0..k)
        .map(|i| {
            let mut d = Vec::new();
            if i > 0 {
                d.push(format!("{}-", ids[i - 1]));
            }
            if i + 1 < k {
                d.push(format!("{}+", ids[i + 1]));
            }
            d
        })
        .collect();
    let deps_ref: Vec<Vec<&str>> = deps
        .iter()
        .map(|d| d.iter().map(String::as_str).collect())
        .collect();
    let sets: Vec<(&str, &[&str])> = ids
        .iter()
        .map(String::as_str)
        .zip(deps_ref.iter().map(Vec::as_slice))
        .collect();
    let mut s = from_dependency_sets(&format!("chain{k}"), &sets);
    s.name = format!("chain{k}");
    s
}

/// Alice and Bob swap 100 coins across two mutually dependent shards.
pub fn coin_exchange() -> Scenario {
    let shard = |id: &str| ShardDecl {
        id: id.into(),
        replication: 1,
        stalled: false,
        crash: Vec::new(),
        accounts: vec![
            AccountDecl {
                name: format!("alice@{id}"),
                balance: if id == "SA" { 100 } else { 0 },
                owners: vec!["alice".into()],
            },
            AccountDecl {
                name: format!("bob@{id}"),
                balance: if id == "SB" { 100 } else { 0 },
                owners: vec!["bob".into()],
            },
        ],
    };
    let req = |id: &str, other: &str, from: &str, to: &str| RequestDecl {
        shard: id.into(),
        deps: vec![other.into()],
        ops: vec![
            OpDecl {
                account: format!("{from}@{id}"),
                delta: -100,
            },
            OpDecl {
                account: format!("{to}@{id}"),
                delta: 100,
            },
        ],
        signers: None,
        initial_belief: None,
    };
    Scenario {
        name: "coin-exchange".into(),
        network: NetworkParams::default(),
        protocol: ProtocolParams::default(),
        shards: vec![shard("SA"), shard("SB")],
        transactions: vec![TxDecl {
            start: 0,
            pad_to: None,
            requests: vec![
                req("SA", "SB", "alice", "bob"),
                req("SB", "SA", "bob", "alice"),
            ],
        }],
    }
}

/// Two concurrent transactions on disjoint shards. `SB` never answers
/// pulls, so the first transaction can't finish; the second must.
pub fn stall() -> Scenario {
    let mut s = from_dependency_sets(
        "stall",
        &[
            ("SA", &["SB"]),
            ("SB", &["SA"]),
            ("SC", &["SD"]),
            ("SD", &["SC"]),
        ],
    );
    s.shards[1].stalled = true;
    s.network.horizon = 100_000;
    let reqs = std::mem::take(&mut s.transactions[0].requests);
    let (first, second) = reqs.split_at(2);
    s.transactions = vec![
        TxDecl {
            start: 0,
            pad_to: None,
            requests: first.to_vec(),
        },
        TxDecl {
            start: 0,
            pad_to: None,
            requests: second.to_vec(),
        },
    ];
    s
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &[
    "single",
    "coin-exchange",
    "figure1a",
    "figure1b",
    "figure1b-verbatim",
    "figure2",
    "figure2-verbatim",
    "stall",
    "chain<k>",
    "random-<seed>",
];

/// Looks up a built-in scenario by name.
pub fn builtin(name: &str) -> Option<Scenario> {
    Some(match name {
        "single" => single(),
        "coin-exchange" => coin_exchange(),
        "figure1a" => figure1a(),
        "figure1b" => figure1b(false),
        "figure1b-verbatim" => figure1b(true),
        "figure2" => figure2(false),
        "figure2-verbatim" => figure2(true),
        "stall" => stall(),
        _ => {
            if let Some(k) = name
                .strip_prefix("chain")
                .and_then(|k| k.parse().ok())
                .filter(|k| *k >= 1)
            {
                chain(k)
            } else {
                random(name.strip_prefix("random-")?.parse().ok()?, 8)
            }
        }
    })
}

fn token<R: RngCore>(rng: &mut R, prefix: &str) -> String {
    let mut b = [0u8; 8];
    rng.fill_bytes(&mut b);
    format!("{prefix}-{}", hex::encode(b))
}

/// A random single-transaction scenario over up to `max_shards` shards:
/// random reciprocal signed dependencies (possibly disconnected), random
/// forced discards, random latency bound in `1..=20`. Identifiers are high
/// entropy so byte-level privacy scans are meaningful.
pub fn random(seed: u64, max_shards: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_shards.max(1));
    let ids: Vec<String> = (0..n).map(|_| token(&mut rng, "shard")).collect();
    let density = rng.gen_range(0.15..0.7);
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(density) {
                match rng.gen_range(0..3) {
                    0 => {
                        edges.insert((i, j));
                    }
                    1 => {
                        edges.insert((j, i));
                    }
                    _ => {
                        edges.insert((i, j));
                        edges.insert((j, i));
                    }
                }
            }
        }
    }
    let graph = DependencyGraph {
        vertices: ids
            .iter()
            .map(|s| ShardId::new(s.clone()).unwrap())
            .collect(),
        edges: edges
            .iter()
            .map(|(a, b)| {
                (
                    ShardId::new(ids[*a].clone()).unwrap(),
                    ShardId::new(ids[*b].clone()).unwrap(),
                )
            })
            .collect(),
        n_hashes: n,
    };
    let sets = graph.to_dependency_sets();
    let discard_p = rng.gen_range(0.0..0.4);
    let mut shards = Vec::new();
    let mut requests = Vec::new();
    for id in &ids {
        let owners: Vec<String> = (0..rng.gen_range(1..=2))
            .map(|_| token(&mut rng, "holder"))
            .collect();
        let account = token(&mut rng, "acct");
        shards.push(ShardDecl {
            id: id.clone(),
            replication: 1,
            stalled: false,
            crash: Vec::new(),
            accounts: vec![AccountDecl {
                name: account.clone(),
                balance: rng.gen_range(0..1000),
                owners,
            }],
        });
        let deps = sets[&ShardId::new(id.clone()).unwrap()].to_strings();
        requests.push(RequestDecl {
            shard: id.clone(),
            deps,
            ops: vec![OpDecl {
                account,
                delta: rng.gen_range(1..1_000_000),
            }],
            signers: None,
            initial_belief: rng.gen_bool(discard_p).then_some(Decision::Discard),
        });
    }
    Scenario {
        name: format!("random-{seed}"),
        network: NetworkParams {
            seed: rng.next_u64(),
            delta: rng.gen_range(1..=20),
            ..NetworkParams::default()
        },
        protocol: ProtocolParams {
            optimize: rng.gen_bool(0.5),
            mode: if rng.gen_bool(0.5) {
                ExecuteMode::Xo
            } else {
                ExecuteMode::Ox
            },
            ..ProtocolParams::default()
        },
        shards,
        transactions: vec![TxDecl {
            start: 0,
            pad_to: None,
            requests,
        }],
    }
}
