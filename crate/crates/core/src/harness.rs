//! Post-run checks against independent graph computations, and the round
//! benchmark.

use std::fmt;

use crate::graph::DependencyGraph;
use crate::model::{Decision, DependencySet, ShardId, Sign, SignedDependency};
use crate::runner::{run, BuildError, RunOverrides, RunReport};
use crate::scenario::{self, Scenario};
use crate::shard::Protocol;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DecisionMismatch {
        tx: usize,
        shard: ShardId,
        expected: Decision,
        got: Option<Decision>,
    },
    RoundBoundExceeded {
        tx: usize,
        shard: ShardId,
        round: u32,
        bound: u32,
    },
    BudgetNotExhausted {
        tx: usize,
        shard: ShardId,
        round: u32,
        budget: u32,
    },
    DiscardArrival {
        tx: usize,
        shard: ShardId,
        round: Option<u32>,
        distance: Option<u32>,
    },
    ReplicasDiverge,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DecisionMismatch {
                tx,
                shard,
                expected,
                got,
            } => {
                let got = got.map_or("none".to_string(), |d| d.to_string());
                write!(f, "tx {tx} {shard}: decided {got}, expected {expected}")
            }
            Violation::RoundBoundExceeded {
                tx,
                shard,
                round,
                bound,
            } => {
                write!(
                    f,
                    "tx {tx} {shard}: finalized in round {round}, bound {bound}"
                )
            }
            Violation::BudgetNotExhausted {
                tx,
                shard,
                round,
                budget,
            } => {
                write!(
                    f,
                    "tx {tx} {shard}: stopped at round {round} of budget {budget}"
                )
            }
            Violation::DiscardArrival {
                tx,
                shard,
                round,
                distance,
            } => {
                write!(
                    f,
                    "tx {tx} {shard}: discard arrived in round {round:?}, distance {distance:?}"
                )
            }
            Violation::ReplicasDiverge => f.write_str("correct replicas hold different balances"),
        }
    }
}

fn graph_of(report: &RunReport, tx: usize) -> DependencyGraph {
    let t = &report.txs[tx];
    DependencyGraph::induce(&t.declared, t.hash_count)
}

/// Compares every shard's decision with the conjunction of observed initial
/// beliefs over its forward closure. Transactions that never reached the
/// shards are skipped, as are undecided shards of a stalled run.
pub fn verify_decisions(report: &RunReport) -> Vec<Violation> {
    let mut out = Vec::new();
    for tx in 0..report.txs.len() {
        let initial = report.initial_beliefs(tx);
        if initial.len() != report.txs[tx].shards.len() {
            continue;
        }
        let expected = graph_of(report, tx)
            .decision_oracle(&initial)
            .expect("beliefs for every vertex");
        for (shard, exp) in expected {
            let got = report.decision(tx, &shard);
            // Undecided is only wrong if nothing was left to wait for.
            if got.is_none() && !report.outcome.is_complete() {
                continue;
            }
            if got != Some(exp) {
                out.push(Violation::DecisionMismatch {
                    tx,
                    shard,
                    expected: exp,
                    got,
                });
            }
        }
    }
    if !report.replicas_agree() {
        out.push(Violation::ReplicasDiverge);
    }
    out
}

/// Checks the PPAC round bounds on every correct node:
/// finalize round at most `n - outdeg`; exactly the budget when nothing is
/// discarded and the early exit is off; discard arriving at exactly the
/// distance to the nearest reachable discarder.
pub fn check_bounds(report: &RunReport) -> Vec<Violation> {
    let mut out = Vec::new();
    if report.scenario.protocol.kind != Protocol::Ppac {
        return out;
    }
    let optimize = report.scenario.protocol.optimize;
    for tx in 0..report.txs.len() {
        let initial = report.initial_beliefs(tx);
        if initial.len() != report.txs[tx].shards.len() {
            continue;
        }
        let graph = graph_of(report, tx);
        let bounds = graph.round_bounds();
        let all_commit = initial.values().all(|d| *d == Decision::Commit);
        for shard in &report.txs[tx].shards {
            let bound = bounds.per_shard_upper[shard];
            let distance = graph.discard_distance(shard, &initial).expect("vertex");
            for v in report.views(tx, shard) {
                let r = &v.report;
                let Some(round) = r.final_round else {
                    continue;
                };
                if round > bound {
                    out.push(Violation::RoundBoundExceeded {
                        tx,
                        shard: shard.clone(),
                        round,
                        bound,
                    });
                }
                if all_commit && !optimize && round != r.budget {
                    out.push(Violation::BudgetNotExhausted {
                        tx,
                        shard: shard.clone(),
                        round,
                        budget: r.budget,
                    });
                }
                if r.discard_round != distance {
                    out.push(Violation::DiscardArrival {
                        tx,
                        shard: shard.clone(),
                        round: r.discard_round,
                        distance,
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// `S1 -> S2 -> ... -> Sk`.
    Chain,
    /// Every pair mutually dependent.
    Mutual,
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "chain" => Ok(Family::Chain),
            "mutual" => Ok(Family::Mutual),
            other => Err(format!(
                "unknown family `{other}` (expected chain or mutual)"
            )),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Chain => "chain",
            Family::Mutual => "mutual",
        })
    }
}

/// `k` shards, all pairwise unsigned.
pub fn mutual(k: usize) -> Scenario {
    let ids: Vec<String> = (1..=k).map(|i| format!("S{i}")).collect();
    let mut s = scenario::chain(k);
    for (i, r) in s.transactions[0].requests.iter_mut().enumerate() {
        let mut d = DependencySet::new();
        for (j, other) in ids.iter().enumerate() {
            if i != j {
                d.insert(SignedDependency {
                    shard: ShardId::new(other.clone()).unwrap(),
                    sign: Sign::Unsigned,
                })
                .unwrap();
            }
        }
        r.deps = d.to_strings();
    }
    s.name = format!("mutual{k}");
    s
}

pub fn family_scenario(family: Family, k: usize) -> Scenario {
    match family {
        Family::Chain => scenario::chain(k),
        Family::Mutual => mutual(k),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchRow {
    pub shards_per_tx: usize,
    pub protocol: Protocol,
    pub rounds: u32,
    pub virtual_latency: u64,
    pub messages: usize,
}

pub const CSV_HEADER: &str = "shards_per_tx,protocol,rounds,virtual_latency,messages";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.shards_per_tx, self.protocol, self.rounds, self.virtual_latency, self.messages
        )
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

/// One row per (size, protocol), sizes `1..=max_k`.
pub fn bench(
    family: Family,
    max_k: usize,
    protocols: &[Protocol],
    overrides: &RunOverrides,
) -> Result<Vec<BenchRow>, BuildError> {
    let mut rows = Vec::new();
    for k in 1..=max_k {
        let sc = family_scenario(family, k);
        for &p in protocols {
            let o = RunOverrides {
                protocol: Some(p),
                ..overrides.clone()
            };
            let report = run(&sc, &o)?;
            let m = report.metrics(0);
            rows.push(BenchRow {
                shards_per_tx: k,
                protocol: p,
                rounds: m.rounds,
                virtual_latency: m.virtual_latency,
                messages: m.messages,
            });
        }
    }
    Ok(rows)
}
