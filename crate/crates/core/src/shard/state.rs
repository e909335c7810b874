//! Account balances, stakeholder policies and payload simulation.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::PublicKey;
use crate::model::Payload;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimulationError {
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("account {account} would go to {balance}")]
    Overdraft { account: String, balance: i64 },
    #[error("arithmetic overflow on {0}")]
    Overflow(String),
}

/// Keys that must sign any update touching an account.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    pub owners: BTreeSet<PublicKey>,
}

impl Policy {
    pub fn all_of(owners: impl IntoIterator<Item = PublicKey>) -> Self {
        Self {
            owners: owners.into_iter().collect(),
        }
    }

    pub fn satisfied_by(&self, signers: &BTreeSet<&PublicKey>) -> bool {
        !self.owners.is_empty() && self.owners.iter().all(|k| signers.contains(k))
    }
}

/// The result of simulating a payload: new balances plus the versions they were computed from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WriteSet {
    pub writes: BTreeMap<String, i64>,
    pub read_versions: BTreeMap<String, u64>,
}

impl WriteSet {
    pub fn accounts(&self) -> impl Iterator<Item = &String> {
        self.writes.keys()
    }

    /// Folds a later write-set of the same session into this one.
    pub fn merge(&mut self, later: WriteSet) {
        for (k, v) in later.read_versions {
            self.read_versions.entry(k).or_insert(v);
        }
        self.writes.extend(later.writes);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StateDb {
    balances: BTreeMap<String, i64>,
    versions: BTreeMap<String, u64>,
}

impl StateDb {
    pub fn new(balances: impl IntoIterator<Item = (String, i64)>) -> Self {
        let balances: BTreeMap<String, i64> = balances.into_iter().collect();
        let versions = balances.keys().map(|k| (k.clone(), 0)).collect();
        Self { balances, versions }
    }

    pub fn balance(&self, account: &str) -> Option<i64> {
        self.balances.get(account).copied()
    }

    pub fn balances(&self) -> &BTreeMap<String, i64> {
        &self.balances
    }

    pub fn version(&self, account: &str) -> Option<u64> {
        self.versions.get(account).copied()
    }

    /// Applies the ops in order against the current state plus an optional
    /// overlay of earlier writes. Balances must stay non-negative after every op.
    pub fn simulate(
        &self,
        payload: &Payload,
        overlay: Option<&WriteSet>,
    ) -> Result<WriteSet, SimulationError> {
        let mut ws = WriteSet::default();
        for op in &payload.ops {
            let current = match ws.writes.get(&op.account) {
                Some(v) => *v,
                None => {
                    let base = overlay.and_then(|o| o.writes.get(&op.account)).copied();
                    let stored = self
                        .balance(&op.account)
                        .ok_or_else(|| SimulationError::UnknownAccount(op.account.clone()))?;
                    ws.read_versions
                        .insert(op.account.clone(), self.versions[&op.account]);
                    base.unwrap_or(stored)
                }
            };
            let next = current
                .checked_add(op.delta)
                .ok_or_else(|| SimulationError::Overflow(op.account.clone()))?;
            if next < 0 {
                return Err(SimulationError::Overdraft {
                    account: op.account.clone(),
                    balance: next,
                });
            }
            ws.writes.insert(op.account.clone(), next);
        }
        Ok(ws)
    }

    /// A write-set is stale once any account it read has been written since.
    pub fn is_stale(&self, ws: &WriteSet) -> bool {
        ws.read_versions
            .iter()
            .any(|(k, v)| self.versions.get(k) != Some(v))
    }

    pub fn apply(&mut self, ws: &WriteSet) {
        for (k, v) in &ws.writes {
            self.balances.insert(k.clone(), *v);
            *self.versions.entry(k.clone()).or_insert(0) += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Op;

    fn pay(ops: &[(&str, i64)]) -> Payload {
        Payload::new(
            ops.iter()
                .map(|(a, d)| Op {
                    account: a.to_string(),
                    delta: *d,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn overdraft_and_unknown_account() {
        let db = StateDb::new([("alice".to_string(), 50)]);
        assert!(matches!(
            db.simulate(&pay(&[("alice", -100)]), None),
            Err(SimulationError::Overdraft { .. })
        ));
        assert!(matches!(
            db.simulate(&pay(&[("carol", 1)]), None),
            Err(SimulationError::UnknownAccount(_))
        ));
    }

    #[test]
    fn apply_bumps_versions_and_detects_staleness() {
        let mut db = StateDb::new([("a".to_string(), 100), ("b".to_string(), 0)]);
        let w1 = db.simulate(&pay(&[("a", -100), ("b", 100)]), None).unwrap();
        let w2 = db.simulate(&pay(&[("a", -10)]), None).unwrap();
        assert!(!db.is_stale(&w1));
        db.apply(&w1);
        assert_eq!((db.balance("a"), db.balance("b")), (Some(0), Some(100)));
        assert!(db.is_stale(&w2));
    }

    #[test]
    fn overlay_chains_simulations() {
        let db = StateDb::new([("a".to_string(), 10)]);
        let w1 = db.simulate(&pay(&[("a", -10)]), None).unwrap();
        assert!(db.simulate(&pay(&[("a", -1)]), Some(&w1)).is_err());
    }

    #[test]
    fn policy_needs_every_owner() {
        let k = |b: u8| PublicKey(vec![b; 32]);
        let p = Policy::all_of([k(1), k(2)]);
        assert!(p.satisfied_by(&[k(1), k(2), k(3)].iter().collect()));
        assert!(!p.satisfied_by(&[k(1)].iter().collect()));
    }
}
