//! Two-phase commit baseline. The smallest participant id coordinates; every
//! participant, the coordinator included, knows the full participant set.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{BeliefValue, Decision, RequestId, ShardId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TwoPcAction {
    /// Send our vote to every node of the coordinator.
    SendVote {
        to: ShardId,
        commit: bool,
    },
    /// Send the decision to every node of each listed participant.
    Broadcast {
        to: Vec<ShardId>,
        decision: Decision,
    },
    Finalized {
        decision: Decision,
        round: u32,
    },
}

#[derive(Clone, Debug)]
enum Role {
    Coordinator {
        others: BTreeSet<ShardId>,
        votes: BTreeMap<ShardId, bool>,
    },
    Participant {
        coordinator: ShardId,
    },
}

#[derive(Clone, Debug)]
pub struct TwoPcSession {
    pub request_id: RequestId,
    role: Role,
    own_vote: Option<bool>,
    decision: Option<(Decision, u32)>,
    early_decision: Option<Decision>,
}

pub fn coordinator_of(participants: &BTreeSet<ShardId>) -> Option<&ShardId> {
    participants.iter().next()
}

impl TwoPcSession {
    /// `participants` includes `me`.
    pub fn new(request_id: RequestId, me: ShardId, participants: &BTreeSet<ShardId>) -> Self {
        let coordinator = coordinator_of(participants)
            .cloned()
            .unwrap_or_else(|| me.clone());
        let role = if coordinator == me {
            Role::Coordinator {
                others: participants.iter().filter(|p| **p != me).cloned().collect(),
                votes: BTreeMap::new(),
            }
        } else {
            Role::Participant { coordinator }
        };
        Self {
            request_id,
            role,
            own_vote: None,
            decision: None,
            early_decision: None,
        }
    }

    pub fn is_coordinator(&self) -> bool {
        matches!(self.role, Role::Coordinator { .. })
    }

    pub fn decision(&self) -> Option<(Decision, u32)> {
        self.decision
    }

    pub fn is_started(&self) -> bool {
        self.own_vote.is_some()
    }

    pub fn start(&mut self, initial: BeliefValue) -> Vec<TwoPcAction> {
        let commit = initial == BeliefValue::TentativeCommit;
        self.own_vote = Some(commit);
        match &self.role {
            Role::Coordinator { .. } => self.try_decide(),
            Role::Participant { coordinator } => {
                let mut out = vec![TwoPcAction::SendVote {
                    to: coordinator.clone(),
                    commit,
                }];
                if let Some(d) = self.early_decision.take() {
                    out.extend(self.on_decision(d));
                }
                out
            }
        }
    }

    pub fn on_vote(&mut self, voter: &ShardId, commit: bool) -> Vec<TwoPcAction> {
        if let Role::Coordinator { others, votes } = &mut self.role {
            if others.contains(voter) {
                votes.entry(voter.clone()).or_insert(commit);
            }
        }
        self.try_decide()
    }

    pub fn on_decision(&mut self, decision: Decision) -> Vec<TwoPcAction> {
        if self.decision.is_some() || self.is_coordinator() {
            return Vec::new();
        }
        if self.own_vote.is_none() {
            self.early_decision = Some(decision);
            return Vec::new();
        }
        self.decision = Some((decision, 1));
        vec![TwoPcAction::Finalized { decision, round: 1 }]
    }

    fn try_decide(&mut self) -> Vec<TwoPcAction> {
        let Role::Coordinator { others, votes } = &self.role else {
            return Vec::new();
        };
        let Some(own) = self.own_vote else {
            return Vec::new();
        };
        if self.decision.is_some() || votes.len() < others.len() {
            return Vec::new();
        }
        let decision = Decision::from_bool(own && votes.values().all(|v| *v));
        let round = u32::from(!others.is_empty());
        self.decision = Some((decision, round));
        let mut out = Vec::new();
        if !others.is_empty() {
            out.push(TwoPcAction::Broadcast {
                to: others.iter().cloned().collect(),
                decision,
            });
        }
        out.push(TwoPcAction::Finalized { decision, round });
        out
    }
}
