//! Neighbor-only atomic commit over the dependency graph, as a sans-io state
//! machine. The owning shard node feeds it pulls and replies and carries out
//! the returned [`Action`]s.
//!
//! Each round, the session pulls the belief of every contact and conjoins
//! the answers. A pull is answered in lockstep: the `i`-th pull from a given
//! caller node gets the belief this session held after `i` rounds, and is
//! deferred until that many rounds are done. Once the session has finalized
//! at round `f`, every pull with `i >= f` gets the final value.
//!
//! Answering from the recorded history rather than the current belief makes
//! the round in which a discard arrives equal to the hop distance to it, no
//! matter how delivery latencies interleave.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{Belief, BeliefValue, RequestId, ShardId};
use crate::simnet::NodeId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    /// Send a pull to every node of `contact`.
    Pull {
        contact: ShardId,
    },
    Reply {
        to: NodeId,
        belief: Belief,
    },
    Deny {
        to: NodeId,
    },
    RoundAdvance {
        round: u32,
    },
    /// The belief dropped from commit to discard during `round`.
    StateChange {
        round: u32,
    },
    Finalized {
        value: BeliefValue,
        round: u32,
    },
}

#[derive(Clone, Debug)]
pub struct PpacSession {
    pub request_id: RequestId,
    contacts: Vec<ShardId>,
    expected_callers: BTreeSet<ShardId>,
    budget: u32,
    optimize: bool,
    started: bool,
    round: u32,
    belief: BeliefValue,
    history: Vec<BeliefValue>,
    finalized_at: Option<u32>,
    state_change_round: Option<u32>,
    call_counts: BTreeMap<NodeId, u32>,
    deferred: Vec<(NodeId, u32)>,
    answered_final: BTreeSet<NodeId>,
    round_replies: BTreeMap<ShardId, BeliefValue>,
    cached_final: BTreeMap<ShardId, BeliefValue>,
    reply_counts: BTreeMap<(ShardId, NodeId), u32>,
}

impl PpacSession {
    /// `contacts` are the shards this session queries; `expected_callers`
    /// may query it. The round budget is `hash_count - |contacts|`, at least 1.
    pub fn new(
        request_id: RequestId,
        contacts: Vec<ShardId>,
        expected_callers: BTreeSet<ShardId>,
        hash_count: usize,
        optimize: bool,
    ) -> Self {
        let budget = hash_count.saturating_sub(contacts.len()).max(1) as u32;
        Self {
            request_id,
            contacts,
            expected_callers,
            budget,
            optimize,
            started: false,
            round: 0,
            belief: BeliefValue::TentativeCommit,
            history: Vec::new(),
            finalized_at: None,
            state_change_round: None,
            call_counts: BTreeMap::new(),
            deferred: Vec::new(),
            answered_final: BTreeSet::new(),
            round_replies: BTreeMap::new(),
            cached_final: BTreeMap::new(),
            reply_counts: BTreeMap::new(),
        }
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn is_started(&self) -> bool {
        self.started
    }

    pub fn belief(&self) -> Belief {
        Belief {
            value: self.belief,
            is_final: self.finalized_at.is_some(),
        }
    }

    pub fn finalized_at(&self) -> Option<u32> {
        self.finalized_at
    }

    pub fn state_change_round(&self) -> Option<u32> {
        self.state_change_round
    }

    /// Beliefs after 0, 1, ... completed rounds.
    pub fn history(&self) -> &[BeliefValue] {
        &self.history
    }

    pub fn answered_final(&self) -> &BTreeSet<NodeId> {
        &self.answered_final
    }

    pub fn call_count(&self, caller: NodeId) -> u32 {
        self.call_counts.get(&caller).copied().unwrap_or(0)
    }

    pub fn start(&mut self, initial: BeliefValue) -> Vec<Action> {
        assert!(!self.started, "session started twice");
        self.started = true;
        self.belief = initial;
        self.history.push(initial);
        let mut out = Vec::new();
        // With no contacts the early exit holds vacuously before any round.
        if initial == BeliefValue::Discard || (self.contacts.is_empty() && self.optimize) {
            self.finalize(0, &mut out);
        } else {
            self.begin_round(1, &mut out);
            self.try_complete_round(&mut out);
        }
        self.flush_deferred(&mut out);
        out
    }

    pub fn on_pull(&mut self, caller_shard: &ShardId, caller_node: NodeId) -> Vec<Action> {
        if !self.expected_callers.contains(caller_shard) {
            return vec![Action::Deny { to: caller_node }];
        }
        let count = self.call_counts.entry(caller_node).or_insert(0);
        let index = *count;
        *count += 1;
        let mut out = Vec::new();
        match self.answer(index) {
            Some(belief) => self.reply(caller_node, belief, &mut out),
            None => self.deferred.push((caller_node, index)),
        }
        out
    }

    /// A reply from node `from` of `contact`. Replies from one node arrive
    /// in the order of our pulls to it, so its `k`-th reply answers round `k + 1`.
    pub fn on_reply(&mut self, contact: &ShardId, from: NodeId, belief: Belief) -> Vec<Action> {
        let mut out = Vec::new();
        if !self.contacts.contains(contact) {
            return out;
        }
        let count = self
            .reply_counts
            .entry((contact.clone(), from))
            .or_insert(0);
        let answers_round = *count + 1;
        *count += 1;
        if self.finalized_at.is_some() || !self.started {
            return out;
        }
        if belief.is_final {
            self.cached_final
                .entry(contact.clone())
                .or_insert(belief.value);
        }
        // A final value holds for every later round, so a late final reply still counts.
        if answers_round == self.round || belief.is_final {
            self.round_replies
                .entry(contact.clone())
                .or_insert(belief.value);
        }
        self.try_complete_round(&mut out);
        self.flush_deferred(&mut out);
        out
    }

    /// A denied pull means the contact refuses to vouch for us; treat it as a final discard.
    pub fn on_denied(&mut self, contact: &ShardId, from: NodeId) -> Vec<Action> {
        self.on_reply(contact, from, Belief::finalized(BeliefValue::Discard))
    }

    fn answer(&self, index: u32) -> Option<Belief> {
        if let Some(f) = self.finalized_at {
            if index >= f {
                return Some(Belief::finalized(self.belief));
            }
        }
        self.history
            .get(index as usize)
            .map(|v| Belief::tentative(*v))
    }

    fn reply(&mut self, to: NodeId, belief: Belief, out: &mut Vec<Action>) {
        if belief.is_final {
            self.answered_final.insert(to);
        }
        out.push(Action::Reply { to, belief });
    }

    fn flush_deferred(&mut self, out: &mut Vec<Action>) {
        let pending = std::mem::take(&mut self.deferred);
        for (node, index) in pending {
            match self.answer(index) {
                Some(b) => self.reply(node, b, out),
                None => self.deferred.push((node, index)),
            }
        }
    }

    fn begin_round(&mut self, round: u32, out: &mut Vec<Action>) {
        self.round = round;
        self.round_replies.clear();
        out.push(Action::RoundAdvance { round });
        for c in &self.contacts {
            match self.cached_final.get(c) {
                Some(v) => {
                    self.round_replies.insert(c.clone(), *v);
                }
                None => out.push(Action::Pull { contact: c.clone() }),
            }
        }
    }

    fn try_complete_round(&mut self, out: &mut Vec<Action>) {
        while self.finalized_at.is_none() && self.round_replies.len() == self.contacts.len() {
            let r = self.round;
            let before = self.belief;
            for v in self.round_replies.values() {
                self.belief = self.belief.and(*v);
            }
            if before == BeliefValue::TentativeCommit && self.belief == BeliefValue::Discard {
                self.state_change_round = Some(r);
                out.push(Action::StateChange { round: r });
            }
            let all_final = self
                .contacts
                .iter()
                .all(|c| self.cached_final.contains_key(c));
            if self.belief == BeliefValue::Discard
                || (self.optimize && all_final)
                || r >= self.budget
            {
                self.finalize(r, out);
                return;
            }
            self.history.push(self.belief);
            self.begin_round(r + 1, out);
        }
    }

    fn finalize(&mut self, round: u32, out: &mut Vec<Action>) {
        self.finalized_at = Some(round);
        self.round = round;
        out.push(Action::Finalized {
            value: self.belief,
            round,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sid(s: &str) -> ShardId {
        ShardId::new(s).unwrap()
    }

    fn session(contacts: &[&str], callers: &[&str], n: usize, optimize: bool) -> PpacSession {
        PpacSession::new(
            RequestId([0; 16]),
            contacts.iter().map(|c| sid(c)).collect(),
            callers.iter().map(|c| sid(c)).collect(),
            n,
            optimize,
        )
    }

    const C: BeliefValue = BeliefValue::TentativeCommit;
    const D: BeliefValue = BeliefValue::Discard;

    #[test]
    fn no_contacts_finalizes_at_round_zero() {
        let mut s = session(&[], &[], 1, true);
        assert_eq!(s.start(C), vec![Action::Finalized { value: C, round: 0 }]);
    }

    #[test]
    fn initial_discard_finalizes_immediately_and_answers_final() {
        let mut s = session(&["S2"], &["S2"], 2, true);
        s.start(D);
        assert_eq!(
            s.on_pull(&sid("S2"), NodeId(5)),
            vec![Action::Reply {
                to: NodeId(5),
                belief: Belief::finalized(D)
            }]
        );
    }

    #[test]
    fn pull_from_unlisted_caller_is_denied() {
        let mut s = session(&["S2"], &["S3"], 3, true);
        assert_eq!(
            s.on_pull(&sid("S2"), NodeId(1)),
            vec![Action::Deny { to: NodeId(1) }]
        );
    }

    #[test]
    fn lockstep_defers_pull_until_round_done() {
        let mut s = session(&["S2"], &["S3"], 4, false);
        // Before start even index 0 waits.
        assert!(s.on_pull(&sid("S3"), NodeId(9)).is_empty());
        let out = s.start(C);
        assert!(out.contains(&Action::Reply {
            to: NodeId(9),
            belief: Belief::tentative(C)
        }));
        // Index 1 needs round 1 to complete.
        assert!(s.on_pull(&sid("S3"), NodeId(9)).is_empty());
        let out = s.on_reply(&sid("S2"), NodeId(2), Belief::tentative(C));
        assert!(out.contains(&Action::Reply {
            to: NodeId(9),
            belief: Belief::tentative(C)
        }));
        assert!(out.contains(&Action::RoundAdvance { round: 2 }));
    }

    #[test]
    fn full_budget_without_optimization() {
        let mut s = session(&["S1", "S3"], &["S1", "S3"], 4, false);
        s.start(C);
        let mut last = Vec::new();
        for _round in 1..=2 {
            s.on_reply(&sid("S1"), NodeId(1), Belief::finalized(C));
            last = s.on_reply(&sid("S3"), NodeId(3), Belief::tentative(C));
        }
        assert!(last.contains(&Action::Finalized { value: C, round: 2 }));
        assert_eq!(s.budget(), 2);
    }

    #[test]
    fn all_final_shortcut_with_optimization() {
        let mut s = session(&["S1", "S3"], &[], 4, true);
        s.start(C);
        s.on_reply(&sid("S1"), NodeId(1), Belief::finalized(C));
        let out = s.on_reply(&sid("S3"), NodeId(3), Belief::finalized(C));
        assert!(out.contains(&Action::Finalized { value: C, round: 1 }));
    }

    #[test]
    fn discard_breaks_even_without_optimization() {
        let mut s = session(&["S1", "S3"], &[], 4, false);
        s.start(C);
        s.on_reply(&sid("S1"), NodeId(1), Belief::finalized(D));
        let out = s.on_reply(&sid("S3"), NodeId(3), Belief::tentative(C));
        assert!(out.contains(&Action::StateChange { round: 1 }));
        assert!(out.contains(&Action::Finalized { value: D, round: 1 }));
    }

    #[test]
    fn first_replica_reply_wins_and_late_copies_are_ignored() {
        let mut s = session(&["S2"], &[], 5, false);
        s.start(C);
        s.on_reply(&sid("S2"), NodeId(20), Belief::tentative(C));
        assert_eq!(s.round(), 2);
        // Node 21's answer to round 1 arrives late and must not count for round 2.
        assert!(s
            .on_reply(&sid("S2"), NodeId(21), Belief::tentative(C))
            .is_empty());
        assert_eq!(s.round(), 2);
        let out = s.on_reply(&sid("S2"), NodeId(21), Belief::tentative(D));
        assert!(out.contains(&Action::Finalized { value: D, round: 2 }));
    }

    #[test]
    fn stale_final_reply_still_counts() {
        let mut s = session(&["S2"], &[], 5, true);
        s.start(C);
        s.on_reply(&sid("S2"), NodeId(20), Belief::tentative(C));
        let out = s.on_reply(&sid("S2"), NodeId(21), Belief::finalized(C));
        assert!(out.contains(&Action::Finalized { value: C, round: 2 }));
    }

    proptest! {
        /// Finality is absorbing and discard never flips back, whatever replies arrive.
        #[test]
        fn beliefs_are_monotone(initial in any::<bool>(),
                                replies in proptest::collection::vec((0usize..3, any::<bool>(), any::<bool>()), 0..40),
                                optimize in any::<bool>()) {
            let contacts = ["S1", "S2", "S3"];
            let mut s = session(&contacts, &["S1"], 6, optimize);
            s.start(if initial { C } else { D });
            let mut prev = s.belief();
            for (c, commit, fin) in replies {
                let b = Belief { value: if commit { C } else { D }, is_final: fin };
                s.on_reply(&sid(contacts[c]), NodeId(c as u32), b);
                let now = s.belief();
                prop_assert!(prev.may_become(now) || prev == now);
                prop_assert!(s.round() <= s.budget());
                prev = now;
            }
            for (i, w) in s.history().windows(2).enumerate() {
                prop_assert!(!(w[0] == D && w[1] == C), "history flips back at {}", i);
            }
        }
    }
}
