//! Reliable broadcast under crash faults.
//!
//! The origin sends to every group member; each member relays to the rest of
//! the group on first receipt. If any correct member delivers, it has relayed
//! to all others, so every correct member delivers too.

use std::collections::BTreeSet;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::crypto::Digest;

use super::{Actor, Context, CrashPoint, NodeId, SimConfig, Simulator, Summary};

/// Per-node deduplication and relay decisions.
#[derive(Clone, Debug)]
pub struct BroadcastState {
    seen: BTreeSet<Digest>,
    hop_limit: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    /// First receipt of this payload: deliver it locally.
    pub deliver: bool,
    /// Members to relay to, with the hop count they should carry.
    pub relay_to: Vec<NodeId>,
    pub relay_hops: u32,
}

impl BroadcastState {
    pub fn new(hop_limit: u32) -> Self {
        Self {
            seen: BTreeSet::new(),
            hop_limit,
        }
    }

    pub fn on_receive(&mut self, key: Digest, hops: u32, me: NodeId, group: &[NodeId]) -> Receipt {
        if !self.seen.insert(key) {
            return Receipt {
                deliver: false,
                relay_to: Vec::new(),
                relay_hops: 0,
            };
        }
        let relay_to = if hops < self.hop_limit {
            group.iter().copied().filter(|n| *n != me).collect()
        } else {
            Vec::new()
        };
        Receipt {
            deliver: true,
            relay_to,
            relay_hops: hops + 1,
        }
    }
}

#[derive(Clone, Debug)]
struct RbMsg {
    hops: u32,
    payload: Vec<u8>,
}

impl Canonical for RbMsg {
    fn encode_to(&self, w: &mut Writer) {
        w.u32(self.hops).bytes(&self.payload);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(RbMsg {
            hops: r.u32()?,
            payload: r.bytes()?,
        })
    }
}

impl Summary for RbMsg {
    fn summary(&self) -> String {
        format!("rb hops={}", self.hops)
    }
}

struct RbNode {
    group: Vec<NodeId>,
    origin: bool,
    payload: Vec<u8>,
    state: BroadcastState,
    delivered: bool,
}

impl Actor for RbNode {
    type Msg = RbMsg;

    fn on_start(&mut self, ctx: &mut Context<RbMsg>) {
        if self.origin {
            for n in &self.group {
                ctx.send(
                    *n,
                    RbMsg {
                        hops: 0,
                        payload: self.payload.clone(),
                    },
                );
            }
        }
    }

    fn on_message(&mut self, ctx: &mut Context<RbMsg>, _from: NodeId, msg: RbMsg) {
        let key = crate::crypto::hash(&msg.payload);
        let r = self.state.on_receive(key, msg.hops, ctx.me(), &self.group);
        if r.deliver {
            self.delivered = true;
            for n in r.relay_to {
                ctx.send(
                    n,
                    RbMsg {
                        hops: r.relay_hops,
                        payload: msg.payload.clone(),
                    },
                );
            }
        }
    }
}

/// Runs one broadcast from an origin (node 0) to `group_size` members (nodes
/// `1..=group_size`) and returns the members that delivered.
pub fn simulate_reliable_broadcast(
    group_size: usize,
    crash_plan: &[(NodeId, CrashPoint)],
    seed: u64,
    delta_max: u64,
) -> BTreeSet<NodeId> {
    let group: Vec<NodeId> = (1..=group_size as u32).map(NodeId).collect();
    let mut actors = vec![RbNode {
        group: group.clone(),
        origin: true,
        payload: b"update request".to_vec(),
        state: BroadcastState::new(1),
        delivered: false,
    }];
    for _ in &group {
        actors.push(RbNode {
            group: group.clone(),
            origin: false,
            payload: Vec::new(),
            state: BroadcastState::new(1),
            delivered: false,
        });
    }
    let config = SimConfig {
        seed,
        delta_max,
        crash_plan: crash_plan.iter().copied().collect(),
        ..SimConfig::default()
    };
    let mut sim = Simulator::new(config, actors);
    sim.run();
    sim.actors()
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, a)| a.delivered)
        .map(|(i, _)| NodeId(i as u32))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_deliver_without_crashes() {
        let got = simulate_reliable_broadcast(3, &[], 1, 10);
        assert_eq!(got, [1, 2, 3].map(NodeId).into_iter().collect());
    }

    #[test]
    fn group_of_one() {
        assert_eq!(simulate_reliable_broadcast(1, &[], 1, 10).len(), 1);
    }

    #[test]
    fn origin_crash_after_any_send_count() {
        // Whenever at least one correct member got the payload, all correct members deliver.
        for group in 1..=4usize {
            for k in 1..=group as u64 {
                for crashed_member in 0..=group as u32 {
                    for seed in 0..5 {
                        let mut plan = vec![(NodeId(0), CrashPoint::AfterSends(k))];
                        if crashed_member > 0 {
                            plan.push((NodeId(crashed_member), CrashPoint::At(seed % 3)));
                        }
                        let got = simulate_reliable_broadcast(group, &plan, seed, 7);
                        let correct: BTreeSet<NodeId> = (1..=group as u32)
                            .filter(|i| *i != crashed_member)
                            .map(NodeId)
                            .collect();
                        let delivered_correct: BTreeSet<_> =
                            got.intersection(&correct).copied().collect();
                        if !delivered_correct.is_empty() {
                            assert_eq!(
                                delivered_correct, correct,
                                "group {group} k {k} seed {seed}"
                            );
                        }
                    }
                }
            }
        }
    }
}
