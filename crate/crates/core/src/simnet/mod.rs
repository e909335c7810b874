//! Deterministic discrete-event simulator.
//!
//! Virtual time is an integer tick counter. Every message gets a latency
//! drawn uniformly from `[1, delta_max]` by a ChaCha8 stream seeded from
//! [`SimConfig::seed`]. Links are FIFO: a message never overtakes an earlier
//! one on the same (sender, receiver) pair, which can only shorten the gap
//! between consecutive deliveries, so every delay stays within `delta_max`.
//!
//! Messages travel as canonical bytes and are decoded on delivery, so the
//! trace records exactly what each receiver saw.

pub mod broadcast;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::Canonical;
pub use trace::{Trace, TraceEvent, TraceKind};

pub type Time = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// When a node stops. Crashes are fail-stop and permanent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashPoint {
    /// Crash at the given virtual time, before processing anything scheduled then.
    At(Time),
    /// Crash right after the node's `k`-th send; later sends in the same step are lost.
    AfterSends(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub delta_max: Time,
    pub crash_plan: BTreeMap<NodeId, CrashPoint>,
    pub horizon: Time,
    pub reliable_broadcast_fanout_rounds: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            delta_max: 10,
            crash_plan: BTreeMap::new(),
            horizon: 10_000_000,
            reliable_broadcast_fanout_rounds: 8,
        }
    }
}

/// Per-step handle an actor uses to send messages, set timers and annotate the trace.
pub struct Context<M> {
    now: Time,
    me: NodeId,
    outbox: Vec<(NodeId, M)>,
    timers: Vec<(Time, u64, bool)>,
    notes: Vec<(TraceKind, String)>,
}

impl<M> Context<M> {
    pub fn new(now: Time, me: NodeId) -> Self {
        Self {
            now,
            me,
            outbox: Vec::new(),
            timers: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn me(&self) -> NodeId {
        self.me
    }

    pub fn send(&mut self, to: NodeId, msg: M) {
        self.outbox.push((to, msg));
    }

    /// A timer that keeps the run alive until it fires.
    pub fn set_timer(&mut self, delay: Time, token: u64) {
        self.timers.push((delay, token, false));
    }

    /// A housekeeping timer; pending background timers alone don't keep the run going.
    pub fn set_background_timer(&mut self, delay: Time, token: u64) {
        self.timers.push((delay, token, true));
    }

    pub fn note(&mut self, kind: TraceKind, summary: impl Into<String>) {
        self.notes.push((kind, summary.into()));
    }

    pub fn take_outbox(&mut self) -> Vec<(NodeId, M)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_notes(&mut self) -> Vec<(TraceKind, String)> {
        std::mem::take(&mut self.notes)
    }
}

/// A single-threaded state machine driven by the simulator.
pub trait Actor {
    type Msg: Canonical + Summary;

    fn on_start(&mut self, _ctx: &mut Context<Self::Msg>) {}
    fn on_message(&mut self, ctx: &mut Context<Self::Msg>, from: NodeId, msg: Self::Msg);
    fn on_timer(&mut self, _ctx: &mut Context<Self::Msg>, _token: u64) {}

    /// Whether the actor is still waiting on something. A quiescent run with
    /// pending work is reported as incomplete.
    fn has_pending_work(&self) -> bool {
        false
    }
}

/// Short human-readable description for the trace.
pub trait Summary {
    fn summary(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Nothing left to do and no actor waiting.
    Complete { end: Time },
    /// Quiescent, but some actor still waits (e.g. on a stalled peer). The
    /// clock is advanced to the horizon.
    Stalled { end: Time },
    /// Events were still pending when the horizon passed.
    HorizonReached { end: Time },
}

impl Outcome {
    pub fn is_complete(self) -> bool {
        matches!(self, Outcome::Complete { .. })
    }

    pub fn end(self) -> Time {
        match self {
            Outcome::Complete { end }
            | Outcome::Stalled { end }
            | Outcome::HorizonReached { end } => end,
        }
    }
}

#[derive(Debug)]
enum Event {
    Start(NodeId),
    Deliver {
        from: NodeId,
        to: NodeId,
        bytes: Vec<u8>,
    },
    Timer {
        node: NodeId,
        token: u64,
        background: bool,
    },
    Crash(NodeId),
}

/// Background timers and scheduled crashes don't keep a run alive.
fn counts_toward_completion(ev: &Event) -> bool {
    !matches!(
        ev,
        Event::Timer {
            background: true,
            ..
        } | Event::Crash(_)
    )
}

pub struct Simulator<A: Actor> {
    config: SimConfig,
    actors: Vec<A>,
    rng: ChaCha8Rng,
    now: Time,
    seq: u64,
    queue: BTreeMap<(Time, u8, u64), Event>,
    foreground: usize,
    link_tail: BTreeMap<(NodeId, NodeId), Time>,
    sends: Vec<u64>,
    crashed: BTreeSet<NodeId>,
    trace: Trace,
}

impl<A: Actor> Simulator<A> {
    pub fn new(config: SimConfig, actors: Vec<A>) -> Self {
        assert!(config.delta_max >= 1, "delta_max must be at least 1");
        let n = actors.len();
        let mut sim = Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            actors,
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            foreground: 0,
            link_tail: BTreeMap::new(),
            sends: vec![0; n],
            crashed: BTreeSet::new(),
            trace: Trace::default(),
        };
        for i in 0..n {
            sim.push(0, Event::Start(NodeId(i as u32)));
        }
        let crashes: Vec<(NodeId, Time)> = sim
            .config
            .crash_plan
            .iter()
            .filter_map(|(n, p)| match p {
                CrashPoint::At(t) => Some((*n, *t)),
                CrashPoint::AfterSends(_) => None,
            })
            .collect();
        for (node, t) in crashes {
            sim.push(t, Event::Crash(node));
        }
        sim
    }

    fn push(&mut self, time: Time, ev: Event) {
        self.seq += 1;
        if counts_toward_completion(&ev) {
            self.foreground += 1;
        }
        // Crashes scheduled for time t precede everything else at t.
        let class = u8::from(!matches!(ev, Event::Crash(_)));
        self.queue.insert((time, class, self.seq), ev);
    }

    pub fn actors(&self) -> &[A] {
        &self.actors
    }

    pub fn into_parts(self) -> (Vec<A>, Trace, BTreeSet<NodeId>) {
        (self.actors, self.trace, self.crashed)
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn crashed(&self) -> &BTreeSet<NodeId> {
        &self.crashed
    }

    pub fn run(&mut self) -> Outcome {
        loop {
            if self.foreground == 0 {
                let waiting = self.actors.iter().enumerate().any(|(i, a)| {
                    !self.crashed.contains(&NodeId(i as u32)) && a.has_pending_work()
                });
                if waiting {
                    self.now = self.config.horizon;
                    return Outcome::Stalled { end: self.now };
                }
                let end = self.now;
                if self.drain_background_timers() {
                    continue;
                }
                return Outcome::Complete { end };
            }
            let Some(((time, _, _), _)) = self.queue.first_key_value() else {
                unreachable!("foreground events counted but queue empty");
            };
            if *time > self.config.horizon {
                self.now = self.config.horizon;
                return Outcome::HorizonReached { end: self.now };
            }
            let ((time, _, _), ev) = self.queue.pop_first().unwrap();
            if counts_toward_completion(&ev) {
                self.foreground -= 1;
            }
            self.now = time;
            self.step(ev);
        }
    }

    /// Fires the background timers left once the run is otherwise done, so
    /// cleanup happens. Scheduled crashes stay unfired. Returns true if a
    /// handler produced foreground work.
    fn drain_background_timers(&mut self) -> bool {
        loop {
            let next = self
                .queue
                .iter()
                .find(|(k, ev)| {
                    k.0 <= self.config.horizon
                        && matches!(
                            ev,
                            Event::Timer {
                                background: true,
                                ..
                            }
                        )
                })
                .map(|(k, _)| *k);
            let Some(key) = next else {
                return false;
            };
            let ev = self.queue.remove(&key).unwrap();
            self.now = self.now.max(key.0);
            self.step(ev);
            if self.foreground > 0 {
                return true;
            }
        }
    }

    fn step(&mut self, ev: Event) {
        match ev {
            Event::Crash(node) => self.crash(node),
            Event::Start(node) => {
                if self.crashed.contains(&node) {
                    return;
                }
                let mut ctx = Context::new(self.now, node);
                self.actors[node.0 as usize].on_start(&mut ctx);
                self.flush(node, ctx);
            }
            Event::Deliver { from, to, bytes } => {
                if self.crashed.contains(&to) {
                    return;
                }
                let msg = match A::Msg::from_canonical(&bytes) {
                    Ok(m) => m,
                    Err(e) => {
                        self.trace.push(TraceEvent {
                            time: self.now,
                            kind: TraceKind::Deliver,
                            from: Some(from),
                            to: Some(to),
                            summary: format!("undecodable: {e}"),
                            bytes,
                        });
                        return;
                    }
                };
                self.trace.push(TraceEvent {
                    time: self.now,
                    kind: TraceKind::Deliver,
                    from: Some(from),
                    to: Some(to),
                    summary: msg.summary(),
                    bytes,
                });
                let mut ctx = Context::new(self.now, to);
                self.actors[to.0 as usize].on_message(&mut ctx, from, msg);
                self.flush(to, ctx);
            }
            Event::Timer { node, token, .. } => {
                if self.crashed.contains(&node) {
                    return;
                }
                let mut ctx = Context::new(self.now, node);
                self.actors[node.0 as usize].on_timer(&mut ctx, token);
                self.flush(node, ctx);
            }
        }
    }

    fn crash(&mut self, node: NodeId) {
        if self.crashed.insert(node) {
            self.trace.push(TraceEvent {
                time: self.now,
                kind: TraceKind::Crash,
                from: Some(node),
                to: None,
                summary: "crash".into(),
                bytes: Vec::new(),
            });
        }
    }

    fn flush(&mut self, node: NodeId, mut ctx: Context<A::Msg>) {
        for (kind, summary) in ctx.take_notes() {
            self.trace.push(TraceEvent {
                time: self.now,
                kind,
                from: Some(node),
                to: None,
                summary,
                bytes: Vec::new(),
            });
        }
        let limit = match self.config.crash_plan.get(&node) {
            Some(CrashPoint::AfterSends(k)) => Some(*k),
            _ => None,
        };
        for (to, msg) in ctx.take_outbox() {
            if self.crashed.contains(&node) {
                break;
            }
            assert!(
                (to.0 as usize) < self.actors.len(),
                "send to unknown node {to}"
            );
            let bytes = msg.to_canonical();
            let lat = self.rng.gen_range(1..=self.config.delta_max);
            let tail = self.link_tail.entry((node, to)).or_insert(0);
            let at = (self.now + lat).max(*tail);
            *tail = at;
            self.trace.push(TraceEvent {
                time: self.now,
                kind: TraceKind::Send,
                from: Some(node),
                to: Some(to),
                summary: msg.summary(),
                bytes: bytes.clone(),
            });
            self.push(
                at,
                Event::Deliver {
                    from: node,
                    to,
                    bytes,
                },
            );
            let sent = &mut self.sends[node.0 as usize];
            *sent += 1;
            if limit.is_some_and(|k| *sent >= k) {
                self.crash(node);
            }
        }
        for (delay, token, background) in ctx.timers.drain(..) {
            if self.crashed.contains(&node) {
                break;
            }
            self.push(
                self.now + delay,
                Event::Timer {
                    node,
                    token,
                    background,
                },
            );
        }
    }
}
