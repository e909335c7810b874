//! Observation trace.
//!
//! Export format, one event per line, fields separated by a single space:
//!
//! ```text
//! <time> <kind> <from|-> <to|-> <hex bytes|-> <summary>
//! ```

use std::fmt::Write as _;

use super::{NodeId, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Send,
    Deliver,
    Crash,
    StateChange,
    RoundAdvance,
    Finalize,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Send => "send",
            TraceKind::Deliver => "deliver",
            TraceKind::Crash => "crash",
            TraceKind::StateChange => "state",
            TraceKind::RoundAdvance => "round",
            TraceKind::Finalize => "final",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: Time,
    pub kind: TraceKind,
    pub from: Option<NodeId>,
    pub to: Option<NodeId>,
    pub summary: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, ev: TraceEvent) {
        debug_assert!(self.events.last().is_none_or(|l| l.time <= ev.time));
        self.events.push(ev);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn events_mut(&mut self) -> &mut [TraceEvent] {
        &mut self.events
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Everything `node` received, in delivery order.
    pub fn received_by(&self, node: NodeId) -> impl Iterator<Item = &TraceEvent> {
        self.events
            .iter()
            .filter(move |e| e.kind == TraceKind::Deliver && e.to == Some(node))
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn export(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let node = |n: Option<NodeId>| n.map_or("-".to_string(), |n| n.to_string());
            let bytes = if e.bytes.is_empty() {
                "-".to_string()
            } else {
                hex::encode(&e.bytes)
            };
            writeln!(
                out,
                "{} {} {} {} {} {}",
                e.time,
                e.kind.as_str(),
                node(e.from),
                node(e.to),
                bytes,
                e.summary
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_line_layout() {
        let mut t = Trace::default();
        t.push(TraceEvent {
            time: 4,
            kind: TraceKind::Send,
            from: Some(NodeId(1)),
            to: Some(NodeId(2)),
            summary: "pull x".into(),
            bytes: vec![0xab, 0x01],
        });
        t.push(TraceEvent {
            time: 5,
            kind: TraceKind::Finalize,
            from: Some(NodeId(2)),
            to: None,
            summary: "commit".into(),
            bytes: vec![],
        });
        assert_eq!(
            t.export(),
            "4 send n1 n2 ab01 pull x\n5 final n2 - - commit\n"
        );
    }
}
