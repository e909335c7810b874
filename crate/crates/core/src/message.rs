//! Network messages exchanged between stakeholders, clients, shard nodes and
//! the ledger. Each is encoded as one tag byte followed by its fields.

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::ledger::Block;
use crate::model::{
    Belief, Decision, Nonce, RequestId, ShardId, ShardResponse, Transaction, TxEntry, UpdateRequest,
};
use crate::simnet::{NodeId, Summary};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    /// Update request, reliably broadcast inside the target shard. `origin`
    /// is the stakeholder awaiting the response.
    Request {
        origin: NodeId,
        hops: u32,
        request: UpdateRequest,
    },
    Response(ShardResponse),
    Rejected {
        nonce: Nonce,
        reason: String,
    },
    /// Stakeholders hand the signed entries to a client for submission.
    ClientForward {
        entries: Vec<TxEntry>,
    },
    Submit(Transaction),
    Block(Block),
    Pull {
        request_id: RequestId,
        caller: ShardId,
    },
    PullReply {
        request_id: RequestId,
        belief: Belief,
    },
    PullDenied {
        request_id: RequestId,
    },
    Vote {
        request_id: RequestId,
        voter: ShardId,
        commit: bool,
    },
    Decision {
        request_id: RequestId,
        decision: Decision,
    },
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Request { .. } => 1,
            Message::Response(_) => 2,
            Message::Rejected { .. } => 3,
            Message::ClientForward { .. } => 4,
            Message::Submit(_) => 5,
            Message::Block(_) => 6,
            Message::Pull { .. } => 7,
            Message::PullReply { .. } => 8,
            Message::PullDenied { .. } => 9,
            Message::Vote { .. } => 10,
            Message::Decision { .. } => 11,
        }
    }

    /// Messages of the neighbor-only commit protocol.
    pub fn is_ppac(&self) -> bool {
        matches!(
            self,
            Message::Pull { .. } | Message::PullReply { .. } | Message::PullDenied { .. }
        )
    }
}

impl Canonical for Message {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(self.tag());
        match self {
            Message::Request {
                origin,
                hops,
                request,
            } => {
                w.u32(origin.0).u32(*hops).value(request);
            }
            Message::Response(r) => {
                w.value(r);
            }
            Message::Rejected { nonce, reason } => {
                w.value(nonce).str(reason);
            }
            Message::ClientForward { entries } => {
                w.list(entries);
            }
            Message::Submit(tx) => {
                w.value(tx);
            }
            Message::Block(b) => {
                w.value(b);
            }
            Message::Pull { request_id, caller } => {
                w.value(request_id).value(caller);
            }
            Message::PullReply { request_id, belief } => {
                w.value(request_id).value(belief);
            }
            Message::PullDenied { request_id } => {
                w.value(request_id);
            }
            Message::Vote {
                request_id,
                voter,
                commit,
            } => {
                w.value(request_id).value(voter).bool(*commit);
            }
            Message::Decision {
                request_id,
                decision,
            } => {
                w.value(request_id).value(decision);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => Message::Request {
                origin: NodeId(r.u32()?),
                hops: r.u32()?,
                request: r.value()?,
            },
            2 => Message::Response(r.value()?),
            3 => Message::Rejected {
                nonce: r.value()?,
                reason: r.str()?,
            },
            4 => Message::ClientForward { entries: r.list()? },
            5 => Message::Submit(r.value()?),
            6 => Message::Block(r.value()?),
            7 => Message::Pull {
                request_id: r.value()?,
                caller: r.value()?,
            },
            8 => Message::PullReply {
                request_id: r.value()?,
                belief: r.value()?,
            },
            9 => Message::PullDenied {
                request_id: r.value()?,
            },
            10 => Message::Vote {
                request_id: r.value()?,
                voter: r.value()?,
                commit: r.bool()?,
            },
            11 => Message::Decision {
                request_id: r.value()?,
                decision: r.value()?,
            },
            tag => {
                return Err(DecodeError::InvalidTag {
                    context: "message",
                    tag,
                })
            }
        })
    }
}

impl Summary for Message {
    fn summary(&self) -> String {
        match self {
            Message::Request { request, hops, .. } => {
                format!(
                    "request id={} nonce={} hops={hops}",
                    request.id.short(),
                    request.nonce.short()
                )
            }
            Message::Response(r) => format!("response h={}", r.request_hash.short()),
            Message::Rejected { nonce, reason } => {
                format!("rejected nonce={} {reason}", nonce.short())
            }
            Message::ClientForward { entries } => format!("forward entries={}", entries.len()),
            Message::Submit(tx) => format!("submit entries={}", tx.entries.len()),
            Message::Block(b) => format!("block height={} txs={}", b.height, b.txs.len()),
            Message::Pull { request_id, caller } => {
                format!("pull id={} caller={caller}", request_id.short())
            }
            Message::PullReply { request_id, belief } => format!(
                "reply id={} {:?} final={}",
                request_id.short(),
                belief.value,
                belief.is_final
            ),
            Message::PullDenied { request_id } => format!("denied id={}", request_id.short()),
            Message::Vote {
                request_id,
                voter,
                commit,
            } => {
                format!(
                    "vote id={} voter={voter} commit={commit}",
                    request_id.short()
                )
            }
            Message::Decision {
                request_id,
                decision,
            } => {
                format!("decision id={} {decision}", request_id.short())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BeliefValue;

    #[test]
    fn pull_reply_carries_only_id_and_belief() {
        let m = Message::PullReply {
            request_id: RequestId([7; 16]),
            belief: Belief::finalized(BeliefValue::Discard),
        };
        let bytes = m.to_canonical();
        assert_eq!(bytes.len(), 1 + 16 + 2);
        assert_eq!(Message::from_canonical(&bytes).unwrap(), m);
    }

    #[test]
    fn unknown_tag_rejected() {
        assert!(matches!(
            Message::from_canonical(&[99]),
            Err(DecodeError::InvalidTag {
                context: "message",
                tag: 99
            })
        ));
    }
}
