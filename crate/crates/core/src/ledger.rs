//! Trusted total-order log. Accepts transactions from enrolled clients,
//! batches them into blocks and sends every block to every shard node.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::crypto::{PublicKey, Scheme};
use crate::message::Message;
use crate::model::Transaction;
use crate::simnet::{Context, NodeId, Time};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub txs: Vec<Transaction>,
}

impl Canonical for Block {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.height).list(&self.txs);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let height = r.u64()?;
        let txs: Vec<Transaction> = r.list()?;
        if txs.is_empty() {
            return Err(DecodeError::Invalid("empty block".into()));
        }
        Ok(Block { height, txs })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("client key is not enrolled")]
    NotEnrolled,
    #[error("client signature does not verify")]
    BadClientSignature,
    #[error("malformed transaction: {0}")]
    Malformed(#[from] DecodeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockPolicy {
    pub max_txs: usize,
    pub timeout: Time,
}

impl Default for BlockPolicy {
    fn default() -> Self {
        Self {
            max_txs: 10,
            timeout: 100,
        }
    }
}

/// The ordering logic with no networking.
#[derive(Clone, Debug)]
pub struct Ledger {
    scheme: Scheme,
    enrolled: BTreeSet<PublicKey>,
    policy: BlockPolicy,
    pending: Vec<Transaction>,
    next_height: u64,
    pub rejected: usize,
}

impl Ledger {
    pub fn new(scheme: Scheme, enrolled: BTreeSet<PublicKey>, policy: BlockPolicy) -> Self {
        Self {
            scheme,
            enrolled,
            policy,
            pending: Vec::new(),
            next_height: 0,
            rejected: 0,
        }
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<(), LedgerError> {
        let verdict = if !self.enrolled.contains(&tx.client_epk) {
            Err(LedgerError::NotEnrolled)
        } else if !tx.client_signature_valid(self.scheme) {
            Err(LedgerError::BadClientSignature)
        } else {
            Ok(())
        };
        match verdict {
            Ok(()) => {
                self.pending.push(tx);
                Ok(())
            }
            Err(e) => {
                self.rejected += 1;
                Err(e)
            }
        }
    }

    pub fn submit_bytes(&mut self, bytes: &[u8]) -> Result<(), LedgerError> {
        match Transaction::from_canonical(bytes) {
            Ok(tx) => self.submit(tx),
            Err(e) => {
                self.rejected += 1;
                Err(e.into())
            }
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn is_full(&self) -> bool {
        self.pending.len() >= self.policy.max_txs
    }

    /// Seals up to `max_txs` pending transactions, in submission order.
    pub fn cut(&mut self) -> Option<Block> {
        if self.pending.is_empty() {
            return None;
        }
        let n = self.pending.len().min(self.policy.max_txs);
        let txs: Vec<Transaction> = self.pending.drain(..n).collect();
        let block = Block {
            height: self.next_height,
            txs,
        };
        self.next_height += 1;
        Some(block)
    }
}

pub const CUT_TIMER: u64 = 1;

/// The ledger as a simulated actor.
#[derive(Clone, Debug)]
pub struct LedgerNode {
    pub ledger: Ledger,
    pub shard_nodes: Vec<NodeId>,
    pub blocks: Vec<Block>,
    timer_armed: bool,
}

impl LedgerNode {
    pub fn new(ledger: Ledger, shard_nodes: Vec<NodeId>) -> Self {
        Self {
            ledger,
            shard_nodes,
            blocks: Vec::new(),
            timer_armed: false,
        }
    }

    pub fn on_message(&mut self, ctx: &mut Context<Message>, msg: Message) {
        let Message::Submit(tx) = msg else {
            return;
        };
        if self.ledger.submit(tx).is_err() {
            return;
        }
        if self.ledger.is_full() {
            self.seal(ctx);
        } else if !self.timer_armed {
            self.timer_armed = true;
            ctx.set_timer(self.ledger.policy.timeout, CUT_TIMER);
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Context<Message>, _token: u64) {
        self.timer_armed = false;
        self.seal(ctx);
    }

    fn seal(&mut self, ctx: &mut Context<Message>) {
        while let Some(block) = self.ledger.cut() {
            for n in &self.shard_nodes {
                ctx.send(*n, Message::Block(block.clone()));
            }
            self.blocks.push(block);
            if !self.ledger.is_full() {
                break;
            }
        }
        if self.ledger.pending() > 0 && !self.timer_armed {
            self.timer_armed = true;
            ctx.set_timer(self.ledger.policy.timeout, CUT_TIMER);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyKind, Signature};
    use crate::model::{entries_bytes, TxEntry};

    fn signed_tx(seed: u8) -> (Transaction, PublicKey) {
        let kp = Scheme::Ed25519.keygen([seed; 32], KeyKind::Ephemeral);
        let entries = vec![TxEntry {
            request_hash: crate::crypto::hash(&[seed]),
            ephemeral_sigs: vec![Signature(vec![1; 64])],
        }];
        let client_sig = kp.sign(&entries_bytes(&entries));
        (
            Transaction {
                entries,
                client_epk: kp.public.clone(),
                client_sig,
            },
            kp.public,
        )
    }

    fn ledger_for(keys: &[PublicKey]) -> Ledger {
        Ledger::new(
            Scheme::Ed25519,
            keys.iter().cloned().collect(),
            BlockPolicy::default(),
        )
    }

    #[test]
    fn accepts_valid_and_orders_by_submission() {
        let (a, ka) = signed_tx(1);
        let (b, kb) = signed_tx(2);
        let mut l = ledger_for(&[ka, kb]);
        l.submit(a.clone()).unwrap();
        l.submit(b.clone()).unwrap();
        let block = l.cut().unwrap();
        assert_eq!((block.height, block.txs), (0, vec![a, b]));
        assert!(l.cut().is_none());
    }

    #[test]
    fn flipped_client_signature_rejected() {
        let (mut tx, k) = signed_tx(3);
        tx.client_sig.0[0] ^= 1;
        let mut l = ledger_for(&[k]);
        assert_eq!(l.submit(tx), Err(LedgerError::BadClientSignature));
        assert_eq!(l.rejected, 1);
    }

    #[test]
    fn unenrolled_and_malformed_rejected() {
        let (tx, _) = signed_tx(4);
        let mut l = ledger_for(&[]);
        assert_eq!(l.submit(tx.clone()), Err(LedgerError::NotEnrolled));
        let mut bytes = tx.to_canonical();
        bytes.push(0);
        assert!(matches!(
            l.submit_bytes(&bytes),
            Err(LedgerError::Malformed(_))
        ));
    }

    #[test]
    fn block_size_limit() {
        let txs: Vec<_> = (0..25).map(signed_tx).collect();
        let mut l = ledger_for(&txs.iter().map(|t| t.1.clone()).collect::<Vec<_>>());
        for (tx, _) in &txs {
            l.submit(tx.clone()).unwrap();
        }
        let sizes: Vec<usize> = std::iter::from_fn(|| l.cut())
            .map(|b| b.txs.len())
            .collect();
        assert_eq!(sizes, vec![10, 10, 5]);
    }
}
