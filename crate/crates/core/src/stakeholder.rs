//! Stakeholder side of a transaction: request assembly and signing, response
//! checks, transaction creation and hand-off to a client.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::codec::Canonical;
use crate::crypto::{Digest, KeyKind, KeyPair, PublicKey, Scheme};
use crate::message::Message;
use crate::model::{
    check_reciprocity, entries_bytes, hash_list_bytes, DependencySet, DependencyViolation, Nonce,
    Payload, RequestId, ShardId, ShardResponse, Transaction, TxEntry, UpdateRequest,
};
use crate::simnet::{Context, NodeId, Time};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StakeholderError {
    #[error("inconsistent dependency sets: {}", join(.0))]
    Inconsistent(Vec<DependencyViolation>),
    #[error("shard {0} appears in more than one request")]
    DuplicateShard(ShardId),
    #[error("stakeholder index {0} out of range")]
    UnknownStakeholder(usize),
    #[error("no ephemeral key for an entry of request {0}")]
    MissingEphemeralKey(RequestId),
    #[error("client pool is empty")]
    EmptyPool,
}

fn join(v: &[DependencyViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseError {
    #[error("no response from {0}")]
    Missing(ShardId),
    #[error("hash in response from {0} does not match its request")]
    HashMismatch(ShardId),
    #[error("signature in response from {0} does not verify under its key")]
    BadShardSignature(ShardId),
}

#[derive(Clone, Debug)]
pub struct StakeholderIdentity {
    pub long_term: KeyPair,
    ephemeral_per_tx: BTreeMap<RequestId, KeyPair>,
}

impl StakeholderIdentity {
    pub fn new(long_term: KeyPair) -> Self {
        Self {
            long_term,
            ephemeral_per_tx: BTreeMap::new(),
        }
    }

    /// The ephemeral key for `id`, generated on first use.
    pub fn ephemeral_for<R: RngCore>(&mut self, id: RequestId, rng: &mut R) -> &KeyPair {
        let scheme = self.long_term.scheme;
        self.ephemeral_per_tx
            .entry(id)
            .or_insert_with(|| scheme.keygen_from_rng(rng, KeyKind::Ephemeral))
    }

    pub fn ephemeral(&self, id: &RequestId) -> Option<&KeyPair> {
        self.ephemeral_per_tx.get(id)
    }
}

/// What the parties agreed on for one shard.
#[derive(Clone, Debug)]
pub struct RequestTerms {
    pub shard: ShardId,
    pub payload: Payload,
    pub deps: DependencySet,
    /// Indices into the party list of everyone who must sign.
    pub stakeholders: Vec<usize>,
}

/// Builds and signs one request per shard, all sharing `id`. Fails before any
/// shard is contacted if the dependency sets don't reciprocate.
pub fn negotiate<R: RngCore>(
    id: RequestId,
    terms: &[RequestTerms],
    parties: &mut [StakeholderIdentity],
    rng: &mut R,
) -> Result<Vec<(ShardId, UpdateRequest)>, StakeholderError> {
    let mut sets = BTreeMap::new();
    for t in terms {
        if sets.insert(t.shard.clone(), t.deps.clone()).is_some() {
            return Err(StakeholderError::DuplicateShard(t.shard.clone()));
        }
    }
    let violations = check_reciprocity(&sets);
    if !violations.is_empty() {
        return Err(StakeholderError::Inconsistent(violations));
    }
    let mut out = Vec::new();
    for t in terms {
        let mut pks = Vec::new();
        let mut epks = Vec::new();
        for &i in &t.stakeholders {
            let party = parties
                .get_mut(i)
                .ok_or(StakeholderError::UnknownStakeholder(i))?;
            pks.push(party.long_term.public.clone());
            epks.push(party.ephemeral_for(id, rng).public.clone());
        }
        let mut req = UpdateRequest {
            id,
            nonce: Nonce::random(rng),
            payload: t.payload.to_canonical(),
            deps: t.deps.clone(),
            stakeholder_pks: pks,
            stakeholder_epks: epks,
            signatures: Vec::new(),
        };
        let msg = req.signing_bytes();
        req.signatures = t
            .stakeholders
            .iter()
            .map(|&i| parties[i].long_term.sign(&msg))
            .collect();
        out.push((t.shard.clone(), req));
    }
    Ok(out)
}

/// Checks that each response hashes the request sent to that shard and is signed by it.
pub fn collect_and_verify(
    requests: &[(ShardId, UpdateRequest)],
    responses: &BTreeMap<ShardId, ShardResponse>,
    shard_keys: &BTreeMap<ShardId, PublicKey>,
    scheme: Scheme,
) -> Result<(), Vec<ResponseError>> {
    let mut errors = Vec::new();
    for (shard, req) in requests {
        let Some(resp) = responses.get(shard) else {
            errors.push(ResponseError::Missing(shard.clone()));
            continue;
        };
        if resp.request_hash != req.hash() {
            errors.push(ResponseError::HashMismatch(shard.clone()));
            continue;
        }
        let ok = shard_keys
            .get(shard)
            .is_some_and(|k| scheme.verify(k, resp.request_hash.as_bytes(), &resp.shard_signature));
        if !ok {
            errors.push(ResponseError::BadShardSignature(shard.clone()));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Orders the request hashes by their bytes and has every stakeholder sign
/// the full list with the ephemeral key registered in its request.
///
/// With `pad_to`, random hashes with dummy signature sets are mixed in until
/// there are that many entries; shards skip them as unknown.
pub fn create_transaction<R: RngCore>(
    requests: &[UpdateRequest],
    parties: &[StakeholderIdentity],
    pad_to: Option<usize>,
    rng: &mut R,
) -> Result<Vec<TxEntry>, StakeholderError> {
    let mut signers: Vec<(Digest, Vec<KeyPair>)> = Vec::new();
    for req in requests {
        let mut keys = Vec::new();
        for epk in &req.stakeholder_epks {
            let kp = parties
                .iter()
                .filter_map(|p| p.ephemeral(&req.id))
                .find(|k| &k.public == epk)
                .ok_or(StakeholderError::MissingEphemeralKey(req.id))?;
            keys.push(kp.clone());
        }
        signers.push((req.hash(), keys));
    }
    if let Some(target) = pad_to {
        let scheme = parties
            .first()
            .map_or(Scheme::default(), |p| p.long_term.scheme);
        while signers.len() < target {
            let mut h = [0u8; 32];
            rng.fill_bytes(&mut h);
            let n = rng.gen_range(1..=2);
            let keys = (0..n)
                .map(|_| scheme.keygen_from_rng(rng, KeyKind::Ephemeral))
                .collect();
            signers.push((Digest(h), keys));
        }
    }
    signers.sort_by_key(|s| s.0);
    let mut entries: Vec<TxEntry> = signers
        .iter()
        .map(|(h, _)| TxEntry {
            request_hash: *h,
            ephemeral_sigs: Vec::new(),
        })
        .collect();
    let msg = hash_list_bytes(&entries);
    for (entry, (_, keys)) in entries.iter_mut().zip(&signers) {
        entry.ephemeral_sigs = keys.iter().map(|k| k.sign(&msg)).collect();
    }
    Ok(entries)
}

/// Picks a client uniformly at random.
pub fn submit_via_client<R: RngCore>(
    pool: &[NodeId],
    rng: &mut R,
) -> Result<NodeId, StakeholderError> {
    if pool.is_empty() {
        return Err(StakeholderError::EmptyPool);
    }
    Ok(pool[rng.gen_range(0..pool.len())])
}

/// A trusted client: signs forwarded entries with its enrolled key and submits them.
#[derive(Clone, Debug)]
pub struct ClientNode {
    pub key: KeyPair,
    pub ledger: NodeId,
    pub submitted: usize,
}

impl ClientNode {
    pub fn sign(&self, entries: Vec<TxEntry>) -> Transaction {
        let client_sig = self.key.sign(&entries_bytes(&entries));
        Transaction {
            entries,
            client_epk: self.key.public.clone(),
            client_sig,
        }
    }

    pub fn on_message(&mut self, ctx: &mut Context<Message>, msg: Message) {
        if let Message::ClientForward { entries } = msg {
            let tx = self.sign(entries);
            self.submitted += 1;
            ctx.send(self.ledger, Message::Submit(tx));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxStatus {
    Waiting,
    Submitted { client: NodeId, at: Time },
    Aborted(String),
}

/// Drives one negotiated transaction through the network: broadcasts each
/// request to its shard, gathers responses and submits through a client.
pub struct StakeholderAgent {
    pub parties: Vec<StakeholderIdentity>,
    pub requests: Vec<(ShardId, UpdateRequest)>,
    pub directory: BTreeMap<ShardId, Vec<NodeId>>,
    pub shard_keys: BTreeMap<ShardId, PublicKey>,
    pub clients: Vec<NodeId>,
    pub scheme: Scheme,
    pub start_at: Time,
    pub pad_to: Option<usize>,
    pub rng: rand_chacha::ChaCha8Rng,
    pub responses: BTreeMap<ShardId, ShardResponse>,
    pub responses_received: BTreeMap<ShardId, usize>,
    pub status: TxStatus,
    pub entries: Option<Vec<TxEntry>>,
    node_shard: BTreeMap<NodeId, ShardId>,
}

const START_TIMER: u64 = 1;

impl StakeholderAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        parties: Vec<StakeholderIdentity>,
        requests: Vec<(ShardId, UpdateRequest)>,
        directory: BTreeMap<ShardId, Vec<NodeId>>,
        shard_keys: BTreeMap<ShardId, PublicKey>,
        clients: Vec<NodeId>,
        scheme: Scheme,
        start_at: Time,
        pad_to: Option<usize>,
        rng: rand_chacha::ChaCha8Rng,
    ) -> Self {
        let node_shard = directory
            .iter()
            .flat_map(|(s, nodes)| nodes.iter().map(move |n| (*n, s.clone())))
            .collect();
        Self {
            parties,
            requests,
            directory,
            shard_keys,
            clients,
            scheme,
            start_at,
            pad_to,
            rng,
            responses: BTreeMap::new(),
            responses_received: BTreeMap::new(),
            status: TxStatus::Waiting,
            entries: None,
            node_shard,
        }
    }

    pub fn request_id(&self) -> Option<RequestId> {
        self.requests.first().map(|(_, r)| r.id)
    }

    pub fn has_pending_work(&self) -> bool {
        self.status == TxStatus::Waiting
    }

    pub fn on_start(&mut self, ctx: &mut Context<Message>) {
        if self.start_at == 0 {
            self.send_requests(ctx);
        } else {
            ctx.set_timer(self.start_at, START_TIMER);
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Context<Message>, _token: u64) {
        self.send_requests(ctx);
    }

    fn send_requests(&mut self, ctx: &mut Context<Message>) {
        for (shard, req) in &self.requests {
            for n in self
                .directory
                .get(shard)
                .map(Vec::as_slice)
                .unwrap_or_default()
            {
                ctx.send(
                    *n,
                    Message::Request {
                        origin: ctx.me(),
                        hops: 0,
                        request: req.clone(),
                    },
                );
            }
        }
    }

    pub fn on_message(&mut self, ctx: &mut Context<Message>, from: NodeId, msg: Message) {
        let Some(shard) = self.node_shard.get(&from).cloned() else {
            return;
        };
        match msg {
            Message::Response(resp) => {
                *self.responses_received.entry(shard.clone()).or_insert(0) += 1;
                self.responses.entry(shard).or_insert(resp);
            }
            Message::Rejected { reason, .. } => {
                *self.responses_received.entry(shard.clone()).or_insert(0) += 1;
                if self.status == TxStatus::Waiting {
                    self.status = TxStatus::Aborted(format!("{shard}: {reason}"));
                }
                return;
            }
            _ => return,
        }
        if self.status != TxStatus::Waiting || self.responses.len() < self.requests.len() {
            return;
        }
        if let Err(errs) = collect_and_verify(
            &self.requests,
            &self.responses,
            &self.shard_keys,
            self.scheme,
        ) {
            self.status = TxStatus::Aborted(errs[0].to_string());
            return;
        }
        let reqs: Vec<UpdateRequest> = self.requests.iter().map(|(_, r)| r.clone()).collect();
        let entries = match create_transaction(&reqs, &self.parties, self.pad_to, &mut self.rng) {
            Ok(e) => e,
            Err(e) => {
                self.status = TxStatus::Aborted(e.to_string());
                return;
            }
        };
        match submit_via_client(&self.clients, &mut self.rng) {
            Ok(client) => {
                ctx.send(
                    client,
                    Message::ClientForward {
                        entries: entries.clone(),
                    },
                );
                self.status = TxStatus::Submitted {
                    client,
                    at: ctx.now(),
                };
                self.entries = Some(entries);
            }
            Err(e) => self.status = TxStatus::Aborted(e.to_string()),
        }
    }
}

/// Collects the distinct shards of a set of requests.
pub fn shards_of(requests: &[(ShardId, UpdateRequest)]) -> BTreeSet<ShardId> {
    requests.iter().map(|(s, _)| s.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Op;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sid(s: &str) -> ShardId {
        ShardId::new(s).unwrap()
    }

    fn parties(n: u8) -> Vec<StakeholderIdentity> {
        (0..n)
            .map(|i| {
                StakeholderIdentity::new(Scheme::Ed25519.keygen([i + 1; 32], KeyKind::LongTerm))
            })
            .collect()
    }

    fn pay(account: &str, delta: i64) -> Payload {
        Payload::new(vec![Op {
            account: account.into(),
            delta,
        }])
        .unwrap()
    }

    fn coin_exchange(
        rng: &mut ChaCha8Rng,
        ps: &mut [StakeholderIdentity],
    ) -> Vec<(ShardId, UpdateRequest)> {
        let terms = vec![
            RequestTerms {
                shard: sid("SA"),
                payload: pay("alice", -100),
                deps: DependencySet::parse(&["SB"]).unwrap(),
                stakeholders: vec![0, 1],
            },
            RequestTerms {
                shard: sid("SB"),
                payload: pay("bob", -100),
                deps: DependencySet::parse(&["SA"]).unwrap(),
                stakeholders: vec![0, 1],
            },
        ];
        negotiate(RequestId([1; 16]), &terms, ps, rng).unwrap()
    }

    fn shard_key(name: &str) -> KeyPair {
        Scheme::Ed25519.keygen([name.len() as u8 + 100; 32], KeyKind::LongTerm)
    }

    fn respond(
        reqs: &[(ShardId, UpdateRequest)],
    ) -> (
        BTreeMap<ShardId, ShardResponse>,
        BTreeMap<ShardId, PublicKey>,
    ) {
        let keys: BTreeMap<ShardId, KeyPair> =
            [(sid("SA"), shard_key("A")), (sid("SB"), shard_key("BB"))].into();
        let resps = reqs
            .iter()
            .map(|(s, r)| {
                let h = r.hash();
                (
                    s.clone(),
                    ShardResponse {
                        request_hash: h,
                        shard_signature: keys[s].sign(h.as_bytes()),
                    },
                )
            })
            .collect();
        (
            resps,
            keys.into_iter().map(|(k, v)| (k, v.public)).collect(),
        )
    }

    #[test]
    fn coin_exchange_requests_share_id_and_verify() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = parties(2);
        let reqs = coin_exchange(&mut rng, &mut ps);
        assert_eq!(reqs.len(), 2);
        assert_eq!(reqs[0].1.id, reqs[1].1.id);
        assert!(reqs
            .iter()
            .all(|(_, r)| r.signatures_valid(Scheme::Ed25519)));
        // One ephemeral key per party per transaction, reused across that transaction's requests.
        assert_eq!(reqs[0].1.stakeholder_epks, reqs[1].1.stakeholder_epks);
    }

    #[test]
    fn inconsistent_chain_rejected_before_contact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = parties(1);
        let terms = vec![
            RequestTerms {
                shard: sid("S1"),
                payload: pay("a", 1),
                deps: DependencySet::parse(&["S2+"]).unwrap(),
                stakeholders: vec![0],
            },
            RequestTerms {
                shard: sid("S2"),
                payload: pay("b", 1),
                deps: DependencySet::new(),
                stakeholders: vec![0],
            },
        ];
        assert!(matches!(
            negotiate(RequestId([2; 16]), &terms, &mut ps, &mut rng),
            Err(StakeholderError::Inconsistent(_))
        ));
    }

    #[test]
    fn swapped_hashes_flag_both_shards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = parties(2);
        let reqs = coin_exchange(&mut rng, &mut ps);
        let (mut resps, keys) = respond(&reqs);
        assert!(collect_and_verify(&reqs, &resps, &keys, Scheme::Ed25519).is_ok());
        let a = resps[&sid("SA")].clone();
        let b = resps[&sid("SB")].clone();
        resps.insert(sid("SA"), b);
        resps.insert(sid("SB"), a);
        assert_eq!(
            collect_and_verify(&reqs, &resps, &keys, Scheme::Ed25519).unwrap_err(),
            vec![
                ResponseError::HashMismatch(sid("SA")),
                ResponseError::HashMismatch(sid("SB"))
            ]
        );
    }

    #[test]
    fn wrong_shard_key_flags_bad_signature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = parties(2);
        let reqs = coin_exchange(&mut rng, &mut ps);
        let (mut resps, keys) = respond(&reqs);
        let h = reqs[0].1.hash();
        resps.insert(
            sid("SA"),
            ShardResponse {
                request_hash: h,
                shard_signature: shard_key("BB").sign(h.as_bytes()),
            },
        );
        assert_eq!(
            collect_and_verify(&reqs, &resps, &keys, Scheme::Ed25519).unwrap_err(),
            vec![ResponseError::BadShardSignature(sid("SA"))]
        );
    }

    #[test]
    fn transaction_entries_sorted_and_fully_signed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = parties(2);
        let reqs = coin_exchange(&mut rng, &mut ps);
        let plain: Vec<UpdateRequest> = reqs.iter().map(|(_, r)| r.clone()).collect();
        let entries = create_transaction(&plain, &ps, None, &mut rng).unwrap();
        assert_eq!(entries.len(), 2);
        assert!(entries[0].request_hash < entries[1].request_hash);
        let tx = Transaction {
            entries,
            client_epk: PublicKey(vec![]),
            client_sig: crate::crypto::Signature(vec![]),
        };
        for (i, e) in tx.entries.iter().enumerate() {
            assert_eq!(e.ephemeral_sigs.len(), 2);
            let req = plain.iter().find(|r| r.hash() == e.request_hash).unwrap();
            assert!(tx.entry_signatures_valid(i, &req.stakeholder_epks, Scheme::Ed25519));
        }
    }

    #[test]
    fn mutating_one_hash_breaks_every_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = parties(2);
        let reqs = coin_exchange(&mut rng, &mut ps);
        let plain: Vec<UpdateRequest> = reqs.iter().map(|(_, r)| r.clone()).collect();
        let mut entries = create_transaction(&plain, &ps, None, &mut rng).unwrap();
        let epks: Vec<Vec<PublicKey>> = entries
            .iter()
            .map(|e| {
                plain
                    .iter()
                    .find(|r| r.hash() == e.request_hash)
                    .unwrap()
                    .stakeholder_epks
                    .clone()
            })
            .collect();
        entries[1].request_hash.0[0] ^= 1;
        let tx = Transaction {
            entries,
            client_epk: PublicKey(vec![]),
            client_sig: crate::crypto::Signature(vec![]),
        };
        assert!((0..2).all(|i| !tx.entry_signatures_valid(i, &epks[i], Scheme::Ed25519)));
    }

    #[test]
    fn padding_adds_bogus_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ps = parties(2);
        let reqs = coin_exchange(&mut rng, &mut ps);
        let plain: Vec<UpdateRequest> = reqs.iter().map(|(_, r)| r.clone()).collect();
        let entries = create_transaction(&plain, &ps, Some(5), &mut rng).unwrap();
        assert_eq!(entries.len(), 5);
        assert!(entries
            .windows(2)
            .all(|w| w[0].request_hash < w[1].request_hash));
    }

    #[test]
    fn client_choice_is_reproducible() {
        let pool: Vec<NodeId> = (10..15).map(NodeId).collect();
        let pick = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..8)
                .map(|_| submit_via_client(&pool, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(pick(7), pick(7));
        assert_eq!(
            submit_via_client(&[NodeId(3)], &mut ChaCha8Rng::seed_from_u64(0)).unwrap(),
            NodeId(3)
        );
        assert_eq!(
            submit_via_client(&[], &mut ChaCha8Rng::seed_from_u64(0)),
            Err(StakeholderError::EmptyPool)
        );
    }

    #[test]
    fn chain_terms_for_three_shards() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps = parties(1);
        let deps = [&["S2+"][..], &["S1-", "S3+"], &["S2-"]];
        let terms: Vec<RequestTerms> = deps
            .iter()
            .enumerate()
            .map(|(i, d)| RequestTerms {
                shard: sid(&format!("S{}", i + 1)),
                payload: pay("a", 1),
                deps: DependencySet::parse(d).unwrap(),
                stakeholders: vec![0],
            })
            .collect();
        assert_eq!(
            negotiate(RequestId([3; 16]), &terms, &mut ps, &mut rng)
                .unwrap()
                .len(),
            3
        );
    }
}
