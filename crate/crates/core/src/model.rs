//! Domain types: shard identifiers, signed dependency sets, update requests,
//! shard responses, transactions and beliefs.
//!
//! Wire layout (see [`crate::codec`] for primitive rules):
//!
//! ```text
//! ShardId            str
//! SignedDependency   ShardId, sign:u8 (0 unsigned, 1 plus, 2 minus)
//! DependencySet      list<SignedDependency>, ascending by ShardId
//! Payload            list<{account: str, delta: i64}>
//! UpdateRequest      id[16] nonce[16] payload:bytes deps:DependencySet
//!                    pks:list<bytes> epks:list<bytes> sigs:list<bytes>
//! ShardResponse      request_hash[32] shard_signature:bytes
//! TxEntry            request_hash[32] ephemeral_sigs:list<bytes>
//! Transaction        entries:list<TxEntry> client_epk:bytes client_sig:bytes
//! Belief             value:u8 (0 discard, 1 tentative commit) is_final:u8
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Reader, Writer};
use crate::crypto::{self, Digest, PublicKey, Scheme, Signature};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("shard identifier must be nonempty")]
    EmptyShardId,
    #[error("shard {0} appears more than once in a dependency set")]
    DuplicateDependency(ShardId),
    #[error("cannot parse dependency `{0}`")]
    BadDependency(String),
    #[error("key and signature lists must be nonempty and of equal length (pks {pks}, epks {epks}, sigs {sigs})")]
    KeyListMismatch {
        pks: usize,
        epks: usize,
        sigs: usize,
    },
    #[error("request for {0} lists itself as a dependency")]
    SelfDependency(ShardId),
    #[error("payload must contain at least one operation")]
    EmptyPayload,
    #[error("transaction must contain at least one entry")]
    EmptyTransaction,
}

/// Shard identifier. Totally ordered; the order breaks ties deterministically
/// (e.g. the 2PC coordinator is the smallest participant).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ShardId(String);

impl ShardId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::EmptyShardId);
        }
        Ok(ShardId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ShardId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        ShardId::new(value)
    }
}

impl From<ShardId> for String {
    fn from(id: ShardId) -> Self {
        id.0
    }
}

impl fmt::Debug for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Annotation on a dependency: `S` (both directions), `S+` (we contact S),
/// `S-` (S contacts us).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Unsigned,
    Plus,
    Minus,
}

impl Sign {
    /// The holder of the dependency queries the named shard.
    pub fn contacts(self) -> bool {
        matches!(self, Sign::Unsigned | Sign::Plus)
    }

    /// The holder of the dependency answers queries from the named shard.
    pub fn accepts(self) -> bool {
        matches!(self, Sign::Unsigned | Sign::Minus)
    }

    fn tag(self) -> u8 {
        match self {
            Sign::Unsigned => 0,
            Sign::Plus => 1,
            Sign::Minus => 2,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Sign::Unsigned => "",
            Sign::Plus => "+",
            Sign::Minus => "-",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignedDependency {
    pub shard: ShardId,
    pub sign: Sign,
}

impl SignedDependency {
    pub fn new(shard: ShardId, sign: Sign) -> Self {
        Self { shard, sign }
    }
}

impl fmt::Display for SignedDependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.shard, self.sign.suffix())
    }
}

impl FromStr for SignedDependency {
    type Err = ModelError;

    /// `S2`, `S2+` or `S2-`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, sign) = if let Some(n) = s.strip_suffix('+') {
            (n, Sign::Plus)
        } else if let Some(n) = s.strip_suffix('-') {
            (n, Sign::Minus)
        } else {
            (s, Sign::Unsigned)
        };
        let shard = ShardId::new(name).map_err(|_| ModelError::BadDependency(s.to_string()))?;
        Ok(SignedDependency { shard, sign })
    }
}

/// A dependency set: each shard at most once.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct DependencySet(BTreeMap<ShardId, Sign>);

impl DependencySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn try_from_deps(
        deps: impl IntoIterator<Item = SignedDependency>,
    ) -> Result<Self, ModelError> {
        let mut set = Self::new();
        for d in deps {
            set.insert(d)?;
        }
        Ok(set)
    }

    /// Parses a list like `["S2+", "S3-"]`.
    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Self, ModelError> {
        Self::try_from_deps(
            items
                .iter()
                .map(|s| s.as_ref().parse())
                .collect::<Result<Vec<SignedDependency>, _>>()?,
        )
    }

    pub fn insert(&mut self, dep: SignedDependency) -> Result<(), ModelError> {
        if self.0.contains_key(&dep.shard) {
            return Err(ModelError::DuplicateDependency(dep.shard));
        }
        self.0.insert(dep.shard, dep.sign);
        Ok(())
    }

    pub fn sign_of(&self, shard: &ShardId) -> Option<Sign> {
        self.0.get(shard).copied()
    }

    pub fn contains(&self, shard: &ShardId) -> bool {
        self.0.contains_key(shard)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = SignedDependency> + '_ {
        self.0
            .iter()
            .map(|(shard, sign)| SignedDependency::new(shard.clone(), *sign))
    }

    pub fn shards(&self) -> impl Iterator<Item = &ShardId> {
        self.0.keys()
    }

    /// Shards this request's holder queries (`+` or unsigned).
    pub fn contacts(&self) -> impl Iterator<Item = &ShardId> {
        self.0
            .iter()
            .filter(|(_, s)| s.contacts())
            .map(|(id, _)| id)
    }

    /// Shards allowed to query this request's holder (`-` or unsigned).
    pub fn expected_callers(&self) -> impl Iterator<Item = &ShardId> {
        self.0.iter().filter(|(_, s)| s.accepts()).map(|(id, _)| id)
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.iter().map(|d| d.to_string()).collect()
    }
}

impl fmt::Display for DependencySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.to_strings().join(","))
    }
}

macro_rules! fixed_id {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn random<R: rand::RngCore>(rng: &mut R) -> Self {
                let mut b = [0u8; $len];
                rng.fill_bytes(&mut b);
                Self(b)
            }

            pub fn short(&self) -> String {
                hex::encode(&self.0[..4])
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.short())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl Canonical for $name {
            fn encode_to(&self, w: &mut Writer) {
                w.fixed(&self.0);
            }
            fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok(Self(r.fixed()?))
            }
        }
    };
}

fixed_id!(
    /// Shared by every update request of one transaction; doubles as the
    /// atomic-commit session identifier.
    RequestId,
    16
);
fixed_id!(Nonce, 16);

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Op {
    pub account: String,
    pub delta: i64,
}

/// Coin-transfer payload: signed balance deltas applied in order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Payload {
    pub ops: Vec<Op>,
}

impl Payload {
    pub fn new(ops: Vec<Op>) -> Result<Self, ModelError> {
        if ops.is_empty() {
            return Err(ModelError::EmptyPayload);
        }
        Ok(Self { ops })
    }

    pub fn accounts(&self) -> BTreeSet<&str> {
        self.ops.iter().map(|op| op.account.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct UpdateRequest {
    pub id: RequestId,
    pub nonce: Nonce,
    /// Opaque to everyone but the target shard; shards here decode a [`Payload`].
    pub payload: Vec<u8>,
    pub deps: DependencySet,
    pub stakeholder_pks: Vec<PublicKey>,
    pub stakeholder_epks: Vec<PublicKey>,
    pub signatures: Vec<Signature>,
}

impl UpdateRequest {
    /// The bytes every stakeholder signs with its long-term key: the canonical
    /// encoding of all fields except the signatures.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_unsigned(&mut w);
        w.finish()
    }

    fn encode_unsigned(&self, w: &mut Writer) {
        w.value(&self.id)
            .value(&self.nonce)
            .bytes(&self.payload)
            .value(&self.deps)
            .list(&self.stakeholder_pks)
            .list(&self.stakeholder_epks);
    }

    pub fn hash(&self) -> Digest {
        crypto::hash(&self.to_canonical())
    }

    /// Structural checks that don't need keys or state.
    pub fn check_shape(&self, target: &ShardId) -> Result<(), ModelError> {
        let (pks, epks, sigs) = (
            self.stakeholder_pks.len(),
            self.stakeholder_epks.len(),
            self.signatures.len(),
        );
        if pks == 0 || pks != epks || pks != sigs {
            return Err(ModelError::KeyListMismatch { pks, epks, sigs });
        }
        if self.deps.contains(target) {
            return Err(ModelError::SelfDependency(target.clone()));
        }
        Ok(())
    }

    /// True iff every `signatures[k]` verifies under `stakeholder_pks[k]`.
    pub fn signatures_valid(&self, scheme: Scheme) -> bool {
        if self.signatures.len() != self.stakeholder_pks.len() {
            return false;
        }
        let msg = self.signing_bytes();
        self.stakeholder_pks
            .iter()
            .zip(&self.signatures)
            .all(|(pk, sig)| scheme.verify(pk, &msg, sig))
    }

    pub fn decode_payload(&self) -> Result<Payload, DecodeError> {
        Payload::from_canonical(&self.payload)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardResponse {
    pub request_hash: Digest,
    pub shard_signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxEntry {
    pub request_hash: Digest,
    pub ephemeral_sigs: Vec<Signature>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub entries: Vec<TxEntry>,
    pub client_epk: PublicKey,
    pub client_sig: Signature,
}

/// Canonical encoding of the ordered hash list; what every stakeholder signs
/// with its ephemeral key.
pub fn hash_list_bytes(entries: &[TxEntry]) -> Vec<u8> {
    let mut w = Writer::new();
    w.len_prefix(entries.len());
    for e in entries {
        w.value(&e.request_hash);
    }
    w.finish()
}

/// Canonical encoding of the entry list; what the submitting client signs.
pub fn entries_bytes(entries: &[TxEntry]) -> Vec<u8> {
    let mut w = Writer::new();
    w.list(entries);
    w.finish()
}

impl Transaction {
    pub fn hash_list_bytes(&self) -> Vec<u8> {
        hash_list_bytes(&self.entries)
    }

    pub fn client_signature_valid(&self, scheme: Scheme) -> bool {
        scheme.verify(
            &self.client_epk,
            &entries_bytes(&self.entries),
            &self.client_sig,
        )
    }

    /// Checks entry `index`'s ephemeral signatures against the ephemeral keys
    /// registered in the matching request, over the full hash list.
    pub fn entry_signatures_valid(&self, index: usize, epks: &[PublicKey], scheme: Scheme) -> bool {
        let Some(entry) = self.entries.get(index) else {
            return false;
        };
        if entry.ephemeral_sigs.len() != epks.len() || epks.is_empty() {
            return false;
        }
        let msg = self.hash_list_bytes();
        epks.iter()
            .zip(&entry.ephemeral_sigs)
            .all(|(pk, sig)| scheme.verify(pk, &msg, sig))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Discard,
    Commit,
}

impl Decision {
    pub fn from_bool(commit: bool) -> Self {
        if commit {
            Decision::Commit
        } else {
            Decision::Discard
        }
    }

    pub fn and(self, other: Decision) -> Decision {
        Decision::from_bool(self == Decision::Commit && other == Decision::Commit)
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Commit => "commit",
            Decision::Discard => "discard",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BeliefValue {
    Discard,
    TentativeCommit,
}

impl BeliefValue {
    pub fn and(self, other: BeliefValue) -> BeliefValue {
        match (self, other) {
            (BeliefValue::TentativeCommit, BeliefValue::TentativeCommit) => {
                BeliefValue::TentativeCommit
            }
            _ => BeliefValue::Discard,
        }
    }

    pub fn decision(self) -> Decision {
        match self {
            BeliefValue::Discard => Decision::Discard,
            BeliefValue::TentativeCommit => Decision::Commit,
        }
    }
}

impl From<Decision> for BeliefValue {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Commit => BeliefValue::TentativeCommit,
            Decision::Discard => BeliefValue::Discard,
        }
    }
}

/// A per-session belief. `(TentativeCommit, true)` is the "finalized commit"
/// response value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Belief {
    pub value: BeliefValue,
    pub is_final: bool,
}

impl Belief {
    pub fn tentative(value: BeliefValue) -> Self {
        Self {
            value,
            is_final: false,
        }
    }

    pub fn finalized(value: BeliefValue) -> Self {
        Self {
            value,
            is_final: true,
        }
    }

    /// A discard never reverts to commit and finality is absorbing.
    pub fn may_become(self, next: Belief) -> bool {
        let value_ok =
            !(self.value == BeliefValue::Discard && next.value == BeliefValue::TentativeCommit);
        let final_ok = !self.is_final || (next.is_final && next.value == self.value);
        value_ok && final_ok
    }
}

/// A reciprocity violation between two dependency sets.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DependencyViolation {
    /// `holder` names `target`, but there is no request for `target`.
    MissingRequest {
        holder: ShardId,
        target: ShardId,
    },
    /// `holder` will query `target`, but `target` does not accept queries from it.
    UnansweredContact {
        holder: ShardId,
        target: ShardId,
    },
    /// `holder` expects queries from `target`, but `target` will not send them.
    UnsentContact {
        holder: ShardId,
        target: ShardId,
    },
    SelfReference {
        holder: ShardId,
    },
    MixedRequestIds,
}

impl fmt::Display for DependencyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingRequest { holder, target } => {
                write!(f, "{holder} depends on {target}, which has no request")
            }
            Self::UnansweredContact { holder, target } => write!(
                f,
                "{holder} contacts {target}, but {target} lacks {holder}- or {holder}"
            ),
            Self::UnsentContact { holder, target } => write!(
                f,
                "{holder} expects contact from {target}, but {target} lacks {holder}+ or {holder}"
            ),
            Self::SelfReference { holder } => write!(f, "{holder} lists itself"),
            Self::MixedRequestIds => f.write_str("requests do not share one id"),
        }
    }
}

/// Checks that every dependency is reciprocated: a contact (`+`/unsigned)
/// needs a matching acceptance (`-`/unsigned) on the other side and vice versa.
pub fn check_reciprocity(sets: &BTreeMap<ShardId, DependencySet>) -> Vec<DependencyViolation> {
    let mut out = Vec::new();
    for (holder, deps) in sets {
        for dep in deps.iter() {
            let target = dep.shard;
            if &target == holder {
                out.push(DependencyViolation::SelfReference {
                    holder: holder.clone(),
                });
                continue;
            }
            let Some(other) = sets.get(&target) else {
                out.push(DependencyViolation::MissingRequest {
                    holder: holder.clone(),
                    target,
                });
                continue;
            };
            let back = other.sign_of(holder);
            if dep.sign.contacts() && !back.is_some_and(Sign::accepts) {
                out.push(DependencyViolation::UnansweredContact {
                    holder: holder.clone(),
                    target: target.clone(),
                });
            }
            if dep.sign.accepts() && !back.is_some_and(Sign::contacts) {
                out.push(DependencyViolation::UnsentContact {
                    holder: holder.clone(),
                    target,
                });
            }
        }
    }
    out
}

pub fn validate_dependency_consistency(
    requests: &BTreeMap<ShardId, UpdateRequest>,
) -> Result<(), Vec<DependencyViolation>> {
    let ids: BTreeSet<RequestId> = requests.values().map(|r| r.id).collect();
    if ids.len() > 1 {
        return Err(vec![DependencyViolation::MixedRequestIds]);
    }
    let sets = requests
        .iter()
        .map(|(k, r)| (k.clone(), r.deps.clone()))
        .collect();
    let violations = check_reciprocity(&sets);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

// ---------------------------------------------------------------------------
// canonical encoding
// ---------------------------------------------------------------------------

impl Canonical for PublicKey {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(&self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PublicKey(r.bytes()?))
    }
}

impl Canonical for Signature {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(&self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Signature(r.bytes()?))
    }
}

impl Canonical for Digest {
    fn encode_to(&self, w: &mut Writer) {
        w.fixed(&self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Digest(r.fixed()?))
    }
}

impl Canonical for ShardId {
    fn encode_to(&self, w: &mut Writer) {
        w.str(&self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        ShardId::new(r.str()?).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}

impl Canonical for Sign {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(self.tag());
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(Sign::Unsigned),
            1 => Ok(Sign::Plus),
            2 => Ok(Sign::Minus),
            tag => Err(DecodeError::InvalidTag {
                context: "sign",
                tag,
            }),
        }
    }
}

impl Canonical for SignedDependency {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.shard).value(&self.sign);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(SignedDependency {
            shard: r.value()?,
            sign: r.value()?,
        })
    }
}

impl Canonical for DependencySet {
    fn encode_to(&self, w: &mut Writer) {
        w.len_prefix(self.0.len());
        for dep in self.iter() {
            dep.encode_to(w);
        }
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let deps: Vec<SignedDependency> = r.list()?;
        if deps.windows(2).any(|w| w[0].shard >= w[1].shard) {
            return Err(DecodeError::Invalid(
                "dependency set not strictly ascending".into(),
            ));
        }
        DependencySet::try_from_deps(deps).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}

impl Canonical for Op {
    fn encode_to(&self, w: &mut Writer) {
        w.str(&self.account).i64(self.delta);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Op {
            account: r.str()?,
            delta: r.i64()?,
        })
    }
}

impl Canonical for Payload {
    fn encode_to(&self, w: &mut Writer) {
        w.list(&self.ops);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Payload::new(r.list()?).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}

impl Canonical for UpdateRequest {
    fn encode_to(&self, w: &mut Writer) {
        self.encode_unsigned(w);
        w.list(&self.signatures);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(UpdateRequest {
            id: r.value()?,
            nonce: r.value()?,
            payload: r.bytes()?,
            deps: r.value()?,
            stakeholder_pks: r.list()?,
            stakeholder_epks: r.list()?,
            signatures: r.list()?,
        })
    }
}

impl Canonical for ShardResponse {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.request_hash).value(&self.shard_signature);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ShardResponse {
            request_hash: r.value()?,
            shard_signature: r.value()?,
        })
    }
}

impl Canonical for TxEntry {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.request_hash).list(&self.ephemeral_sigs);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(TxEntry {
            request_hash: r.value()?,
            ephemeral_sigs: r.list()?,
        })
    }
}

impl Canonical for Transaction {
    fn encode_to(&self, w: &mut Writer) {
        w.list(&self.entries)
            .value(&self.client_epk)
            .value(&self.client_sig);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let entries: Vec<TxEntry> = r.list()?;
        if entries.is_empty() {
            return Err(DecodeError::Invalid(
                ModelError::EmptyTransaction.to_string(),
            ));
        }
        Ok(Transaction {
            entries,
            client_epk: r.value()?,
            client_sig: r.value()?,
        })
    }
}

impl Canonical for BeliefValue {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(match self {
            BeliefValue::Discard => 0,
            BeliefValue::TentativeCommit => 1,
        });
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(BeliefValue::Discard),
            1 => Ok(BeliefValue::TentativeCommit),
            tag => Err(DecodeError::InvalidTag {
                context: "belief",
                tag,
            }),
        }
    }
}

impl Canonical for Belief {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.value).bool(self.is_final);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Belief {
            value: r.value()?,
            is_final: r.bool()?,
        })
    }
}

impl Canonical for Decision {
    fn encode_to(&self, w: &mut Writer) {
        w.bool(*self == Decision::Commit);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Decision::from_bool(r.bool()?))
    }
}
