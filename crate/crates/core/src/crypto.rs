//! Hashing and signatures.
//!
//! Two signature schemes sit behind [`Scheme`]:
//!
//! | scheme        | public key | secret key | signature |
//! |---------------|-----------:|-----------:|----------:|
//! | `Ed25519`     | 32 bytes   | 32 bytes   | 64 bytes  |
//! | `Transparent` | 32 bytes   | 32 bytes   | 32 bytes  |
//!
//! `Transparent` signs with `SHA-256(public || message)`. Anyone holding the
//! public key can forge it, so it is only meant for fast deterministic tests.
//! The digest is always SHA-256.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

pub const DIGEST_LEN: usize = 32;

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub Vec<u8>);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len().min(4);
        write!(f, "PublicKey({})", hex::encode(&self.0[..n]))
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len().min(4);
        write!(f, "Signature({})", hex::encode(&self.0[..n]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyKind {
    LongTerm,
    Ephemeral,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Ed25519,
    Transparent,
}

#[derive(Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    secret: [u8; 32],
    pub kind: KeyKind,
    pub scheme: Scheme,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .field("kind", &self.kind)
            .field("scheme", &self.scheme)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn secret(&self) -> &[u8; 32] {
        &self.secret
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        self.scheme.sign(&self.secret, message)
    }
}

impl Scheme {
    pub fn public_key_len(self) -> usize {
        32
    }

    pub fn signature_len(self) -> usize {
        match self {
            Scheme::Ed25519 => 64,
            Scheme::Transparent => 32,
        }
    }

    /// Deterministic key generation: the same seed always yields the same pair.
    pub fn keygen(self, seed: [u8; 32], kind: KeyKind) -> KeyPair {
        let public = match self {
            Scheme::Ed25519 => {
                let sk = ed25519_dalek::SigningKey::from_bytes(&seed);
                PublicKey(sk.verifying_key().to_bytes().to_vec())
            }
            Scheme::Transparent => {
                let mut h = Sha256::new();
                h.update(b"transparent-pk");
                h.update(seed);
                PublicKey(h.finalize().to_vec())
            }
        };
        KeyPair {
            public,
            secret: seed,
            kind,
            scheme: self,
        }
    }

    pub fn keygen_from_rng<R: RngCore>(self, rng: &mut R, kind: KeyKind) -> KeyPair {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        self.keygen(seed, kind)
    }

    pub fn sign(self, secret: &[u8; 32], message: &[u8]) -> Signature {
        match self {
            Scheme::Ed25519 => {
                use ed25519_dalek::Signer;
                let sk = ed25519_dalek::SigningKey::from_bytes(secret);
                Signature(sk.sign(message).to_bytes().to_vec())
            }
            Scheme::Transparent => {
                let public = self.keygen(*secret, KeyKind::LongTerm).public;
                Signature(transparent_tag(&public, message).to_vec())
            }
        }
    }

    /// Malformed keys or signatures verify as `false`.
    pub fn verify(self, public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
        match self {
            Scheme::Ed25519 => {
                use ed25519_dalek::Verifier;
                let Ok(pk_bytes) = <[u8; 32]>::try_from(public.0.as_slice()) else {
                    return false;
                };
                let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&pk_bytes) else {
                    return false;
                };
                let Ok(sig) = ed25519_dalek::Signature::from_slice(&signature.0) else {
                    return false;
                };
                vk.verify(message, &sig).is_ok()
            }
            Scheme::Transparent => {
                public.0.len() == 32 && signature.0 == transparent_tag(public, message)
            }
        }
    }
}

fn transparent_tag(public: &PublicKey, message: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(&public.0);
    h.update(message);
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input_matches_sha256_test_vector() {
        assert_eq!(
            hash(b"").to_string(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash(b"abc").to_string(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn same_seed_same_keypair() {
        for scheme in [Scheme::Ed25519, Scheme::Transparent] {
            let a = scheme.keygen([7; 32], KeyKind::LongTerm);
            let b = scheme.keygen([7; 32], KeyKind::LongTerm);
            assert_eq!(a.public, b.public);
            assert_eq!(a.secret(), b.secret());
            assert_eq!(a.public.0.len(), scheme.public_key_len());
            assert_eq!(a.sign(b"m").0.len(), scheme.signature_len());
        }
    }

    #[test]
    fn malformed_inputs_fail_verification() {
        let kp = Scheme::Ed25519.keygen([1; 32], KeyKind::Ephemeral);
        let sig = kp.sign(b"msg");
        assert!(!Scheme::Ed25519.verify(&PublicKey(vec![1, 2, 3]), b"msg", &sig));
        assert!(!Scheme::Ed25519.verify(&kp.public, b"msg", &Signature(vec![0; 10])));
        assert!(!Scheme::Transparent.verify(&PublicKey(vec![]), b"msg", &Signature(vec![])));
    }

    proptest! {
        #[test]
        fn sign_verify_contract(seed in any::<[u8; 32]>(), other in any::<[u8; 32]>(),
                                msg in proptest::collection::vec(any::<u8>(), 0..64),
                                flip in any::<usize>(), transparent in any::<bool>()) {
            prop_assume!(seed != other);
            let scheme = if transparent { Scheme::Transparent } else { Scheme::Ed25519 };
            let kp = scheme.keygen(seed, KeyKind::LongTerm);
            let wrong = scheme.keygen(other, KeyKind::LongTerm);
            let sig = kp.sign(&msg);
            prop_assert!(scheme.verify(&kp.public, &msg, &sig));
            prop_assert!(!scheme.verify(&wrong.public, &msg, &sig));

            let mut tampered = msg.clone();
            if tampered.is_empty() {
                tampered.push(0);
            } else {
                let i = flip % tampered.len();
                tampered[i] ^= 1;
            }
            prop_assert!(!scheme.verify(&kp.public, &tampered, &sig));

            let mut bad_sig = sig.clone();
            let i = flip % bad_sig.0.len();
            bad_sig.0[i] ^= 0x80;
            prop_assert!(!scheme.verify(&kp.public, &msg, &bad_sig));
        }
    }
}
