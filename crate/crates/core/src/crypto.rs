//! Hashing, signatures and Merkle trees.
//!
//! SHA-256 for digests, Ed25519 for signatures. Everything here is a pure
//! function of its inputs.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("malformed public key {0}")]
    MalformedKey(String),
    #[error("a Merkle tree needs at least one leaf")]
    EmptyLeaves,
}

macro_rules! hex_bytes_serde {
    ($ty:ident, $len:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                crate::codec::hex_bytes::serialize(&self.0, s)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = crate::codec::hex_bytes::deserialize(d)?;
                let arr: [u8; $len] = raw.try_into().map_err(|v: Vec<u8>| {
                    serde::de::Error::custom(format!("expected {} bytes, got {}", $len, v.len()))
                })?;
                Ok($ty(arr))
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($ty), hex::encode(&self.0[..6]))
            }
        }
    };
}

/// 256-bit SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);
hex_bytes_serde!(Digest, 32);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Ed25519 verification key bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);
hex_bytes_serde!(PublicKey, 32);

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; 64]);
hex_bytes_serde!(Signature, 64);

impl Signature {
    pub const EMPTY: Signature = Signature([0u8; 64]);
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the concatenation of `parts`, without separators.
pub fn hash_concat<I, B>(parts: I) -> Digest
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_ref());
    }
    Digest(hasher.finalize().into())
}

/// Hash of the canonical encoding of `value`.
pub fn hash_value<T: Serialize + ?Sized>(value: &T) -> Digest {
    hash(&crate::codec::encode(value))
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    /// Deterministic key pair from 32 bytes of secret material.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    /// Key pair derived from a label; distinct labels give unrelated keys.
    pub fn derive(label: &str) -> Self {
        Self::from_seed(hash(label.as_bytes()).0)
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn private_key(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

/// Ed25519 verification. A key that is not a valid curve point is an error,
/// never a `false` that could be confused with a bad signature.
pub fn verify(msg: &[u8], sig: &Signature, key: &PublicKey) -> Result<bool, CryptoError> {
    let vk = VerifyingKey::from_bytes(&key.0).map_err(|_| CryptoError::MalformedKey(key.to_string()))?;
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    Ok(vk.verify(msg, &sig).is_ok())
}

fn hash_pair(left: &Digest, right: &Digest) -> Digest {
    hash_concat([left.as_ref(), right.as_ref()])
}

/// Binary Merkle tree over an ordered leaf list. Odd-width levels pair the
/// last node with itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn new(leaves: Vec<Digest>) -> Result<Self, CryptoError> {
        if leaves.is_empty() {
            return Err(CryptoError::EmptyLeaves);
        }
        let mut levels = vec![leaves];
        while levels.last().map_or(0, Vec::len) > 1 {
            let prev = levels.last().expect("non-empty");
            let next = prev
                .chunks(2)
                .map(|pair| hash_pair(&pair[0], pair.get(1).unwrap_or(&pair[0])))
                .collect();
            levels.push(next);
        }
        Ok(MerkleTree { levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("at least the leaf level")[0]
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.levels[0]
    }

    /// Hash layers from the leaves (index 0) up to the root.
    pub fn levels(&self) -> &[Vec<Digest>] {
        &self.levels
    }
}

pub fn merkle_root(leaves: &[Digest]) -> Result<Digest, CryptoError> {
    MerkleTree::new(leaves.to_vec()).map(|t| t.root())
}
