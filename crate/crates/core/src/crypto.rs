//! Pluggable message authentication.
//!
//! `SignerKind::Test` is a keyed MAC where the simulator plays trusted dealer;
//! verification material is held inside [`PublicKey`] and never exposed.
//! `SignerKind::Schnorr` is a small asymmetric Schnorr scheme over the
//! multiplicative group mod 2^61-1. Neither is meant to be cryptographically
//! strong; both satisfy the sign/verify contract the protocols rely on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::channel::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SignerKind {
    #[default]
    #[serde(rename = "test")]
    Test,
    #[serde(rename = "ecdsa-like")]
    Schnorr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub signer: NodeId,
    pub tag: [u8; 16],
}

#[derive(Clone)]
enum Secret {
    Mac([u8; 32]),
    Schnorr(u64),
}

#[derive(Clone, PartialEq, Eq)]
enum Material {
    Mac([u8; 32]),
    Schnorr(u64),
}

/// Private signing key of one node.
#[derive(Clone)]
pub struct SigningKey {
    node: NodeId,
    secret: Secret,
}

impl SigningKey {
    pub fn node(&self) -> NodeId {
        self.node
    }
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigningKey({})", self.node.0)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    node: NodeId,
    material: Material,
}

impl PublicKey {
    pub fn node(&self) -> NodeId {
        self.node
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({})", self.node.0)
    }
}

pub fn hash(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    let mut buf = [0u8; 32];
    buf.copy_from_slice(&out[..32]);
    buf
}

fn hash_u64(parts: &[&[u8]]) -> u64 {
    u64::from_le_bytes(hash(parts)[..8].try_into().expect("8 bytes"))
}

const P: u64 = (1 << 61) - 1;
const ORDER: u64 = P - 1;
const G: u64 = 37;

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((u128::from(a) * u128::from(b)) % u128::from(m)) as u64
}

fn pow_mod(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1u64;
    base %= P;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, P);
        }
        base = mul_mod(base, base, P);
        exp >>= 1;
    }
    acc
}

pub fn sign(key: &SigningKey, digest: &[u8]) -> Signature {
    let node = key.node.0.to_le_bytes();
    let tag = match &key.secret {
        Secret::Mac(secret) => {
            let full = hash(&[b"rc-mac", secret, &node, digest]);
            full[..16].try_into().expect("16 bytes")
        }
        Secret::Schnorr(x) => {
            let y = pow_mod(G, *x);
            let k = hash_u64(&[b"nonce", &x.to_le_bytes(), digest]) % ORDER;
            let r = pow_mod(G, k);
            let e = hash_u64(&[b"chal", &r.to_le_bytes(), &y.to_le_bytes(), digest]) % ORDER;
            let s = (k as u128 + mul_mod(e, *x, ORDER) as u128) % ORDER as u128;
            let mut tag = [0u8; 16];
            tag[..8].copy_from_slice(&r.to_le_bytes());
            tag[8..].copy_from_slice(&(s as u64).to_le_bytes());
            tag
        }
    };
    Signature {
        signer: key.node,
        tag,
    }
}

pub fn verify(public: &PublicKey, digest: &[u8], signature: &Signature) -> bool {
    if signature.signer != public.node {
        return false;
    }
    match &public.material {
        Material::Mac(secret) => {
            let full = hash(&[b"rc-mac", secret, &public.node.0.to_le_bytes(), digest]);
            full[..16] == signature.tag
        }
        Material::Schnorr(y) => {
            let r = u64::from_le_bytes(signature.tag[..8].try_into().expect("8 bytes"));
            let s = u64::from_le_bytes(signature.tag[8..].try_into().expect("8 bytes"));
            if r == 0 || r >= P || s >= ORDER {
                return false;
            }
            let e = hash_u64(&[b"chal", &r.to_le_bytes(), &y.to_le_bytes(), digest]) % ORDER;
            pow_mod(G, s) == mul_mod(r, pow_mod(*y, e), P)
        }
    }
}

/// Trusted dealer: per-node signing keys and the public directory.
#[derive(Clone)]
pub struct Keyring {
    kind: SignerKind,
    signing: BTreeMap<NodeId, SigningKey>,
    public: BTreeMap<NodeId, PublicKey>,
}

impl Keyring {
    pub fn deal(kind: SignerKind, nodes: impl IntoIterator<Item = NodeId>, seed: u64) -> Self {
        let mut signing = BTreeMap::new();
        let mut public = BTreeMap::new();
        for node in nodes {
            let secret = hash(&[b"key", &seed.to_le_bytes(), &node.0.to_le_bytes()]);
            let (sk, pk) = match kind {
                SignerKind::Test => (Secret::Mac(secret), Material::Mac(secret)),
                SignerKind::Schnorr => {
                    let x = 1 + u64::from_le_bytes(secret[..8].try_into().expect("8 bytes"))
                        % (ORDER - 1);
                    (Secret::Schnorr(x), Material::Schnorr(pow_mod(G, x)))
                }
            };
            signing.insert(node, SigningKey { node, secret: sk });
            public.insert(node, PublicKey { node, material: pk });
        }
        Keyring {
            kind,
            signing,
            public,
        }
    }

    pub fn kind(&self) -> SignerKind {
        self.kind
    }

    pub fn signing_key(&self, node: NodeId) -> Option<&SigningKey> {
        self.signing.get(&node)
    }

    pub fn public_key(&self, node: NodeId) -> Option<&PublicKey> {
        self.public.get(&node)
    }

    /// Verifies against the signer's registered key.
    pub fn verify(&self, digest: &[u8], signature: &Signature) -> bool {
        self.public
            .get(&signature.signer)
            .is_some_and(|pk| verify(pk, digest, signature))
    }
}
