//! Schnorr signatures in the order-q subgroup of a 62-bit safe-prime field.
//!
//! This is a structural stand-in for real public-key cryptography: it has
//! the right shape (secret signs, public verifies, tampering is detected)
//! but the parameters are far too small to resist attack.

use rand::RngCore;
use sha2::{Digest, Sha256};

/// Safe prime: `P = 2Q + 1` with `Q` prime.
pub const P: u64 = 4_611_686_018_427_377_339;
pub const Q: u64 = (P - 1) / 2;
/// Generates the order-`Q` subgroup (a quadratic residue).
pub const G: u64 = 4;

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub(crate) fn powmod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mulmod(acc, base, m);
        }
        base = mulmod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Hashes the parts (each length-prefixed) to a nonzero scalar mod `Q`.
fn hash_to_scalar(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    let d = h.finalize();
    let v = u64::from_be_bytes(d[..8].try_into().expect("8 bytes")) % Q;
    if v == 0 {
        1
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub e: u64,
    pub s: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(pub u64);

impl PublicKey {
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        if sig.e == 0 || sig.e >= Q || sig.s >= Q || self.0 <= 1 || self.0 >= P {
            return false;
        }
        // y has order Q, so y^(Q - e) = y^(-e).
        let r = mulmod(powmod(G, sig.s, P), powmod(self.0, Q - sig.e, P), P);
        hash_to_scalar(&[&r.to_be_bytes(), msg]) == sig.e
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(pub(crate) u64);

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        loop {
            let x = rng.next_u64() % Q;
            if x > 1 {
                return SecretKey(x);
            }
        }
    }

    pub fn from_scalar(x: u64) -> Option<Self> {
        (x > 1 && x < Q).then_some(SecretKey(x))
    }

    pub fn scalar(&self) -> u64 {
        self.0
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(powmod(G, self.0, P))
    }

    /// Deterministic nonce derived from the secret and the message.
    pub fn sign(&self, msg: &[u8]) -> Signature {
        let k = hash_to_scalar(&[b"nonce", &self.0.to_be_bytes(), msg]);
        let r = powmod(G, k, P);
        let e = hash_to_scalar(&[&r.to_be_bytes(), msg]);
        let s = ((k as u128 + mulmod(self.0, e, Q) as u128) % Q as u128) as u64;
        Signature { e, s }
    }
}
