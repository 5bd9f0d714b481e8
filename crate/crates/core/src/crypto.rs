//! Hash and signature primitives shared by every module: SHA-256 digests,
//! Ed25519 public keys, key fingerprints and detached signatures.

use std::fmt;

use ed25519_dalek::{Verifier as _, VerifyingKey};
use sha2::{Digest as _, Sha256};

use crate::codec::{CodecError, Decode, Decoder, Encode, Encoder};

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const KEY_ID_LEN: usize = 8;
pub const SIGNATURE_LEN: usize = 64;

/// A SHA-256 output. The all-zero value is reserved as the "nothing here"
/// sentinel (genesis previous hash, empty Merkle tree).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; DIGEST_LEN]
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        Some(Digest(raw.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn sha256_concat(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Short public-key fingerprint carried inside signatures: the first eight
/// bytes of SHA-256(public key).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct KeyId(pub [u8; KEY_ID_LEN]);

impl KeyId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({})", self.to_hex())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn key_id(&self) -> KeyId {
        let d = sha256(&self.0);
        let mut id = [0u8; KEY_ID_LEN];
        id.copy_from_slice(&d.0[..KEY_ID_LEN]);
        KeyId(id)
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_slice(raw: &[u8]) -> Option<Self> {
        Some(PublicKey(raw.try_into().ok()?))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

/// Detached signature plus the fingerprint of the key that produced it.
///
/// The value is kept as a byte vector so that malformed lengths survive
/// decoding and are reported by validation instead of failing the parse.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature {
    pub signer: KeyId,
    pub bytes: Vec<u8>,
}

impl Signature {
    pub fn is_well_formed(&self) -> bool {
        self.bytes.len() == SIGNATURE_LEN
    }

    /// Flips the lowest bit of the first signature byte. Used by fault
    /// programs and tamper tests.
    pub fn flip_bit(&mut self) {
        match self.bytes.first_mut() {
            Some(b) => *b ^= 0x01,
            None => self.bytes.push(0x01),
        }
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Signature({} by {})",
            hex::encode(&self.bytes[..self.bytes.len().min(8)]),
            self.signer
        )
    }
}

/// Anything that can produce signatures: user key pairs, service providers,
/// counting wrappers in tests.
pub trait Signer {
    fn public_key(&self) -> PublicKey;

    fn sign(&self, message: &[u8]) -> Signature;

    fn key_id(&self) -> KeyId {
        self.public_key().key_id()
    }
}

impl<S: Signer + ?Sized> Signer for &S {
    fn public_key(&self) -> PublicKey {
        (**self).public_key()
    }

    fn sign(&self, message: &[u8]) -> Signature {
        (**self).sign(message)
    }
}

/// Verifies `sig` over `message` under `public`. Never panics: a wrong
/// fingerprint, a malformed length or an invalid point all yield `false`.
pub fn verify(public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    if sig.signer != public.key_id() {
        return false;
    }
    let Ok(raw) = <[u8; SIGNATURE_LEN]>::try_from(sig.bytes.as_slice()) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&raw);
    vk.verify(message, &sig).is_ok()
}

impl Encode for Digest {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for Digest {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.fixed("digest").map(Digest)
    }
}

impl Encode for KeyId {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for KeyId {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.fixed("key id").map(KeyId)
    }
}

impl Encode for PublicKey {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for PublicKey {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.fixed("public key").map(PublicKey)
    }
}

impl Encode for Signature {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.signer).bytes(&self.bytes);
    }
}

impl Decode for Signature {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Signature {
            signer: dec.value()?,
            bytes: dec.byte_vec()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(sha256_concat(&[b"a", b"bc"]), sha256(b"abc"));
    }

    #[test]
    fn zero_digest_is_sentinel() {
        assert!(Digest::ZERO.is_zero());
        assert!(!sha256(b"").is_zero());
    }

    #[test]
    fn malformed_signature_is_rejected_not_panicking() {
        let pk = PublicKey([9u8; 32]);
        let sig = Signature {
            signer: pk.key_id(),
            bytes: vec![1, 2, 3],
        };
        assert!(!verify(&pk, b"m", &sig));
        let sig = Signature {
            signer: pk.key_id(),
            bytes: vec![0xff; 64],
        };
        assert!(!verify(&pk, b"m", &sig));
    }
}
