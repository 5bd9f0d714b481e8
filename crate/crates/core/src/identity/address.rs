use std::fmt;

use ripemd::{Digest as _, Ripemd160};
use thiserror::Error;

use crate::codec::{CodecError, Decode, Decoder, Encode, Encoder};
use crate::crypto::{sha256, PublicKey};

pub const ADDRESS_BODY_LEN: usize = 20;
pub const ADDRESS_BYTES_LEN: usize = 1 + ADDRESS_BODY_LEN + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AddressKind {
    Root,
    Ledger,
}

impl AddressKind {
    pub const fn version(self) -> u8 {
        match self {
            AddressKind::Root => 0x50,
            AddressKind::Ledger => 0x51,
        }
    }

    pub fn from_version(v: u8) -> Option<Self> {
        match v {
            0x50 => Some(AddressKind::Root),
            0x51 => Some(AddressKind::Ledger),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("not valid base58")]
    Base58,
    #[error("address must be {ADDRESS_BYTES_LEN} bytes, got {0}")]
    Length(usize),
    #[error("unknown address version {0:#04x}")]
    UnknownVersion(u8),
    #[error("address checksum mismatch")]
    Checksum,
    #[error("expected a {expected:?} address, got a {found:?} address")]
    WrongKind {
        expected: AddressKind,
        found: AddressKind,
    },
}

/// Bitcoin-style address: version byte, RIPEMD-160(SHA-256(public key)) and
/// a four byte double-SHA-256 checksum, rendered in Base58.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    kind: AddressKind,
    body: [u8; ADDRESS_BODY_LEN],
}

fn checksum(version: u8, body: &[u8; ADDRESS_BODY_LEN]) -> [u8; 4] {
    let mut pre = [0u8; 1 + ADDRESS_BODY_LEN];
    pre[0] = version;
    pre[1..].copy_from_slice(body);
    let twice = sha256(&sha256(&pre).0);
    let mut out = [0u8; 4];
    out.copy_from_slice(&twice.0[..4]);
    out
}

impl Address {
    pub fn from_public_key(kind: AddressKind, key: &PublicKey) -> Self {
        let inner = sha256(key.as_bytes());
        let body: [u8; ADDRESS_BODY_LEN] = Ripemd160::digest(inner.0).into();
        Address { kind, body }
    }

    pub fn root(key: &PublicKey) -> Self {
        Self::from_public_key(AddressKind::Root, key)
    }

    pub fn ledger(key: &PublicKey) -> Self {
        Self::from_public_key(AddressKind::Ledger, key)
    }

    pub fn kind(&self) -> AddressKind {
        self.kind
    }

    pub fn body(&self) -> &[u8; ADDRESS_BODY_LEN] {
        &self.body
    }

    pub fn checksum(&self) -> [u8; 4] {
        checksum(self.kind.version(), &self.body)
    }

    /// `version || body || checksum`.
    pub fn to_bytes(&self) -> [u8; ADDRESS_BYTES_LEN] {
        let mut out = [0u8; ADDRESS_BYTES_LEN];
        out[0] = self.kind.version();
        out[1..1 + ADDRESS_BODY_LEN].copy_from_slice(&self.body);
        out[1 + ADDRESS_BODY_LEN..].copy_from_slice(&self.checksum());
        out
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, AddressError> {
        if raw.len() != ADDRESS_BYTES_LEN {
            return Err(AddressError::Length(raw.len()));
        }
        let kind = AddressKind::from_version(raw[0]).ok_or(AddressError::UnknownVersion(raw[0]))?;
        let body: [u8; ADDRESS_BODY_LEN] = raw[1..1 + ADDRESS_BODY_LEN].try_into().unwrap();
        if raw[1 + ADDRESS_BODY_LEN..] != checksum(raw[0], &body) {
            return Err(AddressError::Checksum);
        }
        Ok(Address { kind, body })
    }

    pub fn to_base58(&self) -> String {
        bs58::encode(self.to_bytes()).into_string()
    }

    /// Parses any address kind.
    pub fn parse_any(text: &str) -> Result<Self, AddressError> {
        let raw = bs58::decode(text)
            .into_vec()
            .map_err(|_| AddressError::Base58)?;
        Address::from_bytes(&raw)
    }

    /// Parses and enforces the expected kind, so a root address can never
    /// be used where a ledger address is required and vice versa.
    pub fn parse(text: &str, expected: AddressKind) -> Result<Self, AddressError> {
        let addr = Self::parse_any(text)?;
        if addr.kind != expected {
            return Err(AddressError::WrongKind {
                expected,
                found: addr.kind,
            });
        }
        Ok(addr)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_base58())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({:?}, {})", self.kind, self.to_base58())
    }
}

impl Encode for Address {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bytes(&self.to_bytes());
    }
}

impl Decode for Address {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let raw = dec.bytes()?;
        Address::from_bytes(raw).map_err(|e| CodecError::Invalid(format!("address: {e}")))
    }
}
