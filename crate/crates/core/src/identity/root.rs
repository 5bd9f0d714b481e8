use std::collections::BTreeMap;
use std::fmt;

use super::address::{Address, AddressKind};
use super::keys::{derive_ledger_keypair, KeyPair};
use super::IdentityError;
use crate::codec::{CodecError, Decode, Decoder, Encode, Encoder};
use crate::crypto::PublicKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ServiceKind {
    Gba,
    Esp,
    Osp,
    Vsp,
    Storage,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 5] = [
        ServiceKind::Gba,
        ServiceKind::Esp,
        ServiceKind::Osp,
        ServiceKind::Vsp,
        ServiceKind::Storage,
    ];

    pub fn tag(self) -> u8 {
        match self {
            ServiceKind::Gba => 0,
            ServiceKind::Esp => 1,
            ServiceKind::Osp => 2,
            ServiceKind::Vsp => 3,
            ServiceKind::Storage => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceKind::Gba => "gba",
            ServiceKind::Esp => "esp",
            ServiceKind::Osp => "osp",
            ServiceKind::Vsp => "vsp",
            ServiceKind::Storage => "storage",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Encode for ServiceKind {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.tag(self.tag());
    }
}

impl Decode for ServiceKind {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let tag = dec.tag()?;
        ServiceKind::from_tag(tag).ok_or(CodecError::UnknownTag {
            what: "service kind",
            tag,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProviderKey {
    pub kind: ServiceKind,
    pub public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub index: u64,
    pub address: Address,
}

/// Public directory kept by storage for one user: the root address, every
/// ledger address issued under it and the provider keys the user trusts.
/// Holds no secret material.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootRecord {
    pub root_address: Address,
    pub ledgers: Vec<LedgerEntry>,
    pub service_provider_keys: BTreeMap<String, ProviderKey>,
}

impl RootRecord {
    pub fn new(root_public: &PublicKey) -> Self {
        RootRecord {
            root_address: Address::root(root_public),
            ledgers: Vec::new(),
            service_provider_keys: BTreeMap::new(),
        }
    }

    pub fn ledger_addresses(&self) -> impl Iterator<Item = &Address> {
        self.ledgers.iter().map(|e| &e.address)
    }

    pub fn contains_ledger(&self, address: &Address) -> bool {
        self.ledgers.iter().any(|e| &e.address == address)
    }

    /// Registers a ledger address. Fails if the index or address is taken.
    pub fn add_ledger(&mut self, index: u64, address: Address) -> Result<(), IdentityError> {
        if address.kind() != AddressKind::Ledger {
            return Err(IdentityError::Address(super::AddressError::WrongKind {
                expected: AddressKind::Ledger,
                found: address.kind(),
            }));
        }
        if self
            .ledgers
            .iter()
            .any(|e| e.index == index || e.address == address)
        {
            return Err(IdentityError::DuplicateLedger(address.to_base58()));
        }
        self.ledgers.push(LedgerEntry { index, address });
        Ok(())
    }

    pub fn add_provider_key(&mut self, id: impl Into<String>, kind: ServiceKind, key: PublicKey) {
        self.service_provider_keys.insert(
            id.into(),
            ProviderKey {
                kind,
                public_key: key,
            },
        );
    }

    /// Re-derives every ledger address from `root` and checks the root
    /// address itself.
    pub fn verify(&self, root: &KeyPair) -> Result<(), IdentityError> {
        if Address::root(&root.public()) != self.root_address {
            return Err(IdentityError::RootMismatch);
        }
        for entry in &self.ledgers {
            let child = derive_ledger_keypair(root, entry.index)?;
            if Address::ledger(&child.public()) != entry.address {
                return Err(IdentityError::LedgerNotDerived {
                    index: entry.index,
                    address: entry.address.to_base58(),
                });
            }
        }
        Ok(())
    }
}

impl Encode for LedgerEntry {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u64(self.index).value(&self.address);
    }
}

impl Decode for LedgerEntry {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(LedgerEntry {
            index: dec.u64()?,
            address: dec.value()?,
        })
    }
}

impl Encode for RootRecord {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.root_address).list(&self.ledgers);
        enc.count(self.service_provider_keys.len());
        for (id, pk) in &self.service_provider_keys {
            enc.text(id).value(&pk.kind).value(&pk.public_key);
        }
    }
}

impl Decode for RootRecord {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let root_address = dec.value()?;
        let ledgers = dec.list()?;
        let n = dec.count()?;
        let mut service_provider_keys = BTreeMap::new();
        for _ in 0..n {
            let id = dec.text()?;
            let kind = dec.value()?;
            let public_key = dec.value()?;
            if service_provider_keys
                .insert(id, ProviderKey { kind, public_key })
                .is_some()
            {
                return Err(CodecError::Invalid("duplicate provider id".into()));
            }
        }
        Ok(RootRecord {
            root_address,
            ledgers,
            service_provider_keys,
        })
    }
}
