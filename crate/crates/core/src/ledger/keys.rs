use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::codec::{CodecError, Decode, Decoder, Encode, Encoder};
use crate::crypto::{verify, KeyId, PublicKey, Signature, PUBLIC_KEY_LEN};
use crate::identity::{RootRecord, ServiceKind};

use super::types::{
    GenesisBlock, CONFIG_ESP_KEYS, CONFIG_GBA_KEY, CONFIG_OSP_KEYS, CONFIG_USER_KEY,
    CONFIG_VSP_KEYS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    User,
    Gba,
    Esp,
    Osp,
    Vsp,
}

impl Role {
    pub fn for_service(kind: ServiceKind) -> Option<Role> {
        match kind {
            ServiceKind::Gba => Some(Role::Gba),
            ServiceKind::Esp => Some(Role::Esp),
            ServiceKind::Osp => Some(Role::Osp),
            ServiceKind::Vsp => Some(Role::Vsp),
            ServiceKind::Storage => None,
        }
    }

    pub const ALL: [Role; 5] = [Role::User, Role::Gba, Role::Esp, Role::Osp, Role::Vsp];

    fn tag(self) -> u8 {
        Role::ALL.iter().position(|r| *r == self).unwrap() as u8
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::User => "user",
            Role::Gba => "GBA",
            Role::Esp => "executing",
            Role::Osp => "ordering",
            Role::Vsp => "validation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    key: PublicKey,
    roles: BTreeSet<Role>,
}

/// Public keys a verifier trusts, indexed by fingerprint, each tagged with
/// the roles it may sign for.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyDirectory {
    entries: BTreeMap<KeyId, Entry>,
    user: Option<PublicKey>,
}

/// Why a signature check failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SigError {
    Unregistered(KeyId),
    WrongRole { signer: KeyId, role: Role },
    Invalid,
}

impl fmt::Display for SigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigError::Unregistered(id) => write!(f, "unregistered signer {id}"),
            SigError::WrongRole { signer, role } => {
                write!(f, "signer {signer} is not registered as {role}")
            }
            SigError::Invalid => f.write_str("signature invalid"),
        }
    }
}

fn split_keys(raw: &[u8]) -> impl Iterator<Item = PublicKey> + '_ {
    raw.chunks_exact(PUBLIC_KEY_LEN)
        .filter_map(PublicKey::from_slice)
}

impl KeyDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, role: Role, key: PublicKey) -> &mut Self {
        self.entries
            .entry(key.key_id())
            .or_insert_with(|| Entry {
                key,
                roles: BTreeSet::new(),
            })
            .roles
            .insert(role);
        if role == Role::User {
            self.user = Some(key);
        }
        self
    }

    pub fn with(mut self, role: Role, key: PublicKey) -> Self {
        self.insert(role, key);
        self
    }

    /// Keys named in the genesis configuration.
    pub fn from_genesis(genesis: &GenesisBlock) -> Self {
        let mut dir = KeyDirectory::new();
        dir.add_genesis(genesis);
        dir
    }

    pub fn add_genesis(&mut self, genesis: &GenesisBlock) -> &mut Self {
        for (name, role) in [
            (CONFIG_USER_KEY, Role::User),
            (CONFIG_GBA_KEY, Role::Gba),
            (CONFIG_ESP_KEYS, Role::Esp),
            (CONFIG_OSP_KEYS, Role::Osp),
            (CONFIG_VSP_KEYS, Role::Vsp),
        ] {
            if let Some(raw) = genesis.config_value(name) {
                for k in split_keys(raw) {
                    self.insert(role, k);
                }
            }
        }
        self
    }

    /// Provider keys registered in the user's root record.
    pub fn add_root_record(&mut self, record: &RootRecord) -> &mut Self {
        for pk in record.service_provider_keys.values() {
            if let Some(role) = Role::for_service(pk.kind) {
                self.insert(role, pk.public_key);
            }
        }
        self
    }

    pub fn for_ledger(genesis: &GenesisBlock, record: Option<&RootRecord>) -> Self {
        let mut dir = Self::from_genesis(genesis);
        if let Some(r) = record {
            dir.add_root_record(r);
        }
        dir
    }

    pub fn merge(&mut self, other: &KeyDirectory) -> &mut Self {
        for e in other.entries.values() {
            for role in &e.roles {
                self.insert(*role, e.key);
            }
        }
        if let Some(u) = other.user {
            self.user = Some(u);
        }
        self
    }

    pub fn user(&self) -> Option<PublicKey> {
        self.user
    }

    pub fn get(&self, id: &KeyId) -> Option<(PublicKey, &BTreeSet<Role>)> {
        self.entries.get(id).map(|e| (e.key, &e.roles))
    }

    pub fn has_role(&self, id: &KeyId, role: Role) -> bool {
        self.entries
            .get(id)
            .is_some_and(|e| e.roles.contains(&role))
    }

    pub fn keys_with_role(&self, role: Role) -> impl Iterator<Item = PublicKey> + '_ {
        self.entries
            .values()
            .filter(move |e| e.roles.contains(&role))
            .map(|e| e.key)
    }

    /// Every `(role, key)` pair, ordered by fingerprint then role.
    pub fn entries(&self) -> Vec<(Role, PublicKey)> {
        self.entries
            .values()
            .flat_map(|e| e.roles.iter().map(move |r| (*r, e.key)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Resolves the signer of `sig`, checks it holds `role` and verifies.
    pub fn check(&self, role: Role, message: &[u8], sig: &Signature) -> Result<(), SigError> {
        let entry = self
            .entries
            .get(&sig.signer)
            .ok_or(SigError::Unregistered(sig.signer))?;
        if !entry.roles.contains(&role) {
            return Err(SigError::WrongRole {
                signer: sig.signer,
                role,
            });
        }
        if verify(&entry.key, message, sig) {
            Ok(())
        } else {
            Err(SigError::Invalid)
        }
    }
}

impl Encode for KeyDirectory {
    fn encode_to(&self, enc: &mut Encoder) {
        let entries = self.entries();
        enc.count(entries.len());
        for (role, key) in entries {
            enc.tag(role.tag()).value(&key);
        }
        enc.option(self.user.as_ref());
    }
}

impl Decode for KeyDirectory {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let mut dir = KeyDirectory::new();
        for _ in 0..dec.count()? {
            let tag = dec.tag()?;
            let role = *Role::ALL
                .get(tag as usize)
                .ok_or(CodecError::UnknownTag { what: "role", tag })?;
            let key: PublicKey = dec.value()?;
            dir.insert(role, key);
        }
        dir.user = dec.option()?;
        Ok(dir)
    }
}
