use std::collections::BTreeSet;

use crate::crypto::{PublicKey, Signer};
use crate::identity::{KeyPair, ServiceKind};
use crate::ledger::{ConfigEntry, GenesisBlock, CONFIG_USER_KEY};

use super::message::{Message, RefusalCode};
use super::{Handled, Service};

/// Accept/deny lists over KYC blobs. With no allow list every blob not on
/// the deny list passes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KycPolicy {
    pub allow: Option<BTreeSet<Vec<u8>>>,
    pub deny: BTreeSet<Vec<u8>>,
}

impl KycPolicy {
    pub fn allow_all() -> Self {
        Self::default()
    }

    pub fn deny(mut self, blob: impl Into<Vec<u8>>) -> Self {
        self.deny.insert(blob.into());
        self
    }

    pub fn admits(&self, blob: &[u8]) -> bool {
        !self.deny.contains(blob) && self.allow.as_ref().map_or(true, |a| a.contains(blob))
    }
}

/// Checks KYC, inserts the user key if the request lacks it and signs the
/// header as the GBA. The user signature is left empty.
pub fn gba_issue(
    gba: &dyn Signer,
    policy: &KycPolicy,
    user_public_key: Option<PublicKey>,
    mut entries: Vec<ConfigEntry>,
    kyc: &[u8],
    now: u64,
) -> Result<GenesisBlock, (RefusalCode, String)> {
    if !policy.admits(kyc) {
        return Err((RefusalCode::KycDenied, "KYC blob is on the deny list".into()));
    }
    let present = entries.iter().find(|e| e.key == CONFIG_USER_KEY);
    match (present, user_public_key) {
        (Some(e), Some(k)) if e.value != k.0 => {
            return Err((
                RefusalCode::Malformed,
                "config user key differs from the requesting key".into(),
            ))
        }
        (Some(e), _) if PublicKey::from_slice(&e.value).is_none() => {
            return Err((RefusalCode::Malformed, "config user key is not 32 bytes".into()))
        }
        (Some(_), _) => {}
        (None, Some(k)) => entries.insert(0, ConfigEntry::keys(CONFIG_USER_KEY, &[k])),
        (None, None) => {
            return Err((
                RefusalCode::MissingUserKey,
                "no user public key in request or config".into(),
            ))
        }
    }
    let mut genesis = GenesisBlock::unsigned(entries, now);
    genesis.gba_sign(gba);
    Ok(genesis)
}

/// Issues a complete genesis block: GBA signature, then user countersignature.
pub fn issue_genesis(
    gba: &dyn Signer,
    policy: &KycPolicy,
    entries: Vec<ConfigEntry>,
    kyc: &[u8],
    now: u64,
    user: &dyn Signer,
) -> Result<GenesisBlock, (RefusalCode, String)> {
    let mut genesis = gba_issue(gba, policy, Some(user.public_key()), entries, kyc, now)?;
    genesis.user_countersign(user);
    Ok(genesis)
}

#[derive(Debug, Clone)]
pub struct Gba {
    keypair: KeyPair,
    policy: KycPolicy,
    issued: u64,
}

impl Gba {
    pub fn new(keypair: KeyPair, policy: KycPolicy) -> Self {
        Gba {
            keypair,
            policy,
            issued: 0,
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }
}

impl Service for Gba {
    fn kind(&self) -> ServiceKind {
        ServiceKind::Gba
    }

    fn handle(&mut self, message: Message, now: u64) -> Handled {
        let Message::GenesisRequest {
            user_public_key,
            entries,
            kyc,
        } = message
        else {
            return Handled::Reply(Message::refusal(
                RefusalCode::Unexpected,
                format!("GBA does not handle {}", message.name()),
            ));
        };
        Handled::Reply(
            match gba_issue(&self.keypair, &self.policy, user_public_key, entries, &kyc, now) {
                Ok(genesis) => {
                    self.issued += 1;
                    Message::GenesisResponse { genesis }
                }
                Err((code, detail)) => Message::refusal(code, detail),
            },
        )
    }

    fn clone_box(&self) -> Box<dyn Service> {
        Box::new(self.clone())
    }
}
