//! Seed phrases, deterministic key derivation, addresses and the root record.

mod address;
mod keys;
mod phrase;
mod root;
pub mod wordlist;

use thiserror::Error;

pub use address::{Address, AddressError, AddressKind, ADDRESS_BODY_LEN, ADDRESS_BYTES_LEN};
pub use keys::{
    derive_ledger_keypair, derive_provider_keypair, derive_root_keypair, sign, KeyPair,
    MAX_LEDGER_INDEX,
};
pub use phrase::{SeedPhrase, MIN_WORDS};
pub use root::{LedgerEntry, ProviderKey, RootRecord, ServiceKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("a seed phrase needs at least {MIN_WORDS} words, got {count}")]
    PhraseTooShort { count: usize },
    #[error("word {index} ({word:?}) is not in the word list")]
    UnknownWord { index: usize, word: String },
    #[error("ledger index {0} is out of range")]
    IndexOutOfRange(u64),
    #[error(transparent)]
    Address(#[from] AddressError),
    #[error("ledger {0} is already registered")]
    DuplicateLedger(String),
    #[error("root address does not match the root key")]
    RootMismatch,
    #[error("ledger {address} at index {index} is not derived from the root key")]
    LedgerNotDerived { index: u64, address: String },
}
