//! Block and ledger model: canonical encoding, Merkle roots, validity
//! predicates, the append algorithm and tamper localization.

mod append;
mod file;
mod keys;
mod merkle;
mod tamper;
mod types;
mod validate;


pub use append::{
    append_block, seal_block, user_countersign, validation_sign, AppendError, BlockCandidate,
};
pub use file::{
    decode_chain_file, decode_ledger_file, encode_ledger_file, ledger_file_body, load_ledger,
    save_ledger, FileError, LEDGER_MAGIC,
};
pub use keys::{KeyDirectory, Role, SigError};
pub use merkle::merkle_root;
pub use tamper::{
    colluding_rewrite, tamper_scan, tamper_scan_bytes, tamper_scan_chain,
    Colluders, CountingSigner,
};
pub use types::{
    chain_hash_parts, config_hash, data_hash_of, exec_sig_root_of, hash_header,
    user_block_message, Block, BlockHeaderCore, Chain, CompleteTransaction, ConfigEntry,
    DataBlock, GenesisBlock, Ledger, Transaction, CONFIG_ESP_KEYS, CONFIG_GBA_KEY,
    CONFIG_OSP_KEYS, CONFIG_USER_KEY, CONFIG_VSP_KEYS, MAX_PAYLOAD_LEN, ZERO_OUTPUT,
};
pub use validate::{
    scan_all, validate_candidate, validate_chain, validate_connection, validate_data_block,
    validate_genesis_block, validate_ledger, CheckResult, Condition, Finding, ValidationReport,
};

/// Chain hash of either kind of block.
pub fn chain_hash(block: &Block) -> crate::crypto::Digest {
    block.chain_hash()
}
