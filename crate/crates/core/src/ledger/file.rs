use std::path::Path;

use thiserror::Error;

use crate::codec::{CodecError, Decode, Decoder, Encode};

use super::types::{Chain, Ledger};

pub const LEDGER_MAGIC: &[u8; 4] = b"PBL1";

#[derive(Debug, Error)]
pub enum FileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a ledger file: {0}")]
    Codec(#[from] CodecError),
}

pub fn encode_ledger_file(l: &Ledger) -> Vec<u8> {
    let mut out = LEDGER_MAGIC.to_vec();
    out.extend_from_slice(&l.canonical_bytes());
    out
}

/// Strips the magic and returns the encoded ledger body.
pub fn ledger_file_body(bytes: &[u8]) -> Result<&[u8], CodecError> {
    bytes.strip_prefix(LEDGER_MAGIC).ok_or(CodecError::BadMagic)
}

pub fn decode_ledger_file(bytes: &[u8]) -> Result<Ledger, CodecError> {
    Ledger::from_canonical_bytes(ledger_file_body(bytes)?)
}

/// Like [`decode_ledger_file`] but accepts any block sequence, for audits
/// of files that may have been tampered with.
pub fn decode_chain_file(bytes: &[u8]) -> Result<Chain, CodecError> {
    let mut dec = Decoder::new(ledger_file_body(bytes)?);
    let chain = Chain::decode_from(&mut dec)?;
    dec.finish()?;
    Ok(chain)
}

pub fn save_ledger(path: &Path, l: &Ledger) -> Result<(), FileError> {
    std::fs::write(path, encode_ledger_file(l))?;
    Ok(())
}

pub fn load_ledger(path: &Path) -> Result<Ledger, FileError> {
    Ok(decode_ledger_file(&std::fs::read(path)?)?)
}
