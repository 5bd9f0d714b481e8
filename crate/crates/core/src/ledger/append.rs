use thiserror::Error;

use crate::codec::{CodecError, Decode, Decoder, Encode, Encoder};
use crate::crypto::{Digest, Signature, Signer};

use super::keys::KeyDirectory;
use super::types::{
    data_hash_of, exec_sig_root_of, hash_header, user_block_message, BlockHeaderCore,
    CompleteTransaction, DataBlock, Ledger,
};
use super::validate::{validate_candidate, validate_ledger, Finding};

/// A block as it leaves the ordering service: transactions in order, their
/// Merkle roots and the ordering signature, but no link to the chain yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCandidate {
    pub created_at: u64,
    pub data_hash: Digest,
    pub exec_sig_root: Digest,
    pub ordering_signature: Signature,
    pub transactions: Vec<CompleteTransaction>,
}

impl BlockCandidate {
    /// Computes both roots and signs the executing-signature root.
    pub fn order(transactions: Vec<CompleteTransaction>, created_at: u64, osp: &dyn Signer) -> Self {
        let exec_sig_root = exec_sig_root_of(&transactions);
        BlockCandidate {
            created_at,
            data_hash: data_hash_of(&transactions),
            exec_sig_root,
            ordering_signature: osp.sign(&exec_sig_root.0),
            transactions,
        }
    }

    /// The unsealed block this candidate becomes at `height` after `previous_hash`.
    pub fn into_block(self, previous_hash: Digest, height: u64) -> DataBlock {
        DataBlock {
            core: BlockHeaderCore {
                previous_hash,
                data_hash: self.data_hash,
                exec_sig_root: self.exec_sig_root,
                ordering_signature: Some(self.ordering_signature),
                height,
                created_at: self.created_at,
            },
            transactions: self.transactions,
            validation_signature: Signature::default(),
            user_signature: Signature::default(),
        }
    }
}

impl Encode for BlockCandidate {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u64(self.created_at)
            .value(&self.data_hash)
            .value(&self.exec_sig_root)
            .value(&self.ordering_signature)
            .list(&self.transactions);
    }
}

impl Decode for BlockCandidate {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(BlockCandidate {
            created_at: dec.u64()?,
            data_hash: dec.value()?,
            exec_sig_root: dec.value()?,
            ordering_signature: dec.value()?,
            transactions: dec.list()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AppendError {
    #[error("input ledger is invalid: {0}")]
    InvalidLedger(Finding),
    #[error("candidate block rejected: {0}")]
    InvalidCandidate(Finding),
}

/// Signs a block header as the validating provider.
pub fn validation_sign(block: &mut DataBlock, vsp: &dyn Signer) {
    block.validation_signature = vsp.sign(&hash_header(&block.core).0);
}

/// Countersigns a validated block as the user.
pub fn user_countersign(block: &mut DataBlock, user: &dyn Signer) {
    block.user_signature = user.sign(&user_block_message(&block.core, &block.validation_signature));
}

/// Links `candidate` to the tip of `ledger` and collects both closing
/// signatures, without checking anything.
pub fn seal_block(
    ledger: &Ledger,
    candidate: BlockCandidate,
    vsp: &dyn Signer,
    user: &dyn Signer,
) -> DataBlock {
    let mut block = candidate.into_block(ledger.tip_chain_hash(), ledger.tip_height() + 1);
    validation_sign(&mut block, vsp);
    user_countersign(&mut block, user);
    block
}

/// Appends `candidate` to a valid ledger.
///
/// The input ledger must validate and the candidate must satisfy the
/// conditions that do not depend on the closing signatures. The new block
/// stores the chain hash of the current tip, is signed by `vsp` over its
/// header hash and countersigned by `user`.
pub fn append_block(
    ledger: &Ledger,
    candidate: BlockCandidate,
    keys: &KeyDirectory,
    vsp: &dyn Signer,
    user: &dyn Signer,
) -> Result<Ledger, AppendError> {
    if let Some(f) = validate_ledger(ledger, keys).first_failure() {
        return Err(AppendError::InvalidLedger(f));
    }
    let unsealed = candidate
        .clone()
        .into_block(ledger.tip_chain_hash(), ledger.tip_height() + 1);
    if let Some(f) = validate_candidate(&unsealed, keys).first_failure() {
        return Err(AppendError::InvalidCandidate(f));
    }
    let block = seal_block(ledger, candidate, vsp, user);
    let mut next = ledger.clone();
    next.blocks.push(block);
    Ok(next)
}
