use std::cell::Cell;

use crate::crypto::{PublicKey, Signature, Signer};

use super::append::{user_countersign, validation_sign};
use super::keys::{KeyDirectory, Role};
use super::types::{
    config_hash, data_hash_of, exec_sig_root_of, hash_header, user_block_message, Block, Chain,
    Ledger,
};
use super::validate::{scan_all, Condition, Finding};

/// Every failed condition in the ledger. Empty iff the ledger is valid.
pub fn tamper_scan(l: &Ledger, keys: &KeyDirectory) -> Vec<Finding> {
    scan_all(&l.to_chain(), keys)
}

pub fn tamper_scan_chain(chain: &Chain, keys: &KeyDirectory) -> Vec<Finding> {
    scan_all(chain, keys)
}

/// Scans a canonically encoded ledger. Blocks that cannot be decoded are
/// reported as structural findings at their position; everything decoded
/// before them is scanned normally.
pub fn tamper_scan_bytes(bytes: &[u8], keys: &KeyDirectory) -> Vec<Finding> {
    let (chain, error) = match Chain::decode_lenient(bytes) {
        Ok(v) => v,
        Err(e) => {
            return vec![Finding {
                height: 0,
                condition: Condition::Structural,
                reason: format!("ledger header unreadable: {e}"),
            }]
        }
    };
    let mut findings = if chain.blocks.is_empty() {
        Vec::new()
    } else {
        scan_all(&chain, keys)
    };
    if let Some((index, e)) = error {
        findings.push(Finding {
            height: index as u64,
            condition: Condition::Structural,
            reason: format!("block does not decode: {e}"),
        });
        findings.sort_by_key(|f| f.height);
    }
    findings
}

/// Wraps a signer and counts how often it signs.
pub struct CountingSigner<S> {
    inner: S,
    count: Cell<u64>,
}

impl<S: Signer> CountingSigner<S> {
    pub fn new(inner: S) -> Self {
        CountingSigner {
            inner,
            count: Cell::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.get()
    }
}

impl<S: Signer> Signer for CountingSigner<S> {
    fn public_key(&self) -> PublicKey {
        self.inner.public_key()
    }

    fn sign(&self, message: &[u8]) -> Signature {
        self.count.set(self.count.get() + 1);
        self.inner.sign(message)
    }
}

/// Signers an attacker would need to control to rewrite history.
pub struct Colluders<'a> {
    pub user: &'a dyn Signer,
    pub gba: &'a dyn Signer,
    pub esp: &'a dyn Signer,
    pub osp: &'a dyn Signer,
    pub vsp: &'a dyn Signer,
}

/// Applies `mutate` to the block at position `index` (0 is the genesis
/// block), then repairs the ledger with the colluders' keys so that it
/// validates again. Only signatures that no longer verify are redone, and
/// every later block needs its validation and user signatures redone
/// because its previous hash changes.
pub fn colluding_rewrite(
    ledger: &Ledger,
    index: usize,
    mutate: impl FnOnce(&mut Block),
    keys: &KeyDirectory,
    c: &Colluders<'_>,
) -> Ledger {
    let mut chain = ledger.to_chain();
    mutate(&mut chain.blocks[index]);

    match &mut chain.blocks[index] {
        Block::Genesis(g) => {
            g.core.data_hash = config_hash(&g.config);
            g.gba_signature = c.gba.sign(&hash_header(&g.core).0);
            g.user_signature = c.user.sign(&user_block_message(&g.core, &g.gba_signature));
        }
        Block::Data(b) => {
            for ct in &mut b.transactions {
                let tx_ok = keys
                    .check(Role::User, &ct.inner.signing_bytes(), &ct.inner.user_signature)
                    .is_ok();
                if !tx_ok {
                    ct.inner.user_signature = c.user.sign(&ct.inner.signing_bytes());
                }
                let exec_ok = keys
                    .check(Role::Esp, &ct.signing_bytes(), &ct.executing_signature)
                    .is_ok();
                if !exec_ok {
                    ct.executing_signature = c.esp.sign(&ct.signing_bytes());
                }
            }
            b.core.data_hash = data_hash_of(&b.transactions);
            let root = exec_sig_root_of(&b.transactions);
            let ordering_ok = b.core.exec_sig_root == root
                && b.core
                    .ordering_signature
                    .as_ref()
                    .is_some_and(|s| keys.check(Role::Osp, &root.0, s).is_ok());
            if !ordering_ok {
                b.core.exec_sig_root = root;
                b.core.ordering_signature = Some(c.osp.sign(&root.0));
            }
            validation_sign(b, c.vsp);
            user_countersign(b, c.user);
        }
    }

    for j in index + 1..chain.blocks.len() {
        let (prev_hash, prev_height) = {
            let prev = &chain.blocks[j - 1];
            (prev.chain_hash(), prev.height())
        };
        if let Block::Data(b) = &mut chain.blocks[j] {
            b.core.previous_hash = prev_hash;
            b.core.height = prev_height + 1;
            validation_sign(b, c.vsp);
            user_countersign(b, c.user);
        }
    }
    chain
        .into_ledger()
        .expect("rewrite keeps the ledger shape")
}
