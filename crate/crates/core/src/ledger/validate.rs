use std::fmt;

use crate::crypto::{verify, PublicKey, Signature};
use crate::identity::Address;

use super::keys::{KeyDirectory, Role};
use super::types::{
    config_hash, data_hash_of, exec_sig_root_of, hash_header, user_block_message, Block,
    BlockHeaderCore, Chain, DataBlock, GenesisBlock, Ledger, MAX_PAYLOAD_LEN, ZERO_OUTPUT,
};

/// Which rule a check belongs to.
///
/// Genesis blocks have four numbered conditions:
/// 1. required fields present and consistent,
/// 2. previous hash all zeros,
/// 3. GBA signature over the header hash,
/// 4. user signature over header hash and GBA signature.
///
/// Data blocks have six:
/// 1. required fields present,
/// 2. data hash is the Merkle root of the transactions,
/// 3. every transaction's user and executing signature verifies,
/// 4. executing-signature root is correct and the ordering signature covers it,
/// 5. validation signature over the header hash,
/// 6. user signature over header hash and validation signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Genesis(u8),
    Block(u8),
    Connection,
    SingleGenesis,
    LedgerAddress,
    Structural,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Genesis(n) => write!(f, "genesis-{n}"),
            Condition::Block(n) => write!(f, "block-{n}"),
            Condition::Connection => f.write_str("connection"),
            Condition::SingleGenesis => f.write_str("single-genesis"),
            Condition::LedgerAddress => f.write_str("ledger-address"),
            Condition::Structural => f.write_str("structural"),
        }
    }
}

/// A failed check. `height` is the position of the block in the chain,
/// for connections the position of the later block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub height: u64,
    pub condition: Condition,
    pub reason: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block {}: {}: {}", self.height, self.condition, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub height: u64,
    pub condition: Condition,
    pub outcome: Result<(), String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub results: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.results.iter().all(|r| r.outcome.is_ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = Finding> + '_ {
        self.results.iter().filter_map(|r| match &r.outcome {
            Ok(()) => None,
            Err(reason) => Some(Finding {
                height: r.height,
                condition: r.condition,
                reason: reason.clone(),
            }),
        })
    }

    pub fn first_failure(&self) -> Option<Finding> {
        self.failures().next()
    }

    /// `Some(true)` if every evaluated instance of `condition` passed,
    /// `None` if it was never evaluated.
    pub fn passed(&self, condition: Condition) -> Option<bool> {
        let mut seen = false;
        for r in self.results.iter().filter(|r| r.condition == condition) {
            seen = true;
            if r.outcome.is_err() {
                return Some(false);
            }
        }
        seen.then_some(true)
    }
}

struct Scan<'a> {
    keys: &'a KeyDirectory,
    exhaustive: bool,
    report: ValidationReport,
}

impl Scan<'_> {
    /// Records one outcome and reports whether scanning should go on.
    fn record(&mut self, height: u64, condition: Condition, outcome: Result<(), String>) -> bool {
        let failed = outcome.is_err();
        self.report.results.push(CheckResult {
            height,
            condition,
            outcome,
        });
        self.exhaustive || !failed
    }

    fn record_all(&mut self, height: u64, checks: Vec<(Condition, Result<(), String>)>) -> bool {
        for (c, outcome) in checks {
            if !self.record(height, c, outcome) {
                return false;
            }
        }
        true
    }
}

fn require(ok: bool, reason: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(reason())
    }
}

fn well_formed(sig: &Signature, what: &str) -> Result<(), String> {
    require(sig.is_well_formed(), || {
        format!("{what} signature missing or malformed ({} bytes)", sig.bytes.len())
    })
}

fn check_key(key: &PublicKey, message: &[u8], sig: &Signature, what: &str) -> Result<(), String> {
    if sig.signer != key.key_id() {
        return Err(format!(
            "{what} signature made by {} instead of {}",
            sig.signer,
            key.key_id()
        ));
    }
    require(verify(key, message, sig), || format!("{what} signature invalid"))
}

fn check_role(
    keys: &KeyDirectory,
    role: Role,
    message: &[u8],
    sig: &Signature,
    what: &str,
) -> Result<(), String> {
    keys.check(role, message, sig).map_err(|e| match e {
        super::keys::SigError::Invalid => format!("{what} signature invalid"),
        other => format!("{what} signature: {other}"),
    })
}

fn genesis_checks(
    g: &GenesisBlock,
    gba: Result<PublicKey, String>,
    user: Result<PublicKey, String>,
) -> Vec<(Condition, Result<(), String>)> {
    let fields = (|| {
        require(g.user_public_key().is_some(), || {
            "config lacks a 32-byte user_public_key".into()
        })?;
        require(g.core.height == 0, || {
            format!("genesis height is {}", g.core.height)
        })?;
        require(g.core.ordering_signature.is_none(), || {
            "genesis carries an ordering signature".into()
        })?;
        require(g.core.exec_sig_root.is_zero(), || {
            "genesis executing-signature root is not zero".into()
        })?;
        require(g.core.data_hash == config_hash(&g.config), || {
            "data hash does not match the configuration".into()
        })?;
        well_formed(&g.gba_signature, "GBA")?;
        well_formed(&g.user_signature, "user")
    })();
    let zero_prev = require(g.core.previous_hash.is_zero(), || {
        "previous hash is not all zeros".into()
    });
    let header = hash_header(&g.core);
    let gba_sig = gba.and_then(|k| check_key(&k, &header.0, &g.gba_signature, "GBA"));
    let user_sig = user.and_then(|k| {
        check_key(
            &k,
            &user_block_message(&g.core, &g.gba_signature),
            &g.user_signature,
            "user",
        )
    });
    vec![
        (Condition::Genesis(1), fields),
        (Condition::Genesis(2), zero_prev),
        (Condition::Genesis(3), gba_sig),
        (Condition::Genesis(4), user_sig),
    ]
}

/// Checks the four genesis conditions against explicit GBA and user keys.
pub fn validate_genesis_block(
    g: &GenesisBlock,
    gba_key: &PublicKey,
    user_key: &PublicKey,
) -> ValidationReport {
    let results = genesis_checks(g, Ok(*gba_key), Ok(*user_key))
        .into_iter()
        .map(|(condition, outcome)| CheckResult {
            height: 0,
            condition,
            outcome,
        })
        .collect();
    ValidationReport { results }
}

fn resolve_gba(g: &GenesisBlock, keys: &KeyDirectory) -> Result<PublicKey, String> {
    let signer = g.gba_signature.signer;
    match keys.get(&signer) {
        Some((key, roles)) if roles.contains(&Role::Gba) => Ok(key),
        Some(_) => Err(format!("GBA signature: signer {signer} is not registered as GBA")),
        None => Err(format!("GBA signature: unregistered signer {signer}")),
    }
}

fn resolve_user(keys: &KeyDirectory, genesis: Option<&GenesisBlock>) -> Result<PublicKey, String> {
    keys.user()
        .or_else(|| genesis.and_then(GenesisBlock::user_public_key))
        .ok_or_else(|| "no user key available".to_string())
}

/// Conditions 1 to 4 of a data block. With `sealed == false` the
/// validation and user signatures are not required yet.
fn body_checks(
    b: &DataBlock,
    keys: &KeyDirectory,
    sealed: bool,
) -> Vec<(Condition, Result<(), String>)> {
    let fields = (|| {
        let ordering = b.core.ordering_signature.as_ref().ok_or_else(|| {
            "ordering signature missing".to_string()
        })?;
        well_formed(ordering, "ordering")?;
        if sealed {
            well_formed(&b.validation_signature, "validation")?;
            well_formed(&b.user_signature, "user")?;
        }
        require(!b.transactions.is_empty(), || "block has no transactions".into())?;
        for (i, ct) in b.transactions.iter().enumerate() {
            let tx = &ct.inner;
            require(tx.payload.len() <= MAX_PAYLOAD_LEN, || {
                format!("transaction {i}: payload of {} bytes exceeds the limit", tx.payload.len())
            })?;
            well_formed(&tx.user_signature, &format!("transaction {i}: user"))?;
            well_formed(&ct.executing_signature, &format!("transaction {i}: executing"))?;
            for a in &tx.attestations {
                well_formed(a, &format!("transaction {i}: attestation"))?;
            }
            match &tx.chaincode_id {
                None => require(ct.output == ZERO_OUTPUT, || {
                    format!("transaction {i}: output must be the zero sentinel without chaincode")
                })?,
                Some(id) => require(!id.is_empty(), || {
                    format!("transaction {i}: empty chaincode id")
                })?,
            }
        }
        Ok(())
    })();

    let data_hash = require(b.core.data_hash == data_hash_of(&b.transactions), || {
        "data hash does not match the transactions".into()
    });

    let exec = (|| {
        for (i, ct) in b.transactions.iter().enumerate() {
            check_role(
                keys,
                Role::User,
                &ct.inner.signing_bytes(),
                &ct.inner.user_signature,
                &format!("transaction {i}: user"),
            )?;
            check_role(
                keys,
                Role::Esp,
                &ct.signing_bytes(),
                &ct.executing_signature,
                &format!("transaction {i}: executing"),
            )?;
        }
        Ok(())
    })();

    let ordering = (|| {
        require(b.core.exec_sig_root == exec_sig_root_of(&b.transactions), || {
            "executing-signature root does not match the transactions".into()
        })?;
        let sig = b
            .core
            .ordering_signature
            .as_ref()
            .ok_or_else(|| "ordering signature missing".to_string())?;
        check_role(keys, Role::Osp, &b.core.exec_sig_root.0, sig, "ordering")
    })();

    vec![
        (Condition::Block(1), fields),
        (Condition::Block(2), data_hash),
        (Condition::Block(3), exec),
        (Condition::Block(4), ordering),
    ]
}

fn seal_checks(b: &DataBlock, keys: &KeyDirectory) -> Vec<(Condition, Result<(), String>)> {
    let header = hash_header(&b.core);
    let validation = check_role(keys, Role::Vsp, &header.0, &b.validation_signature, "validation");
    let user = match keys.user() {
        Some(k) => check_key(
            &k,
            &user_block_message(&b.core, &b.validation_signature),
            &b.user_signature,
            "user",
        ),
        None => Err("no user key available".into()),
    };
    vec![(Condition::Block(5), validation), (Condition::Block(6), user)]
}

/// Checks the six data-block conditions.
pub fn validate_data_block(b: &DataBlock, keys: &KeyDirectory) -> ValidationReport {
    let height = b.core.height;
    let mut checks = body_checks(b, keys, true);
    checks.extend(seal_checks(b, keys));
    ValidationReport {
        results: checks
            .into_iter()
            .map(|(condition, outcome)| CheckResult {
                height,
                condition,
                outcome,
            })
            .collect(),
    }
}

/// Conditions 1 to 4 on a block that has not been validated or
/// countersigned yet.
pub fn validate_candidate(b: &DataBlock, keys: &KeyDirectory) -> ValidationReport {
    let height = b.core.height;
    ValidationReport {
        results: body_checks(b, keys, false)
            .into_iter()
            .map(|(condition, outcome)| CheckResult {
                height,
                condition,
                outcome,
            })
            .collect(),
    }
}

fn connection_check(prev: &Block, next: &BlockHeaderCore) -> Result<(), String> {
    require(next.previous_hash == prev.chain_hash(), || {
        "previous hash does not match the chain hash of the preceding block".into()
    })?;
    require(next.height == prev.height().wrapping_add(1), || {
        format!(
            "height {} does not follow preceding height {}",
            next.height,
            prev.height()
        )
    })
}

/// True iff `next` stores the chain hash of `prev` and sits one above it.
pub fn validate_connection(prev: &Block, next: &DataBlock) -> bool {
    connection_check(prev, &next.core).is_ok()
}

fn scan_chain(chain: &Chain, keys: &KeyDirectory, exhaustive: bool) -> ValidationReport {
    // A directory without a user key falls back to the genesis config.
    let with_user;
    let keys = match (keys.user(), chain.blocks.first()) {
        (None, Some(Block::Genesis(g))) if g.user_public_key().is_some() => {
            with_user = keys.clone().with(Role::User, g.user_public_key().unwrap());
            &with_user
        }
        _ => keys,
    };
    let mut scan = Scan {
        keys,
        exhaustive,
        report: ValidationReport::default(),
    };
    let Some(first) = chain.blocks.first() else {
        scan.record(0, Condition::Structural, Err("ledger has no genesis block".into()));
        return scan.report;
    };
    let genesis = match first {
        Block::Genesis(g) => Some(g),
        Block::Data(_) => None,
    };
    let user = resolve_user(keys, genesis);

    match first {
        Block::Genesis(g) => {
            let checks = genesis_checks(g, resolve_gba(g, keys), user.clone());
            if !scan.record_all(0, checks) {
                return scan.report;
            }
        }
        Block::Data(b) => {
            if !scan.record(0, Condition::Structural, Err("first block is not a genesis block".into())) {
                return scan.report;
            }
            if !scan_data(&mut scan, chain, 0, b) {
                return scan.report;
            }
        }
    }

    let address = user.and_then(|k| {
        require(chain.ledger_address == Address::ledger(&k), || {
            format!("ledger address {} is not derived from the user key", chain.ledger_address)
        })
    });
    if !scan.record(0, Condition::LedgerAddress, address) {
        return scan.report;
    }

    for (i, block) in chain.blocks.iter().enumerate().skip(1) {
        let h = i as u64;
        match block {
            Block::Genesis(_) => {
                if !scan.record(
                    h,
                    Condition::SingleGenesis,
                    Err(format!("block {i} is a second genesis block")),
                ) {
                    return scan.report;
                }
            }
            Block::Data(b) => {
                let single = require(!b.core.previous_hash.is_zero(), || {
                    format!("block {i} has an all-zero previous hash, a second genesis block")
                });
                if !scan.record(h, Condition::SingleGenesis, single) {
                    return scan.report;
                }
                if !scan_data(&mut scan, chain, i, b) {
                    return scan.report;
                }
            }
        }
        let conn = connection_check(&chain.blocks[i - 1], block.core())
            .map_err(|e| format!("connection ({}, {i}): {e}", i - 1));
        if !scan.record(h, Condition::Connection, conn) {
            return scan.report;
        }
    }
    scan.report
}

fn scan_data(scan: &mut Scan<'_>, chain: &Chain, i: usize, b: &DataBlock) -> bool {
    let h = i as u64;
    let mut checks = body_checks(b, scan.keys, true);
    checks.extend(seal_checks(b, scan.keys));
    if !scan.record_all(h, checks) {
        return false;
    }
    let addr = b
        .transactions
        .iter()
        .position(|ct| ct.inner.ledger_address != chain.ledger_address)
        .map_or(Ok(()), |k| {
            Err(format!("transaction {k} names a different ledger address"))
        });
    scan.record(h, Condition::LedgerAddress, addr)
}

/// Validates a chain, stopping at the first failing check.
pub fn validate_chain(chain: &Chain, keys: &KeyDirectory) -> ValidationReport {
    scan_chain(chain, keys, false)
}

/// Validates a ledger, stopping at the first failing check.
pub fn validate_ledger(l: &Ledger, keys: &KeyDirectory) -> ValidationReport {
    validate_chain(&l.to_chain(), keys)
}

/// Every failed check in the chain, in block order.
pub fn scan_all(chain: &Chain, keys: &KeyDirectory) -> Vec<Finding> {
    scan_chain(chain, keys, true).failures().collect()
}
