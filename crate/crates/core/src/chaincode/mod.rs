//! Deterministic computations run by executing providers, plus replay
//! auditing of stored outputs.

mod balance;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::identity::Address;
use crate::ledger::{Ledger, Transaction, ZERO_OUTPUT};

pub use balance::{parse_delta, Balance, BALANCE_ID};

pub const NULL_ID: &str = "null";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChaincodeError {
    #[error("unknown chaincode {0:?}")]
    Unknown(String),
    #[error("transaction targets chaincode {found:?}, not {expected:?}")]
    WrongChaincode { expected: String, found: Option<String> },
    #[error("malformed payload: {0}")]
    Payload(String),
    #[error("malformed state: {0}")]
    State(String),
    #[error("arithmetic overflow")]
    Overflow,
}

/// A pure state machine: `(state, payload) -> (state, output)`.
pub trait Chaincode: Send + Sync {
    fn id(&self) -> &str;

    fn initial_state(&self) -> Vec<u8>;

    fn step(&self, state: &[u8], payload: &[u8]) -> Result<(Vec<u8>, Vec<u8>), ChaincodeError>;
}

/// Leaves the state alone and always outputs the zero sentinel.
#[derive(Debug, Clone, Copy, Default)]
pub struct Null;

impl Chaincode for Null {
    fn id(&self) -> &str {
        NULL_ID
    }

    fn initial_state(&self) -> Vec<u8> {
        Vec::new()
    }

    fn step(&self, state: &[u8], _payload: &[u8]) -> Result<(Vec<u8>, Vec<u8>), ChaincodeError> {
        Ok((state.to_vec(), ZERO_OUTPUT.to_vec()))
    }
}

#[derive(Clone)]
pub struct Registry {
    defs: BTreeMap<String, Arc<dyn Chaincode>>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            defs: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Null));
        r.register(Arc::new(Balance));
        r
    }

    pub fn register(&mut self, def: Arc<dyn Chaincode>) {
        self.defs.insert(def.id().to_owned(), def);
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Chaincode>, ChaincodeError> {
        self.defs
            .get(id)
            .ok_or_else(|| ChaincodeError::Unknown(id.to_owned()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.defs.keys().map(String::as_str)
    }
}

/// Latest state of every chaincode used by one ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionContext {
    pub ledger_address: Address,
    pub latest_state: BTreeMap<String, Vec<u8>>,
}

impl ExecutionContext {
    pub fn new(ledger_address: Address) -> Self {
        ExecutionContext {
            ledger_address,
            latest_state: BTreeMap::new(),
        }
    }

    pub fn state_of(&self, def: &dyn Chaincode) -> Vec<u8> {
        self.latest_state
            .get(def.id())
            .cloned()
            .unwrap_or_else(|| def.initial_state())
    }

    /// Rebuilds the context by replaying every chaincode used in `ledger`
    /// from the stored transactions. Unknown chaincodes are skipped.
    pub fn rebuild(registry: &Registry, ledger: &Ledger) -> Self {
        let mut ctx = ExecutionContext::new(ledger.ledger_address);
        for (_, _, ct) in ledger.transactions() {
            let Some(id) = &ct.inner.chaincode_id else {
                continue;
            };
            let Ok(def) = registry.get(id) else {
                continue;
            };
            let state = ctx.state_of(def.as_ref());
            if let Ok((next, _)) = def.step(&state, &ct.inner.payload) {
                ctx.latest_state.insert(id.clone(), next);
            }
        }
        ctx
    }
}

/// Runs `def` on `tx` and advances `ctx`. Returns the output to record.
pub fn execute(
    def: &dyn Chaincode,
    ctx: &mut ExecutionContext,
    tx: &Transaction,
) -> Result<Vec<u8>, ChaincodeError> {
    if tx.chaincode_id.as_deref() != Some(def.id()) {
        return Err(ChaincodeError::WrongChaincode {
            expected: def.id().to_owned(),
            found: tx.chaincode_id.clone(),
        });
    }
    let state = ctx.state_of(def);
    let (next, output) = def.step(&state, &tx.payload)?;
    ctx.latest_state.insert(def.id().to_owned(), next);
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub height: u64,
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub final_state: Vec<u8>,
    pub transactions: usize,
    pub mismatches: Vec<Mismatch>,
}

/// Recomputes every output of `def` in ledger order and compares it with
/// the stored one. After a mismatch the fold continues from the recomputed
/// state, so one forged output yields exactly one mismatch.
pub fn replay(def: &dyn Chaincode, ledger: &Ledger) -> ReplayReport {
    let mut state = def.initial_state();
    let mut mismatches = Vec::new();
    let mut transactions = 0;
    for (height, index, ct) in ledger.transactions() {
        if ct.inner.chaincode_id.as_deref() != Some(def.id()) {
            continue;
        }
        transactions += 1;
        match def.step(&state, &ct.inner.payload) {
            Ok((next, output)) => {
                if output != ct.output {
                    mismatches.push(Mismatch {
                        height,
                        index,
                        reason: format!(
                            "stored output {:?}, recomputed {:?}",
                            String::from_utf8_lossy(&ct.output),
                            String::from_utf8_lossy(&output)
                        ),
                    });
                }
                state = next;
            }
            Err(e) => mismatches.push(Mismatch {
                height,
                index,
                reason: e.to_string(),
            }),
        }
    }
    ReplayReport {
        final_state: state,
        transactions,
        mismatches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_keeps_state_and_outputs_zero() {
        let (s, out) = Null.step(b"anything", b"payload").unwrap();
        assert_eq!(s, b"anything");
        assert_eq!(out, ZERO_OUTPUT);
    }

    #[test]
    fn replay_matches_an_independent_sum() {
        let f = crate::fixture::Fixture::new(21);
        let deltas = [10, 20, 30, 40, 50, 60, 70, -20, 40, 60];
        let l = f.balance_ledger(&deltas, 3);
        let report = replay(&Balance, &l);
        let sum: i64 = deltas.iter().sum();
        assert_eq!(sum, 360);
        assert_eq!(report.final_state, b"360");
        assert_eq!(report.transactions, 10);
        assert!(report.mismatches.is_empty());
    }

    #[test]
    fn forged_output_is_localized() {
        let f = crate::fixture::Fixture::new(22);
        let mut l = f.balance_ledger(&[5; 9], 3);
        l.blocks[1].transactions[2].output = b"999".to_vec();
        let report = replay(&Balance, &l);
        assert_eq!(report.mismatches.len(), 1);
        assert_eq!((report.mismatches[0].height, report.mismatches[0].index), (2, 2));
        assert_eq!(report.final_state, b"45");
    }

    #[test]
    fn genesis_only_replays_to_initial_state() {
        let f = crate::fixture::Fixture::new(23);
        let report = replay(&Balance, &f.genesis());
        assert_eq!(report.final_state, b"0");
        assert!(report.mismatches.is_empty());
    }

    #[test]
    fn execute_advances_context() {
        let f = crate::fixture::Fixture::new(24);
        let mut ctx = ExecutionContext::new(f.address);
        ctx.latest_state.insert(BALANCE_ID.into(), b"100".to_vec());
        let tx = f.transaction(b"+25", Some(BALANCE_ID), 0);
        assert_eq!(execute(&Balance, &mut ctx, &tx).unwrap(), b"125");
        assert_eq!(ctx.latest_state[BALANCE_ID], b"125");
        let raw = f.transaction(b"+25", None, 0);
        assert!(matches!(
            execute(&Balance, &mut ctx, &raw),
            Err(ChaincodeError::WrongChaincode { .. })
        ));
    }

    #[test]
    fn registry_has_both_builtins() {
        let r = Registry::with_builtins();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["balance", "null"]);
        assert!(matches!(r.get("vm"), Err(ChaincodeError::Unknown(_))));
    }
}
