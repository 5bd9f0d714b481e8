use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{Digest, KeyId};
use crate::identity::{Address, KeyPair, ServiceKind};
use crate::ledger::{
    validate_candidate, validation_sign, BlockCandidate, CompleteTransaction, KeyDirectory, Role,
};

use super::message::{Message, RefusalCode};
use super::{Handled, Service};

/// Checks that every input names a transaction in `known` or one earlier in
/// `cts`.
pub fn check_dependencies(cts: &[CompleteTransaction], known: &BTreeSet<Digest>) -> Result<(), String> {
    let ids: Vec<Digest> = cts.iter().map(CompleteTransaction::id).collect();
    for (j, ct) in cts.iter().enumerate() {
        for input in &ct.inner.inputs {
            if known.contains(input) || ids[..j].contains(input) {
                continue;
            }
            return Err(match ids[j..].iter().position(|id| id == input) {
                Some(k) => format!(
                    "transaction {j} consumes the output of transaction {}, which comes later",
                    j + k
                ),
                None => format!("transaction {j} consumes unknown output {input}"),
            });
        }
    }
    Ok(())
}

/// Reorders `cts` so every input precedes its consumer, keeping arrival
/// order otherwise. Transactions whose inputs can never be satisfied are
/// returned separately.
pub fn dependency_sort(
    cts: Vec<CompleteTransaction>,
    known: &BTreeSet<Digest>,
) -> (Vec<CompleteTransaction>, Vec<CompleteTransaction>) {
    let mut done: BTreeSet<Digest> = known.clone();
    let mut left: Vec<(Digest, CompleteTransaction)> = cts.into_iter().map(|c| (c.id(), c)).collect();
    let mut sorted = Vec::new();
    loop {
        let ready = left
            .iter()
            .position(|(_, c)| c.inner.inputs.iter().all(|i| done.contains(i)));
        match ready {
            Some(k) => {
                let (id, ct) = left.remove(k);
                done.insert(id);
                sorted.push(ct);
            }
            None => break,
        }
    }
    (sorted, left.into_iter().map(|(_, c)| c).collect())
}

#[derive(Debug, Clone)]
struct Round {
    tip_hash: Digest,
    tip_height: u64,
    keys: KeyDirectory,
    known: BTreeSet<Digest>,
}

/// Validation service: links a candidate to the tip it was told about,
/// checks every signature and the dependency order, then signs the header.
#[derive(Debug, Clone)]
pub struct Vsp {
    keypair: KeyPair,
    rounds: BTreeMap<Address, Round>,
}

impl Vsp {
    pub fn new(keypair: KeyPair) -> Self {
        Vsp {
            keypair,
            rounds: BTreeMap::new(),
        }
    }

    fn validate(
        &mut self,
        ledger: Address,
        candidate: BlockCandidate,
        queued: Vec<CompleteTransaction>,
    ) -> Message {
        let Some(round) = self.rounds.get(&ledger) else {
            return Message::refusal(RefusalCode::NoRound, format!("no round for {ledger}"));
        };
        if candidate
            .transactions
            .iter()
            .any(|c| c.inner.ledger_address != ledger)
        {
            return Message::refusal(RefusalCode::WrongLedger, "candidate mixes ledgers");
        }
        let mut block = candidate.into_block(round.tip_hash, round.tip_height + 1);
        if let Some(finding) = validate_candidate(&block, &round.keys).first_failure() {
            let culprit = culprit(&block.transactions, &block.core, &round.keys);
            return Message::RejectedBlock {
                ledger,
                transactions: block.transactions,
                queued,
                finding: finding.to_string(),
                culprit,
            };
        }
        if let Err(reason) = check_dependencies(&block.transactions, &round.known) {
            return Message::IgnoredBlock {
                ledger,
                transactions: block.transactions,
                queued,
                reason,
            };
        }
        validation_sign(&mut block, &self.keypair);
        Message::ValidatedBlock { block, queued }
    }
}

/// Signer of the first executing or ordering signature that fails.
fn culprit(
    cts: &[CompleteTransaction],
    core: &crate::ledger::BlockHeaderCore,
    keys: &KeyDirectory,
) -> Option<KeyId> {
    cts.iter()
        .find(|c| {
            keys.check(Role::Esp, &c.signing_bytes(), &c.executing_signature)
                .is_err()
        })
        .map(|c| c.executing_signature.signer)
        .or_else(|| {
            let sig = core.ordering_signature.as_ref()?;
            keys.check(Role::Osp, &core.exec_sig_root.0, sig)
                .is_err()
                .then_some(sig.signer)
        })
}

impl Service for Vsp {
    fn kind(&self) -> ServiceKind {
        ServiceKind::Vsp
    }

    fn handle(&mut self, message: Message, _now: u64) -> Handled {
        Handled::Reply(match message {
            Message::ValidateRound {
                ledger,
                tip_hash,
                tip_height,
                keys,
                known_ids,
            } => {
                self.rounds.insert(
                    ledger,
                    Round {
                        tip_hash,
                        tip_height,
                        keys,
                        known: known_ids.into_iter().collect(),
                    },
                );
                Message::Ack
            }
            Message::BlockCandidate {
                ledger,
                candidate,
                queued,
            } => self.validate(ledger, candidate, queued),
            other => Message::refusal(
                RefusalCode::Unexpected,
                format!("VSP does not handle {}", other.name()),
            ),
        })
    }

    fn clone_box(&self) -> Box<dyn Service> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Signer;
    use crate::fixture::Fixture;
    use crate::ledger::{hash_header, Transaction, ZERO_OUTPUT};

    fn vsp(f: &Fixture, known: Vec<Digest>) -> (Vsp, crate::ledger::Ledger) {
        let l = f.genesis();
        let mut v = Vsp::new(f.vsp.clone());
        v.handle(
            Message::ValidateRound {
                ledger: f.address,
                tip_hash: l.tip_chain_hash(),
                tip_height: 0,
                keys: f.directory.clone(),
                known_ids: known,
            },
            0,
        );
        (v, l)
    }

    fn send(v: &mut Vsp, f: &Fixture, cts: Vec<CompleteTransaction>) -> Message {
        let candidate = f.candidate(cts, 10);
        match v.handle(
            Message::BlockCandidate {
                ledger: f.address,
                candidate,
                queued: vec![],
            },
            0,
        ) {
            Handled::Reply(m) => m,
            other => panic!("{other:?}"),
        }
    }

    fn consuming(f: &Fixture, payload: &[u8], inputs: Vec<Digest>) -> CompleteTransaction {
        let tx = Transaction::new_signed(f.address, payload.to_vec(), None, 1, inputs, &f.user);
        f.complete(tx, ZERO_OUTPUT.to_vec(), 0)
    }

    #[test]
    fn well_formed_candidate_is_signed() {
        let f = Fixture::new(71);
        let (mut v, l) = vsp(&f, vec![]);
        let Message::ValidatedBlock { block, .. } = send(&mut v, &f, vec![f.raw(b"a", 1, 0)]) else {
            panic!()
        };
        assert_eq!(block.core.previous_hash, l.tip_chain_hash());
        assert!(crate::crypto::verify(
            &f.vsp.public(),
            &hash_header(&block.core).0,
            &block.validation_signature
        ));
    }

    #[test]
    fn later_dependency_is_ignored() {
        let f = Fixture::new(72);
        let (mut v, _) = vsp(&f, vec![]);
        let t1 = f.raw(b"one", 1, 0);
        let t3 = f.raw(b"three", 3, 0);
        let t2 = consuming(&f, b"two", vec![t3.id()]);
        let m = send(&mut v, &f, vec![t1.clone(), t2.clone(), t3.clone()]);
        let Message::IgnoredBlock { reason, .. } = m else { panic!("{m:?}") };
        assert!(reason.contains("transaction 1 consumes the output of transaction 2"), "{reason}");

        let (sorted, stuck) = dependency_sort(vec![t1.clone(), t2.clone(), t3.clone()], &BTreeSet::new());
        assert_eq!(sorted, vec![t1.clone(), t3.clone(), t2.clone()]);
        assert!(stuck.is_empty());
        assert!(matches!(send(&mut v, &f, sorted), Message::ValidatedBlock { .. }));
    }

    #[test]
    fn history_satisfies_inputs() {
        let f = Fixture::new(73);
        let old = f.raw(b"old", 1, 0);
        let (mut v, _) = vsp(&f, vec![old.id()]);
        let m = send(&mut v, &f, vec![consuming(&f, b"new", vec![old.id()])]);
        assert!(matches!(m, Message::ValidatedBlock { .. }));
    }

    #[test]
    fn foreign_ordering_signature_is_rejected() {
        let f = Fixture::new(74);
        let (mut v, _) = vsp(&f, vec![]);
        let mut candidate = f.candidate(vec![f.raw(b"a", 1, 0)], 10);
        candidate.ordering_signature = f.esps[1].sign(&candidate.exec_sig_root.0);
        let Handled::Reply(m) = v.handle(
            Message::BlockCandidate {
                ledger: f.address,
                candidate,
                queued: vec![],
            },
            0,
        ) else {
            panic!()
        };
        let Message::RejectedBlock { finding, culprit, .. } = m else { panic!("{m:?}") };
        assert!(finding.contains("block-4"), "{finding}");
        assert_eq!(culprit, Some(f.esps[1].public().key_id()));
    }

    #[test]
    fn corrupted_executing_signature_names_the_esp() {
        let f = Fixture::new(75);
        let (mut v, _) = vsp(&f, vec![]);
        let mut ct = f.raw(b"a", 1, 2);
        ct.executing_signature.flip_bit();
        let m = send(&mut v, &f, vec![f.raw(b"ok", 1, 0), ct]);
        let Message::RejectedBlock { culprit, .. } = m else { panic!("{m:?}") };
        assert_eq!(culprit, Some(f.esps[2].public().key_id()));
    }
}
