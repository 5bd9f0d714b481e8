use std::collections::{BTreeMap, BTreeSet};

use crate::codec::Encode;
use crate::crypto::KeyId;
use crate::identity::{Address, KeyPair, ServiceKind};
use crate::ledger::{BlockCandidate, CompleteTransaction};

use super::message::{Message, RefusalCode};
use super::pool::CuttingCondition;
use super::{Handled, Service};

#[derive(Debug, Clone)]
struct Round {
    vsp: String,
    esp_keys: BTreeSet<KeyId>,
    mempool: Vec<CompleteTransaction>,
    bytes: Vec<usize>,
    first_at: Option<u64>,
}

/// Ordering service: collects complete transactions per ledger in arrival
/// order and cuts a signed candidate when its condition fires.
#[derive(Debug, Clone)]
pub struct Osp {
    keypair: KeyPair,
    cutting: CuttingCondition,
    rounds: BTreeMap<Address, Round>,
    audit: Vec<String>,
}

impl Osp {
    pub fn new(keypair: KeyPair, cutting: CuttingCondition) -> Self {
        Osp {
            keypair,
            cutting,
            rounds: BTreeMap::new(),
            audit: Vec::new(),
        }
    }

    /// Dropped transactions and why.
    pub fn audit_log(&self) -> &[String] {
        &self.audit
    }

    pub fn pending(&self, ledger: &Address) -> usize {
        self.rounds.get(ledger).map_or(0, |r| r.mempool.len())
    }

    /// How many mempool entries to cut now, if any.
    fn cut_len(&self, round: &Round, now: u64) -> Option<usize> {
        let n = round.mempool.len();
        if n == 0 {
            return None;
        }
        match self.cutting {
            CuttingCondition::Count(k) => (n >= k).then_some(k),
            CuttingCondition::Interval(ms) => round
                .first_at
                .filter(|t| now.saturating_sub(*t) >= ms)
                .map(|_| n),
            CuttingCondition::Size(limit) => {
                let total: usize = round.bytes.iter().sum();
                if total <= limit {
                    return None;
                }
                let mut sum = 0;
                let fit = round
                    .bytes
                    .iter()
                    .take_while(|b| {
                        sum += **b;
                        sum <= limit
                    })
                    .count();
                Some(fit.max(1))
            }
        }
    }

    #[allow(clippy::result_large_err)]
    fn admit(&mut self, ledger: &Address, ct: CompleteTransaction, now: u64) -> Result<(), Message> {
        let Some(round) = self.rounds.get_mut(ledger) else {
            return Err(Message::refusal(RefusalCode::NoRound, format!("no round for {ledger}")));
        };
        if ct.inner.ledger_address != *ledger {
            return Err(Message::refusal(RefusalCode::WrongLedger, "transaction for another ledger"));
        }
        let signer = ct.executing_signature.signer;
        if !round.esp_keys.contains(&signer) {
            self.audit
                .push(format!("dropped transaction {}: unregistered ESP {signer}", ct.id()));
            return Err(Message::refusal(
                RefusalCode::UnregisteredEsp,
                format!("executing signer {signer} is not registered"),
            ));
        }
        if round.mempool.iter().any(|c| c == &ct) {
            return Ok(());
        }
        round.first_at.get_or_insert(now);
        round.bytes.push(ct.canonical_bytes().len());
        round.mempool.push(ct);
        Ok(())
    }

    /// Cuts a block if the condition fires, otherwise answers with `idle`.
    fn maybe_cut(&mut self, ledger: Address, now: u64, idle: Message) -> Handled {
        let Some(round) = self.rounds.get(&ledger) else {
            return Handled::Reply(idle);
        };
        let Some(k) = self.cut_len(round, now) else {
            return Handled::Reply(idle);
        };
        let round = self.rounds.get_mut(&ledger).expect("round exists");
        let mut txs = std::mem::take(&mut round.mempool);
        let queued = txs.split_off(k);
        round.bytes.clear();
        round.first_at = None;
        let candidate = BlockCandidate::order(txs, now, &self.keypair);
        Handled::Forward {
            to: round.vsp.clone(),
            message: Message::BlockCandidate {
                ledger,
                candidate,
                queued,
            },
        }
    }
}

impl Service for Osp {
    fn kind(&self) -> ServiceKind {
        ServiceKind::Osp
    }

    fn handle(&mut self, message: Message, now: u64) -> Handled {
        match message {
            Message::OrderRound {
                ledger,
                vsp,
                esp_keys,
            } => {
                self.rounds.insert(
                    ledger,
                    Round {
                        vsp,
                        esp_keys: esp_keys.iter().map(|k| k.key_id()).collect(),
                        mempool: Vec::new(),
                        bytes: Vec::new(),
                        first_at: None,
                    },
                );
                Handled::Reply(Message::Ack)
            }
            Message::CompleteTx { ct } => {
                let ledger = ct.inner.ledger_address;
                if let Err(refusal) = self.admit(&ledger, ct.clone(), now) {
                    return Handled::Reply(refusal);
                }
                self.maybe_cut(ledger, now, Message::Queued { ct })
            }
            Message::Requeue { ledger, cts } => {
                for ct in cts {
                    if let Err(Message::Refusal {
                        code: RefusalCode::NoRound,
                        detail,
                    }) = self.admit(&ledger, ct, now)
                    {
                        return Handled::Reply(Message::refusal(RefusalCode::NoRound, detail));
                    }
                }
                self.maybe_cut(ledger, now, Message::Ack)
            }
            Message::Tick { ledger } => self.maybe_cut(ledger, now, Message::Ack),
            other => Handled::Reply(Message::refusal(
                RefusalCode::Unexpected,
                format!("OSP does not handle {}", other.name()),
            )),
        }
    }

    fn clone_box(&self) -> Box<dyn Service> {
        Box::new(self.clone())
    }
}
