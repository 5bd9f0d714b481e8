use crate::chaincode::{ChaincodeError, Registry};
use crate::crypto::{verify, Digest};
use crate::identity::{Address, KeyPair, ServiceKind};
use crate::ledger::{CompleteTransaction, ZERO_OUTPUT};

use super::message::{Message, RefusalCode};
use super::{Handled, Service};

/// Executing service: checks the user signature, runs the chaincode, signs
/// the result and passes it to the ordering provider the user named.
#[derive(Clone)]
pub struct Esp {
    keypair: KeyPair,
    registry: Registry,
    seen: Vec<Digest>,
}

impl Esp {
    pub fn new(keypair: KeyPair, registry: Registry) -> Self {
        Esp {
            keypair,
            registry,
            seen: Vec::new(),
        }
    }

    /// Ids of the complete transactions this provider produced.
    pub fn seen(&self) -> &[Digest] {
        &self.seen
    }

    // the error is the refusal sent back
    #[allow(clippy::result_large_err)]
    fn execute(&mut self, message: Message) -> Result<Handled, Message> {
        let Message::SubmitTx {
            tx,
            user_public_key,
            osp,
            prior_state,
        } = message
        else {
            return Err(Message::refusal(
                RefusalCode::Unexpected,
                format!("ESP does not handle {}", message.name()),
            ));
        };
        if Address::ledger(&user_public_key) != tx.ledger_address {
            return Err(Message::refusal(
                RefusalCode::AddressMismatch,
                format!("{} is not derived from the supplied key", tx.ledger_address),
            ));
        }
        if !verify(&user_public_key, &tx.signing_bytes(), &tx.user_signature) {
            return Err(Message::refusal(
                RefusalCode::BadUserSignature,
                "user signature does not verify",
            ));
        }
        let output = match &tx.chaincode_id {
            None => ZERO_OUTPUT.to_vec(),
            Some(id) => {
                let def = self.registry.get(id).map_err(|e| {
                    Message::refusal(RefusalCode::UnknownChaincode, e.to_string())
                })?;
                let state = prior_state.unwrap_or_else(|| def.initial_state());
                def.step(&state, &tx.payload)
                    .map_err(|e: ChaincodeError| {
                        Message::refusal(RefusalCode::ChaincodeFailed, e.to_string())
                    })?
                    .1
            }
        };
        let ct = CompleteTransaction::new_signed(tx, output, &self.keypair);
        self.seen.push(ct.id());
        Ok(Handled::Forward {
            to: osp,
            message: Message::CompleteTx { ct },
        })
    }
}

impl Service for Esp {
    fn kind(&self) -> ServiceKind {
        ServiceKind::Esp
    }

    fn handle(&mut self, message: Message, _now: u64) -> Handled {
        self.execute(message).unwrap_or_else(Handled::Reply)
    }

    fn clone_box(&self) -> Box<dyn Service> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::BALANCE_ID;
    use crate::fixture::Fixture;

    fn submit(f: &Fixture, tx: crate::ledger::Transaction, prior: Option<&[u8]>) -> Handled {
        let mut esp = Esp::new(f.esps[0].clone(), Registry::with_builtins());
        esp.handle(
            Message::SubmitTx {
                tx,
                user_public_key: f.user.public(),
                osp: "osp-1".into(),
                prior_state: prior.map(<[u8]>::to_vec),
            },
            0,
        )
    }

    fn forwarded(h: Handled) -> CompleteTransaction {
        match h {
            Handled::Forward {
                to,
                message: Message::CompleteTx { ct },
            } => {
                assert_eq!(to, "osp-1");
                ct
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn raw_data_gets_zero_output() {
        let f = Fixture::new(51);
        let ct = forwarded(submit(&f, f.transaction(b"log line", None, 1), None));
        assert_eq!(ct.output, ZERO_OUTPUT);
        assert!(verify(&f.esps[0].public(), &ct.signing_bytes(), &ct.executing_signature));
    }

    #[test]
    fn balance_runs_on_prior_state() {
        let f = Fixture::new(52);
        let tx = f.transaction(b"+25", Some(BALANCE_ID), 1);
        let ct = forwarded(submit(&f, tx, Some(b"100")));
        assert_eq!(ct.output, b"125");
    }

    #[test]
    fn refusals() {
        let f = Fixture::new(53);
        let refusal = |h: Handled| match h {
            Handled::Reply(Message::Refusal { code, .. }) => code,
            other => panic!("{other:?}"),
        };
        let mut tx = f.transaction(b"abc", None, 1);
        tx.payload[0] ^= 1;
        assert_eq!(refusal(submit(&f, tx, None)), RefusalCode::BadUserSignature);
        let tx = f.transaction(b"abc", Some("vm"), 1);
        assert_eq!(refusal(submit(&f, tx, None)), RefusalCode::UnknownChaincode);
        let tx = f.transaction(b"lots", Some(BALANCE_ID), 1);
        assert_eq!(refusal(submit(&f, tx, None)), RefusalCode::ChaincodeFailed);
    }
}
