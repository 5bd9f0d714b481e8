use std::fmt;

use crate::codec::{frame, unframe, CodecError, Decode, Decoder, Encode, Encoder};
use crate::crypto::{Digest, KeyId, PublicKey, Signature};
use crate::identity::{Address, RootRecord};
use crate::ledger::{
    BlockCandidate, CompleteTransaction, ConfigEntry, DataBlock, GenesisBlock, KeyDirectory,
    Ledger, Transaction,
};

/// Stable refusal codes carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum RefusalCode {
    Malformed = 1,
    BadUserSignature = 2,
    AddressMismatch = 3,
    UnknownChaincode = 4,
    ChaincodeFailed = 5,
    UnregisteredEsp = 6,
    NoRound = 7,
    InvalidCandidate = 8,
    WrongLedger = 9,
    NonExtending = 10,
    NotFound = 11,
    Duplicate = 12,
    KycDenied = 13,
    MissingUserKey = 14,
    Unexpected = 15,
}

impl RefusalCode {
    const ALL: [RefusalCode; 15] = [
        RefusalCode::Malformed,
        RefusalCode::BadUserSignature,
        RefusalCode::AddressMismatch,
        RefusalCode::UnknownChaincode,
        RefusalCode::ChaincodeFailed,
        RefusalCode::UnregisteredEsp,
        RefusalCode::NoRound,
        RefusalCode::InvalidCandidate,
        RefusalCode::WrongLedger,
        RefusalCode::NonExtending,
        RefusalCode::NotFound,
        RefusalCode::Duplicate,
        RefusalCode::KycDenied,
        RefusalCode::MissingUserKey,
        RefusalCode::Unexpected,
    ];

    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }
}

impl fmt::Display for RefusalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RefusalCode::Malformed => "malformed request",
            RefusalCode::BadUserSignature => "bad user signature",
            RefusalCode::AddressMismatch => "ledger address does not match user key",
            RefusalCode::UnknownChaincode => "unknown chaincode",
            RefusalCode::ChaincodeFailed => "chaincode rejected payload",
            RefusalCode::UnregisteredEsp => "unregistered executing provider",
            RefusalCode::NoRound => "no round established",
            RefusalCode::InvalidCandidate => "invalid block candidate",
            RefusalCode::WrongLedger => "wrong ledger",
            RefusalCode::NonExtending => "block does not extend the stored tip",
            RefusalCode::NotFound => "not found",
            RefusalCode::Duplicate => "duplicate",
            RefusalCode::KycDenied => "KYC denied",
            RefusalCode::MissingUserKey => "missing user public key",
            RefusalCode::Unexpected => "unexpected message",
        };
        write!(f, "{name} ({})", self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    GetLedger(Address),
    GetRootRecord(Address),
    ListLedgers(Address),
    GetTip(Address),
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum QueryResponse {
    Ledger(Ledger),
    RootRecord(RootRecord),
    Ledgers(Vec<Address>),
    Tip { height: u64, chain_hash: Digest },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// User to ESP. `osp` names the ordering provider of the current round.
    SubmitTx {
        tx: Transaction,
        user_public_key: PublicKey,
        osp: String,
        prior_state: Option<Vec<u8>>,
    },
    /// ESP to OSP.
    CompleteTx { ct: CompleteTransaction },
    /// OSP to user: the transaction waits in the mempool.
    Queued { ct: CompleteTransaction },
    /// User to OSP at round start.
    OrderRound {
        ledger: Address,
        vsp: String,
        esp_keys: Vec<PublicKey>,
    },
    /// User to VSP at round start.
    ValidateRound {
        ledger: Address,
        tip_hash: Digest,
        tip_height: u64,
        keys: KeyDirectory,
        known_ids: Vec<Digest>,
    },
    /// User to OSP: transactions to put back in the mempool, in order.
    Requeue {
        ledger: Address,
        cts: Vec<CompleteTransaction>,
    },
    /// User to OSP: time has passed, cut if the interval expired.
    Tick { ledger: Address },
    /// OSP to VSP. `queued` holds what was left in the mempool after the cut.
    BlockCandidate {
        ledger: Address,
        candidate: BlockCandidate,
        queued: Vec<CompleteTransaction>,
    },
    /// VSP to user.
    ValidatedBlock {
        block: DataBlock,
        queued: Vec<CompleteTransaction>,
    },
    /// VSP to user: the candidate breaks a dependency and was not signed.
    IgnoredBlock {
        ledger: Address,
        transactions: Vec<CompleteTransaction>,
        queued: Vec<CompleteTransaction>,
        reason: String,
    },
    /// VSP to user: a signature in the candidate failed. `culprit` is the
    /// signer of the first bad executing or ordering signature.
    RejectedBlock {
        ledger: Address,
        transactions: Vec<CompleteTransaction>,
        queued: Vec<CompleteTransaction>,
        finding: String,
        culprit: Option<KeyId>,
    },
    /// User to storage.
    CommitBlock { ledger: Address, block: DataBlock },
    StoreGenesis {
        ledger: Address,
        genesis: GenesisBlock,
    },
    StoreRootRecord { record: RootRecord },
    GenesisRequest {
        user_public_key: Option<PublicKey>,
        entries: Vec<ConfigEntry>,
        kyc: Vec<u8>,
    },
    /// GBA to user: genesis signed by the GBA, awaiting the user signature.
    GenesisResponse { genesis: GenesisBlock },
    Query(Query),
    QueryResponse(QueryResponse),
    Ack,
    Refusal { code: RefusalCode, detail: String },
}

impl Message {
    pub fn refusal(code: RefusalCode, detail: impl Into<String>) -> Self {
        Message::Refusal {
            code,
            detail: detail.into(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::SubmitTx { .. } => "SubmitTx",
            Message::CompleteTx { .. } => "CompleteTx",
            Message::Queued { .. } => "Queued",
            Message::OrderRound { .. } => "OrderRound",
            Message::ValidateRound { .. } => "ValidateRound",
            Message::Requeue { .. } => "Requeue",
            Message::Tick { .. } => "Tick",
            Message::BlockCandidate { .. } => "BlockCandidate",
            Message::ValidatedBlock { .. } => "ValidatedBlock",
            Message::IgnoredBlock { .. } => "IgnoredBlock",
            Message::RejectedBlock { .. } => "RejectedBlock",
            Message::CommitBlock { .. } => "CommitBlock",
            Message::StoreGenesis { .. } => "StoreGenesis",
            Message::StoreRootRecord { .. } => "StoreRootRecord",
            Message::GenesisRequest { .. } => "GenesisRequest",
            Message::GenesisResponse { .. } => "GenesisResponse",
            Message::Query(_) => "Query",
            Message::QueryResponse(_) => "QueryResponse",
            Message::Ack => "Ack",
            Message::Refusal { .. } => "Refusal",
        }
    }

    pub fn to_frame(&self) -> Vec<u8> {
        frame(&self.canonical_bytes())
    }

    pub fn from_frame(bytes: &[u8]) -> Result<Self, CodecError> {
        Message::from_canonical_bytes(unframe(bytes)?)
    }

    /// Calls `f` on every signature carried by the message.
    pub fn for_each_signature(&mut self, f: &mut dyn FnMut(&mut Signature)) {
        fn tx(t: &mut Transaction, f: &mut dyn FnMut(&mut Signature)) {
            t.attestations.iter_mut().for_each(&mut *f);
            f(&mut t.user_signature);
        }
        fn ct(c: &mut CompleteTransaction, f: &mut dyn FnMut(&mut Signature)) {
            tx(&mut c.inner, f);
            f(&mut c.executing_signature);
        }
        fn cts(list: &mut [CompleteTransaction], f: &mut dyn FnMut(&mut Signature)) {
            list.iter_mut().for_each(|c| ct(c, f));
        }
        fn block(b: &mut DataBlock, f: &mut dyn FnMut(&mut Signature)) {
            if let Some(s) = b.core.ordering_signature.as_mut() {
                f(s);
            }
            cts(&mut b.transactions, f);
            f(&mut b.validation_signature);
            f(&mut b.user_signature);
        }
        match self {
            Message::SubmitTx { tx: t, .. } => tx(t, f),
            Message::CompleteTx { ct: c } | Message::Queued { ct: c } => ct(c, f),
            Message::Requeue { cts: list, .. } => cts(list, f),
            Message::BlockCandidate {
                candidate, queued, ..
            } => {
                f(&mut candidate.ordering_signature);
                cts(&mut candidate.transactions, f);
                cts(queued, f);
            }
            Message::ValidatedBlock { block: b, queued } => {
                block(b, f);
                cts(queued, f);
            }
            Message::IgnoredBlock {
                transactions,
                queued,
                ..
            }
            | Message::RejectedBlock {
                transactions,
                queued,
                ..
            } => {
                cts(transactions, f);
                cts(queued, f);
            }
            Message::CommitBlock { block: b, .. } => block(b, f),
            Message::StoreGenesis { genesis, .. } | Message::GenesisResponse { genesis } => {
                f(&mut genesis.gba_signature);
                f(&mut genesis.user_signature);
            }
            Message::QueryResponse(QueryResponse::Ledger(l)) => {
                f(&mut l.genesis.gba_signature);
                f(&mut l.genesis.user_signature);
                l.blocks.iter_mut().for_each(|b| block(b, f));
            }
            _ => {}
        }
    }

    /// Flips a bit in every signature made by `signer`. Returns how many
    /// were touched.
    pub fn corrupt_signatures_of(&mut self, signer: KeyId) -> usize {
        let mut n = 0;
        self.for_each_signature(&mut |s| {
            if s.signer == signer {
                s.flip_bit();
                n += 1;
            }
        });
        n
    }
}

impl Encode for Query {
    fn encode_to(&self, enc: &mut Encoder) {
        let (tag, addr) = match self {
            Query::GetLedger(a) => (0, a),
            Query::GetRootRecord(a) => (1, a),
            Query::ListLedgers(a) => (2, a),
            Query::GetTip(a) => (3, a),
        };
        enc.tag(tag).value(addr);
    }
}

impl Decode for Query {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let tag = dec.tag()?;
        let addr = dec.value()?;
        Ok(match tag {
            0 => Query::GetLedger(addr),
            1 => Query::GetRootRecord(addr),
            2 => Query::ListLedgers(addr),
            3 => Query::GetTip(addr),
            tag => return Err(CodecError::UnknownTag { what: "query", tag }),
        })
    }
}

impl Encode for QueryResponse {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            QueryResponse::Ledger(l) => enc.tag(0).value(l),
            QueryResponse::RootRecord(r) => enc.tag(1).value(r),
            QueryResponse::Ledgers(list) => enc.tag(2).list(list),
            QueryResponse::Tip { height, chain_hash } => enc.tag(3).u64(*height).value(chain_hash),
        };
    }
}

impl Decode for QueryResponse {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.tag()? {
            0 => QueryResponse::Ledger(dec.value()?),
            1 => QueryResponse::RootRecord(dec.value()?),
            2 => QueryResponse::Ledgers(dec.list()?),
            3 => QueryResponse::Tip {
                height: dec.u64()?,
                chain_hash: dec.value()?,
            },
            tag => {
                return Err(CodecError::UnknownTag {
                    what: "query response",
                    tag,
                })
            }
        })
    }
}

impl Encode for Message {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            Message::SubmitTx {
                tx,
                user_public_key,
                osp,
                prior_state,
            } => {
                enc.tag(0)
                    .value(tx)
                    .value(user_public_key)
                    .text(osp)
                    .option(prior_state.as_ref());
            }
            Message::CompleteTx { ct } => {
                enc.tag(1).value(ct);
            }
            Message::Queued { ct } => {
                enc.tag(2).value(ct);
            }
            Message::OrderRound {
                ledger,
                vsp,
                esp_keys,
            } => {
                enc.tag(3).value(ledger).text(vsp).list(esp_keys);
            }
            Message::ValidateRound {
                ledger,
                tip_hash,
                tip_height,
                keys,
                known_ids,
            } => {
                enc.tag(4)
                    .value(ledger)
                    .value(tip_hash)
                    .u64(*tip_height)
                    .value(keys)
                    .list(known_ids);
            }
            Message::Requeue { ledger, cts } => {
                enc.tag(5).value(ledger).list(cts);
            }
            Message::Tick { ledger } => {
                enc.tag(6).value(ledger);
            }
            Message::BlockCandidate {
                ledger,
                candidate,
                queued,
            } => {
                enc.tag(7).value(ledger).value(candidate).list(queued);
            }
            Message::ValidatedBlock { block, queued } => {
                enc.tag(8).value(block).list(queued);
            }
            Message::IgnoredBlock {
                ledger,
                transactions,
                queued,
                reason,
            } => {
                enc.tag(9)
                    .value(ledger)
                    .list(transactions)
                    .list(queued)
                    .text(reason);
            }
            Message::CommitBlock { ledger, block } => {
                enc.tag(10).value(ledger).value(block);
            }
            Message::StoreGenesis { ledger, genesis } => {
                enc.tag(11).value(ledger).value(genesis);
            }
            Message::StoreRootRecord { record } => {
                enc.tag(12).value(record);
            }
            Message::GenesisRequest {
                user_public_key,
                entries,
                kyc,
            } => {
                enc.tag(13)
                    .option(user_public_key.as_ref())
                    .list(entries)
                    .bytes(kyc);
            }
            Message::GenesisResponse { genesis } => {
                enc.tag(14).value(genesis);
            }
            Message::Query(q) => {
                enc.tag(15).value(q);
            }
            Message::QueryResponse(r) => {
                enc.tag(16).value(r);
            }
            Message::Ack => {
                enc.tag(17);
            }
            Message::RejectedBlock {
                ledger,
                transactions,
                queued,
                finding,
                culprit,
            } => {
                enc.tag(19)
                    .value(ledger)
                    .list(transactions)
                    .list(queued)
                    .text(finding)
                    .option(culprit.as_ref());
            }
            Message::Refusal { code, detail } => {
                enc.tag(18).u64(u64::from(code.code())).text(detail);
            }
        }
    }
}

impl Decode for Message {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.tag()? {
            0 => Message::SubmitTx {
                tx: dec.value()?,
                user_public_key: dec.value()?,
                osp: dec.text()?,
                prior_state: dec.option()?,
            },
            1 => Message::CompleteTx { ct: dec.value()? },
            2 => Message::Queued { ct: dec.value()? },
            3 => Message::OrderRound {
                ledger: dec.value()?,
                vsp: dec.text()?,
                esp_keys: dec.list()?,
            },
            4 => Message::ValidateRound {
                ledger: dec.value()?,
                tip_hash: dec.value()?,
                tip_height: dec.u64()?,
                keys: dec.value()?,
                known_ids: dec.list()?,
            },
            5 => Message::Requeue {
                ledger: dec.value()?,
                cts: dec.list()?,
            },
            6 => Message::Tick {
                ledger: dec.value()?,
            },
            7 => Message::BlockCandidate {
                ledger: dec.value()?,
                candidate: dec.value()?,
                queued: dec.list()?,
            },
            8 => Message::ValidatedBlock {
                block: dec.value()?,
                queued: dec.list()?,
            },
            9 => Message::IgnoredBlock {
                ledger: dec.value()?,
                transactions: dec.list()?,
                queued: dec.list()?,
                reason: dec.text()?,
            },
            10 => Message::CommitBlock {
                ledger: dec.value()?,
                block: dec.value()?,
            },
            11 => Message::StoreGenesis {
                ledger: dec.value()?,
                genesis: dec.value()?,
            },
            12 => Message::StoreRootRecord {
                record: dec.value()?,
            },
            13 => Message::GenesisRequest {
                user_public_key: dec.option()?,
                entries: dec.list()?,
                kyc: dec.byte_vec()?,
            },
            14 => Message::GenesisResponse {
                genesis: dec.value()?,
            },
            15 => Message::Query(dec.value()?),
            16 => Message::QueryResponse(dec.value()?),
            17 => Message::Ack,
            18 => {
                let raw = dec.u64()?;
                let code = u16::try_from(raw)
                    .ok()
                    .and_then(RefusalCode::from_code)
                    .ok_or_else(|| CodecError::Invalid(format!("refusal code {raw}")))?;
                Message::Refusal {
                    code,
                    detail: dec.text()?,
                }
            }
            19 => Message::RejectedBlock {
                ledger: dec.value()?,
                transactions: dec.list()?,
                queued: dec.list()?,
                finding: dec.text()?,
                culprit: dec.option()?,
            },
            tag => return Err(CodecError::UnknownTag { what: "message", tag }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::Fixture;
    use rand::SeedableRng;

    fn samples() -> Vec<Message> {
        let f = Fixture::new(31);
        let l = f.ledger(2, 2, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let ct = l.blocks[0].transactions[0].clone();
        let cand = f.candidate(vec![ct.clone()], 5);
        vec![
            Message::SubmitTx {
                tx: ct.inner.clone(),
                user_public_key: PublicKey([1; 32]),
                osp: "osp-1".into(),
                prior_state: Some(b"100".to_vec()),
            },
            Message::CompleteTx { ct: ct.clone() },
            Message::Queued { ct: ct.clone() },
            Message::OrderRound {
                ledger: f.address,
                vsp: "vsp-2".into(),
                esp_keys: vec![PublicKey([2; 32])],
            },
            Message::ValidateRound {
                ledger: f.address,
                tip_hash: l.tip_chain_hash(),
                tip_height: 2,
                keys: f.directory.clone(),
                known_ids: vec![ct.id()],
            },
            Message::Requeue {
                ledger: f.address,
                cts: vec![ct.clone()],
            },
            Message::Tick { ledger: f.address },
            Message::BlockCandidate {
                ledger: f.address,
                candidate: cand,
                queued: vec![],
            },
            Message::ValidatedBlock {
                block: l.blocks[1].clone(),
                queued: vec![ct.clone()],
            },
            Message::IgnoredBlock {
                ledger: f.address,
                transactions: vec![ct.clone()],
                queued: vec![],
                reason: "order".into(),
            },
            Message::RejectedBlock {
                ledger: f.address,
                transactions: vec![ct.clone()],
                queued: vec![ct.clone()],
                finding: "block-3".into(),
                culprit: Some(f.esps[0].public().key_id()),
            },
            Message::CommitBlock {
                ledger: f.address,
                block: l.blocks[0].clone(),
            },
            Message::StoreGenesis {
                ledger: f.address,
                genesis: l.genesis.clone(),
            },
            Message::StoreRootRecord {
                record: RootRecord::new(&f.root.public()),
            },
            Message::GenesisRequest {
                user_public_key: None,
                entries: f.config(),
                kyc: b"kyc".to_vec(),
            },
            Message::GenesisResponse {
                genesis: l.genesis.clone(),
            },
            Message::Query(Query::GetTip(f.address)),
            Message::QueryResponse(QueryResponse::Ledger(l.clone())),
            Message::QueryResponse(QueryResponse::Tip {
                height: 3,
                chain_hash: l.tip_chain_hash(),
            }),
            Message::QueryResponse(QueryResponse::Ledgers(vec![f.address])),
            Message::Ack,
            Message::refusal(RefusalCode::NonExtending, "tip moved"),
        ]
    }

    #[test]
    fn every_variant_round_trips_through_a_frame() {
        for m in samples() {
            let framed = m.to_frame();
            let len = u32::from_be_bytes(framed[..4].try_into().unwrap()) as usize;
            assert_eq!(len, framed.len() - 4);
            assert_eq!(Message::from_frame(&framed).unwrap(), m, "{}", m.name());
        }
    }

    #[test]
    fn refusal_codes_are_stable() {
        assert_eq!(RefusalCode::BadUserSignature.code(), 2);
        assert_eq!(RefusalCode::NonExtending.code(), 10);
        assert_eq!(RefusalCode::KycDenied.code(), 13);
        for c in RefusalCode::ALL {
            assert_eq!(RefusalCode::from_code(c.code()), Some(c));
        }
    }

    #[test]
    fn corruption_targets_one_signer() {
        let f = Fixture::new(32);
        let ct = f.raw(b"x", 1, 0);
        let mut m = Message::CompleteTx { ct: ct.clone() };
        assert_eq!(m.corrupt_signatures_of(f.esps[0].public().key_id()), 1);
        let Message::CompleteTx { ct: bad } = m else {
            unreachable!()
        };
        assert_eq!(bad.inner, ct.inner);
        assert_ne!(bad.executing_signature, ct.executing_signature);
    }
}
