use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chaincode::{ExecutionContext, Registry};
use crate::codec::Encode;
use crate::crypto::{sha256, Digest, PublicKey};
use crate::identity::{
    derive_ledger_keypair, derive_root_keypair, Address, IdentityError, KeyPair, RootRecord,
    SeedPhrase, ServiceKind,
};
use crate::ledger::{
    hash_header, user_countersign, validate_candidate, validate_connection, validate_data_block,
    validate_genesis_block, validate_ledger, Block, CompleteTransaction, ConfigEntry, DataBlock,
    Finding, GenesisBlock, KeyDirectory, Ledger, Role, Transaction, ValidationReport,
    CONFIG_ESP_KEYS, CONFIG_GBA_KEY, CONFIG_OSP_KEYS, CONFIG_USER_KEY, CONFIG_VSP_KEYS,
};

use super::message::{Message, Query, QueryResponse, RefusalCode};
use super::pool::{PoolError, ProviderPool, RoundState};
use super::vsp::{check_dependencies, dependency_sort};
use super::{Fault, Reply, Transport};

/// Ledger indices tried when the root record does not name the ledger.
const INDEX_SEARCH: u64 = 64;

/// Requests one operation may make before giving up.
const STEP_LIMIT: usize = 10_000;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("no {kind} provider available ({} faulted)", faults.len())]
    Unavailable { kind: ServiceKind, faults: Vec<Fault> },
    #[error("{provider} refused: {code}: {detail}")]
    Refused {
        provider: String,
        code: RefusalCode,
        detail: String,
    },
    #[error("ledger {0} already exists")]
    Duplicate(Address),
    #[error("unknown ledger {0}")]
    UnknownLedger(Address),
    #[error("no storage provider accepted the genesis block")]
    StorageFailed(Vec<(String, ProviderOutcome)>),
    #[error("ledger failed validation: {0}")]
    Invalid(Finding),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("gave up after {0} requests")]
    Stuck(usize),
}

impl ApiError {
    /// True when the failure is a provider fault rather than a refusal or
    /// an invalid ledger.
    pub fn is_fault(&self) -> bool {
        matches!(
            self,
            ApiError::Unavailable { .. } | ApiError::StorageFailed(_) | ApiError::Stuck(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderOutcome {
    Stored,
    Refused(RefusalCode, String),
    Faulted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreateReport {
    pub ledger: Ledger,
    pub gba: String,
    pub storage: Vec<(String, ProviderOutcome)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadReport {
    pub ledger: Ledger,
    pub provider: String,
    pub report: ValidationReport,
}

/// What the user asks to record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TxSpec {
    pub payload: Vec<u8>,
    pub chaincode: Option<String>,
    pub inputs: Vec<Digest>,
}

impl TxSpec {
    pub fn raw(payload: impl Into<Vec<u8>>) -> Self {
        TxSpec {
            payload: payload.into(),
            ..Self::default()
        }
    }

    pub fn chaincode(id: &str, payload: impl Into<Vec<u8>>) -> Self {
        TxSpec {
            payload: payload.into(),
            chaincode: Some(id.to_owned()),
            inputs: Vec::new(),
        }
    }

    pub fn consuming(mut self, inputs: Vec<Digest>) -> Self {
        self.inputs = inputs;
        self
    }
}

/// Where a submitted transaction went.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    /// Id of the complete transaction.
    pub tx_id: Digest,
    pub esp: String,
    pub osp: String,
    pub vsp: String,
    pub output: Vec<u8>,
    /// Height of the block holding the transaction, if it was committed
    /// during the call.
    pub committed_at: Option<u64>,
    /// Heights of every block committed during the call.
    pub committed: Vec<u64>,
}

#[derive(Debug, Clone)]
struct Session {
    index: u64,
    user_key: PublicKey,
    ledger: Ledger,
    keys: KeyDirectory,
    round: Option<RoundState>,
    requeue: bool,
    pending: Vec<CompleteTransaction>,
    /// Trailing blocks of `ledger` no storage provider has yet.
    held: usize,
    known: BTreeSet<Digest>,
    executed: BTreeSet<Digest>,
    ctx: ExecutionContext,
}

/// Per-call bookkeeping.
#[derive(Default)]
struct Op {
    excluded: BTreeSet<String>,
    reexecute: VecDeque<Transaction>,
    accepted: BTreeMap<Digest, Receipt>,
    committed: Vec<u64>,
    steps: usize,
}

impl Op {
    fn step(&mut self) -> Result<(), ApiError> {
        self.steps += 1;
        if self.steps > STEP_LIMIT {
            return Err(ApiError::Stuck(self.steps));
        }
        Ok(())
    }
}

fn inner_hash(tx: &Transaction) -> Digest {
    sha256(&tx.canonical_bytes())
}

/// The Ledger API: the user's agent that orchestrates every other service.
///
/// The agent never stores a secret. Every call that signs takes the seed
/// phrase and re-derives the key it needs.
#[derive(Clone)]
pub struct UserAgent {
    pool: ProviderPool,
    rng: ChaCha8Rng,
    registry: Registry,
    kyc: Vec<u8>,
    sessions: BTreeMap<Address, Session>,
    suspects: BTreeSet<String>,
    audit: Vec<String>,
}

impl UserAgent {
    pub fn new(pool: ProviderPool) -> Result<Self, PoolError> {
        pool.check()?;
        Ok(UserAgent {
            rng: ChaCha8Rng::seed_from_u64(pool.rng_seed),
            pool,
            registry: Registry::with_builtins(),
            kyc: Vec::new(),
            sessions: BTreeMap::new(),
            suspects: BTreeSet::new(),
            audit: Vec::new(),
        })
    }

    pub fn with_registry(mut self, registry: Registry) -> Self {
        self.registry = registry;
        self
    }

    pub fn with_kyc(mut self, blob: impl Into<Vec<u8>>) -> Self {
        self.kyc = blob.into();
        self
    }

    pub fn pool(&self) -> &ProviderPool {
        &self.pool
    }

    pub fn audit_log(&self) -> &[String] {
        &self.audit
    }

    /// Providers caught producing bad signatures. They are never drawn again.
    pub fn suspects(&self) -> &BTreeSet<String> {
        &self.suspects
    }

    pub fn round(&self, ledger: &Address) -> Option<&RoundState> {
        self.sessions.get(ledger).and_then(|s| s.round.as_ref())
    }

    /// Complete transactions accepted by an OSP but not yet committed.
    pub fn pending(&self, ledger: &Address) -> &[CompleteTransaction] {
        self.sessions.get(ledger).map_or(&[], |s| &s.pending)
    }

    /// The agent's view of a ledger, including blocks no storage holds yet.
    pub fn local_ledger(&self, ledger: &Address) -> Option<&Ledger> {
        self.sessions.get(ledger).map(|s| &s.ledger)
    }

    pub fn held_blocks(&self, ledger: &Address) -> usize {
        self.sessions.get(ledger).map_or(0, |s| s.held)
    }

    pub fn key_directory(&self, ledger: &Address) -> Option<&KeyDirectory> {
        self.sessions.get(ledger).map(|s| &s.keys)
    }

    pub fn latest_state(&self, ledger: &Address, chaincode: &str) -> Option<Vec<u8>> {
        let s = self.sessions.get(ledger)?;
        let def = self.registry.get(chaincode).ok()?;
        Some(s.ctx.state_of(def.as_ref()))
    }

    fn note(&mut self, line: String) {
        self.audit.push(line);
    }

    fn session(&mut self, ledger: &Address) -> &mut Session {
        self.sessions.get_mut(ledger).expect("session loaded")
    }

    fn provider_keys(&self) -> Vec<ConfigEntry> {
        vec![
            ConfigEntry::keys(CONFIG_GBA_KEY, &self.pool.keys(ServiceKind::Gba)),
            ConfigEntry::keys(CONFIG_ESP_KEYS, &self.pool.keys(ServiceKind::Esp)),
            ConfigEntry::keys(CONFIG_OSP_KEYS, &self.pool.keys(ServiceKind::Osp)),
            ConfigEntry::keys(CONFIG_VSP_KEYS, &self.pool.keys(ServiceKind::Vsp)),
        ]
    }

    fn suspect_key(&mut self, key: &crate::crypto::KeyId, why: &str) -> Option<ServiceKind> {
        let record = self.pool.find_key(key)?.clone();
        if self.suspects.insert(record.provider_id.clone()) {
            self.note(format!("suspect {}: {why}", record.provider_id));
        }
        Some(record.kind)
    }

    // ---- reads ----

    /// Asks storage providers in order and returns the first answer that is
    /// not a fault. `NotFound` moves on to the next provider.
    fn query_storage(
        &mut self,
        net: &mut dyn Transport,
        query: Query,
    ) -> Result<(String, QueryResponse), ApiError> {
        let mut faults = Vec::new();
        let mut refusal = None;
        for s in self.pool.storage.clone() {
            match net.request(&s.provider_id, &Message::Query(query.clone())) {
                Ok(Reply {
                    message: Message::QueryResponse(r),
                    from,
                }) => return Ok((from, r)),
                Ok(Reply {
                    message: Message::Refusal { code, detail },
                    from,
                }) => {
                    refusal.get_or_insert(ApiError::Refused {
                        provider: from,
                        code,
                        detail,
                    });
                }
                Ok(other) => self.note(format!("{}: unexpected {}", other.from, other.message.name())),
                Err(f) => faults.push(f),
            }
        }
        Err(refusal.unwrap_or(ApiError::Unavailable {
            kind: ServiceKind::Storage,
            faults,
        }))
    }

    /// Reads a ledger from the first storage provider that answers and
    /// validates it under the keys in its genesis configuration.
    pub fn read_ledger(&mut self, net: &mut dyn Transport, ledger: &Address) -> Result<ReadReport, ApiError> {
        match self.query_storage(net, Query::GetLedger(*ledger)) {
            Ok((provider, QueryResponse::Ledger(l))) => {
                let keys = KeyDirectory::from_genesis(&l.genesis);
                let report = validate_ledger(&l, &keys);
                Ok(ReadReport {
                    ledger: l,
                    provider,
                    report,
                })
            }
            Ok((provider, other)) => Err(ApiError::Refused {
                provider,
                code: RefusalCode::Unexpected,
                detail: format!("{other:?}"),
            }),
            Err(ApiError::Refused {
                code: RefusalCode::NotFound,
                ..
            }) => Err(ApiError::UnknownLedger(*ledger)),
            Err(e) => Err(e),
        }
    }

    pub fn read_root_record(
        &mut self,
        net: &mut dyn Transport,
        root: &Address,
    ) -> Result<Option<RootRecord>, ApiError> {
        match self.query_storage(net, Query::GetRootRecord(*root)) {
            Ok((_, QueryResponse::RootRecord(r))) => Ok(Some(r)),
            Ok(_) => Ok(None),
            Err(ApiError::Refused {
                code: RefusalCode::NotFound,
                ..
            }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn list_ledgers(&mut self, net: &mut dyn Transport, root: &Address) -> Result<Vec<Address>, ApiError> {
        Ok(self
            .read_root_record(net, root)?
            .map(|r| r.ledger_addresses().copied().collect())
            .unwrap_or_default())
    }

    // ---- ledger creation ----

    /// Creates ledger number `index` under `phrase`: genesis from a random
    /// GBA, countersigned, stored everywhere and registered in the root
    /// record.
    pub fn create_ledger(
        &mut self,
        net: &mut dyn Transport,
        phrase: &SeedPhrase,
        index: u64,
        config: Vec<ConfigEntry>,
    ) -> Result<CreateReport, ApiError> {
        let root = derive_root_keypair(phrase);
        let user = derive_ledger_keypair(&root, index)?;
        let address = Address::ledger(&user.public());
        let root_address = Address::root(&root.public());
        if self.sessions.contains_key(&address) {
            return Err(ApiError::Duplicate(address));
        }
        let mut record = self
            .read_root_record(net, &root_address)
            .ok()
            .flatten()
            .unwrap_or_else(|| RootRecord::new(&root.public()));
        if record.contains_ledger(&address) {
            return Err(ApiError::Duplicate(address));
        }

        let mut entries = config;
        for e in self.provider_keys() {
            if !entries.iter().any(|x| x.key == e.key) {
                entries.push(e);
            }
        }
        let (gba, genesis) = self.obtain_genesis(net, &user, entries)?;

        let mut outcomes = Vec::new();
        for s in self.pool.storage.clone() {
            let msg = Message::StoreGenesis {
                ledger: address,
                genesis: genesis.clone(),
            };
            let outcome = match net.request(&s.provider_id, &msg) {
                Ok(Reply {
                    message: Message::Ack,
                    ..
                }) => ProviderOutcome::Stored,
                Ok(Reply {
                    message: Message::Refusal { code, detail },
                    ..
                }) => ProviderOutcome::Refused(code, detail),
                Ok(other) => ProviderOutcome::Refused(RefusalCode::Unexpected, other.message.name().into()),
                Err(_) => ProviderOutcome::Faulted,
            };
            outcomes.push((s.provider_id, outcome));
        }
        if !outcomes.iter().any(|(_, o)| *o == ProviderOutcome::Stored) {
            let all_duplicate = outcomes
                .iter()
                .all(|(_, o)| matches!(o, ProviderOutcome::Refused(RefusalCode::Duplicate, _)));
            return Err(if all_duplicate {
                ApiError::Duplicate(address)
            } else {
                ApiError::StorageFailed(outcomes)
            });
        }

        record.add_ledger(index, address)?;
        for p in self.pool.all().filter(|p| p.kind != ServiceKind::Storage) {
            record.add_provider_key(p.provider_id.clone(), p.kind, p.public_key);
        }
        for s in self.pool.storage.clone() {
            let msg = Message::StoreRootRecord {
                record: record.clone(),
            };
            if !matches!(net.request(&s.provider_id, &msg), Ok(Reply { message: Message::Ack, .. })) {
                self.note(format!("{}: root record not stored", s.provider_id));
            }
        }

        let ledger = Ledger::new(address, genesis.clone());
        let keys = KeyDirectory::for_ledger(&genesis, Some(&record));
        self.sessions.insert(
            address,
            Session {
                index,
                user_key: user.public(),
                ledger: ledger.clone(),
                keys,
                round: None,
                requeue: false,
                pending: Vec::new(),
                held: 0,
                known: BTreeSet::new(),
                executed: BTreeSet::new(),
                ctx: ExecutionContext::new(address),
            },
        );
        Ok(CreateReport {
            ledger,
            gba,
            storage: outcomes,
        })
    }

    fn obtain_genesis(
        &mut self,
        net: &mut dyn Transport,
        user: &KeyPair,
        entries: Vec<ConfigEntry>,
    ) -> Result<(String, GenesisBlock), ApiError> {
        let mut excluded = self.suspects.clone();
        let mut faults = Vec::new();
        loop {
            let Some(gba) = self.pool.draw(ServiceKind::Gba, &excluded, &mut self.rng).cloned() else {
                return Err(ApiError::Unavailable {
                    kind: ServiceKind::Gba,
                    faults,
                });
            };
            excluded.insert(gba.provider_id.clone());
            let request = Message::GenesisRequest {
                user_public_key: Some(user.public()),
                entries: entries.clone(),
                kyc: self.kyc.clone(),
            };
            match net.request(&gba.provider_id, &request) {
                Err(f) => faults.push(f),
                Ok(Reply {
                    message: Message::GenesisResponse { mut genesis },
                    ..
                }) => {
                    let ours = genesis.user_public_key() == Some(user.public())
                        && entries.iter().all(|e| genesis.config.contains(e))
                        && genesis
                            .config
                            .iter()
                            .all(|e| e.key == CONFIG_USER_KEY || entries.contains(e));
                    genesis.user_countersign(user);
                    let report = validate_genesis_block(&genesis, &gba.public_key, &user.public());
                    if ours && report.is_valid() {
                        return Ok((gba.provider_id, genesis));
                    }
                    self.suspects.insert(gba.provider_id.clone());
                    self.note(format!(
                        "suspect {}: genesis rejected ({})",
                        gba.provider_id,
                        report
                            .first_failure()
                            .map_or("config altered".to_string(), |f| f.to_string())
                    ));
                }
                Ok(Reply {
                    message: Message::Refusal { code, detail },
                    from,
                }) => {
                    return Err(ApiError::Refused {
                        provider: from,
                        code,
                        detail,
                    })
                }
                Ok(other) => self.note(format!("{}: unexpected {}", other.from, other.message.name())),
            }
        }
    }

    // ---- sessions ----

    /// Loads the session for `ledger` from storage if it is not cached.
    fn open_session(
        &mut self,
        net: &mut dyn Transport,
        phrase: &SeedPhrase,
        ledger: &Address,
    ) -> Result<(), ApiError> {
        if self.sessions.contains_key(ledger) {
            return Ok(());
        }
        let read = self.read_ledger(net, ledger)?;
        if let Some(f) = read.report.first_failure() {
            return Err(ApiError::Invalid(f));
        }
        let l = read.ledger;
        let root = derive_root_keypair(phrase);
        let record = self
            .read_root_record(net, &Address::root(&root.public()))
            .ok()
            .flatten();
        let index = record
            .as_ref()
            .and_then(|r| r.ledgers.iter().find(|e| e.address == *ledger))
            .map(|e| e.index)
            .or_else(|| {
                (0..INDEX_SEARCH).find(|i| {
                    derive_ledger_keypair(&root, *i)
                        .is_ok_and(|k| Address::ledger(&k.public()) == *ledger)
                })
            })
            // A phrase that owns no key for this ledger signs with index 0
            // and is refused by the executing provider.
            .unwrap_or(0);
        let keys = KeyDirectory::for_ledger(&l.genesis, record.as_ref());
        let user_key = l
            .genesis
            .user_public_key()
            .ok_or(ApiError::UnknownLedger(*ledger))?;
        let ctx = ExecutionContext::rebuild(&self.registry, &l);
        let known: BTreeSet<Digest> = l.transactions().map(|(_, _, ct)| ct.id()).collect();
        let executed = l.transactions().map(|(_, _, ct)| inner_hash(&ct.inner)).collect();
        self.sessions.insert(
            *ledger,
            Session {
                index,
                user_key,
                ledger: l,
                keys,
                round: None,
                requeue: false,
                pending: Vec::new(),
                held: 0,
                known,
                executed,
                ctx,
            },
        );
        Ok(())
    }

    fn user_key(&mut self, phrase: &SeedPhrase, ledger: &Address) -> Result<KeyPair, ApiError> {
        let index = self.session(ledger).index;
        Ok(derive_ledger_keypair(&derive_root_keypair(phrase), index)?)
    }

    /// Puts back complete transactions a previous process left pending.
    pub fn restore_pending(
        &mut self,
        net: &mut dyn Transport,
        phrase: &SeedPhrase,
        ledger: &Address,
        cts: Vec<CompleteTransaction>,
    ) -> Result<(), ApiError> {
        self.open_session(net, phrase, ledger)?;
        let mut op = Op::default();
        for ct in cts {
            self.accept_ct(ledger, ct, &mut op);
        }
        Ok(())
    }

    // ---- rounds ----

    fn open_round(&mut self, net: &mut dyn Transport, ledger: &Address, op: &mut Op) -> Result<(), ApiError> {
        let mut faults = Vec::new();
        let vsp = loop {
            op.step()?;
            let excluded: BTreeSet<String> = self.suspects.union(&op.excluded).cloned().collect();
            let Some(vsp) = self.pool.draw(ServiceKind::Vsp, &excluded, &mut self.rng).cloned() else {
                return Err(ApiError::Unavailable {
                    kind: ServiceKind::Vsp,
                    faults,
                });
            };
            let s = &self.sessions[ledger];
            let msg = Message::ValidateRound {
                ledger: *ledger,
                tip_hash: s.ledger.tip_chain_hash(),
                tip_height: s.ledger.tip_height(),
                keys: s.keys.clone(),
                known_ids: s.known.iter().copied().collect(),
            };
            match net.request(&vsp.provider_id, &msg) {
                Ok(Reply {
                    message: Message::Ack,
                    ..
                }) => break vsp,
                Ok(other) => self.note(format!("{}: round refused ({})", other.from, other.message.name())),
                Err(f) => faults.push(f),
            }
            op.excluded.insert(vsp.provider_id);
        };
        let esp_keys = self.pool.keys(ServiceKind::Esp);
        let osp = loop {
            op.step()?;
            let excluded: BTreeSet<String> = self.suspects.union(&op.excluded).cloned().collect();
            let Some(osp) = self.pool.draw(ServiceKind::Osp, &excluded, &mut self.rng).cloned() else {
                return Err(ApiError::Unavailable {
                    kind: ServiceKind::Osp,
                    faults,
                });
            };
            let msg = Message::OrderRound {
                ledger: *ledger,
                vsp: vsp.provider_id.clone(),
                esp_keys: esp_keys.clone(),
            };
            match net.request(&osp.provider_id, &msg) {
                Ok(Reply {
                    message: Message::Ack,
                    ..
                }) => break osp,
                Ok(other) => self.note(format!("{}: round refused ({})", other.from, other.message.name())),
                Err(f) => faults.push(f),
            }
            op.excluded.insert(osp.provider_id);
        };
        let s = self.session(ledger);
        s.round = Some(RoundState {
            current_vsp: vsp.provider_id,
            current_osp: osp.provider_id,
            established_at_height: s.ledger.tip_height(),
        });
        s.requeue = true;
        Ok(())
    }

    fn on_fault(&mut self, ledger: &Address, fault: Fault, op: &mut Op) {
        self.note(fault.to_string());
        op.excluded.insert(fault.provider);
        self.session(ledger).round = None;
    }

    /// Makes sure a round is open and the OSP holds every pending
    /// transaction, committing any block that results.
    fn settle(
        &mut self,
        net: &mut dyn Transport,
        ledger: &Address,
        user: &KeyPair,
        op: &mut Op,
    ) -> Result<(), ApiError> {
        loop {
            op.step()?;
            if self.session(ledger).round.is_none() {
                self.open_round(net, ledger, op)?;
            }
            let s = self.session(ledger);
            if !s.requeue || s.pending.is_empty() {
                s.requeue = false;
                return Ok(());
            }
            s.requeue = false;
            let osp = s.round.as_ref().expect("round open").current_osp.clone();
            let msg = Message::Requeue {
                ledger: *ledger,
                cts: s.pending.clone(),
            };
            match net.request(&osp, &msg) {
                Err(f) => self.on_fault(ledger, f, op),
                Ok(reply) => self.absorb(net, ledger, user, reply, op)?,
            }
        }
    }

    // ---- replies ----

    /// Records a complete transaction the OSP now holds. A bad executing
    /// signature marks its signer and sends the transaction back for
    /// re-execution.
    fn accept_ct(&mut self, ledger: &Address, ct: CompleteTransaction, op: &mut Op) {
        let id = ct.id();
        let inner = inner_hash(&ct.inner);
        let s = &self.sessions[ledger];
        if s.known.contains(&id) || s.pending.iter().any(|c| c.id() == id) {
            return;
        }
        let valid = s
            .keys
            .check(Role::Esp, &ct.signing_bytes(), &ct.executing_signature)
            .is_ok();
        // A valid execution of this transaction is already pending or committed.
        let settled = s.executed.contains(&inner);
        if !valid {
            self.suspect_key(&ct.executing_signature.signer, "executing signature invalid");
            if !settled && !op.reexecute.iter().any(|t| inner_hash(t) == inner) {
                op.reexecute.push_back(ct.inner);
            }
            return;
        }
        if settled {
            return;
        }
        let esp = self
            .pool
            .find_key(&ct.executing_signature.signer)
            .map_or_else(String::new, |r| r.provider_id.clone());
        let def = ct
            .inner
            .chaincode_id
            .as_ref()
            .and_then(|c| self.registry.get(c).ok())
            .cloned();
        let s = self.session(ledger);
        s.executed.insert(inner);
        if let Some(def) = def {
            let state = s.ctx.state_of(def.as_ref());
            if let Ok((next, _)) = def.step(&state, &ct.inner.payload) {
                s.ctx.latest_state.insert(def.id().to_owned(), next);
            }
        }
        let round = s.round.clone();
        op.reexecute.retain(|t| inner_hash(t) != inner);
        op.accepted.insert(
            inner,
            Receipt {
                tx_id: id,
                esp,
                osp: round.as_ref().map_or_else(String::new, |r| r.current_osp.clone()),
                vsp: round.as_ref().map_or_else(String::new, |r| r.current_vsp.clone()),
                output: ct.output.clone(),
                committed_at: None,
                committed: Vec::new(),
            },
        );
        s.pending.push(ct);
    }

    fn absorb(
        &mut self,
        net: &mut dyn Transport,
        ledger: &Address,
        user: &KeyPair,
        reply: Reply,
        op: &mut Op,
    ) -> Result<(), ApiError> {
        match reply.message {
            Message::Ack => {}
            Message::Queued { ct } => self.accept_ct(ledger, ct, op),
            Message::ValidatedBlock { block, queued } => {
                for ct in block.transactions.iter().chain(&queued) {
                    self.accept_ct(ledger, ct.clone(), op);
                }
                self.commit(net, ledger, user, block, &reply.from, op)?;
            }
            Message::IgnoredBlock {
                transactions,
                queued,
                reason,
                ..
            } => {
                self.note(format!("{}: block ignored: {reason}", reply.from));
                for ct in transactions.into_iter().chain(queued) {
                    self.accept_ct(ledger, ct, op);
                }
                let s = self.session(ledger);
                let (sorted, stuck) = dependency_sort(std::mem::take(&mut s.pending), &s.known);
                s.pending = sorted;
                s.requeue = true;
                for ct in stuck {
                    self.note(format!("dropped {}: its inputs are not on the ledger", ct.id()));
                }
            }
            Message::RejectedBlock {
                transactions,
                queued,
                finding,
                culprit,
                ..
            } => {
                self.note(format!("{}: block rejected: {finding}", reply.from));
                // Without a named culprit the ordering provider built the bad candidate.
                let osp_key = self.sessions[ledger]
                    .round
                    .as_ref()
                    .and_then(|r| self.pool.find(&r.current_osp))
                    .map(|r| r.public_key.key_id());
                if let Some(key) = culprit.or(osp_key) {
                    if matches!(
                        self.suspect_key(&key, &finding),
                        Some(ServiceKind::Osp | ServiceKind::Vsp) | None
                    ) {
                        self.session(ledger).round = None;
                    }
                }
                for ct in transactions.into_iter().chain(queued) {
                    self.accept_ct(ledger, ct, op);
                }
                self.session(ledger).requeue = true;
            }
            Message::Refusal {
                code: RefusalCode::NoRound,
                ..
            } => self.session(ledger).round = None,
            Message::Refusal { code, detail } => {
                return Err(ApiError::Refused {
                    provider: reply.from,
                    code,
                    detail,
                })
            }
            other => self.note(format!("{}: unexpected {}", reply.from, other.name())),
        }
        Ok(())
    }

    /// Checks a block the VSP signed, countersigns it and writes it to
    /// every storage provider. With no storage available the block is held
    /// locally and pushed later.
    fn commit(
        &mut self,
        net: &mut dyn Transport,
        ledger: &Address,
        user: &KeyPair,
        mut block: DataBlock,
        from: &str,
        op: &mut Op,
    ) -> Result<(), ApiError> {
        let s = &self.sessions[ledger];
        let tip = match s.ledger.blocks.last() {
            Some(b) => Block::Data(b.clone()),
            None => Block::Genesis(s.ledger.genesis.clone()),
        };
        let keys = s.keys.clone();
        let owner = user.public() == s.user_key;
        let vsp_key = block.validation_signature.signer;
        let problem = if block.core.previous_hash != tip.chain_hash()
            || block.core.height != tip.height() + 1
        {
            Some("block does not extend the local tip".to_string())
        } else if let Err(e) = keys.check(Role::Vsp, &hash_header(&block.core).0, &block.validation_signature) {
            self.suspect_key(&vsp_key, "validation signature invalid");
            Some(format!("validation signature: {e}"))
        } else if let Some(f) = validate_candidate(&block, &keys).first_failure() {
            self.suspect_key(&vsp_key, "signed an invalid block");
            Some(f.to_string())
        } else if let Err(e) = check_dependencies(&block.transactions, &self.sessions[ledger].known) {
            self.suspect_key(&vsp_key, "signed a misordered block");
            Some(e)
        } else if !owner {
            return Err(ApiError::Refused {
                provider: "user".into(),
                code: RefusalCode::BadUserSignature,
                detail: "seed phrase does not own this ledger".into(),
            });
        } else {
            None
        };
        if let Some(why) = problem {
            self.note(format!("{from}: block refused: {why}"));
            self.session(ledger).round = None;
            return Ok(());
        }

        user_countersign(&mut block, user);
        debug_assert!(validate_data_block(&block, &keys).is_valid());
        debug_assert!(validate_connection(&tip, &block));

        let mut stored = false;
        for st in self.pool.storage.clone() {
            let msg = Message::CommitBlock {
                ledger: *ledger,
                block: block.clone(),
            };
            stored |= match net.request(&st.provider_id, &msg) {
                Ok(Reply {
                    message: Message::Ack,
                    ..
                }) => true,
                Ok(Reply {
                    message:
                        Message::Refusal {
                            code: RefusalCode::NonExtending | RefusalCode::NotFound,
                            ..
                        },
                    ..
                }) => self.backfill(net, ledger, &st.provider_id, Some(&block)),
                Ok(other) => {
                    self.note(format!("{}: commit refused ({})", other.from, other.message.name()));
                    false
                }
                Err(f) => {
                    self.note(f.to_string());
                    false
                }
            };
        }

        let height = block.core.height;
        let s = self.session(ledger);
        let ids: BTreeSet<Digest> = block.transactions.iter().map(CompleteTransaction::id).collect();
        s.pending.retain(|c| !ids.contains(&c.id()));
        s.known.extend(ids.iter().copied());
        s.ledger.blocks.push(block);
        s.held = if stored { 0 } else { s.held + 1 };
        s.round = None;
        if !stored {
            self.note(format!("block {height} held: no storage provider accepted it"));
        }
        op.committed.push(height);
        for r in op.accepted.values_mut() {
            if ids.contains(&r.tx_id) {
                r.committed_at = Some(height);
            }
        }
        Ok(())
    }

    /// Brings one storage provider up to the local tip, optionally followed
    /// by `next`. Returns whether the provider ends up holding everything.
    fn backfill(
        &mut self,
        net: &mut dyn Transport,
        ledger: &Address,
        provider: &str,
        next: Option<&DataBlock>,
    ) -> bool {
        let local = self.sessions[ledger].ledger.clone();
        let from = match net.request(provider, &Message::Query(Query::GetTip(*ledger))) {
            Ok(Reply {
                message: Message::QueryResponse(QueryResponse::Tip { height, chain_hash }),
                ..
            }) => {
                let matches = local
                    .to_chain()
                    .blocks
                    .get(height as usize)
                    .is_some_and(|b| b.chain_hash() == chain_hash);
                if !matches {
                    self.note(format!("{provider}: stored ledger diverges at height {height}"));
                    return false;
                }
                height as usize
            }
            Ok(Reply {
                message:
                    Message::Refusal {
                        code: RefusalCode::NotFound,
                        ..
                    },
                ..
            }) => {
                let msg = Message::StoreGenesis {
                    ledger: *ledger,
                    genesis: local.genesis.clone(),
                };
                if !matches!(net.request(provider, &msg), Ok(Reply { message: Message::Ack, .. })) {
                    return false;
                }
                0
            }
            _ => return false,
        };
        for b in local.blocks.iter().skip(from).chain(next) {
            let msg = Message::CommitBlock {
                ledger: *ledger,
                block: b.clone(),
            };
            if !matches!(net.request(provider, &msg), Ok(Reply { message: Message::Ack, .. })) {
                return false;
            }
        }
        true
    }

    /// Pushes held blocks to every storage provider that is behind.
    fn flush_held(&mut self, net: &mut dyn Transport, ledger: &Address) {
        if self.sessions[ledger].held == 0 {
            return;
        }
        let mut any = false;
        for st in self.pool.storage.clone() {
            any |= self.backfill(net, ledger, &st.provider_id, None);
        }
        if any {
            self.session(ledger).held = 0;
        }
    }

    // ---- submission ----

    /// Signs a transaction, runs it through a randomly drawn ESP and the
    /// current round's OSP, and commits any block that results.
    pub fn submit(
        &mut self,
        net: &mut dyn Transport,
        phrase: &SeedPhrase,
        ledger: &Address,
        spec: TxSpec,
    ) -> Result<Receipt, ApiError> {
        self.open_session(net, phrase, ledger)?;
        let user = self.user_key(phrase, ledger)?;
        let tx = Transaction::new_signed(
            *ledger,
            spec.payload,
            spec.chaincode,
            net.now(),
            spec.inputs,
            &user,
        );
        let mut op = Op::default();
        let owner = user.public() == self.sessions[ledger].user_key;
        if owner {
            self.flush_held(net, ledger);
            self.settle(net, ledger, &user, &mut op)?;
        }
        let target = inner_hash(&tx);
        op.reexecute.push_back(tx);
        while let Some(next) = op.reexecute.pop_front() {
            self.execute(net, ledger, &user, next, &mut op)?;
            if owner {
                self.settle(net, ledger, &user, &mut op)?;
            }
        }
        let mut receipt = op.accepted.remove(&target).ok_or_else(|| ApiError::Unavailable {
            kind: ServiceKind::Esp,
            faults: Vec::new(),
        })?;
        receipt.committed = op.committed;
        Ok(receipt)
    }

    /// Sends one signed transaction to an ESP, retrying other ESPs on
    /// faults and reopening the round when the OSP or VSP faults.
    fn execute(
        &mut self,
        net: &mut dyn Transport,
        ledger: &Address,
        user: &KeyPair,
        tx: Transaction,
        op: &mut Op,
    ) -> Result<(), ApiError> {
        let m = self.pool.esp.len();
        let mut tried: BTreeSet<String> = BTreeSet::new();
        let mut faults = Vec::new();
        loop {
            op.step()?;
            if self.session(ledger).round.is_none() {
                self.open_round(net, ledger, op)?;
            }
            let s = &self.sessions[ledger];
            let osp = s.round.as_ref().expect("round open").current_osp.clone();
            let prior = tx
                .chaincode_id
                .as_ref()
                .and_then(|c| self.registry.get(c).ok())
                .map(|d| s.ctx.state_of(d.as_ref()));
            let user_public_key = s.user_key;
            let excluded: BTreeSet<String> = self.suspects.union(&tried).cloned().collect();
            let Some(esp) = self.pool.draw(ServiceKind::Esp, &excluded, &mut self.rng).cloned() else {
                return Err(ApiError::Unavailable {
                    kind: ServiceKind::Esp,
                    faults,
                });
            };
            let msg = Message::SubmitTx {
                tx: tx.clone(),
                user_public_key,
                osp,
                prior_state: prior,
            };
            match net.request(&esp.provider_id, &msg) {
                Err(f) if f.provider == esp.provider_id => {
                    self.note(f.to_string());
                    tried.insert(esp.provider_id);
                    faults.push(f);
                    if tried.len() >= m {
                        return Err(ApiError::Unavailable {
                            kind: ServiceKind::Esp,
                            faults,
                        });
                    }
                }
                Err(f) => self.on_fault(ledger, f, op),
                Ok(Reply {
                    message: Message::Refusal { code, detail },
                    from,
                }) if from == esp.provider_id => {
                    return Err(ApiError::Refused {
                        provider: from,
                        code,
                        detail,
                    })
                }
                Ok(reply) => {
                    self.absorb(net, ledger, user, reply, op)?;
                    let target = inner_hash(&tx);
                    if op.accepted.contains_key(&target)
                        || op.reexecute.iter().any(|t| inner_hash(t) == target)
                    {
                        return Ok(());
                    }
                }
            }
        }
    }

    /// Lets time-based cutting conditions fire. Returns committed heights.
    pub fn tick(
        &mut self,
        net: &mut dyn Transport,
        phrase: &SeedPhrase,
        ledger: &Address,
    ) -> Result<Vec<u64>, ApiError> {
        self.open_session(net, phrase, ledger)?;
        let user = self.user_key(phrase, ledger)?;
        let mut op = Op::default();
        self.flush_held(net, ledger);
        self.settle(net, ledger, &user, &mut op)?;
        let osp = self.sessions[ledger]
            .round
            .as_ref()
            .expect("round open")
            .current_osp
            .clone();
        match net.request(&osp, &Message::Tick { ledger: *ledger }) {
            Err(f) => self.on_fault(ledger, f, &mut op),
            Ok(reply) => self.absorb(net, ledger, &user, reply, &mut op)?,
        }
        self.settle(net, ledger, &user, &mut op)?;
        while let Some(next) = op.reexecute.pop_front() {
            self.execute(net, ledger, &user, next, &mut op)?;
            self.settle(net, ledger, &user, &mut op)?;
        }
        Ok(op.committed)
    }
}
