use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::{Decode, Encode};
use crate::crypto::verify;
use crate::identity::{Address, RootRecord, ServiceKind};
use crate::ledger::{
    decode_ledger_file, encode_ledger_file, user_block_message, validate_connection, Block,
    DataBlock, GenesisBlock, Ledger,
};

use super::message::{Message, Query, QueryResponse, RefusalCode};
use super::{Handled, Service};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0} already exists")]
    Duplicate(String),
    #[error("block does not extend the stored tip: {0}")]
    NonExtending(String),
    #[error("rejected: {0}")]
    Invalid(String),
    #[error("storage I/O: {0}")]
    Io(String),
}

impl StoreError {
    pub fn code(&self) -> RefusalCode {
        match self {
            StoreError::NotFound(_) => RefusalCode::NotFound,
            StoreError::Duplicate(_) => RefusalCode::Duplicate,
            StoreError::NonExtending(_) => RefusalCode::NonExtending,
            StoreError::Invalid(_) | StoreError::Io(_) => RefusalCode::Malformed,
        }
    }
}

/// A place ledgers and root records live.
pub trait LedgerStore: Send {
    fn load(&self, address: &Address) -> Result<Option<Ledger>, StoreError>;

    fn save(&mut self, ledger: &Ledger) -> Result<(), StoreError>;

    fn load_root(&self, root: &Address) -> Result<Option<RootRecord>, StoreError>;

    fn save_root(&mut self, record: &RootRecord) -> Result<(), StoreError>;

    fn clone_box(&self) -> Box<dyn LedgerStore>;

    /// Stores the first block of a new ledger.
    fn put_genesis(&mut self, address: Address, genesis: GenesisBlock) -> Result<(), StoreError> {
        if self.load(&address)?.is_some() {
            return Err(StoreError::Duplicate(format!("ledger {address}")));
        }
        let user = genesis
            .user_public_key()
            .ok_or_else(|| StoreError::Invalid("genesis names no user key".into()))?;
        if Address::ledger(&user) != address {
            return Err(StoreError::Invalid(format!("{address} is not derived from the genesis user key")));
        }
        if genesis.core.height != 0 || !genesis.core.previous_hash.is_zero() {
            return Err(StoreError::Invalid("not a genesis header".into()));
        }
        if !verify(
            &user,
            &user_block_message(&genesis.core, &genesis.gba_signature),
            &genesis.user_signature,
        ) {
            return Err(StoreError::Invalid("user signature invalid".into()));
        }
        self.save(&Ledger::new(address, genesis))
    }

    /// Appends a user-signed block that extends the stored tip.
    fn put_block(&mut self, address: Address, block: DataBlock) -> Result<(), StoreError> {
        let mut ledger = self
            .load(&address)?
            .ok_or_else(|| StoreError::NotFound(format!("ledger {address}")))?;
        let tip = match ledger.blocks.last() {
            Some(b) => Block::Data(b.clone()),
            None => Block::Genesis(ledger.genesis.clone()),
        };
        if !validate_connection(&tip, &block) {
            return Err(StoreError::NonExtending(format!(
                "stored tip is height {}, block is height {}",
                ledger.tip_height(),
                block.core.height
            )));
        }
        let user = ledger
            .genesis
            .user_public_key()
            .ok_or_else(|| StoreError::Invalid("stored genesis names no user key".into()))?;
        if !verify(
            &user,
            &user_block_message(&block.core, &block.validation_signature),
            &block.user_signature,
        ) {
            return Err(StoreError::Invalid("user signature invalid".into()));
        }
        ledger.blocks.push(block);
        self.save(&ledger)
    }

    fn get_ledger(&self, address: &Address) -> Result<Ledger, StoreError> {
        self.load(address)?
            .ok_or_else(|| StoreError::NotFound(format!("ledger {address}")))
    }

    fn put_root_record(&mut self, record: RootRecord) -> Result<(), StoreError> {
        self.save_root(&record)
    }

    fn get_root_record(&self, root: &Address) -> Result<RootRecord, StoreError> {
        self.load_root(root)?
            .ok_or_else(|| StoreError::NotFound(format!("root record {root}")))
    }

    fn list_ledgers(&self, root: &Address) -> Result<Vec<Address>, StoreError> {
        Ok(self.get_root_record(root)?.ledger_addresses().copied().collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    ledgers: BTreeMap<Address, Ledger>,
    roots: BTreeMap<Address, RootRecord>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl LedgerStore for MemoryStore {
    fn load(&self, address: &Address) -> Result<Option<Ledger>, StoreError> {
        Ok(self.ledgers.get(address).cloned())
    }

    fn save(&mut self, ledger: &Ledger) -> Result<(), StoreError> {
        self.ledgers.insert(ledger.ledger_address, ledger.clone());
        Ok(())
    }

    fn load_root(&self, root: &Address) -> Result<Option<RootRecord>, StoreError> {
        Ok(self.roots.get(root).cloned())
    }

    fn save_root(&mut self, record: &RootRecord) -> Result<(), StoreError> {
        self.roots.insert(record.root_address, record.clone());
        Ok(())
    }

    fn clone_box(&self) -> Box<dyn LedgerStore> {
        Box::new(self.clone())
    }
}

/// One `PBL1` file per ledger and one file per root record in a directory.
/// Each append rewrites the ledger file. Clones share the directory.
#[derive(Debug, Clone)]
pub struct FileStore {
    dir: PathBuf,
}

fn io(e: std::io::Error) -> StoreError {
    StoreError::Io(e.to_string())
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io)?;
        Ok(FileStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn ledger_path(&self, address: &Address) -> PathBuf {
        self.dir.join(format!("{}.pbl", address.to_base58()))
    }

    fn root_path(&self, root: &Address) -> PathBuf {
        self.dir.join(format!("{}.root", root.to_base58()))
    }

    fn read(path: &Path) -> Result<Option<Vec<u8>>, StoreError> {
        match fs::read(path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(e)),
        }
    }

    fn write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }
}

impl LedgerStore for FileStore {
    fn load(&self, address: &Address) -> Result<Option<Ledger>, StoreError> {
        Self::read(&self.ledger_path(address))?
            .map(|b| decode_ledger_file(&b).map_err(|e| StoreError::Invalid(e.to_string())))
            .transpose()
    }

    fn save(&mut self, ledger: &Ledger) -> Result<(), StoreError> {
        Self::write(&self.ledger_path(&ledger.ledger_address), &encode_ledger_file(ledger))
    }

    fn load_root(&self, root: &Address) -> Result<Option<RootRecord>, StoreError> {
        Self::read(&self.root_path(root))?
            .map(|b| RootRecord::from_canonical_bytes(&b).map_err(|e| StoreError::Invalid(e.to_string())))
            .transpose()
    }

    fn save_root(&mut self, record: &RootRecord) -> Result<(), StoreError> {
        Self::write(&self.root_path(&record.root_address), &record.canonical_bytes())
    }

    fn clone_box(&self) -> Box<dyn LedgerStore> {
        Box::new(self.clone())
    }
}

/// Storage provider: a [`LedgerStore`] behind the message interface.
pub struct StorageService {
    store: Box<dyn LedgerStore>,
}

impl StorageService {
    pub fn new(store: impl LedgerStore + 'static) -> Self {
        StorageService {
            store: Box::new(store),
        }
    }

    pub fn store(&self) -> &dyn LedgerStore {
        self.store.as_ref()
    }

    fn query(&self, q: Query) -> Result<QueryResponse, StoreError> {
        Ok(match q {
            Query::GetLedger(a) => QueryResponse::Ledger(self.store.get_ledger(&a)?),
            Query::GetRootRecord(r) => QueryResponse::RootRecord(self.store.get_root_record(&r)?),
            Query::ListLedgers(r) => QueryResponse::Ledgers(self.store.list_ledgers(&r)?),
            Query::GetTip(a) => {
                let l = self.store.get_ledger(&a)?;
                QueryResponse::Tip {
                    height: l.tip_height(),
                    chain_hash: l.tip_chain_hash(),
                }
            }
        })
    }
}

fn ack(r: Result<(), StoreError>) -> Message {
    match r {
        Ok(()) => Message::Ack,
        Err(e) => Message::refusal(e.code(), e.to_string()),
    }
}

impl Service for StorageService {
    fn kind(&self) -> ServiceKind {
        ServiceKind::Storage
    }

    fn handle(&mut self, message: Message, _now: u64) -> Handled {
        Handled::Reply(match message {
            Message::StoreGenesis { ledger, genesis } => ack(self.store.put_genesis(ledger, genesis)),
            Message::CommitBlock { ledger, block } => ack(self.store.put_block(ledger, block)),
            Message::StoreRootRecord { record } => ack(self.store.put_root_record(record)),
            Message::Query(q) => match self.query(q) {
                Ok(r) => Message::QueryResponse(r),
                Err(e) => Message::refusal(e.code(), e.to_string()),
            },
            other => Message::refusal(
                RefusalCode::Unexpected,
                format!("storage does not handle {}", other.name()),
            ),
        })
    }

    fn clone_box(&self) -> Box<dyn Service> {
        Box::new(StorageService {
            store: self.store.clone_box(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::Fixture;
    use rand::SeedableRng;

    fn fill(store: &mut dyn LedgerStore, l: &Ledger) {
        store.put_genesis(l.ledger_address, l.genesis.clone()).unwrap();
        for b in &l.blocks {
            store.put_block(l.ledger_address, b.clone()).unwrap();
        }
    }

    #[test]
    fn put_then_get_round_trips() {
        let f = Fixture::new(81);
        let l = f.ledger(4, 2, &mut rand_chacha::ChaCha8Rng::seed_from_u64(81));
        assert_eq!(l.len(), 5);
        let mut mem = MemoryStore::new();
        fill(&mut mem, &l);
        assert_eq!(mem.get_ledger(&f.address).unwrap().canonical_bytes(), l.canonical_bytes());

        let dir = tempfile::tempdir().unwrap();
        let mut file = FileStore::open(dir.path()).unwrap();
        fill(&mut file, &l);
        assert_eq!(
            file.get_ledger(&f.address).unwrap().canonical_bytes(),
            mem.get_ledger(&f.address).unwrap().canonical_bytes()
        );
        assert_eq!(fs::read(file.ledger_path(&f.address)).unwrap(), encode_ledger_file(&l));
    }

    #[test]
    fn non_extending_and_unsigned_blocks_are_rejected() {
        let f = Fixture::new(82);
        let l = f.ledger(3, 1, &mut rand_chacha::ChaCha8Rng::seed_from_u64(82));
        let mut mem = MemoryStore::new();
        mem.put_genesis(f.address, l.genesis.clone()).unwrap();
        mem.put_block(f.address, l.blocks[0].clone()).unwrap();
        assert!(matches!(
            mem.put_block(f.address, l.blocks[2].clone()),
            Err(StoreError::NonExtending(_))
        ));
        assert!(matches!(
            mem.put_block(f.address, l.blocks[0].clone()),
            Err(StoreError::NonExtending(_))
        ));
        let mut unsigned = l.blocks[1].clone();
        unsigned.user_signature.flip_bit();
        assert!(matches!(mem.put_block(f.address, unsigned), Err(StoreError::Invalid(_))));
        assert!(matches!(
            mem.put_genesis(f.address, l.genesis.clone()),
            Err(StoreError::Duplicate(_))
        ));
        assert_eq!(mem.get_ledger(&f.address).unwrap().len(), 2);
    }

    #[test]
    fn unknown_addresses_are_not_found() {
        let f = Fixture::new(83);
        let mut svc = StorageService::new(MemoryStore::new());
        let reply = svc.handle(Message::Query(Query::GetLedger(f.address)), 0);
        assert!(matches!(
            reply,
            Handled::Reply(Message::Refusal {
                code: RefusalCode::NotFound,
                ..
            })
        ));
    }

    #[test]
    fn root_records_list_ledgers() {
        let f = Fixture::new(84);
        let mut mem = MemoryStore::new();
        let mut record = RootRecord::new(&f.root.public());
        record.add_ledger(0, f.address).unwrap();
        mem.put_root_record(record.clone()).unwrap();
        assert_eq!(mem.list_ledgers(&record.root_address).unwrap(), vec![f.address]);
        assert_eq!(mem.get_root_record(&record.root_address).unwrap(), record);
    }
}
