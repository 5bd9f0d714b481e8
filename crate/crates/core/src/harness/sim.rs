use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chaincode::Registry;
use crate::fixture::BASE_TIME_MS;
use crate::identity::{
    derive_ledger_keypair, derive_provider_keypair, derive_root_keypair, Address, KeyPair, SeedPhrase,
    ServiceKind,
};
use crate::ledger::{validate_ledger, ConfigEntry};
use crate::services::{
    ApiError, CreateReport, CuttingCondition, Esp, FileStore, Gba, KycPolicy, MemoryStore, Osp, PoolError,
    ProviderRecord, ReadReport, Receipt, Service, StorageService, StoreError, TxSpec, UserAgent, Vsp,
};

use super::network::{HarnessError, Network, DEFAULT_TTL_MS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("ledger index {0} is out of range")]
    Index(u64),
}

/// Everything needed to build a simulated world.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    /// Seeds the user's phrase and provider selection.
    pub seed: u64,
    /// Provider keys are derived from this secret.
    pub pool_secret: Vec<u8>,
    pub ttl: u64,
    pub cutting: CuttingCondition,
    pub providers: Vec<(ServiceKind, String)>,
    pub kyc: KycPolicy,
    /// Storage providers write here, one subdirectory each, when set.
    pub storage_dir: Option<PathBuf>,
    pub start_ms: u64,
}

impl SimConfig {
    /// `m` providers of every kind, named `<kind>-1` to `<kind>-m`.
    pub fn uniform(seed: u64, m: usize) -> Self {
        let mut providers = Vec::new();
        for kind in ServiceKind::ALL {
            for i in 1..=m {
                providers.push((kind, format!("{}-{i}", kind.as_str())));
            }
        }
        SimConfig {
            seed,
            pool_secret: seed.to_be_bytes().to_vec(),
            ttl: DEFAULT_TTL_MS,
            cutting: CuttingCondition::default(),
            providers,
            kyc: KycPolicy::allow_all(),
            storage_dir: None,
            start_ms: BASE_TIME_MS,
        }
    }

    pub fn provider_keypair(&self, id: &str) -> KeyPair {
        derive_provider_keypair(&self.pool_secret, id)
    }

    /// The seed phrase of the simulated user.
    pub fn phrase(&self) -> SeedPhrase {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        SeedPhrase::generate(12, &mut rng).expect("twelve words is enough")
    }
}

/// A user agent, its providers and the network between them.
#[derive(Clone)]
pub struct Simulation {
    pub net: Network,
    pub agent: UserAgent,
    pub phrase: SeedPhrase,
    config: SimConfig,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let mut net = Network::new(config.start_ms, config.ttl)?;
        let registry = Registry::with_builtins();
        for (kind, id) in &config.providers {
            let keypair = config.provider_keypair(id);
            let record = ProviderRecord::new(id.clone(), *kind, keypair.public());
            let service: Box<dyn Service> = match kind {
                ServiceKind::Gba => Box::new(Gba::new(keypair, config.kyc.clone())),
                ServiceKind::Esp => Box::new(Esp::new(keypair, registry.clone())),
                ServiceKind::Osp => Box::new(Osp::new(keypair, config.cutting)),
                ServiceKind::Vsp => Box::new(Vsp::new(keypair)),
                ServiceKind::Storage => match &config.storage_dir {
                    Some(dir) => Box::new(StorageService::new(FileStore::open(dir.join(id))?)),
                    None => Box::new(StorageService::new(MemoryStore::new())),
                },
            };
            net.register(record, service)?;
        }
        let agent = UserAgent::new(net.pool(config.seed))?.with_registry(registry);
        Ok(Simulation {
            net,
            agent,
            phrase: config.phrase(),
            config,
        })
    }

    /// Acts for the holder of `phrase` instead of the seeded user.
    pub fn with_phrase(mut self, phrase: SeedPhrase) -> Self {
        self.phrase = phrase;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn address(&self, index: u64) -> Result<Address, SimError> {
        let root = derive_root_keypair(&self.phrase);
        let user = derive_ledger_keypair(&root, index).map_err(|_| SimError::Index(index))?;
        Ok(Address::ledger(&user.public()))
    }

    fn addr(&self, index: u64) -> Result<Address, ApiError> {
        let root = derive_root_keypair(&self.phrase);
        Ok(Address::ledger(&derive_ledger_keypair(&root, index)?.public()))
    }

    pub fn create_ledger(&mut self, index: u64) -> Result<CreateReport, ApiError> {
        self.create_ledger_with(index, Vec::new())
    }

    pub fn create_ledger_with(&mut self, index: u64, config: Vec<ConfigEntry>) -> Result<CreateReport, ApiError> {
        self.agent.create_ledger(&mut self.net, &self.phrase, index, config)
    }

    pub fn submit(&mut self, index: u64, spec: TxSpec) -> Result<Receipt, ApiError> {
        let addr = self.addr(index)?;
        self.agent.submit(&mut self.net, &self.phrase, &addr, spec)
    }

    pub fn tick(&mut self, index: u64) -> Result<Vec<u64>, ApiError> {
        let addr = self.addr(index)?;
        self.agent.tick(&mut self.net, &self.phrase, &addr)
    }

    pub fn read(&mut self, index: u64) -> Result<ReadReport, ApiError> {
        let addr = self.addr(index)?;
        self.agent.read_ledger(&mut self.net, &addr)
    }

    /// Reads ledger `index` from storage; true if a valid copy came back.
    pub fn read_probe(&mut self, index: u64) -> bool {
        self.read(index).is_ok_and(|r| r.report.is_valid())
    }

    /// Creates ledger `index` if this agent has not yet, then submits small
    /// transactions until one block commits. Returns its height.
    pub fn write_probe(&mut self, index: u64) -> Result<u64, ApiError> {
        let addr = self.addr(index)?;
        if self.agent.local_ledger(&addr).is_none() {
            self.create_ledger(index)?;
        }
        let payload_len = match self.config.cutting {
            CuttingCondition::Size(limit) => limit / 4 + 1,
            _ => 8,
        };
        for i in 0..32u8 {
            let receipt = self.submit(index, TxSpec::raw(vec![i; payload_len]))?;
            if let Some(&h) = receipt.committed.last() {
                return Ok(h);
            }
            if let CuttingCondition::Interval(ms) = self.config.cutting {
                self.net.advance(ms);
                if let Some(&h) = self.tick(index)?.last() {
                    return Ok(h);
                }
            }
        }
        Err(ApiError::Stuck(32))
    }

    /// Whether the agent's copy of ledger `index`, if any, validates.
    pub fn local_valid(&self, index: u64) -> bool {
        let Ok(addr) = self.addr(index) else {
            return true;
        };
        match (self.agent.local_ledger(&addr), self.agent.key_directory(&addr)) {
            (Some(l), Some(keys)) => validate_ledger(l, keys).is_valid(),
            _ => true,
        }
    }

    /// Provider ids in registration order.
    pub fn provider_ids(&self) -> Vec<String> {
        self.net.records().map(|r| r.provider_id.clone()).collect()
    }

    pub fn kind_of(&self, id: &str) -> Option<ServiceKind> {
        self.net.records().find(|r| r.provider_id == id).map(|r| r.kind)
    }

    pub fn ledgers(&self) -> BTreeMap<u64, Address> {
        (0..64)
            .filter_map(|i| {
                let a = self.address(i).ok()?;
                self.agent.local_ledger(&a).map(|_| (i, a))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::FaultProgram;

    #[test]
    fn uniform_world_commits_a_block() {
        let mut sim = Simulation::new(SimConfig::uniform(5, 2)).unwrap();
        assert_eq!(sim.provider_ids().len(), 10);
        sim.create_ledger(0).unwrap();
        assert_eq!(sim.write_probe(0).unwrap(), 1);
        assert!(sim.read_probe(0));
        assert!(sim.local_valid(0));
    }

    #[test]
    fn silent_storage_blocks_reads_only_when_all_are_silent() {
        let mut sim = Simulation::new(SimConfig::uniform(6, 2)).unwrap();
        sim.create_ledger(0).unwrap();
        sim.net.inject("storage-1", FaultProgram::silent()).unwrap();
        assert!(sim.read_probe(0));
        sim.net.inject("storage-2", FaultProgram::silent()).unwrap();
        assert!(!sim.read_probe(0));
    }
}
