//! Deterministic ledgers for tests, demos and benchmarks.
//!
//! Every key is derived from a seed, so the same seed always yields
//! byte-identical ledgers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chaincode::{Balance, Chaincode, BALANCE_ID};
use crate::identity::{
    derive_ledger_keypair, derive_provider_keypair, derive_root_keypair, Address, KeyPair,
    SeedPhrase,
};
use crate::ledger::{
    seal_block, BlockCandidate, CompleteTransaction, ConfigEntry, GenesisBlock, KeyDirectory,
    Ledger, Transaction, CONFIG_ESP_KEYS, CONFIG_GBA_KEY, CONFIG_OSP_KEYS, CONFIG_USER_KEY,
    CONFIG_VSP_KEYS, ZERO_OUTPUT,
};

pub const BASE_TIME_MS: u64 = 1_700_000_000_000;

pub struct Fixture {
    pub phrase: SeedPhrase,
    pub root: KeyPair,
    pub user: KeyPair,
    pub gba: KeyPair,
    pub esps: Vec<KeyPair>,
    pub osp: KeyPair,
    pub vsp: KeyPair,
    pub address: Address,
    pub directory: KeyDirectory,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let phrase = SeedPhrase::generate(12, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let root = derive_root_keypair(&phrase);
        let user = derive_ledger_keypair(&root, 0).unwrap();
        let pool = seed.to_be_bytes();
        let gba = derive_provider_keypair(&pool, "gba-1");
        let esps: Vec<KeyPair> = (1..=3)
            .map(|i| derive_provider_keypair(&pool, &format!("esp-{i}")))
            .collect();
        let osp = derive_provider_keypair(&pool, "osp-1");
        let vsp = derive_provider_keypair(&pool, "vsp-1");
        let address = Address::ledger(&user.public());
        let mut f = Fixture {
            phrase,
            root,
            user,
            gba,
            esps,
            osp,
            vsp,
            address,
            directory: KeyDirectory::new(),
        };
        f.directory = KeyDirectory::from_genesis(&f.genesis_block());
        f
    }

    pub fn config(&self) -> Vec<ConfigEntry> {
        let esp_keys: Vec<_> = self.esps.iter().map(KeyPair::public).collect();
        vec![
            ConfigEntry::keys(CONFIG_USER_KEY, &[self.user.public()]),
            ConfigEntry::keys(CONFIG_GBA_KEY, &[self.gba.public()]),
            ConfigEntry::keys(CONFIG_ESP_KEYS, &esp_keys),
            ConfigEntry::keys(CONFIG_OSP_KEYS, &[self.osp.public()]),
            ConfigEntry::keys(CONFIG_VSP_KEYS, &[self.vsp.public()]),
        ]
    }

    pub fn genesis_block(&self) -> GenesisBlock {
        GenesisBlock::issue(self.config(), BASE_TIME_MS, &self.gba, &self.user)
    }

    /// A ledger holding only its genesis block.
    pub fn genesis(&self) -> Ledger {
        Ledger::new(self.address, self.genesis_block())
    }

    pub fn transaction(&self, payload: &[u8], chaincode: Option<&str>, at: u64) -> Transaction {
        Transaction::new_signed(
            self.address,
            payload.to_vec(),
            chaincode.map(str::to_owned),
            at,
            Vec::new(),
            &self.user,
        )
    }

    /// A raw-data transaction executed by ESP number `esp`.
    pub fn raw(&self, payload: &[u8], at: u64, esp: usize) -> CompleteTransaction {
        let tx = self.transaction(payload, None, at);
        CompleteTransaction::new_signed(tx, ZERO_OUTPUT.to_vec(), &self.esps[esp % self.esps.len()])
    }

    pub fn complete(&self, tx: Transaction, output: Vec<u8>, esp: usize) -> CompleteTransaction {
        CompleteTransaction::new_signed(tx, output, &self.esps[esp % self.esps.len()])
    }

    pub fn candidate(&self, txs: Vec<CompleteTransaction>, at: u64) -> BlockCandidate {
        BlockCandidate::order(txs, at, &self.osp)
    }

    /// Seals `txs` into a new block on top of `ledger` without re-checking it.
    pub fn push(&self, ledger: &mut Ledger, txs: Vec<CompleteTransaction>) {
        let at = BASE_TIME_MS + 1000 * (ledger.tip_height() + 1);
        let block = seal_block(ledger, self.candidate(txs, at), &self.vsp, &self.user);
        ledger.blocks.push(block);
    }

    /// `data_blocks` blocks of `txs_per_block` random raw transactions.
    pub fn ledger(&self, data_blocks: usize, txs_per_block: usize, rng: &mut impl Rng) -> Ledger {
        let mut l = self.genesis();
        for b in 0..data_blocks {
            let txs = (0..txs_per_block)
                .map(|t| {
                    let len = rng.gen_range(1..48);
                    let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                    let at = BASE_TIME_MS + (b * txs_per_block + t) as u64;
                    self.raw(&payload, at, rng.gen_range(0..self.esps.len()))
                })
                .collect();
            self.push(&mut l, txs);
        }
        l
    }

    /// One "balance" transaction per delta, `per_block` per block.
    pub fn balance_ledger(&self, deltas: &[i64], per_block: usize) -> Ledger {
        let mut l = self.genesis();
        let mut state = Balance.initial_state();
        let mut pending = Vec::new();
        for (i, d) in deltas.iter().enumerate() {
            let payload = format!("{d:+}");
            let tx = self.transaction(payload.as_bytes(), Some(BALANCE_ID), BASE_TIME_MS + i as u64);
            let (next, output) = Balance.step(&state, payload.as_bytes()).unwrap();
            state = next;
            pending.push(self.complete(tx, output, i));
            if pending.len() == per_block {
                self.push(&mut l, std::mem::take(&mut pending));
            }
        }
        if !pending.is_empty() {
            self.push(&mut l, pending);
        }
        l
    }
}
