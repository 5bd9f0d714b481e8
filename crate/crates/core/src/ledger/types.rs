use crate::codec::{CodecError, Decode, Decoder, Encode, Encoder};
use crate::crypto::{sha256, sha256_concat, Digest, PublicKey, Signature, Signer};
use crate::identity::Address;

use super::merkle::merkle_root;

/// Default upper bound on a transaction payload.
pub const MAX_PAYLOAD_LEN: usize = 1024 * 1024;

/// Output recorded when no chaincode ran.
pub const ZERO_OUTPUT: [u8; 1] = [0];

pub const CONFIG_USER_KEY: &str = "user_public_key";
pub const CONFIG_GBA_KEY: &str = "gba_public_key";
pub const CONFIG_ESP_KEYS: &str = "esp_public_keys";
pub const CONFIG_OSP_KEYS: &str = "osp_public_keys";
pub const CONFIG_VSP_KEYS: &str = "vsp_public_keys";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub ledger_address: Address,
    pub payload: Vec<u8>,
    pub chaincode_id: Option<String>,
    pub submitted_at: u64,
    /// Ids of earlier complete transactions whose outputs this one consumes.
    pub inputs: Vec<Digest>,
    /// Optional third-party signatures over the payload. Only their shape
    /// is checked.
    pub attestations: Vec<Signature>,
    pub user_signature: Signature,
}

impl Transaction {
    pub fn new_signed(
        ledger_address: Address,
        payload: Vec<u8>,
        chaincode_id: Option<String>,
        submitted_at: u64,
        inputs: Vec<Digest>,
        user: &dyn Signer,
    ) -> Self {
        let mut tx = Transaction {
            ledger_address,
            payload,
            chaincode_id,
            submitted_at,
            inputs,
            attestations: Vec::new(),
            user_signature: Signature::default(),
        };
        tx.user_signature = user.sign(&tx.signing_bytes());
        tx
    }

    /// Encoding of every field before `user_signature`.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_unsigned(&mut enc);
        enc.finish()
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.value(&self.ledger_address)
            .bytes(&self.payload)
            .option(self.chaincode_id.as_ref())
            .u64(self.submitted_at)
            .list(&self.inputs)
            .list(&self.attestations);
    }
}

impl Encode for Transaction {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_unsigned(enc);
        enc.value(&self.user_signature);
    }
}

impl Decode for Transaction {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Transaction {
            ledger_address: dec.value()?,
            payload: dec.byte_vec()?,
            chaincode_id: dec.option()?,
            submitted_at: dec.u64()?,
            inputs: dec.list()?,
            attestations: dec.list()?,
            user_signature: dec.value()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompleteTransaction {
    pub inner: Transaction,
    pub output: Vec<u8>,
    pub executing_signature: Signature,
}

impl CompleteTransaction {
    pub fn new_signed(inner: Transaction, output: Vec<u8>, esp: &dyn Signer) -> Self {
        let executing_signature = esp.sign(&Self::signing_message(&inner, &output));
        CompleteTransaction {
            inner,
            output,
            executing_signature,
        }
    }

    pub fn signing_message(inner: &Transaction, output: &[u8]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.value(inner).bytes(output);
        enc.finish()
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        Self::signing_message(&self.inner, &self.output)
    }

    /// SHA-256 of the canonical encoding. Later transactions name this id in
    /// their `inputs`.
    pub fn id(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }
}

impl Encode for CompleteTransaction {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.inner)
            .bytes(&self.output)
            .value(&self.executing_signature);
    }
}

impl Decode for CompleteTransaction {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(CompleteTransaction {
            inner: dec.value()?,
            output: dec.byte_vec()?,
            executing_signature: dec.value()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockHeaderCore {
    pub previous_hash: Digest,
    pub data_hash: Digest,
    pub exec_sig_root: Digest,
    /// Absent on genesis blocks, required on data blocks.
    pub ordering_signature: Option<Signature>,
    pub height: u64,
    pub created_at: u64,
}

impl Encode for BlockHeaderCore {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.previous_hash)
            .value(&self.data_hash)
            .value(&self.exec_sig_root)
            .option(self.ordering_signature.as_ref())
            .u64(self.height)
            .u64(self.created_at);
    }
}

impl Decode for BlockHeaderCore {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(BlockHeaderCore {
            previous_hash: dec.value()?,
            data_hash: dec.value()?,
            exec_sig_root: dec.value()?,
            ordering_signature: dec.option()?,
            height: dec.u64()?,
            created_at: dec.u64()?,
        })
    }
}

/// SHA-256 of the canonical header core. This is what the validating
/// provider and the user sign.
pub fn hash_header(core: &BlockHeaderCore) -> Digest {
    sha256(&core.canonical_bytes())
}

/// Hash the following block stores as `previous_hash`: the header core
/// followed by the raw validation (or GBA) signature bytes.
pub fn chain_hash_parts(core: &BlockHeaderCore, validation_signature: &Signature) -> Digest {
    sha256_concat(&[&core.canonical_bytes(), &validation_signature.bytes])
}

/// Message signed by the user to close a block: `h(core) || signature bytes`.
pub fn user_block_message(core: &BlockHeaderCore, validation_signature: &Signature) -> Vec<u8> {
    let mut msg = hash_header(core).0.to_vec();
    msg.extend_from_slice(&validation_signature.bytes);
    msg
}

pub fn data_hash_of(transactions: &[CompleteTransaction]) -> Digest {
    let leaves: Vec<Vec<u8>> = transactions.iter().map(Encode::canonical_bytes).collect();
    merkle_root(&leaves)
}

pub fn exec_sig_root_of(transactions: &[CompleteTransaction]) -> Digest {
    let leaves: Vec<&[u8]> = transactions
        .iter()
        .map(|t| t.executing_signature.bytes.as_slice())
        .collect();
    merkle_root(&leaves)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBlock {
    pub core: BlockHeaderCore,
    pub transactions: Vec<CompleteTransaction>,
    pub validation_signature: Signature,
    pub user_signature: Signature,
}

impl DataBlock {
    pub fn hash_header(&self) -> Digest {
        hash_header(&self.core)
    }

    pub fn chain_hash(&self) -> Digest {
        chain_hash_parts(&self.core, &self.validation_signature)
    }
}

impl Encode for DataBlock {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.core)
            .list(&self.transactions)
            .value(&self.validation_signature)
            .value(&self.user_signature);
    }
}

impl Decode for DataBlock {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(DataBlock {
            core: dec.value()?,
            transactions: dec.list()?,
            validation_signature: dec.value()?,
            user_signature: dec.value()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: Vec<u8>,
}

impl ConfigEntry {
    pub fn new(key: impl Into<String>, value: impl Into<Vec<u8>>) -> Self {
        ConfigEntry {
            key: key.into(),
            value: value.into(),
        }
    }

    /// Packs several public keys into one config value.
    pub fn keys(key: impl Into<String>, keys: &[PublicKey]) -> Self {
        let value = keys.iter().flat_map(|k| k.0).collect::<Vec<u8>>();
        ConfigEntry::new(key, value)
    }
}

impl Encode for ConfigEntry {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.text(&self.key).bytes(&self.value);
    }
}

impl Decode for ConfigEntry {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(ConfigEntry {
            key: dec.text()?,
            value: dec.byte_vec()?,
        })
    }
}

pub fn config_hash(entries: &[ConfigEntry]) -> Digest {
    let leaves: Vec<Vec<u8>> = entries.iter().map(Encode::canonical_bytes).collect();
    merkle_root(&leaves)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisBlock {
    pub core: BlockHeaderCore,
    pub config: Vec<ConfigEntry>,
    pub gba_signature: Signature,
    pub user_signature: Signature,
}

impl GenesisBlock {
    /// Builds the header for `config` and collects the GBA then the user
    /// signature.
    pub fn issue(
        config: Vec<ConfigEntry>,
        created_at: u64,
        gba: &dyn Signer,
        user: &dyn Signer,
    ) -> Self {
        let mut g = Self::unsigned(config, created_at);
        g.gba_sign(gba);
        g.user_countersign(user);
        g
    }

    /// Header over `config` with both signatures left empty.
    pub fn unsigned(config: Vec<ConfigEntry>, created_at: u64) -> Self {
        let core = BlockHeaderCore {
            previous_hash: Digest::ZERO,
            data_hash: config_hash(&config),
            exec_sig_root: Digest::ZERO,
            ordering_signature: None,
            height: 0,
            created_at,
        };
        GenesisBlock {
            core,
            config,
            gba_signature: Signature::default(),
            user_signature: Signature::default(),
        }
    }

    pub fn gba_sign(&mut self, gba: &dyn Signer) {
        self.gba_signature = gba.sign(&hash_header(&self.core).0);
    }

    pub fn user_countersign(&mut self, user: &dyn Signer) {
        self.user_signature = user.sign(&user_block_message(&self.core, &self.gba_signature));
    }

    pub fn config_value(&self, key: &str) -> Option<&[u8]> {
        self.config
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.value.as_slice())
    }

    pub fn user_public_key(&self) -> Option<PublicKey> {
        self.config_value(CONFIG_USER_KEY)
            .and_then(PublicKey::from_slice)
    }

    pub fn hash_header(&self) -> Digest {
        hash_header(&self.core)
    }

    pub fn chain_hash(&self) -> Digest {
        chain_hash_parts(&self.core, &self.gba_signature)
    }
}

impl Encode for GenesisBlock {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.core)
            .list(&self.config)
            .value(&self.gba_signature)
            .value(&self.user_signature);
    }
}

impl Decode for GenesisBlock {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(GenesisBlock {
            core: dec.value()?,
            config: dec.list()?,
            gba_signature: dec.value()?,
            user_signature: dec.value()?,
        })
    }
}

const TAG_GENESIS: u8 = 0;
const TAG_DATA: u8 = 1;

/// Either kind of block, as it appears in a serialized chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Block {
    Genesis(GenesisBlock),
    Data(DataBlock),
}

impl Block {
    pub fn core(&self) -> &BlockHeaderCore {
        match self {
            Block::Genesis(g) => &g.core,
            Block::Data(b) => &b.core,
        }
    }

    pub fn height(&self) -> u64 {
        self.core().height
    }

    pub fn chain_hash(&self) -> Digest {
        match self {
            Block::Genesis(g) => g.chain_hash(),
            Block::Data(b) => b.chain_hash(),
        }
    }

    pub fn as_data(&self) -> Option<&DataBlock> {
        match self {
            Block::Data(b) => Some(b),
            Block::Genesis(_) => None,
        }
    }
}

impl Encode for Block {
    fn encode_to(&self, enc: &mut Encoder) {
        match self {
            Block::Genesis(g) => enc.tag(TAG_GENESIS).value(g),
            Block::Data(b) => enc.tag(TAG_DATA).value(b),
        };
    }
}

impl Decode for Block {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        match dec.tag()? {
            TAG_GENESIS => Ok(Block::Genesis(dec.value()?)),
            TAG_DATA => Ok(Block::Data(dec.value()?)),
            tag => Err(CodecError::UnknownTag { what: "block", tag }),
        }
    }
}

/// A well-shaped ledger: one genesis block followed by data blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    pub genesis: GenesisBlock,
    pub blocks: Vec<DataBlock>,
    pub ledger_address: Address,
}

impl Ledger {
    pub fn new(ledger_address: Address, genesis: GenesisBlock) -> Self {
        Ledger {
            genesis,
            blocks: Vec::new(),
            ledger_address,
        }
    }

    /// Number of blocks including the genesis block.
    pub fn len(&self) -> usize {
        self.blocks.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tip_height(&self) -> u64 {
        self.blocks.last().map_or(0, |b| b.core.height)
    }

    pub fn tip_chain_hash(&self) -> Digest {
        match self.blocks.last() {
            Some(b) => b.chain_hash(),
            None => self.genesis.chain_hash(),
        }
    }

    pub fn transactions(&self) -> impl Iterator<Item = (u64, usize, &CompleteTransaction)> {
        self.blocks.iter().flat_map(|b| {
            b.transactions
                .iter()
                .enumerate()
                .map(move |(i, t)| (b.core.height, i, t))
        })
    }

    pub fn to_chain(&self) -> Chain {
        let mut blocks = Vec::with_capacity(self.len());
        blocks.push(Block::Genesis(self.genesis.clone()));
        blocks.extend(self.blocks.iter().cloned().map(Block::Data));
        Chain {
            ledger_address: self.ledger_address,
            blocks,
        }
    }

    /// Byte range of every block (genesis first) inside `canonical_bytes()`.
    pub fn block_spans(&self) -> Vec<std::ops::Range<usize>> {
        self.to_chain().block_spans()
    }
}

impl Encode for Ledger {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.ledger_address).count(self.len());
        enc.tag(TAG_GENESIS).value(&self.genesis);
        for b in &self.blocks {
            enc.tag(TAG_DATA).value(b);
        }
    }
}

impl Decode for Ledger {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Chain::decode_from(dec)?.into_ledger()
    }
}

/// An arbitrary sequence of blocks under a ledger address. This is the
/// shape that audits operate on, since a tampered file may hold a second
/// genesis block or a data block in first position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub ledger_address: Address,
    pub blocks: Vec<Block>,
}

impl Chain {
    pub fn into_ledger(self) -> Result<Ledger, CodecError> {
        let mut it = self.blocks.into_iter();
        let genesis = match it.next() {
            Some(Block::Genesis(g)) => g,
            Some(Block::Data(_)) => {
                return Err(CodecError::Invalid("first block is not a genesis block".into()))
            }
            None => return Err(CodecError::Invalid("ledger has no genesis block".into())),
        };
        let mut blocks = Vec::new();
        for b in it {
            match b {
                Block::Data(d) => blocks.push(d),
                Block::Genesis(_) => {
                    return Err(CodecError::Invalid("more than one genesis block".into()))
                }
            }
        }
        Ok(Ledger {
            genesis,
            blocks,
            ledger_address: self.ledger_address,
        })
    }

    pub fn block_spans(&self) -> Vec<std::ops::Range<usize>> {
        let mut enc = Encoder::new();
        enc.value(&self.ledger_address).count(self.blocks.len());
        let mut spans = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let start = enc.len();
            enc.value(b);
            spans.push(start..enc.len());
        }
        spans
    }

    /// Decodes as many whole blocks as possible. Returns the chain read so
    /// far and, if decoding stopped early, the index of the block that
    /// failed together with the error.
    pub fn decode_lenient(input: &[u8]) -> Result<(Chain, Option<(usize, CodecError)>), CodecError> {
        let mut dec = Decoder::new(input);
        let ledger_address: Address = dec.value()?;
        let count = dec.count()?;
        let mut blocks = Vec::new();
        for i in 0..count {
            match dec.value::<Block>() {
                Ok(b) => blocks.push(b),
                Err(e) => {
                    return Ok((
                        Chain {
                            ledger_address,
                            blocks,
                        },
                        Some((i, e)),
                    ))
                }
            }
        }
        let chain = Chain {
            ledger_address,
            blocks,
        };
        match dec.finish() {
            Ok(()) => Ok((chain, None)),
            Err(e) => Ok((chain, Some((count, e)))),
        }
    }
}

impl Encode for Chain {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.value(&self.ledger_address).list(&self.blocks);
    }
}

impl Decode for Chain {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Chain {
            ledger_address: dec.value()?,
            blocks: dec.list()?,
        })
    }
}
