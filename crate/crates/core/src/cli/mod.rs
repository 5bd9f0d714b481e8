//! The `pbl` command-line user agent.
//!
//! Each command is a thin wrapper over the library: it builds the provider
//! pool from the config, restores the agent's persisted state, calls one
//! operation and prints the result.

mod config;
mod state;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crypto::Digest;
use crate::harness::{kv_line, printable, Scenario, SimError, Simulation};
use crate::identity::{derive_ledger_keypair, derive_root_keypair, Address, SeedPhrase};
use crate::ledger::{
    ledger_file_body, tamper_scan_bytes, Block, Chain, ConfigEntry, Finding, KeyDirectory, Ledger, LEDGER_MAGIC,
};
use crate::codec::{Decode, Encode};
use crate::services::{ApiError, ProviderOutcome, TxSpec};

pub use config::{CliConfig, ConfigError, Format, PoolCounts, ProviderEntry};
pub use state::{AgentState, StateDir};

/// Environment variable holding the seed phrase.
pub const PHRASE_ENV: &str = "PBL_SEED_PHRASE";
/// Config file read from the working directory when `--config` is absent.
pub const DEFAULT_CONFIG: &str = "pbl.toml";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_FAULT: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pbl", version, about = "Personal blockchain ledgers")]
pub struct Cli {
    /// Config file (default: ./pbl.toml if present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Seed for provider selection and demo randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub ttl_ms: Option<u64>,
    /// `count N`, `interval 2s`, `interval 250ms` or `size BYTES`.
    #[arg(long, global = true)]
    pub cutting: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seed phrase and print its root address.
    Keygen {
        #[arg(long, default_value_t = 12)]
        words: usize,
    },
    /// Create ledger number INDEX under the phrase.
    CreateLedger {
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Extra genesis config entry.
        #[arg(long = "entry", value_name = "KEY=VALUE")]
        entries: Vec<String>,
    },
    /// Submit one transaction per payload.
    Submit {
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        chaincode: Option<String>,
        /// Id of a transaction whose output this one consumes.
        #[arg(long = "input", value_name = "TX_ID")]
        inputs: Vec<String>,
        #[arg(required = true)]
        payloads: Vec<String>,
    },
    /// Print a ledger.
    Show {
        #[command(flatten)]
        source: Source,
        /// List every transaction.
        #[arg(long)]
        transactions: bool,
    },
    /// Validate a ledger and report every failed condition.
    Audit {
        #[command(flatten)]
        source: Source,
    },
    /// Flip one byte in a copy of a ledger and show where the scan finds it.
    TamperDemo {
        #[command(flatten)]
        source: Source,
        /// Block position, genesis is 0.
        #[arg(long)]
        block: Option<usize>,
        /// Byte offset inside the block's encoding.
        #[arg(long)]
        offset: Option<usize>,
        /// XOR mask applied to the byte.
        #[arg(long)]
        mask: Option<u8>,
        /// Write the tampered copy here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a scenario file on a simulated provider network.
    Simulate { scenario: PathBuf },
}

#[derive(Debug, Args)]
pub struct Source {
    /// Ledger index under the phrase, read from storage.
    #[arg(long, conflicts_with = "file")]
    pub index: Option<u64>,
    /// Ledger file in PBL1 format.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Invalid(String),
    Fault(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Fault(_) => EXIT_FAULT,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Invalid(m) | CliError::Fault(m) => m,
        }
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        let m = e.to_string();
        match e {
            _ if e.is_fault() => CliError::Fault(m),
            ApiError::Invalid(_) | ApiError::Refused { .. } => CliError::Invalid(m),
            _ => CliError::Usage(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Fault(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Fault(e.to_string())
    }
}

/// Where a command reads its phrase and writes its output.
pub struct Io<'a> {
    /// Value of the phrase variable, if set.
    pub phrase: Option<String>,
    pub stdin: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// exit code.
pub fn run<I, S>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = write!(if code == EXIT_OK { &mut *io.out } else { &mut *io.err }, "{e}");
            return code;
        }
    };
    match execute(cli, io) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io.err, "error: {}", e.message());
            e.code()
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdin = std::io::stdin();
    let mut stdin = stdin.lock();
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let mut io = Io {
        phrase: std::env::var(PHRASE_ENV).ok(),
        stdin: &mut stdin,
        out: &mut out,
        err: &mut err,
    };
    run(std::env::args_os(), &mut io)
}

fn resolve_config(cli: &Cli) -> Result<CliConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None if Path::new(DEFAULT_CONFIG).exists() => CliConfig::load(Path::new(DEFAULT_CONFIG))?,
        None => CliConfig::default(),
    };
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if let Some(t) = cli.ttl_ms {
        cfg.ttl_ms = t;
    }
    if let Some(c) = &cli.cutting {
        cfg.cutting = c.clone();
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One output record: a heading and its fields.
struct Printer<'a, 'b> {
    format: Format,
    out: &'a mut (dyn Write + 'b),
}

impl Printer<'_, '_> {
    fn record(&mut self, head: &str, fields: &[(&str, String)]) -> std::io::Result<()> {
        match self.format {
            Format::Lines => writeln!(self.out, "{}", kv_line(head, fields)),
            Format::Text => {
                writeln!(self.out, "{head}")?;
                for (k, v) in fields {
                    writeln!(self.out, "  {k:<12} {v}")?;
                }
                Ok(())
            }
        }
    }

    fn line(&mut self, text: &str) -> std::io::Result<()> {
        writeln!(self.out, "{text}")
    }
}

fn read_phrase(io: &mut Io<'_>) -> Result<SeedPhrase, CliError> {
    let text = match io.phrase.clone() {
        Some(p) => p,
        None => {
            write!(io.err, "seed phrase: ")?;
            io.err.flush()?;
            let mut line = String::new();
            io.stdin.read_line(&mut line)?;
            line
        }
    };
    text.trim()
        .parse()
        .map_err(|e| CliError::Usage(format!("bad seed phrase: {e}")))
}

fn system_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// The provider world and agent for one invocation.
pub struct Session {
    pub sim: Simulation,
    state_dir: StateDir,
    state: AgentState,
}

impl Session {
    /// Builds the world exactly as the CLI does for its next invocation.
    pub fn open(cfg: &CliConfig, phrase: SeedPhrase) -> Result<Self, CliError> {
        let state_dir = StateDir::new(cfg.state_dir());
        let state = state_dir.load()?;
        let draw_seed = match cfg.seed {
            Some(s) => s.wrapping_add(state.invocations),
            None => rand::random(),
        };
        let start = cfg.start_ms.unwrap_or_else(system_ms).max(state.clock_ms);
        let sim = Simulation::new(cfg.sim_config(draw_seed, start)?)?.with_phrase(phrase);
        Ok(Session { sim, state_dir, state })
    }

    pub fn address(&self, index: u64) -> Result<Address, CliError> {
        self.sim
            .address(index)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Puts back transactions left pending by earlier invocations.
    pub fn restore(&mut self, ledger: &Address) -> Result<(), CliError> {
        let pending = self.state_dir.load_pending(ledger)?;
        if !pending.is_empty() {
            let phrase = self.sim.phrase.clone();
            self.sim
                .agent
                .restore_pending(&mut self.sim.net, &phrase, ledger, pending)?;
        }
        Ok(())
    }

    /// Persists pending transactions and the clock.
    pub fn close(mut self, ledger: Option<&Address>) -> Result<(), CliError> {
        if let Some(l) = ledger {
            if self.sim.agent.local_ledger(l).is_some() {
                self.state_dir.save_pending(l, self.sim.agent.pending(l))?;
            }
        }
        self.state.invocations += 1;
        self.state.clock_ms = self.sim.net.clock().now() + 1;
        self.state_dir.save(&self.state)?;
        Ok(())
    }
}

fn execute(cli: Cli, io: &mut Io<'_>) -> Result<i32, CliError> {
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Keygen { words } => keygen(&cfg, words, io),
        Command::CreateLedger { index, entries } => create_ledger(&cfg, index, &entries, io),
        Command::Submit {
            index,
            chaincode,
            inputs,
            payloads,
        } => submit(&cfg, index, chaincode, &inputs, &payloads, io),
        Command::Show { source, transactions } => show(&cfg, &source, transactions, io),
        Command::Audit { source } => audit(&cfg, &source, io),
        Command::TamperDemo {
            source,
            block,
            offset,
            mask,
            out,
        } => tamper_demo(&cfg, &source, block, offset, mask, out.as_deref(), io),
        Command::Simulate { scenario } => simulate(&cfg, &scenario, io),
    }
}

fn keygen(cfg: &CliConfig, words: usize, io: &mut Io<'_>) -> Result<i32, CliError> {
    let phrase = match cfg.seed {
        Some(s) => SeedPhrase::generate(words, &mut ChaCha8Rng::seed_from_u64(s)),
        None => SeedPhrase::generate(words, &mut rand::rngs::OsRng),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let root = derive_root_keypair(&phrase);
    let first = derive_ledger_keypair(&root, 0).expect("index 0 is valid");
    let mut p = Printer {
        format: cfg.format,
        out: &mut *io.out,
    };
    p.record(
        "keygen",
        &[
            ("phrase", phrase.expose()),
            ("words", phrase.len().to_string()),
            ("root", Address::root(&root.public()).to_base58()),
            ("ledger-0", Address::ledger(&first.public()).to_base58()),
        ],
    )?;
    if cfg.format == Format::Text {
        writeln!(io.err, "keep the phrase secret; pass it to other commands in {PHRASE_ENV}")?;
    }
    Ok(EXIT_OK)
}

fn create_ledger(cfg: &CliConfig, index: u64, entries: &[String], io: &mut Io<'_>) -> Result<i32, CliError> {
    let config = entries
        .iter()
        .map(|e| {
            e.split_once('=')
                .map(|(k, v)| ConfigEntry::new(k, v.as_bytes()))
                .ok_or_else(|| CliError::Usage(format!("config entry {e:?} is not KEY=VALUE")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let phrase = read_phrase(io)?;
    let mut s = Session::open(cfg, phrase)?;
    let result = s.sim.create_ledger_with(index, config);
    let address = s.address(index)?;
    s.close(None)?;
    let report = result?;
    let stored = report
        .storage
        .iter()
        .filter(|(_, o)| *o == ProviderOutcome::Stored)
        .count();
    Printer {
        format: cfg.format,
        out: &mut *io.out,
    }
    .record(
        "create-ledger",
        &[
            ("index", index.to_string()),
            ("address", address.to_base58()),
            ("gba", report.gba),
            ("stored", format!("{stored}/{}", report.storage.len())),
            ("genesis", report.ledger.genesis.chain_hash().to_hex()),
        ],
    )?;
    Ok(EXIT_OK)
}

fn submit(
    cfg: &CliConfig,
    index: u64,
    chaincode: Option<String>,
    inputs: &[String],
    payloads: &[String],
    io: &mut Io<'_>,
) -> Result<i32, CliError> {
    let inputs = inputs
        .iter()
        .map(|h| Digest::from_hex(h).ok_or_else(|| CliError::Usage(format!("bad transaction id {h:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let phrase = read_phrase(io)?;
    let mut s = Session::open(cfg, phrase)?;
    let address = s.address(index)?;
    if let Err(e) = s.restore(&address) {
        s.close(None)?;
        return Err(e);
    }
    let mut p = Printer {
        format: cfg.format,
        out: &mut *io.out,
    };
    let mut failure = None;
    for payload in payloads {
        let spec = match &chaincode {
            Some(id) => TxSpec::chaincode(id, payload.as_bytes()),
            None => TxSpec::raw(payload.as_bytes()),
        }
        .consuming(inputs.clone());
        match s.sim.submit(index, spec) {
            Ok(r) => p.record(
                "submit",
                &[
                    ("tx", r.tx_id.to_hex()),
                    ("esp", r.esp),
                    ("osp", r.osp),
                    ("vsp", r.vsp),
                    ("output", printable(&r.output)),
                    ("block", r.committed_at.map_or("pending".into(), |h| h.to_string())),
                ],
            )?,
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let height = s.sim.agent.local_ledger(&address).map(Ledger::tip_height);
    let pending = s.sim.agent.pending(&address).len();
    s.close(Some(&address))?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    p.record(
        "ledger",
        &[
            ("address", address.to_base58()),
            ("height", height.unwrap_or(0).to_string()),
            ("pending", pending.to_string()),
        ],
    )?;
    Ok(EXIT_OK)
}

/// Raw bytes of a ledger from a file, or from storage for an index.
fn load_source(cfg: &CliConfig, source: &Source, io: &mut Io<'_>) -> Result<Vec<u8>, CliError> {
    if let Some(path) = &source.file {
        return std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())));
    }
    let index = source.index.unwrap_or(0);
    let phrase = read_phrase(io)?;
    let mut s = Session::open(cfg, phrase)?;
    let result = s.sim.read(index);
    s.close(None)?;
    let mut bytes = LEDGER_MAGIC.to_vec();
    bytes.extend(result?.ledger.canonical_bytes());
    Ok(bytes)
}

/// Keys the ledger's own genesis block vouches for.
fn genesis_keys(body: &[u8]) -> KeyDirectory {
    match Chain::decode_lenient(body) {
        Ok((chain, _)) => match chain.blocks.first() {
            Some(Block::Genesis(g)) => KeyDirectory::from_genesis(g),
            _ => KeyDirectory::new(),
        },
        Err(_) => KeyDirectory::new(),
    }
}

fn finding_fields(f: &Finding) -> Vec<(&'static str, String)> {
    vec![
        ("block", f.height.to_string()),
        ("condition", f.condition.to_string()),
        ("reason", f.reason.clone()),
    ]
}

fn show(cfg: &CliConfig, source: &Source, transactions: bool, io: &mut Io<'_>) -> Result<i32, CliError> {
    let bytes = load_source(cfg, source, io)?;
    let body = ledger_file_body(&bytes).map_err(|e| CliError::Invalid(e.to_string()))?;
    let l = Ledger::from_canonical_bytes(body).map_err(|e| CliError::Invalid(format!("ledger does not decode: {e}")))?;
    let findings = tamper_scan_bytes(body, &genesis_keys(body));
    let mut p = Printer {
        format: cfg.format,
        out: &mut *io.out,
    };
    p.record(
        "ledger",
        &[
            ("address", l.ledger_address.to_base58()),
            ("height", l.tip_height().to_string()),
            ("transactions", l.transactions().count().to_string()),
            ("valid", findings.is_empty().to_string()),
        ],
    )?;
    p.record(
        "block",
        &[
            ("height", "0".into()),
            ("kind", "genesis".into()),
            ("config", l.genesis.config.len().to_string()),
            ("created", l.genesis.core.created_at.to_string()),
            ("hash", l.genesis.chain_hash().to_hex()),
        ],
    )?;
    for b in &l.blocks {
        p.record(
            "block",
            &[
                ("height", b.core.height.to_string()),
                ("kind", "data".into()),
                ("transactions", b.transactions.len().to_string()),
                ("created", b.core.created_at.to_string()),
                ("validator", b.validation_signature.signer.to_string()),
                ("hash", b.chain_hash().to_hex()),
            ],
        )?;
        if transactions {
            for (i, ct) in b.transactions.iter().enumerate() {
                p.record(
                    "tx",
                    &[
                        ("block", b.core.height.to_string()),
                        ("position", i.to_string()),
                        ("id", ct.id().to_hex()),
                        ("chaincode", ct.inner.chaincode_id.clone().unwrap_or_else(|| "-".into())),
                        ("payload", printable(&ct.inner.payload)),
                        ("output", printable(&ct.output)),
                        ("executor", ct.executing_signature.signer.to_string()),
                    ],
                )?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn audit(cfg: &CliConfig, source: &Source, io: &mut Io<'_>) -> Result<i32, CliError> {
    let bytes = load_source(cfg, source, io)?;
    let findings = match ledger_file_body(&bytes) {
        Ok(body) => tamper_scan_bytes(body, &genesis_keys(body)),
        Err(e) => vec![Finding {
            height: 0,
            condition: crate::ledger::Condition::Structural,
            reason: format!("not a ledger file: {e}"),
        }],
    };
    let mut p = Printer {
        format: cfg.format,
        out: &mut *io.out,
    };
    let Some(first) = findings.first() else {
        let height = ledger_file_body(&bytes)
            .ok()
            .and_then(|b| Ledger::from_canonical_bytes(b).ok())
            .map_or(0, |l| l.tip_height());
        p.record("audit", &[("status", "valid".into()), ("height", height.to_string())])?;
        return Ok(EXIT_OK);
    };
    p.record(
        "audit",
        &[
            ("status", "invalid".into()),
            ("findings", findings.len().to_string()),
            ("first", first.to_string()),
        ],
    )?;
    for f in &findings {
        p.record("finding", &finding_fields(f))?;
    }
    Ok(EXIT_INVALID)
}

#[allow(clippy::too_many_arguments)]
fn tamper_demo(
    cfg: &CliConfig,
    source: &Source,
    block: Option<usize>,
    offset: Option<usize>,
    mask: Option<u8>,
    out: Option<&Path>,
    io: &mut Io<'_>,
) -> Result<i32, CliError> {
    let bytes = load_source(cfg, source, io)?;
    let body = ledger_file_body(&bytes).map_err(|e| CliError::Invalid(e.to_string()))?;
    let l = Ledger::from_canonical_bytes(body)
        .map_err(|e| CliError::Invalid(format!("the original ledger does not decode: {e}")))?;
    let keys = KeyDirectory::from_genesis(&l.genesis);
    let mut rng = match cfg.seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::from_entropy(),
    };
    let spans = l.block_spans();
    let block = block.unwrap_or_else(|| rng.gen_range(0..spans.len()));
    let span = spans
        .get(block)
        .ok_or_else(|| CliError::Usage(format!("block {block} does not exist; last is {}", spans.len() - 1)))?
        .clone();
    let offset = offset.unwrap_or_else(|| rng.gen_range(0..span.len()));
    if offset >= span.len() {
        return Err(CliError::Usage(format!("block {block} is only {} bytes long", span.len())));
    }
    let mask = mask.unwrap_or_else(|| rng.gen_range(1..=255));
    if mask == 0 {
        return Err(CliError::Usage("mask 0 changes nothing".into()));
    }
    let position = span.start + offset;
    let mut tampered = body.to_vec();
    let before = tampered[position];
    tampered[position] ^= mask;
    let findings = tamper_scan_bytes(&tampered, &keys);

    let mut p = Printer {
        format: cfg.format,
        out: &mut *io.out,
    };
    p.record(
        "tamper",
        &[
            ("block", block.to_string()),
            ("offset", offset.to_string()),
            ("before", format!("{before:#04x}")),
            ("after", format!("{:#04x}", tampered[position])),
        ],
    )?;
    for f in &findings {
        p.record("finding", &finding_fields(f))?;
    }
    let localized = findings.first().is_some_and(|f| f.height <= block as u64 + 1);
    p.record(
        "result",
        &[
            ("detected", (!findings.is_empty()).to_string()),
            ("localized", localized.to_string()),
            ("first", findings.first().map_or("-".into(), |f| f.to_string())),
        ],
    )?;
    if let Some(path) = out {
        let mut file = LEDGER_MAGIC.to_vec();
        file.extend(&tampered);
        std::fs::write(path, file)?;
    }
    Ok(if findings.is_empty() { EXIT_INVALID } else { EXIT_OK })
}

fn simulate(cfg: &CliConfig, path: &Path, io: &mut Io<'_>) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let scenario = Scenario::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let outcome = scenario.run()?;
    let mut p = Printer {
        format: cfg.format,
        out: &mut *io.out,
    };
    for line in &outcome.lines {
        p.line(line)?;
    }
    Ok(if outcome.is_clean() { EXIT_OK } else { EXIT_INVALID })
}
