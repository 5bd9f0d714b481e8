//! C ABI over `pbl-core`.
//!
//! Every call returns a [`PblStatus`]. On failure a message is kept per
//! thread and can be copied out with [`pbl_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `_free` function. Output buffers follow one convention: the callee
//! stores the required size in `*needed` and writes only when `cap` is large
//! enough, returning `PBL_STATUS_BUFFER_TOO_SMALL` otherwise. Strings are
//! NUL-terminated and `needed` counts the terminator.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pbl_core::codec::Decode;
use pbl_core::harness::{FaultMode, SimConfig, Simulation};
use pbl_core::identity::{derive_ledger_keypair, derive_root_keypair, Address, SeedPhrase};
use pbl_core::ledger::{
    encode_ledger_file, ledger_file_body, tamper_scan_bytes, Block, Chain, Condition, Finding, KeyDirectory, Ledger,
};
use pbl_core::services::{ApiError, TxSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod status;

pub use status::PblStatus;
use status::Error;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, recording the error message and trapping panics.
fn guard(f: impl FnOnce() -> Result<(), Error>) -> PblStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PblStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(_) => {
            set_last_error("internal panic");
            PblStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(Error::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::new(PblStatus::BadUtf8, format!("{what} is not UTF-8")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], Error> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Error::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Error> {
    p.as_mut().ok_or_else(|| Error::null(what))
}

/// Copies `src` into the caller's buffer.
unsafe fn copy_out(src: &[u8], buf: *mut u8, cap: usize, needed: *mut usize) -> Result<(), Error> {
    *out_ref(needed, "needed")? = src.len();
    if cap < src.len() {
        return Err(Error::new(
            PblStatus::BufferTooSmall,
            format!("need {} bytes, have {cap}", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(Error::null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

unsafe fn copy_str(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), Error> {
    let mut bytes = s.as_bytes().to_vec();
    bytes.push(0);
    copy_out(&bytes, buf.cast(), cap, needed)
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn pbl_status_name(status: PblStatus) -> *const c_char {
    status.name().as_ptr()
}

/// Copies the calling thread's last error message. Returns the size
/// needed including the terminator; writes nothing when `cap` is smaller.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn pbl_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && cap >= bytes.len() {
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), bytes.len());
        }
        bytes.len()
    })
}

/// Writes a seed phrase of `words` words drawn deterministically from `seed`.
///
/// # Safety
/// `buf` must be valid for `cap` bytes; `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pbl_phrase_generate(
    seed: u64,
    words: u32,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> PblStatus {
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phrase = SeedPhrase::generate(words as usize, &mut rng).map_err(Error::bad_argument)?;
        copy_str(&phrase.expose(), buf, cap, needed)
    })
}

/// Writes the base58 address of ledger `index` under `phrase`.
///
/// # Safety
/// `phrase` must be a NUL-terminated string; `buf` must be valid for `cap`
/// bytes; `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pbl_ledger_address(
    phrase: *const c_char,
    index: u64,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> PblStatus {
    guard(|| {
        let phrase: SeedPhrase = str_arg(phrase, "phrase")?.parse().map_err(Error::bad_argument)?;
        let ledger = derive_ledger_keypair(&derive_root_keypair(&phrase), index).map_err(Error::bad_argument)?;
        let address = Address::ledger(&ledger.public());
        copy_str(&address.to_base58(), buf, cap, needed)
    })
}

/// A finding as plain data. `condition_index` is the numbered check for
/// genesis and block conditions and 0 otherwise.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PblFinding {
    pub height: u64,
    pub condition: PblCondition,
    pub condition_index: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PblCondition {
    #[default]
    Genesis = 1,
    Block = 2,
    Connection = 3,
    SingleGenesis = 4,
    LedgerAddress = 5,
    Structural = 6,
}

impl From<&Finding> for PblFinding {
    fn from(f: &Finding) -> Self {
        let (condition, condition_index) = match f.condition {
            Condition::Genesis(n) => (PblCondition::Genesis, n.into()),
            Condition::Block(n) => (PblCondition::Block, n.into()),
            Condition::Connection => (PblCondition::Connection, 0),
            Condition::SingleGenesis => (PblCondition::SingleGenesis, 0),
            Condition::LedgerAddress => (PblCondition::LedgerAddress, 0),
            Condition::Structural => (PblCondition::Structural, 0),
        };
        PblFinding {
            height: f.height,
            condition,
            condition_index,
        }
    }
}

/// Result of auditing a ledger file.
pub struct PblAudit {
    findings: Vec<Finding>,
    height: u64,
}

fn genesis_keys(body: &[u8]) -> KeyDirectory {
    match Chain::decode_lenient(body) {
        Ok((chain, _)) => match chain.blocks.first() {
            Some(Block::Genesis(g)) => KeyDirectory::from_genesis(g),
            _ => KeyDirectory::new(),
        },
        Err(_) => KeyDirectory::new(),
    }
}

/// Audits a ledger file against the keys in its own genesis block.
/// Returns `PBL_STATUS_DECODE` when the bytes are not a ledger file at all;
/// a file that decodes but fails validation still yields an audit.
///
/// # Safety
/// `bytes` must be valid for `len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pbl_audit(bytes: *const u8, len: usize, out: *mut *mut PblAudit) -> PblStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let bytes = bytes_arg(bytes, len, "bytes")?;
        let body = ledger_file_body(bytes).map_err(|e| Error::new(PblStatus::Decode, e.to_string()))?;
        let findings = tamper_scan_bytes(body, &genesis_keys(body));
        let height = Ledger::from_canonical_bytes(body).map_or(0, |l| l.tip_height());
        *out = Box::into_raw(Box::new(PblAudit { findings, height }));
        Ok(())
    })
}

/// # Safety
/// `audit` must come from [`pbl_audit`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pbl_audit_free(audit: *mut PblAudit) {
    if !audit.is_null() {
        drop(Box::from_raw(audit));
    }
}

/// Number of findings; zero means the ledger is valid.
///
/// # Safety
/// `audit` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pbl_audit_count(audit: *const PblAudit) -> usize {
    audit.as_ref().map_or(0, |a| a.findings.len())
}

/// Tip height of the audited ledger, 0 if it did not decode as a ledger.
///
/// # Safety
/// `audit` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pbl_audit_height(audit: *const PblAudit) -> u64 {
    audit.as_ref().map_or(0, |a| a.height)
}

/// Copies finding `i` and its text, formatted as
/// `block <h>: <condition>: <reason>`. `text` may be null with `cap == 0`
/// to query the size.
///
/// # Safety
/// `audit` must be a live handle; `finding` and `needed` must be valid;
/// `text` must be valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn pbl_audit_finding(
    audit: *const PblAudit,
    i: usize,
    finding: *mut PblFinding,
    text: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> PblStatus {
    guard(|| {
        let audit = audit.as_ref().ok_or_else(|| Error::null("audit"))?;
        let f = audit.findings.get(i).ok_or_else(|| {
            Error::new(
                PblStatus::BadArgument,
                format!("finding {i} of {}", audit.findings.len()),
            )
        })?;
        *out_ref(finding, "finding")? = f.into();
        copy_str(&f.to_string(), text, cap, needed)
    })
}

/// A simulated provider network and one user.
pub struct PblWorld {
    sim: Simulation,
}

/// Builds a world with `m` providers of every kind. Provider keys,
/// provider selection and the user's phrase all derive from `seed`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_new(seed: u64, m: u32, out: *mut *mut PblWorld) -> PblStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if m == 0 {
            return Err(Error::new(PblStatus::BadArgument, "m must be positive".into()));
        }
        let sim = Simulation::new(SimConfig::uniform(seed, m as usize)).map_err(Error::fault)?;
        *out = Box::into_raw(Box::new(PblWorld { sim }));
        Ok(())
    })
}

/// # Safety
/// `world` must come from [`pbl_world_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_free(world: *mut PblWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

unsafe fn sim_of<'a>(p: *mut PblWorld) -> Result<&'a mut Simulation, Error> {
    p.as_mut().map(|w| &mut w.sim).ok_or_else(|| Error::null("world"))
}

/// Creates the user's ledger number `index`.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_create_ledger(world: *mut PblWorld, index: u64) -> PblStatus {
    guard(|| {
        sim_of(world)?.create_ledger(index).map_err(Error::api)?;
        Ok(())
    })
}

/// Submits one transaction. `chaincode` may be null for a raw record.
/// `*committed` is the height of the block holding the transaction when it
/// was committed during the call, and 0 otherwise.
///
/// # Safety
/// `world` must be a live handle; `payload` must be valid for `len` bytes;
/// `chaincode` must be null or NUL-terminated; `committed` may be null.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_submit(
    world: *mut PblWorld,
    index: u64,
    chaincode: *const c_char,
    payload: *const u8,
    len: usize,
    committed: *mut u64,
) -> PblStatus {
    guard(|| {
        let sim = sim_of(world)?;
        let payload = bytes_arg(payload, len, "payload")?.to_vec();
        let spec = if chaincode.is_null() {
            TxSpec::raw(payload)
        } else {
            TxSpec::chaincode(str_arg(chaincode, "chaincode")?, payload)
        };
        let receipt = sim.submit(index, spec).map_err(Error::api)?;
        if let Some(c) = committed.as_mut() {
            *c = receipt.committed_at.unwrap_or(0);
        }
        Ok(())
    })
}

/// Lets pending work time out and commit. `*committed` receives the number
/// of blocks committed.
///
/// # Safety
/// `world` must be a live handle; `committed` may be null.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_tick(world: *mut PblWorld, index: u64, committed: *mut usize) -> PblStatus {
    guard(|| {
        let heights = sim_of(world)?.tick(index).map_err(Error::api)?;
        if let Some(c) = committed.as_mut() {
            *c = heights.len();
        }
        Ok(())
    })
}

/// Advances virtual time.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_advance(world: *mut PblWorld, ms: u64) -> PblStatus {
    guard(|| {
        sim_of(world)?.net.advance(ms);
        Ok(())
    })
}

/// Reads the ledger from storage and validates it. Returns
/// `PBL_STATUS_INVALID` when the stored copy fails validation.
///
/// # Safety
/// `world` must be a live handle; `height` may be null.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_read(world: *mut PblWorld, index: u64, height: *mut u64) -> PblStatus {
    guard(|| {
        let r = sim_of(world)?.read(index).map_err(Error::api)?;
        if let Some(h) = height.as_mut() {
            *h = r.ledger.tip_height();
        }
        let first = r.report.failures().next();
        match first {
            Some(f) => Err(Error::new(PblStatus::Invalid, f.to_string())),
            None => Ok(()),
        }
    })
}

/// Copies the user's local copy of the ledger as a ledger file.
///
/// # Safety
/// `world` must be a live handle; `buf` must be valid for `cap` bytes;
/// `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_export(
    world: *mut PblWorld,
    index: u64,
    buf: *mut u8,
    cap: usize,
    needed: *mut usize,
) -> PblStatus {
    guard(|| {
        let sim = sim_of(world)?;
        let address = sim.address(index).map_err(Error::bad_argument)?;
        let ledger = sim
            .agent
            .local_ledger(&address)
            .ok_or_else(|| Error::new(PblStatus::BadArgument, format!("ledger {index} has not been created")))?;
        copy_out(&encode_ledger_file(ledger), buf, cap, needed)
    })
}

/// Sets the behavior of provider `id`: `healthy`, `silent`, `corrupt` or
/// `delayed <ms>`.
///
/// # Safety
/// `world` must be a live handle; `id` and `mode` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_fault(world: *mut PblWorld, id: *const c_char, mode: *const c_char) -> PblStatus {
    guard(|| {
        let sim = sim_of(world)?;
        let id = str_arg(id, "id")?;
        let mode: FaultMode = str_arg(mode, "mode")?.parse().map_err(Error::bad_argument)?;
        sim.net.inject(id, mode.into()).map_err(Error::bad_argument)
    })
}

/// Copies provider ids separated by newlines.
///
/// # Safety
/// `world` must be a live handle; `buf` must be valid for `cap` bytes;
/// `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pbl_world_providers(
    world: *mut PblWorld,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> PblStatus {
    guard(|| {
        let ids = sim_of(world)?.provider_ids().join("\n");
        copy_str(&ids, buf, cap, needed)
    })
}

impl Error {
    fn api(e: ApiError) -> Self {
        let status = match &e {
            e if e.is_fault() => PblStatus::Fault,
            ApiError::Invalid(_) => PblStatus::Invalid,
            ApiError::Refused { .. } | ApiError::Duplicate(_) => PblStatus::Refused,
            _ => PblStatus::BadArgument,
        };
        Error::new(status, e.to_string())
    }
}
