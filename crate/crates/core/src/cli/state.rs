use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::identity::Address;
use crate::ledger::CompleteTransaction;

/// What the agent keeps between invocations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub invocations: u64,
    /// Clock reading at the end of the last invocation.
    pub clock_ms: u64,
}

pub struct StateDir {
    dir: PathBuf,
}

fn invalid(e: impl ToString) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

impl StateDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        StateDir { dir: dir.into() }
    }

    fn agent_path(&self) -> PathBuf {
        self.dir.join("agent.toml")
    }

    fn pending_path(&self, ledger: &Address) -> PathBuf {
        self.dir.join(format!("{}.pending", ledger.to_base58()))
    }

    pub fn load(&self) -> io::Result<AgentState> {
        match std::fs::read_to_string(self.agent_path()) {
            Ok(text) => toml::from_str(&text).map_err(invalid),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(AgentState::default()),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, state: &AgentState) -> io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let text = toml::to_string(state).map_err(invalid)?;
        write_atomic(&self.agent_path(), text.as_bytes())
    }

    /// Complete transactions accepted but not yet committed.
    pub fn load_pending(&self, ledger: &Address) -> io::Result<Vec<CompleteTransaction>> {
        match std::fs::read(self.pending_path(ledger)) {
            Ok(bytes) => {
                let mut dec = Decoder::new(&bytes);
                let cts = dec.list().map_err(invalid)?;
                dec.finish().map_err(invalid)?;
                Ok(cts)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }

    pub fn save_pending(&self, ledger: &Address, cts: &[CompleteTransaction]) -> io::Result<()> {
        let path = self.pending_path(ledger);
        if cts.is_empty() {
            return match std::fs::remove_file(&path) {
                Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
                _ => Ok(()),
            };
        }
        std::fs::create_dir_all(&self.dir)?;
        let mut enc = Encoder::new();
        enc.list(cts);
        write_atomic(&path, &enc.finish())
    }
}
