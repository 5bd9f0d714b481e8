//! The six services as message-driven state machines, plus the user agent
//! that drives them through a [`Transport`].

mod api;
mod esp;
mod gba;
mod message;
mod osp;
mod pool;
mod storage;
mod vsp;

use std::fmt;

use crate::identity::ServiceKind;

pub use api::{ApiError, CreateReport, ProviderOutcome, Receipt, ReadReport, TxSpec, UserAgent};
pub use esp::Esp;
pub use gba::{issue_genesis, Gba, KycPolicy};
pub use message::{Message, Query, QueryResponse, RefusalCode};
pub use osp::Osp;
pub use pool::{CuttingCondition, PoolError, ProviderPool, ProviderRecord, RoundState};
pub use storage::{FileStore, LedgerStore, MemoryStore, StorageService, StoreError};
pub use vsp::{dependency_sort, check_dependencies, Vsp};

/// What a handler does with a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Handled {
    /// Answer the caller.
    Reply(Message),
    /// Pass `message` on to provider `to`; its answer goes back to the caller.
    Forward { to: String, message: Message },
}

/// A provider's request handler.
pub trait Service: Send {
    fn kind(&self) -> ServiceKind;

    fn handle(&mut self, message: Message, now: u64) -> Handled;

    fn clone_box(&self) -> Box<dyn Service>;
}

impl Clone for Box<dyn Service> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultKind {
    /// No answer within the TTL.
    Timeout,
    /// No provider with that id.
    Unreachable,
    /// The answer could not be decoded.
    Garbled,
}

/// A provider that did not answer in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub provider: String,
    pub kind: FaultKind,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            FaultKind::Timeout => "timed out",
            FaultKind::Unreachable => "is unreachable",
            FaultKind::Garbled => "sent an undecodable answer",
        };
        write!(f, "provider {} {what}", self.provider)
    }
}

impl std::error::Error for Fault {}

/// An answer and the provider that produced it, after any forwarding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub from: String,
    pub message: Message,
}

/// Request/response delivery between the user agent and providers.
pub trait Transport {
    fn request(&mut self, to: &str, message: &Message) -> Result<Reply, Fault>;

    /// Current time in milliseconds.
    fn now(&self) -> u64;
}
