use std::collections::BTreeMap;

use thiserror::Error;

use crate::codec::CodecError;
use crate::services::{
    Fault, FaultKind, Handled, Message, ProviderPool, ProviderRecord, RefusalCode, Reply, Service,
    Transport,
};

use super::clock::VirtualClock;
use super::faults::{FaultMode, FaultProgram};

pub const DEFAULT_TTL_MS: u64 = 500;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("provider {0:?} is already registered")]
    Duplicate(String),
    #[error("no provider {0:?}")]
    Unknown(String),
    #[error("TTL must be positive")]
    ZeroTtl,
}

#[derive(Clone)]
struct Node {
    record: ProviderRecord,
    service: Box<dyn Service>,
    program: FaultProgram,
    handled: u64,
}

/// In-process message delivery between the user agent and providers.
///
/// Every hop is a length-prefixed frame. A hop to a silent provider, or one
/// delayed past the TTL, costs the TTL on the virtual clock and yields a
/// fault; its handler never runs.
#[derive(Clone)]
pub struct Network {
    clock: VirtualClock,
    ttl: u64,
    nodes: BTreeMap<String, Node>,
    order: Vec<String>,
}

impl Network {
    pub fn new(start_ms: u64, ttl: u64) -> Result<Self, HarnessError> {
        if ttl == 0 {
            return Err(HarnessError::ZeroTtl);
        }
        Ok(Network {
            clock: VirtualClock::new(start_ms),
            ttl,
            nodes: BTreeMap::new(),
            order: Vec::new(),
        })
    }

    pub fn ttl(&self) -> u64 {
        self.ttl
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn advance(&mut self, ms: u64) -> u64 {
        self.clock.advance(ms)
    }

    pub fn register(&mut self, record: ProviderRecord, service: Box<dyn Service>) -> Result<(), HarnessError> {
        if self.nodes.contains_key(&record.provider_id) {
            return Err(HarnessError::Duplicate(record.provider_id));
        }
        self.order.push(record.provider_id.clone());
        self.nodes.insert(
            record.provider_id.clone(),
            Node {
                record,
                service,
                program: FaultProgram::healthy(),
                handled: 0,
            },
        );
        Ok(())
    }

    pub fn deregister(&mut self, id: &str) -> Result<ProviderRecord, HarnessError> {
        let node = self
            .nodes
            .remove(id)
            .ok_or_else(|| HarnessError::Unknown(id.into()))?;
        self.order.retain(|x| x != id);
        Ok(node.record)
    }

    pub fn inject(&mut self, id: &str, program: FaultProgram) -> Result<(), HarnessError> {
        self.nodes
            .get_mut(id)
            .ok_or_else(|| HarnessError::Unknown(id.into()))?
            .program = program;
        Ok(())
    }

    pub fn heal(&mut self, id: &str) -> Result<(), HarnessError> {
        self.inject(id, FaultProgram::healthy())
    }

    pub fn program(&self, id: &str) -> Option<FaultProgram> {
        self.nodes.get(id).map(|n| n.program)
    }

    /// Whether `id` answers right now.
    pub fn is_healthy(&self, id: &str) -> bool {
        self.nodes.get(id).is_some_and(|n| match n.program.mode_at(self.clock.now()) {
            FaultMode::Healthy | FaultMode::CorruptSignature => true,
            FaultMode::Silent => false,
            FaultMode::Delayed(d) => d <= self.ttl,
        })
    }

    /// Requests handled by `id` so far.
    pub fn handled(&self, id: &str) -> u64 {
        self.nodes.get(id).map_or(0, |n| n.handled)
    }

    pub fn records(&self) -> impl Iterator<Item = &ProviderRecord> {
        self.order.iter().map(|id| &self.nodes[id].record)
    }

    /// A pool holding every registered provider, in registration order.
    pub fn pool(&self, rng_seed: u64) -> ProviderPool {
        let mut pool = ProviderPool::new(rng_seed);
        for r in self.records() {
            pool.add(r.clone()).expect("ids are unique");
        }
        pool
    }

    /// Delivers `frame` to `to` and follows forwards until some provider
    /// answers. Each hop gets `ttl`.
    pub fn send(&mut self, to: &str, frame: &[u8], ttl: u64) -> Result<Vec<u8>, Fault> {
        self.deliver(to, frame.to_vec(), ttl).map(|(_, f)| f)
    }

    fn deliver(&mut self, to: &str, mut frame: Vec<u8>, ttl: u64) -> Result<(String, Vec<u8>), Fault> {
        let mut target = to.to_owned();
        loop {
            let fault = |kind| Fault {
                provider: target.clone(),
                kind,
            };
            let Some(node) = self.nodes.get_mut(&target) else {
                self.clock.advance(ttl);
                return Err(fault(FaultKind::Unreachable));
            };
            let mode = node.program.mode_at(self.clock.now());
            match mode {
                FaultMode::Silent => {
                    self.clock.advance(ttl);
                    return Err(fault(FaultKind::Timeout));
                }
                FaultMode::Delayed(d) if d > ttl => {
                    self.clock.advance(ttl);
                    return Err(fault(FaultKind::Timeout));
                }
                FaultMode::Delayed(d) => {
                    self.clock.advance(d);
                }
                FaultMode::Healthy | FaultMode::CorruptSignature => {}
            }
            let handled = match Message::from_frame(&frame) {
                Ok(m) => {
                    node.handled += 1;
                    node.service.handle(m, self.clock.now())
                }
                Err(e) => Handled::Reply(malformed(e)),
            };
            let (mut out, next) = match handled {
                Handled::Reply(m) => (m, None),
                Handled::Forward { to, message } => (message, Some(to)),
            };
            if mode == FaultMode::CorruptSignature {
                out.corrupt_signatures_of(node.record.public_key.key_id());
            }
            frame = out.to_frame();
            match next {
                Some(to) => target = to,
                None => return Ok((target, frame)),
            }
        }
    }
}

fn malformed(e: CodecError) -> Message {
    Message::refusal(RefusalCode::Malformed, e.to_string())
}

impl Transport for Network {
    fn request(&mut self, to: &str, message: &Message) -> Result<Reply, Fault> {
        let ttl = self.ttl;
        let (from, frame) = self.deliver(to, message.to_frame(), ttl)?;
        let message = Message::from_frame(&frame).map_err(|_| Fault {
            provider: from.clone(),
            kind: FaultKind::Garbled,
        })?;
        Ok(Reply { from, message })
    }

    fn now(&self) -> u64 {
        self.clock.now()
    }
}
