use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::crypto::{KeyId, PublicKey};
use crate::identity::ServiceKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderRecord {
    pub provider_id: String,
    pub kind: ServiceKind,
    pub public_key: PublicKey,
    pub endpoint: String,
}

impl ProviderRecord {
    pub fn new(provider_id: impl Into<String>, kind: ServiceKind, public_key: PublicKey) -> Self {
        let provider_id = provider_id.into();
        ProviderRecord {
            endpoint: format!("sim://{provider_id}"),
            provider_id,
            kind,
            public_key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("duplicate provider id {0:?}")]
    Duplicate(String),
    #[error("no {0} provider configured")]
    Empty(ServiceKind),
}

/// The user's trusted providers, one list per service kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderPool {
    pub gba: Vec<ProviderRecord>,
    pub esp: Vec<ProviderRecord>,
    pub osp: Vec<ProviderRecord>,
    pub vsp: Vec<ProviderRecord>,
    pub storage: Vec<ProviderRecord>,
    pub rng_seed: u64,
}

impl ProviderPool {
    pub fn new(rng_seed: u64) -> Self {
        ProviderPool {
            gba: Vec::new(),
            esp: Vec::new(),
            osp: Vec::new(),
            vsp: Vec::new(),
            storage: Vec::new(),
            rng_seed,
        }
    }

    pub fn add(&mut self, record: ProviderRecord) -> Result<(), PoolError> {
        if self.find(&record.provider_id).is_some() {
            return Err(PoolError::Duplicate(record.provider_id));
        }
        self.list_mut(record.kind).push(record);
        Ok(())
    }

    pub fn of(&self, kind: ServiceKind) -> &[ProviderRecord] {
        match kind {
            ServiceKind::Gba => &self.gba,
            ServiceKind::Esp => &self.esp,
            ServiceKind::Osp => &self.osp,
            ServiceKind::Vsp => &self.vsp,
            ServiceKind::Storage => &self.storage,
        }
    }

    fn list_mut(&mut self, kind: ServiceKind) -> &mut Vec<ProviderRecord> {
        match kind {
            ServiceKind::Gba => &mut self.gba,
            ServiceKind::Esp => &mut self.esp,
            ServiceKind::Osp => &mut self.osp,
            ServiceKind::Vsp => &mut self.vsp,
            ServiceKind::Storage => &mut self.storage,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &ProviderRecord> {
        ServiceKind::ALL.into_iter().flat_map(|k| self.of(k).iter())
    }

    pub fn find(&self, id: &str) -> Option<&ProviderRecord> {
        self.all().find(|r| r.provider_id == id)
    }

    pub fn find_key(&self, key: &KeyId) -> Option<&ProviderRecord> {
        self.all().find(|r| r.public_key.key_id() == *key)
    }

    pub fn keys(&self, kind: ServiceKind) -> Vec<PublicKey> {
        self.of(kind).iter().map(|r| r.public_key).collect()
    }

    /// Every kind must have at least one provider.
    pub fn check(&self) -> Result<(), PoolError> {
        match ServiceKind::ALL.into_iter().find(|k| self.of(*k).is_empty()) {
            Some(k) => Err(PoolError::Empty(k)),
            None => Ok(()),
        }
    }

    /// Uniformly draws a provider of `kind` not in `excluded`.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        kind: ServiceKind,
        excluded: &BTreeSet<String>,
        rng: &mut R,
    ) -> Option<&ProviderRecord> {
        let open: Vec<&ProviderRecord> = self
            .of(kind)
            .iter()
            .filter(|r| !excluded.contains(&r.provider_id))
            .collect();
        open.choose(rng).copied()
    }
}

/// The VSP and OSP serving the block currently being built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundState {
    pub current_vsp: String,
    pub current_osp: String,
    pub established_at_height: u64,
}

/// When an ordering provider closes a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CuttingCondition {
    /// After `n` transactions.
    Count(usize),
    /// When the oldest pending transaction has waited this many ms.
    Interval(u64),
    /// Before the encoded transactions would exceed this many bytes.
    Size(usize),
}

impl Default for CuttingCondition {
    fn default() -> Self {
        CuttingCondition::Count(3)
    }
}

impl fmt::Display for CuttingCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CuttingCondition::Count(n) => write!(f, "count {n}"),
            CuttingCondition::Interval(ms) => write!(f, "interval {ms}ms"),
            CuttingCondition::Size(b) => write!(f, "size {b}"),
        }
    }
}

impl FromStr for CuttingCondition {
    type Err = String;

    /// `count 3`, `interval 2s`, `interval 250ms`, `size 1048576`.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut it = s.split_whitespace();
        let (Some(kind), Some(arg), None) = (it.next(), it.next(), it.next()) else {
            return Err(format!("expected `<kind> <threshold>`, got {s:?}"));
        };
        let bad = || format!("bad threshold {arg:?} for {kind}");
        let cond = match kind {
            "count" => CuttingCondition::Count(arg.parse().map_err(|_| bad())?),
            "interval" => {
                let ms = if let Some(v) = arg.strip_suffix("ms") {
                    v.parse::<u64>().map_err(|_| bad())?
                } else if let Some(v) = arg.strip_suffix('s') {
                    v.parse::<u64>()
                        .ok()
                        .and_then(|s| s.checked_mul(1000))
                        .ok_or_else(bad)?
                } else {
                    arg.parse().map_err(|_| bad())?
                };
                CuttingCondition::Interval(ms)
            }
            "size" => CuttingCondition::Size(arg.parse().map_err(|_| bad())?),
            _ => return Err(format!("unknown cutting condition {kind:?}")),
        };
        match cond {
            CuttingCondition::Count(0) | CuttingCondition::Interval(0) | CuttingCondition::Size(0) => {
                Err(bad())
            }
            c => Ok(c),
        }
    }
}
