use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::harness::{SimConfig, DEFAULT_TTL_MS};
use crate::identity::ServiceKind;
use crate::services::{CuttingCondition, KycPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad cutting condition: {0}")]
    Cutting(String),
    #[error("no {0} providers configured")]
    EmptyKind(ServiceKind),
    #[error("unknown provider kind {0:?}")]
    UnknownKind(String),
    #[error("duplicate provider id {0:?}")]
    DuplicateId(String),
    #[error("ttl_ms must be positive")]
    ZeroTtl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Lines,
}

/// Providers of each kind, named `<kind>-1`, `<kind>-2`, ...
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolCounts {
    pub gba: usize,
    pub esp: usize,
    pub osp: usize,
    pub vsp: usize,
    pub storage: usize,
}

impl Default for PoolCounts {
    fn default() -> Self {
        PoolCounts {
            gba: 1,
            esp: 3,
            osp: 2,
            vsp: 2,
            storage: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderEntry {
    pub kind: String,
    pub id: String,
}

/// Settings read from `pbl.toml`, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Storage providers and agent state live under this directory.
    pub data_dir: PathBuf,
    /// Provider keys are derived from this string.
    pub pool_secret: String,
    /// Fixes provider selection. Drawn from system entropy when absent.
    pub seed: Option<u64>,
    pub ttl_ms: u64,
    pub cutting: String,
    pub format: Format,
    /// Fixes the clock start instead of reading the system time.
    pub start_ms: Option<u64>,
    pub kyc_deny: Vec<String>,
    pub pool: PoolCounts,
    pub providers: Vec<ProviderEntry>,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            data_dir: PathBuf::from("pbl-data"),
            pool_secret: "pbl-local-pool".into(),
            seed: None,
            ttl_ms: DEFAULT_TTL_MS,
            cutting: CuttingCondition::default().to_string(),
            format: Format::Text,
            start_ms: None,
            kyc_deny: Vec::new(),
            pool: PoolCounts::default(),
            providers: Vec::new(),
        }
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn cutting(&self) -> Result<CuttingCondition, ConfigError> {
        self.cutting.parse().map_err(ConfigError::Cutting)
    }

    pub fn providers(&self) -> Result<Vec<(ServiceKind, String)>, ConfigError> {
        let counts = [
            (ServiceKind::Gba, self.pool.gba),
            (ServiceKind::Esp, self.pool.esp),
            (ServiceKind::Osp, self.pool.osp),
            (ServiceKind::Vsp, self.pool.vsp),
            (ServiceKind::Storage, self.pool.storage),
        ];
        let mut out: Vec<(ServiceKind, String)> = Vec::new();
        for (kind, n) in counts {
            out.extend((1..=n).map(|i| (kind, format!("{kind}-{i}"))));
        }
        for p in &self.providers {
            let kind = ServiceKind::parse(&p.kind).ok_or_else(|| ConfigError::UnknownKind(p.kind.clone()))?;
            if out.iter().any(|(_, id)| *id == p.id) {
                return Err(ConfigError::DuplicateId(p.id.clone()));
            }
            out.push((kind, p.id.clone()));
        }
        for kind in ServiceKind::ALL {
            if !out.iter().any(|(k, _)| *k == kind) {
                return Err(ConfigError::EmptyKind(kind));
            }
        }
        Ok(out)
    }

    /// Checks everything that can be checked without touching disk.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ttl_ms == 0 {
            return Err(ConfigError::ZeroTtl);
        }
        self.cutting()?;
        self.providers()?;
        Ok(())
    }

    pub fn storage_dir(&self) -> PathBuf {
        self.data_dir.join("storage")
    }

    pub fn state_dir(&self) -> PathBuf {
        self.data_dir.join("state")
    }

    /// The simulated world for one invocation.
    pub fn sim_config(&self, draw_seed: u64, start_ms: u64) -> Result<SimConfig, ConfigError> {
        self.validate()?;
        let kyc = self
            .kyc_deny
            .iter()
            .fold(KycPolicy::allow_all(), |p, b| p.deny(b.as_bytes()));
        Ok(SimConfig {
            seed: draw_seed,
            pool_secret: self.pool_secret.as_bytes().to_vec(),
            ttl: self.ttl_ms,
            cutting: self.cutting()?,
            providers: self.providers()?,
            kyc,
            storage_dir: Some(self.storage_dir()),
            start_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = CliConfig::parse("").unwrap();
        assert_eq!(c, CliConfig::default());
        c.validate().unwrap();
        assert_eq!(c.providers().unwrap().len(), 11);
    }

    #[test]
    fn full_file() {
        let c = CliConfig::parse(
            r#"
            data_dir = "/tmp/x"
            seed = 7
            ttl_ms = 250
            cutting = "interval 2s"
            format = "lines"
            [pool]
            esp = 2
            [[providers]]
            kind = "storage"
            id = "archive"
            "#,
        )
        .unwrap();
        assert_eq!(c.cutting().unwrap(), CuttingCondition::Interval(2000));
        assert_eq!(c.format, Format::Lines);
        let p = c.providers().unwrap();
        assert!(p.contains(&(ServiceKind::Storage, "archive".into())));
        assert_eq!(p.iter().filter(|(k, _)| *k == ServiceKind::Esp).count(), 2);
    }

    #[test]
    fn rejects_bad_pools() {
        let c = CliConfig::parse("[pool]\nvsp = 0").unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::EmptyKind(ServiceKind::Vsp))));
        assert!(CliConfig::parse("bogus = 1").is_err());
        let c = CliConfig::parse("[[providers]]\nkind = \"esp\"\nid = \"esp-1\"").unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::DuplicateId(_))));
        let c = CliConfig::parse("cutting = \"count 0\"").unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Cutting(_))));
    }
}
