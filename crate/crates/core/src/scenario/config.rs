//! Scenario file (TOML). The grammar is documented in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{AdversaryRegistry, AdversarySpec};
use crate::participant::AcceptancePredicate;
use crate::policy::{PolicyParams, PolicyRegistry};
use crate::transactions::{ContractTerms, NodeRole};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {detail}")]
    Invalid { field: String, detail: String },
}

fn invalid(field: impl Into<String>, detail: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        detail: detail.into(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub chain: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    /// Directory for per-node key files.
    pub keys: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoSettings {
    #[serde(default = "yes")]
    pub respect_contracts: bool,
    #[serde(default)]
    pub sensor_poll_every: u64,
}

fn yes() -> bool {
    true
}

impl Default for DiscoSettings {
    fn default() -> Self {
        Self {
            respect_contracts: true,
            sensor_poll_every: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagMode {
    #[default]
    Load,
    Demand,
    /// Demand and load on alternating reports.
    Alternate,
}

/// Uniform integer stream in `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default = "default_min")]
    pub min: u64,
    #[serde(default = "default_max")]
    pub max: u64,
    #[serde(default)]
    pub flag: FlagMode,
}

fn default_min() -> u64 {
    100
}

fn default_max() -> u64 {
    1_000
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            min: default_min(),
            max: default_max(),
            flag: FlagMode::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermsSpec {
    #[serde(default)]
    pub device_classes: Vec<String>,
    #[serde(default = "all_day")]
    pub hours: (u8, u8),
    #[serde(default)]
    pub sensors: Vec<(String, u32)>,
}

fn all_day() -> (u8, u8) {
    (0, 24)
}

impl From<&TermsSpec> for ContractTerms {
    fn from(t: &TermsSpec) -> Self {
        ContractTerms {
            device_classes: t.device_classes.clone(),
            hours: t.hours,
            sensors: t.sensors.clone(),
        }
    }
}

impl From<&TermsSpec> for AcceptancePredicate {
    fn from(t: &TermsSpec) -> Self {
        AcceptancePredicate {
            device_classes: t.device_classes.clone(),
            hours: t.hours,
            sensors: t.sensors.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    #[serde(rename = "type")]
    pub sensor_type: String,
    #[serde(default)]
    pub count: Option<u32>,
    /// Ticks between readings; 0 = only answer polls.
    #[serde(default)]
    pub report_every: Option<u64>,
    #[serde(default)]
    pub min: Option<u64>,
    #[serde(default)]
    pub max: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub role: NodeRole,
    #[serde(default = "one")]
    pub count: u32,
    /// Ticks between reports; defaults to the period length. 0 = silent.
    #[serde(default)]
    pub report_every: Option<u64>,
    #[serde(default)]
    pub data: DataSpec,
    /// Terms the DISCO offers this consumer.
    #[serde(default)]
    pub contract: Option<TermsSpec>,
    /// What the consumer will sign; defaults to the offered terms.
    #[serde(default)]
    pub accept: Option<TermsSpec>,
    /// Device classes installed at each consumer.
    #[serde(default)]
    pub devices: Vec<String>,
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_warmup")]
    pub warmup: u64,
}

fn default_iterations() -> u64 {
    10_000
}

fn default_warmup() -> u64 {
    500
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            warmup: default_warmup(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub ticks: u64,
    #[serde(default = "default_period")]
    pub period_length: u64,
    #[serde(default)]
    pub resync_window: u32,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub disco: DiscoSettings,
    #[serde(default)]
    pub policy: PolicyParams,
    #[serde(default)]
    pub participants: Vec<ParticipantSpec>,
    #[serde(default)]
    pub adversaries: Vec<AdversarySpec>,
    #[serde(default)]
    pub bench: BenchSettings,
}

fn default_period() -> u64 {
    10
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period_length == 0 {
            return Err(invalid("period_length", "must be at least 1"));
        }
        PolicyRegistry::default()
            .build(&self.policy)
            .map_err(|e| invalid("policy", e.to_string()))?;
        let adversaries = AdversaryRegistry::default();
        for (i, a) in self.adversaries.iter().enumerate() {
            adversaries
                .build(a, 0)
                .map_err(|e| invalid(format!("adversaries[{i}]"), e.to_string()))?;
        }
        for (i, p) in self.participants.iter().enumerate() {
            let field = |f: &str| format!("participants[{i}].{f}");
            if !matches!(
                p.role,
                NodeRole::Producer | NodeRole::Consumer | NodeRole::Storage
            ) {
                return Err(invalid(
                    field("role"),
                    format!(
                        "`{}` cannot be listed directly; sensors and devices belong under a consumer",
                        p.role.as_str()
                    ),
                ));
            }
            check_range(&p.data, &field("data"))?;
            for (name, terms) in [("contract", &p.contract), ("accept", &p.accept)] {
                if let Some(t) = terms {
                    let (a, b) = t.hours;
                    if a > 24 || b > 24 || a > b {
                        return Err(invalid(
                            field(&format!("{name}.hours")),
                            "need start <= end <= 24",
                        ));
                    }
                }
            }
            let site = !p.devices.is_empty() || !p.sensors.is_empty() || p.contract.is_some();
            if site && p.role != NodeRole::Consumer {
                return Err(invalid(
                    field("role"),
                    "only consumers take contracts, devices and sensors",
                ));
            }
            if (!p.devices.is_empty() || !p.sensors.is_empty()) && p.contract.is_none() {
                return Err(invalid(
                    field("contract"),
                    "devices and sensors need a contract",
                ));
            }
            for (j, s) in p.sensors.iter().enumerate() {
                if s.min.unwrap_or(0) > s.max.unwrap_or(u64::MAX) {
                    return Err(invalid(field(&format!("sensors[{j}]")), "min > max"));
                }
            }
        }
        Ok(())
    }
}

fn check_range(d: &DataSpec, field: &str) -> Result<(), ConfigError> {
    if d.min > d.max {
        return Err(invalid(field, format!("min {} > max {}", d.min, d.max)));
    }
    Ok(())
}
