//! Load-control decision policies.
//!
//! A policy looks at one committed period and picks which controllable
//! devices to curtail. Policies are registered by name and built from the
//! scenario's `[policy]` table, so alternative strategies can be added
//! without touching the DISCO.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::PublicKey;
use crate::transactions::Action;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("unknown policy `{0}`")]
    Unknown(String),
    #[error("policy parameter `{field}`: {detail}")]
    Invalid { field: &'static str, detail: String },
}

/// What the DISCO saw during one period.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PeriodSummary {
    pub period_id: u64,
    /// Simulated hour of day, `period_id % 24`.
    pub hour: u8,
    /// Sum of accepted `Load` reports from metering nodes.
    pub total_load: u64,
    /// Sum of accepted `Demand` reports from metering nodes.
    pub total_demand: u64,
    pub accepted: u64,
}

/// A device the DISCO may address in this period.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControllableDevice {
    pub pk: PublicKey,
    pub class: String,
    pub customer: PublicKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedAction {
    pub target: PublicKey,
    pub label: String,
    pub action: Action,
}

pub trait LoadControlPolicy: fmt::Debug {
    fn name(&self) -> &str;

    /// Chooses actions for the period. `devices` is already filtered to the
    /// ones the DISCO is willing to address.
    fn plan(&self, summary: &PeriodSummary, devices: &[ControllableDevice]) -> Vec<PlannedAction>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurtailMode {
    Off,
    #[default]
    Reduce,
}

/// `[policy]` table of the scenario file. Unused fields are ignored by
/// policies that do not need them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    #[serde(default = "default_policy_name")]
    pub name: String,
    /// Watt-hours per period.
    #[serde(default = "default_threshold")]
    pub capacity_threshold: u64,
    #[serde(default)]
    pub curtailment_order: Vec<String>,
    /// Watt-hours removed by one device action.
    #[serde(default = "default_reduction")]
    pub per_device_reduction: u64,
    #[serde(default)]
    pub mode: CurtailMode,
}

fn default_policy_name() -> String {
    "threshold".into()
}

fn default_threshold() -> u64 {
    10_000
}

fn default_reduction() -> u64 {
    500
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            name: default_policy_name(),
            capacity_threshold: default_threshold(),
            curtailment_order: Vec::new(),
            per_device_reduction: default_reduction(),
            mode: CurtailMode::default(),
        }
    }
}

/// Curtails devices in class order until the projected reduction covers
/// the load above `capacity_threshold`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThresholdPolicy {
    pub capacity_threshold: u64,
    pub curtailment_order: Vec<String>,
    pub per_device_reduction: u64,
    pub mode: CurtailMode,
}

impl ThresholdPolicy {
    pub fn new(params: &PolicyParams) -> Result<Self, PolicyError> {
        if params.capacity_threshold == 0 {
            return Err(PolicyError::Invalid {
                field: "capacity_threshold",
                detail: "must be greater than 0".into(),
            });
        }
        if params.per_device_reduction == 0 {
            return Err(PolicyError::Invalid {
                field: "per_device_reduction",
                detail: "must be greater than 0".into(),
            });
        }
        Ok(Self {
            capacity_threshold: params.capacity_threshold,
            curtailment_order: params.curtailment_order.clone(),
            per_device_reduction: params.per_device_reduction,
            mode: params.mode,
        })
    }

    /// Number of device actions needed to cover `load`.
    pub fn actions_needed(&self, load: u64) -> u64 {
        load.saturating_sub(self.capacity_threshold)
            .div_ceil(self.per_device_reduction)
    }
}

impl LoadControlPolicy for ThresholdPolicy {
    fn name(&self) -> &str {
        "threshold"
    }

    fn plan(&self, summary: &PeriodSummary, devices: &[ControllableDevice]) -> Vec<PlannedAction> {
        let needed = self.actions_needed(summary.total_load) as usize;
        if needed == 0 {
            return Vec::new();
        }
        let action = match self.mode {
            CurtailMode::Off => Action::Off,
            CurtailMode::Reduce => Action::ReduceBy(self.per_device_reduction),
        };
        self.curtailment_order
            .iter()
            .flat_map(|class| devices.iter().filter(move |d| &d.class == class))
            .take(needed)
            .map(|d| PlannedAction {
                target: d.pk,
                label: d.class.clone(),
                action,
            })
            .collect()
    }
}

/// Never curtails. Useful for runs that only exercise reporting.
#[derive(Clone, Debug, Default)]
pub struct PassivePolicy;

impl LoadControlPolicy for PassivePolicy {
    fn name(&self) -> &str {
        "none"
    }

    fn plan(&self, _: &PeriodSummary, _: &[ControllableDevice]) -> Vec<PlannedAction> {
        Vec::new()
    }
}

pub type PolicyFactory = fn(&PolicyParams) -> Result<Box<dyn LoadControlPolicy>, PolicyError>;

/// Name → constructor table for policies.
#[derive(Clone)]
pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, factory: PolicyFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, params: &PolicyParams) -> Result<Box<dyn LoadControlPolicy>, PolicyError> {
        let factory = self
            .factories
            .get(&params.name)
            .ok_or_else(|| PolicyError::Unknown(params.name.clone()))?;
        factory(params)
    }
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("threshold", |p| Ok(Box::new(ThresholdPolicy::new(p)?)));
        r.register("none", |_| Ok(Box::new(PassivePolicy)));
        r
    }
}

impl fmt::Debug for PolicyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}
