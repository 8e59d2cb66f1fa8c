//! Scenario configuration: the experiment input, loaded from key-value
//! structured text (TOML), validated with field-level diagnostics.

use crate::ledger::{hex, sha256};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionPolicy {
    /// Turn-based selection: round-robin over validator VMs, queueing on
    /// the chosen VM when it cannot take the task.
    Tbs,
    /// Weight-based selection: turn-based first, falling back to the
    /// minimum-attractiveness VM when the turn candidate is saturated.
    Wbs,
}

impl SelectionPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionPolicy::Tbs => "tbs",
            SelectionPolicy::Wbs => "wbs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tbs" => Some(SelectionPolicy::Tbs),
            "wbs" => Some(SelectionPolicy::Wbs),
            _ => None,
        }
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid scenario config: {field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WsnConfig {
    pub sensor_count: u32,
    pub head_count: u32,
    #[serde(default = "defaults::area_side_m")]
    pub area_side_m: f64,
    #[serde(default = "defaults::sensing_interval_s")]
    pub sensing_interval_s: f64,
    #[serde(default = "defaults::dissemination_interval_s")]
    pub dissemination_interval_s: f64,
    #[serde(default = "defaults::packet_bits")]
    pub packet_bits: u64,
    /// Distance a head transmits over when uplinking a transaction to the
    /// consensus network.
    #[serde(default = "defaults::uplink_distance_m")]
    pub uplink_distance_m: f64,
    #[serde(default = "defaults::aggregation_header_bytes")]
    pub aggregation_header_bytes: u64,
    #[serde(default = "defaults::digest_bytes_per_packet")]
    pub digest_bytes_per_packet: u64,
    /// Offset each head's first emission by a seeded draw in [0, interval)
    /// to avoid lockstep bursts. Disable for hand-checked timelines.
    #[serde(default = "defaults::yes")]
    pub dissemination_jitter: bool,
    /// Re-run cluster formation over the surviving heads at each
    /// dissemination boundary. Off by default: heads are a fixed hardware
    /// class here, not a rotating role.
    #[serde(default)]
    pub rotate_heads: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    #[serde(default = "defaults::sensor_initial_j")]
    pub sensor_initial_j: f64,
    #[serde(default = "defaults::head_initial_j")]
    pub head_initial_j: f64,
    #[serde(default = "defaults::validator_initial_j")]
    pub validator_initial_j: f64,
    #[serde(default = "defaults::e_elec_j_per_bit")]
    pub e_elec_j_per_bit: f64,
    #[serde(default = "defaults::e_amp_j_per_bit_m2")]
    pub e_amp_j_per_bit_m2: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            sensor_initial_j: defaults::sensor_initial_j(),
            head_initial_j: defaults::head_initial_j(),
            validator_initial_j: defaults::validator_initial_j(),
            e_elec_j_per_bit: defaults::e_elec_j_per_bit(),
            e_amp_j_per_bit_m2: defaults::e_amp_j_per_bit_m2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    #[serde(default = "defaults::bandwidth_bps")]
    pub bandwidth_bps: f64,
    #[serde(default = "defaults::propagation_s")]
    pub propagation_s: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            bandwidth_bps: defaults::bandwidth_bps(),
            propagation_s: defaults::propagation_s(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtConfig {
    /// Explicit validator count; mutually exclusive with `validator_ratio`.
    #[serde(default)]
    pub validator_count: Option<u32>,
    /// Fraction of all devices that are validators; resolved to a count at
    /// load time (minimum 1).
    #[serde(default)]
    pub validator_ratio: Option<f64>,
    #[serde(default = "defaults::vms_per_pm")]
    pub vms_per_pm: u32,
    #[serde(default = "defaults::pm_cores")]
    pub pm_cores: f64,
    #[serde(default = "defaults::pm_mem_gb")]
    pub pm_mem_gb: f64,
    #[serde(default = "defaults::vm_cores")]
    pub vm_cores: f64,
    #[serde(default = "defaults::vm_mem_gb")]
    pub vm_mem_gb: f64,
    #[serde(default = "defaults::t_upper")]
    pub t_upper: f64,
    #[serde(default = "defaults::cpu_weight")]
    pub cpu_weight: f64,
    #[serde(default = "defaults::busy_power_w")]
    pub busy_power_w: f64,
    #[serde(default = "defaults::idle_power_w")]
    pub idle_power_w: f64,
    #[serde(default = "defaults::per_core_rate_units_per_s")]
    pub per_core_rate_units_per_s: f64,
    #[serde(default = "defaults::work_alpha_units")]
    pub work_alpha_units: f64,
    #[serde(default = "defaults::work_beta_units_per_byte")]
    pub work_beta_units_per_byte: f64,
    #[serde(default = "defaults::task_cpu_demand_cores")]
    pub task_cpu_demand_cores: f64,
    #[serde(default = "defaults::task_mem_demand_gb")]
    pub task_mem_demand_gb: f64,
}

impl Default for VirtConfig {
    fn default() -> Self {
        toml::from_str("").expect("all virt fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    #[serde(default = "defaults::round_length_s")]
    pub round_length_s: f64,
    #[serde(default = "defaults::max_txs_per_block")]
    pub max_txs_per_block: u32,
    #[serde(default = "defaults::verify_cost_factor")]
    pub verify_cost_factor: f64,
    /// Strict-majority fraction: a block commits when
    /// approvals / active validators exceeds this.
    #[serde(default = "defaults::commit_threshold")]
    pub commit_threshold: f64,
    /// Scheduled availability gaps, for exercising validator failure.
    #[serde(default)]
    pub downtime: Vec<DowntimeWindow>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        toml::from_str("").expect("all consensus fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DowntimeWindow {
    pub validator: u32,
    pub from_s: f64,
    pub until_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "defaults::name")]
    pub name: String,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::policy")]
    pub policy: SelectionPolicy,
    pub wsn: WsnConfig,
    #[serde(default)]
    pub energy: EnergyConfig,
    #[serde(default)]
    pub link: LinkConfig,
    pub virt: VirtConfig,
    #[serde(default)]
    pub consensus: ConsensusConfig,
}

mod defaults {
    use super::SelectionPolicy;

    pub fn name() -> String {
        "scenario".to_string()
    }
    pub fn policy() -> SelectionPolicy {
        SelectionPolicy::Tbs
    }
    pub fn yes() -> bool {
        true
    }
    pub fn area_side_m() -> f64 {
        100.0
    }
    pub fn sensing_interval_s() -> f64 {
        10.0
    }
    pub fn dissemination_interval_s() -> f64 {
        30.0
    }
    pub fn packet_bits() -> u64 {
        1000
    }
    pub fn uplink_distance_m() -> f64 {
        50.0
    }
    pub fn aggregation_header_bytes() -> u64 {
        64
    }
    pub fn digest_bytes_per_packet() -> u64 {
        32
    }
    pub fn sensor_initial_j() -> f64 {
        3.0
    }
    pub fn head_initial_j() -> f64 {
        5.0
    }
    pub fn validator_initial_j() -> f64 {
        10.0
    }
    pub fn e_elec_j_per_bit() -> f64 {
        50e-9
    }
    pub fn e_amp_j_per_bit_m2() -> f64 {
        100e-12
    }
    pub fn bandwidth_bps() -> f64 {
        1_000_000.0
    }
    pub fn propagation_s() -> f64 {
        0.001
    }
    pub fn vms_per_pm() -> u32 {
        4
    }
    pub fn pm_cores() -> f64 {
        4.0
    }
    pub fn pm_mem_gb() -> f64 {
        8.0
    }
    pub fn vm_cores() -> f64 {
        1.0
    }
    pub fn vm_mem_gb() -> f64 {
        1.7
    }
    pub fn t_upper() -> f64 {
        0.8
    }
    pub fn cpu_weight() -> f64 {
        0.5
    }
    pub fn busy_power_w() -> f64 {
        0.8
    }
    pub fn idle_power_w() -> f64 {
        0.1
    }
    pub fn per_core_rate_units_per_s() -> f64 {
        1e6
    }
    pub fn work_alpha_units() -> f64 {
        1000.0
    }
    pub fn work_beta_units_per_byte() -> f64 {
        10.0
    }
    pub fn task_cpu_demand_cores() -> f64 {
        1.0
    }
    pub fn task_mem_demand_gb() -> f64 {
        0.5
    }
    pub fn round_length_s() -> f64 {
        5.0
    }
    pub fn max_txs_per_block() -> u32 {
        256
    }
    pub fn verify_cost_factor() -> f64 {
        0.1
    }
    pub fn commit_threshold() -> f64 {
        0.51
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| err("(parse)", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    /// Resolved validator count. A ratio r over all devices (sensors,
    /// heads, and the validators themselves) solves
    /// v = r * (sensors + heads + v), i.e. v = r * (s + h) / (1 - r).
    pub fn validator_count(&self) -> u32 {
        if let Some(n) = self.virt.validator_count {
            return n;
        }
        let r = self.virt.validator_ratio.unwrap_or(0.0);
        let devices = (self.wsn.sensor_count + self.wsn.head_count) as f64;
        let v = (r * devices / (1.0 - r)).round() as u32;
        v.max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration_s < 0.0 {
            return Err(err("duration_s", "must be nonnegative"));
        }
        if self.wsn.sensor_count == 0 {
            return Err(err("wsn.sensor_count", "must be positive"));
        }
        if self.wsn.head_count == 0 {
            return Err(err("wsn.head_count", "must be positive"));
        }
        if self.wsn.area_side_m <= 0.0 {
            return Err(err("wsn.area_side_m", "must be positive"));
        }
        if self.wsn.sensing_interval_s <= 0.0 {
            return Err(err("wsn.sensing_interval_s", "must be positive"));
        }
        if self.wsn.dissemination_interval_s <= 0.0 {
            return Err(err("wsn.dissemination_interval_s", "must be positive"));
        }
        if self.wsn.packet_bits == 0 {
            return Err(err("wsn.packet_bits", "must be positive"));
        }
        if self.wsn.uplink_distance_m < 0.0 {
            return Err(err("wsn.uplink_distance_m", "must be nonnegative"));
        }
        if self.wsn.aggregation_header_bytes == 0 && self.wsn.digest_bytes_per_packet == 0 {
            return Err(err(
                "wsn.aggregation_header_bytes",
                "header and per-packet bytes cannot both be zero",
            ));
        }
        if self.energy.sensor_initial_j < 0.0
            || self.energy.head_initial_j < 0.0
            || self.energy.validator_initial_j < 0.0
        {
            return Err(err("energy", "initial energies must be nonnegative"));
        }
        if self.energy.e_elec_j_per_bit < 0.0 || self.energy.e_amp_j_per_bit_m2 < 0.0 {
            return Err(err("energy", "radio constants must be nonnegative"));
        }
        if self.link.bandwidth_bps <= 0.0 {
            return Err(err("link.bandwidth_bps", "must be positive"));
        }
        if self.link.propagation_s < 0.0 {
            return Err(err("link.propagation_s", "must be nonnegative"));
        }
        match (self.virt.validator_count, self.virt.validator_ratio) {
            (None, None) => {
                return Err(err(
                    "virt.validator_count",
                    "set validator_count or validator_ratio",
                ))
            }
            (Some(0), _) => return Err(err("virt.validator_count", "must be positive")),
            (_, Some(r)) if !(0.0..1.0).contains(&r) => {
                return Err(err("virt.validator_ratio", "must lie in [0, 1)"))
            }
            _ => {}
        }
        if self.virt.vms_per_pm == 0 {
            return Err(err("virt.vms_per_pm", "must be positive"));
        }
        if self.virt.vm_cores <= 0.0 || self.virt.pm_cores <= 0.0 {
            return Err(err("virt.vm_cores", "core counts must be positive"));
        }
        if self.virt.vms_per_pm as f64 * self.virt.vm_cores > self.virt.pm_cores {
            return Err(err(
                "virt.vms_per_pm",
                "VM core shares oversubscribe the physical machine",
            ));
        }
        if self.virt.pm_mem_gb <= 0.0 || self.virt.vm_mem_gb <= 0.0 {
            return Err(err("virt.pm_mem_gb", "memory sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.virt.t_upper) {
            return Err(err("virt.t_upper", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.virt.cpu_weight) {
            return Err(err("virt.cpu_weight", "must lie in [0, 1]"));
        }
        if self.virt.busy_power_w < 0.0 || self.virt.idle_power_w < 0.0 {
            return Err(err("virt.busy_power_w", "power draws must be nonnegative"));
        }
        if self.virt.per_core_rate_units_per_s <= 0.0 {
            return Err(err("virt.per_core_rate_units_per_s", "must be positive"));
        }
        if self.virt.work_alpha_units < 0.0 || self.virt.work_beta_units_per_byte < 0.0 {
            return Err(err(
                "virt.work_alpha_units",
                "work constants must be nonnegative",
            ));
        }
        if self.virt.work_alpha_units == 0.0 && self.virt.work_beta_units_per_byte == 0.0 {
            return Err(err(
                "virt.work_alpha_units",
                "work model cannot be all zero",
            ));
        }
        if self.virt.task_cpu_demand_cores <= 0.0 || self.virt.task_mem_demand_gb <= 0.0 {
            return Err(err(
                "virt.task_cpu_demand_cores",
                "task demands must be positive",
            ));
        }
        if self.virt.task_cpu_demand_cores > self.virt.vm_cores {
            return Err(err(
                "virt.task_cpu_demand_cores",
                "a task may never fit: demand exceeds the VM core share",
            ));
        }
        if self.consensus.round_length_s <= 0.0 {
            return Err(err("consensus.round_length_s", "must be positive"));
        }
        if self.consensus.max_txs_per_block == 0 {
            return Err(err("consensus.max_txs_per_block", "must be positive"));
        }
        if self.consensus.verify_cost_factor < 0.0 {
            return Err(err("consensus.verify_cost_factor", "must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.consensus.commit_threshold) {
            return Err(err("consensus.commit_threshold", "must lie in [0, 1)"));
        }
        let v = self.validator_count();
        for (i, w) in self.consensus.downtime.iter().enumerate() {
            if w.validator >= v {
                return Err(err(
                    &format!("consensus.downtime[{i}].validator"),
                    "names a validator that does not exist",
                ));
            }
            if w.from_s < 0.0 || w.until_s <= w.from_s {
                return Err(err(
                    &format!("consensus.downtime[{i}]"),
                    "window must satisfy 0 <= from_s < until_s",
                ));
            }
        }
        Ok(())
    }

    /// Scenario identity for comparisons: everything except the selection
    /// policy and the seed, which are the two levers an experiment varies.
    pub fn fingerprint(&self) -> String {
        let mut canon = self.clone();
        canon.policy = SelectionPolicy::Tbs;
        canon.seed = 0;
        let text = toml::to_string(&canon).expect("scenario config serializes");
        hex(&sha256(text.as_bytes()))[..16].to_string()
    }
}
