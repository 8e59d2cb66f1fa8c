//! Discrete-event simulator of a decentralized IoT network whose cluster
//! heads submit transactions to a PoA consensus network of virtualized
//! validators.
//!
//! The sensing plane (clustered wireless sensor nodes) feeds aggregated
//! transactions to a fleet of validator machines, each split into virtual
//! machines. Validation work is placed either by turn-based selection
//! (round robin over VMs) or by weight-based selection, which falls back
//! to the VM minimizing `e^(u - T_upper) * s_vm / S_PM` when the turn
//! candidate is saturated. Runs are deterministic: one seeded generator
//! drives every stochastic choice, and identical (scenario, seed, policy)
//! inputs reproduce byte-identical traces.
//!
//! ```
//! let scenario = r#"
//!     duration_s = 120.0
//!     seed = 7
//!     policy = "wbs"
//!     [wsn]
//!     sensor_count = 4
//!     head_count = 1
//!     dissemination_jitter = false
//!     [virt]
//!     validator_count = 2
//! "#;
//! let cfg = poasim_core::ScenarioConfig::from_toml_str(scenario)?;
//! let output = poasim_core::run(&cfg)?;
//! let report = poasim_core::report(&output.trace).unwrap();
//! assert_eq!(report.counts.created, 4); // emissions at 30, 60, 90, 120
//! assert_eq!(report.counts.committed, 3); // the last one is still in flight
//! assert_eq!(report.counts.pending, 1);
//! assert!(poasim_core::validate_trace(&output.trace).is_empty());
//! # Ok::<(), poasim_core::config::ConfigError>(())
//! ```

pub mod cluster;
pub mod config;
pub mod consensus;
pub mod energy;
pub mod engine;
pub mod ledger;
pub mod metrics;
pub mod trace;
pub mod virt;

pub use config::{ScenarioConfig, SelectionPolicy};
pub use engine::{link_delay, run, RunOutput};
pub use metrics::{compare, report, MetricsReport};
pub use trace::{validate_trace, Trace};
