//! Validator compute model: physical machines subdivided into virtual
//! machines, utilization and weight formulas, task admission, and the
//! busy/idle power model.

use crate::energy::{DebitCause, NodeEnergy};
use crate::ledger::TxId;
use std::collections::VecDeque;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PmId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VmId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorkId(pub u64);

impl fmt::Display for PmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
impl fmt::Display for WorkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VirtError {
    #[error("physical machine has no remaining CPU; it must be skipped")]
    NoRemainingCpu,
}

/// Work placed on a virtual machine: validating and packaging transactions
/// into a block, or re-verifying a proposed block.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationTask {
    pub id: TaskId,
    pub tx_refs: Vec<TxId>,
    pub cpu_demand_cores: f64,
    pub mem_demand_gb: f64,
    pub work_units: f64,
}

impl ValidationTask {
    pub fn new(
        id: TaskId,
        tx_refs: Vec<TxId>,
        cpu_demand_cores: f64,
        mem_demand_gb: f64,
        work_units: f64,
    ) -> Self {
        assert!(cpu_demand_cores > 0.0 && mem_demand_gb > 0.0 && work_units > 0.0);
        Self {
            id,
            tx_refs,
            cpu_demand_cores,
            mem_demand_gb,
            work_units,
        }
    }
}

/// Abstract compute units for validating one transaction of `size_bytes`.
pub fn work_units(size_bytes: u64, alpha_units: f64, beta_units_per_byte: f64) -> f64 {
    alpha_units + beta_units_per_byte * size_bytes as f64
}

#[derive(Debug, Clone)]
pub struct VirtualMachine {
    pub id: VmId,
    pub host: PmId,
    /// Cores assigned to this VM (the load-fraction numerator).
    pub cores: f64,
    pub mem_gb: f64,
    pub committed_cores: f64,
    pub busy_until: f64,
    /// Work waiting for capacity on this specific VM (turn-based queueing
    /// and pinned verification work).
    pub queue: VecDeque<WorkId>,
}

impl VirtualMachine {
    pub fn new(id: VmId, host: PmId, cores: f64, mem_gb: f64) -> Self {
        assert!(cores > 0.0, "a VM must own a positive core share");
        Self {
            id,
            host,
            cores,
            mem_gb,
            committed_cores: 0.0,
            busy_until: 0.0,
            queue: VecDeque::new(),
        }
    }

    pub fn uncommitted_cores(&self) -> f64 {
        self.cores - self.committed_cores
    }
}

#[derive(Debug, Clone)]
pub struct PhysicalMachine {
    pub id: PmId,
    pub total_cores: f64,
    pub total_mem_gb: f64,
    /// Productivity threshold against which utilization is penalized.
    pub t_upper: f64,
    /// Weight of the CPU term in the utilization mix (the rest is memory).
    pub cpu_weight: f64,
    pub vms: Vec<VirtualMachine>,
    pub cpu_alloc: f64,
    pub mem_alloc: f64,
    pub busy_power_w: f64,
    pub idle_power_w: f64,
    pub energy: NodeEnergy,
    // in-system work integrators for busy/idle accounting
    active_items: u32,
    last_transition_s: f64,
    occupied_accum_s: f64,
    lit_accum_s: f64,
}

impl PhysicalMachine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: PmId,
        total_cores: f64,
        total_mem_gb: f64,
        t_upper: f64,
        cpu_weight: f64,
        busy_power_w: f64,
        idle_power_w: f64,
        initial_j: f64,
        vm_count: u32,
        vm_cores: f64,
        vm_mem_gb: f64,
    ) -> Self {
        assert!(
            vm_count as f64 * vm_cores <= total_cores,
            "VM core shares must not oversubscribe the host"
        );
        let vms = (0..vm_count)
            .map(|i| VirtualMachine::new(VmId(i), id, vm_cores, vm_mem_gb))
            .collect();
        Self {
            id,
            total_cores,
            total_mem_gb,
            t_upper,
            cpu_weight,
            vms,
            cpu_alloc: 0.0,
            mem_alloc: 0.0,
            busy_power_w,
            idle_power_w,
            energy: NodeEnergy::new(initial_j),
            active_items: 0,
            last_transition_s: 0.0,
            occupied_accum_s: 0.0,
            lit_accum_s: 0.0,
        }
    }

    /// Remaining (unallocated) cores.
    pub fn remaining_cores(&self) -> f64 {
        self.total_cores - self.cpu_alloc
    }

    pub fn can_admit(&self, vm_index: usize, task: &ValidationTask) -> bool {
        let vm = &self.vms[vm_index];
        vm.uncommitted_cores() >= task.cpu_demand_cores
            && self.total_mem_gb - self.mem_alloc >= task.mem_demand_gb
    }

    /// Commits the task's resources on the VM and host until release.
    /// Rejection is a value, not an error.
    pub fn admit_task(&mut self, vm_index: usize, task: &ValidationTask) -> Admission {
        if !self.can_admit(vm_index, task) {
            return Admission::Rejected;
        }
        self.vms[vm_index].committed_cores += task.cpu_demand_cores;
        self.cpu_alloc += task.cpu_demand_cores;
        self.mem_alloc += task.mem_demand_gb;
        Admission::Accepted
    }

    /// Restores exactly what admission committed.
    pub fn release_task(&mut self, vm_index: usize, task: &ValidationTask) {
        self.vms[vm_index].committed_cores -= task.cpu_demand_cores;
        self.cpu_alloc -= task.cpu_demand_cores;
        self.mem_alloc -= task.mem_demand_gb;
        debug_assert!(self.vms[vm_index].committed_cores >= -1e-9);
        debug_assert!(self.cpu_alloc >= -1e-9 && self.mem_alloc >= -1e-9);
    }

    fn integrate_to(&mut self, now: f64) {
        let dt = now - self.last_transition_s;
        self.occupied_accum_s += self.active_items as f64 * dt;
        if self.active_items > 0 {
            self.lit_accum_s += dt;
        }
        self.last_transition_s = now;
    }

    /// A work item entered this machine's system (queued or executing).
    pub fn work_entered(&mut self, now: f64) {
        self.integrate_to(now);
        self.active_items += 1;
    }

    /// A work item left this machine's system.
    pub fn work_left(&mut self, now: f64) {
        debug_assert!(self.active_items > 0);
        self.integrate_to(now);
        self.active_items -= 1;
    }

    /// VM-occupancy seconds: every work item contributes its full
    /// residence (waiting included), so concurrently held VMs count
    /// separately. This is the busy time the power model charges.
    pub fn occupied_vm_seconds(&self, now: f64) -> f64 {
        self.occupied_accum_s + self.active_items as f64 * (now - self.last_transition_s)
    }

    /// Wall-clock seconds during which at least one work item was in the
    /// system. The complement over a run is the machine's idle time.
    pub fn lit_seconds(&self, now: f64) -> f64 {
        if self.active_items > 0 {
            self.lit_accum_s + (now - self.last_transition_s)
        } else {
            self.lit_accum_s
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    Rejected,
}

/// Combined CPU and RAM efficiency of a physical machine, clamped to [0, 1].
pub fn utilization(pm: &PhysicalMachine) -> f64 {
    let cpu = pm.cpu_alloc / pm.total_cores;
    let mem = pm.mem_alloc / pm.total_mem_gb;
    (pm.cpu_weight * cpu + (1.0 - pm.cpu_weight) * mem).clamp(0.0, 1.0)
}

/// Exponential load penalty of a machine's utilization relative to its
/// productivity threshold: e^(u - t_upper). Strictly increasing in u and
/// exactly 1 at the threshold.
pub fn ib_score(u: f64, t_upper: f64) -> f64 {
    (u - t_upper).exp()
}

/// Share of the physical machine's remaining cores a VM would occupy:
/// s_vm / S_PM. A machine with no remaining CPU must be skipped by callers.
pub fn load_fraction(vm_cores: f64, pm_remaining_cores: f64) -> Result<f64, VirtError> {
    if pm_remaining_cores <= 0.0 {
        return Err(VirtError::NoRemainingCpu);
    }
    Ok(vm_cores / pm_remaining_cores)
}

/// Selection weight of placing work on (pm, vm); lower is better.
pub fn attractiveness(pm: &PhysicalMachine, vm_index: usize) -> Result<f64, VirtError> {
    let lf = load_fraction(pm.vms[vm_index].cores, pm.remaining_cores())?;
    Ok(ib_score(utilization(pm), pm.t_upper) * lf)
}

/// Execution time of an admitted task on a VM.
pub fn service_time(task: &ValidationTask, vm_cores: f64, per_core_rate_units_per_s: f64) -> f64 {
    task.work_units / (vm_cores * per_core_rate_units_per_s)
}

/// Debits the busy/idle power draw for the given durations against the
/// machine's energy budget and returns the two debit amounts.
pub fn compute_energy(pm: &mut PhysicalMachine, at: f64, busy_s: f64, idle_s: f64) -> (f64, f64) {
    assert!(busy_s >= 0.0 && idle_s >= 0.0);
    let busy_j = pm.busy_power_w * busy_s;
    let idle_j = pm.idle_power_w * idle_s;
    if busy_j > 0.0 {
        pm.energy.debit(at, busy_j, DebitCause::ComputeBusy);
    }
    if idle_j > 0.0 {
        pm.energy.debit(at, idle_j, DebitCause::ComputeIdle);
    }
    (busy_j, idle_j)
}
