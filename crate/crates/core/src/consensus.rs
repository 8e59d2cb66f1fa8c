//! The PoA round machine: mempools, turn-based rotation, weight-based
//! fallback selection, block proposal, verification, and strict-majority
//! commit.

use crate::config::SelectionPolicy;
use crate::ledger::{Block, Chain, Hash32, Transaction, TxId, ValidatorId};
use crate::virt::{attractiveness, PhysicalMachine, ValidationTask};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// A (physical machine, virtual machine) pair, addressed by fleet indexes.
/// Physical machine ids coincide with validator indexes: one host per
/// validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VmRef {
    pub pm: usize,
    pub vm: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("no active validator is available")]
    NoValidators,
    #[error("no virtual machine can take the task")]
    NoCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// The turn candidate took the task; no weights were evaluated.
    Tbs,
    /// The turn candidate was saturated; the minimum-weight VM took over.
    WbsFallback,
    /// Nothing could take the task; it waits in a queue.
    Queued,
}

impl SelectionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMode::Tbs => "tbs",
            SelectionMode::WbsFallback => "wbs-fallback",
            SelectionMode::Queued => "queued",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tbs" => Some(SelectionMode::Tbs),
            "wbs-fallback" => Some(SelectionMode::WbsFallback),
            "queued" => Some(SelectionMode::Queued),
            _ => None,
        }
    }
}

/// Everything a trace consumer needs to audit one placement decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionOutcome {
    pub mode: SelectionMode,
    pub tbs_candidate: VmRef,
    pub tbs_admits: bool,
    /// Where the task landed: the selected VM, the turn VM it queued on
    /// under pure turn-based policy, or nothing when it went to the global
    /// pending queue.
    pub placed_on: Option<VmRef>,
    /// Number of attractiveness evaluations performed.
    pub weight_evaluations: u32,
}

/// A full node: one physical host, a local chain replica, and a mempool.
#[derive(Debug, Clone)]
pub struct Validator {
    pub id: ValidatorId,
    pub pm: PhysicalMachine,
    pub chain: Chain,
    pub mempool: Vec<TxId>,
    pub active: bool,
    /// Index and hash the next announced block must chain from. Tracks the
    /// proposal stream, which may run ahead of the committed chain while
    /// proposals are in flight.
    pub expected_index: u64,
    pub expected_tip: Hash32,
}

impl Validator {
    pub fn new(id: ValidatorId, pm: PhysicalMachine) -> Self {
        let chain = Chain::new();
        let expected_index = chain.tip().index + 1;
        let expected_tip = chain.tip().block_hash;
        Self {
            id,
            pm,
            chain,
            mempool: Vec::new(),
            active: true,
            expected_index,
            expected_tip,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConsensusParams {
    pub round_length_s: f64,
    pub max_txs_per_block: u32,
    pub verify_cost_factor: f64,
    pub commit_threshold: f64,
    pub task_cpu_demand_cores: f64,
    pub task_mem_demand_gb: f64,
    pub work_alpha_units: f64,
    pub work_beta_units_per_byte: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed,
    Rejected,
}

#[derive(Debug)]
pub struct ConsensusState {
    pub validators: Vec<Validator>,
    pub params: ConsensusParams,
    /// Cursor into the flattened (pm asc, vm asc) rotation used for task
    /// placement.
    pub rr_cursor: usize,
    /// Separate rotation assigning the proposer of each round.
    pub proposer_cursor: usize,
    /// Tasks that found no capacity anywhere, retried FIFO on completions.
    pub pending_queue: VecDeque<crate::virt::WorkId>,
    /// Transactions currently carried by an in-flight (announced but not
    /// yet committed) block.
    pub in_flight: BTreeSet<TxId>,
    rotation: Vec<VmRef>,
    next_task_id: u64,
}

impl ConsensusState {
    pub fn new(validators: Vec<Validator>, params: ConsensusParams) -> Self {
        let mut rotation = Vec::new();
        for (pm, v) in validators.iter().enumerate() {
            for vm in 0..v.pm.vms.len() {
                rotation.push(VmRef { pm, vm });
            }
        }
        assert!(!rotation.is_empty(), "fleet must expose at least one VM");
        Self {
            validators,
            params,
            rr_cursor: 0,
            proposer_cursor: 0,
            pending_queue: VecDeque::new(),
            in_flight: BTreeSet::new(),
            rotation,
            next_task_id: 0,
        }
    }

    pub fn rotation(&self) -> &[VmRef] {
        &self.rotation
    }

    pub fn active_count(&self) -> usize {
        self.validators.iter().filter(|v| v.active).count()
    }

    pub fn fresh_task_id(&mut self) -> crate::virt::TaskId {
        let id = self.next_task_id;
        self.next_task_id += 1;
        crate::virt::TaskId(id)
    }

    /// Builds the validation task for a set of transactions. Work units are
    /// alpha + beta * size_bytes, summed over the transactions.
    pub fn validation_task(&mut self, txs: &[&Transaction], work_factor: f64) -> ValidationTask {
        let work: f64 = txs
            .iter()
            .map(|t| {
                crate::virt::work_units(
                    t.size_bytes,
                    self.params.work_alpha_units,
                    self.params.work_beta_units_per_byte,
                )
            })
            .sum();
        ValidationTask::new(
            self.fresh_task_id(),
            txs.iter().map(|t| t.tx_id).collect(),
            self.params.task_cpu_demand_cores,
            self.params.task_mem_demand_gb,
            work * work_factor,
        )
    }

    /// Returns the VM at the rotation cursor and advances it cyclically,
    /// skipping VMs hosted by inactive validators.
    pub fn tbs_next(&mut self) -> Result<VmRef, SelectionError> {
        let n = self.rotation.len();
        for _ in 0..n {
            let candidate = self.rotation[self.rr_cursor];
            self.rr_cursor = (self.rr_cursor + 1) % n;
            if self.validators[candidate.pm].active {
                return Ok(candidate);
            }
        }
        Err(SelectionError::NoValidators)
    }

    /// Minimum-attractiveness placement over every admissible VM of every
    /// active validator. Hosts with no remaining CPU are skipped before any
    /// weight is evaluated; ties keep the lowest (pm, vm). Also returns the
    /// number of weights evaluated.
    pub fn wbs_select(&self, task: &ValidationTask) -> Result<(VmRef, u32), SelectionError> {
        let mut best: Option<(f64, VmRef)> = None;
        let mut evaluated = 0u32;
        for (pm_idx, validator) in self.validators.iter().enumerate() {
            if !validator.active {
                continue;
            }
            let pm = &validator.pm;
            if pm.remaining_cores() <= 0.0 {
                continue; // skip rule: never evaluate a host without CPU left
            }
            for vm_idx in 0..pm.vms.len() {
                if !pm.can_admit(vm_idx, task) {
                    continue;
                }
                let weight = attractiveness(pm, vm_idx)
                    .expect("remaining CPU was checked before evaluating");
                evaluated += 1;
                let candidate = VmRef {
                    pm: pm_idx,
                    vm: vm_idx,
                };
                match best {
                    Some((w, _)) if weight >= w => {}
                    _ => best = Some((weight, candidate)),
                }
            }
        }
        best.map(|(_, vm)| (vm, evaluated))
            .ok_or(SelectionError::NoCapacity)
    }

    /// The full placement procedure: take the turn candidate; keep it if it
    /// admits the task; otherwise fall back to weight-based selection (or
    /// queue on the turn candidate under the pure turn-based policy); queue
    /// globally when nothing has capacity.
    pub fn select_validator(
        &mut self,
        task: &ValidationTask,
        policy: SelectionPolicy,
    ) -> Result<SelectionOutcome, SelectionError> {
        let candidate = self.tbs_next()?;
        let admits = self.validators[candidate.pm]
            .pm
            .can_admit(candidate.vm, task);
        if admits {
            return Ok(SelectionOutcome {
                mode: SelectionMode::Tbs,
                tbs_candidate: candidate,
                tbs_admits: true,
                placed_on: Some(candidate),
                weight_evaluations: 0,
            });
        }
        match policy {
            SelectionPolicy::Tbs => Ok(SelectionOutcome {
                mode: SelectionMode::Queued,
                tbs_candidate: candidate,
                tbs_admits: false,
                placed_on: Some(candidate),
                weight_evaluations: 0,
            }),
            SelectionPolicy::Wbs => match self.wbs_select(task) {
                Ok((chosen, evaluated)) => Ok(SelectionOutcome {
                    mode: SelectionMode::WbsFallback,
                    tbs_candidate: candidate,
                    tbs_admits: false,
                    placed_on: Some(chosen),
                    weight_evaluations: evaluated,
                }),
                Err(SelectionError::NoCapacity) => Ok(SelectionOutcome {
                    mode: SelectionMode::Queued,
                    tbs_candidate: candidate,
                    tbs_admits: false,
                    placed_on: None,
                    weight_evaluations: 0,
                }),
                Err(e) => Err(e),
            },
        }
    }

    /// The validator whose turn it is to propose in this round, advancing
    /// the proposer rotation. None when every validator is down.
    pub fn next_proposer(&mut self) -> Option<usize> {
        let n = self.validators.len();
        for _ in 0..n {
            let candidate = self.proposer_cursor % n;
            self.proposer_cursor = (self.proposer_cursor + 1) % n;
            if self.validators[candidate].active {
                return Some(candidate);
            }
        }
        None
    }

    /// Drains up to max_txs pending transactions from the proposer's
    /// mempool (FIFO, skipping ones already carried by an in-flight block)
    /// into a block chained on the proposal stream. An empty mempool
    /// proposes nothing this round. The block is not announced yet:
    /// verifiers judge it against their pre-announcement view.
    pub fn propose_block(
        &self,
        proposer: usize,
        now: f64,
        store: &BTreeMap<TxId, Transaction>,
    ) -> Option<Block> {
        let max = self.params.max_txs_per_block as usize;
        let picked: Vec<TxId> = self.validators[proposer]
            .mempool
            .iter()
            .filter(|id| !self.in_flight.contains(id))
            .take(max)
            .copied()
            .collect();
        if picked.is_empty() {
            return None;
        }
        let txs: Vec<Transaction> = picked
            .iter()
            .map(|id| {
                store
                    .get(id)
                    .expect("mempool references a stored tx")
                    .clone()
            })
            .collect();
        Some(Block::assemble(
            self.validators[proposer].expected_index,
            now,
            txs,
            self.validators[proposer].expected_tip,
            self.validators[proposer].id,
        ))
    }

    /// The controller announces a proposal: its transactions are marked in
    /// flight everywhere and every active validator's expected stream
    /// advances past it, so the next round can chain on top while this
    /// block's votes are still being collected.
    pub fn announce_block(&mut self, block: &Block) {
        for t in &block.transactions {
            self.in_flight.insert(t.tx_id);
        }
        for v in self.validators.iter_mut().filter(|v| v.active) {
            v.expected_index = block.index + 1;
            v.expected_tip = block.block_hash;
        }
    }

    /// Structural and linkage verification of an announced block against
    /// this validator's view of the proposal stream. The vote is determined
    /// here; the verification compute cost is charged separately.
    pub fn verify_block(&self, validator: usize, block: &Block) -> bool {
        let v = &self.validators[validator];
        block.index == v.expected_index
            && block.prev_hash == v.expected_tip
            && block.computed_merkle_root() == block.merkle_root
            && block.header_hash() == block.block_hash
    }

    /// Tallies votes (the proposer approves implicitly) against the strict
    /// majority threshold over currently-active validators. On commit the
    /// block is appended to every active validator's chain and its
    /// transactions leave all mempools; on rejection they return to the
    /// mempools.
    pub fn commit_block(&mut self, block: &Block, approve_votes: usize) -> CommitOutcome {
        let approvals = approve_votes + 1;
        let active = self.active_count().max(1);
        if approvals as f64 / active as f64 > self.params.commit_threshold {
            let ids: BTreeSet<TxId> = block.transactions.iter().map(|t| t.tx_id).collect();
            for v in self.validators.iter_mut().filter(|v| v.active) {
                v.chain
                    .append_block(block.clone())
                    .expect("verified block must append to an aligned chain");
                v.mempool.retain(|id| !ids.contains(id));
            }
            for id in &ids {
                self.in_flight.remove(id);
            }
            CommitOutcome::Committed
        } else {
            self.release_block_txs(block);
            CommitOutcome::Rejected
        }
    }

    /// Returns a block's transactions to circulation without committing.
    pub fn release_block_txs(&mut self, block: &Block) {
        for t in &block.transactions {
            self.in_flight.remove(&t.tx_id);
        }
    }

    /// Realigns every validator's proposal-stream view with its committed
    /// tip. Used after a rejection invalidates announced-but-uncommitted
    /// proposals.
    pub fn reset_expected_to_tips(&mut self) {
        for v in &mut self.validators {
            v.expected_index = v.chain.tip().index + 1;
            v.expected_tip = v.chain.tip().block_hash;
        }
    }

    /// Brings a validator returning from downtime back in sync with the
    /// network: chain, mempool, and stream view copied from any active
    /// peer (all agree at quiescent points).
    pub fn resync_validator(&mut self, idx: usize) {
        let donor =
            match (0..self.validators.len()).find(|&i| i != idx && self.validators[i].active) {
                Some(d) => d,
                None => return,
            };
        let (chain, mempool, ei, et) = {
            let d = &self.validators[donor];
            (
                d.chain.clone(),
                d.mempool.clone(),
                d.expected_index,
                d.expected_tip,
            )
        };
        let v = &mut self.validators[idx];
        v.chain = chain;
        v.mempool = mempool;
        v.expected_index = ei;
        v.expected_tip = et;
    }
}
