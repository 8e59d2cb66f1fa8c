//! Deterministic discrete-event scheduler and end-to-end scenario
//! orchestration. One simulation owns one timeline; identical (config,
//! seed) pairs produce byte-identical traces.

use crate::cluster::{
    assign_clusters, AggregationParams, ClusterHead, EmitOutcome, Position, RadioParams,
    SendOutcome, SensorId, SensorNode,
};
use crate::config::{ConfigError, ScenarioConfig};
use crate::consensus::{
    CommitOutcome, ConsensusParams, ConsensusState, SelectionMode, Validator, VmRef,
};
use crate::energy::DebitCause;
use crate::ledger::{Block, Chain, HeadId, Transaction, TxId, ValidatorId};
use crate::trace::{NodeClass, Trace, TraceRecord};
use crate::virt::{service_time, Admission, PhysicalMachine, PmId, ValidationTask};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

/// Parametric link model abstracting the radio/transport stack:
/// propagation plus serialization at the configured bandwidth.
pub fn link_delay(bytes: u64, bandwidth_bps: f64, propagation_s: f64) -> f64 {
    assert!(bandwidth_bps > 0.0);
    propagation_s + 8.0 * bytes as f64 / bandwidth_bps
}

/// Bytes on the wire for one verification vote.
pub const VOTE_WIRE_BYTES: u64 = 64;

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    Sense {
        sensor: usize,
    },
    PacketArrive {
        head: usize,
        sensor: usize,
        bits: u64,
    },
    Disseminate {
        head: usize,
    },
    TxArrive {
        tx: TxId,
    },
    RoundStart,
    BlockArrive {
        block: u64,
        verifier: usize,
    },
    TaskComplete {
        work: u64,
    },
    VoteArrive {
        block: u64,
        verifier: usize,
        approve: bool,
    },
    CommitApply {
        block: u64,
    },
    DowntimeToggle {
        validator: usize,
        active: bool,
    },
}

#[derive(Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed so the BinaryHeap pops the earliest (time, seq) first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WorkKind {
    Proposal,
    Verify { verifier: usize, approve: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WorkState {
    PendingGlobal,
    Queued,
    Executing,
    Done,
    Cancelled,
}

#[derive(Debug)]
struct WorkItem {
    kind: WorkKind,
    block: u64,
    task: ValidationTask,
    placed_on: Option<VmRef>,
    state: WorkState,
}

#[derive(Debug)]
struct InFlightBlock {
    block: Block,
    /// What each verifier will answer, determined against the shared view
    /// at announcement time.
    precomputed: BTreeMap<usize, bool>,
    /// Verifiers whose votes the tally still waits for; shrinks as votes
    /// arrive or verifiers are found down at block arrival.
    expected: BTreeSet<usize>,
    /// Votes actually received back at the proposer.
    votes: BTreeMap<usize, bool>,
    broadcast: bool,
    tally_scheduled: bool,
    ready_to_commit: bool,
}

/// Everything a finished run hands back: the trace, the canonical chain,
/// and each validator's final local replica.
#[derive(Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub chain: Chain,
    pub replica_chains: Vec<Chain>,
}

impl RunOutput {
    pub fn trace_text(&self) -> String {
        self.trace.render()
    }

    pub fn chain_export(&self) -> String {
        self.chain.export_records()
    }
}

/// Runs one scenario to completion and returns its trace.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    let mut sim = Simulation::new(cfg.clone());
    sim.run_to_completion();
    Ok(sim.finish())
}

struct Simulation {
    cfg: ScenarioConfig,
    now: f64,
    next_seq: u64,
    queue: BinaryHeap<Event>,
    sensors: Vec<SensorNode>,
    /// Distance from each sensor to its assigned head, kept alongside the
    /// assignment.
    sensor_uplink_m: Vec<f64>,
    heads: Vec<ClusterHead>,
    consensus: ConsensusState,
    tx_store: BTreeMap<TxId, Transaction>,
    works: BTreeMap<u64, WorkItem>,
    blocks: BTreeMap<u64, InFlightBlock>,
    committed_up_to: u64,
    next_tx: u64,
    next_work: u64,
    created: u64,
    committed: u64,
    radio: RadioParams,
    agg: AggregationParams,
    trace: Trace,
}

impl Simulation {
    fn new(cfg: ScenarioConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let side = cfg.wsn.area_side_m;

        // all stochastic choices derive from the config seed through this
        // one generator, in a fixed order: sensor positions, head
        // positions, dissemination jitter
        let sensors: Vec<SensorNode> = (0..cfg.wsn.sensor_count)
            .map(|i| {
                let x = rng.gen_range(0.0..side);
                let y = rng.gen_range(0.0..side);
                SensorNode::new(
                    SensorId(i),
                    Position { x, y },
                    cfg.energy.sensor_initial_j,
                    cfg.wsn.sensing_interval_s,
                )
            })
            .collect();
        let heads: Vec<ClusterHead> = (0..cfg.wsn.head_count)
            .map(|i| {
                let x = rng.gen_range(0.0..side);
                let y = rng.gen_range(0.0..side);
                ClusterHead::new(
                    HeadId(i),
                    Position { x, y },
                    cfg.energy.head_initial_j,
                    cfg.wsn.dissemination_interval_s,
                )
            })
            .collect();
        let jitter: Vec<f64> = (0..cfg.wsn.head_count)
            .map(|_| {
                if cfg.wsn.dissemination_jitter {
                    rng.gen_range(0.0..cfg.wsn.dissemination_interval_s)
                } else {
                    0.0
                }
            })
            .collect();

        let validator_count = cfg.validator_count();
        let validators: Vec<Validator> = (0..validator_count)
            .map(|i| {
                Validator::new(
                    ValidatorId(i),
                    PhysicalMachine::new(
                        PmId(i),
                        cfg.virt.pm_cores,
                        cfg.virt.pm_mem_gb,
                        cfg.virt.t_upper,
                        cfg.virt.cpu_weight,
                        cfg.virt.busy_power_w,
                        cfg.virt.idle_power_w,
                        cfg.energy.validator_initial_j,
                        cfg.virt.vms_per_pm,
                        cfg.virt.vm_cores,
                        cfg.virt.vm_mem_gb,
                    ),
                )
            })
            .collect();
        let consensus = ConsensusState::new(
            validators,
            ConsensusParams {
                round_length_s: cfg.consensus.round_length_s,
                max_txs_per_block: cfg.consensus.max_txs_per_block,
                verify_cost_factor: cfg.consensus.verify_cost_factor,
                commit_threshold: cfg.consensus.commit_threshold,
                task_cpu_demand_cores: cfg.virt.task_cpu_demand_cores,
                task_mem_demand_gb: cfg.virt.task_mem_demand_gb,
                work_alpha_units: cfg.virt.work_alpha_units,
                work_beta_units_per_byte: cfg.virt.work_beta_units_per_byte,
            },
        );

        let radio = RadioParams {
            e_elec_j_per_bit: cfg.energy.e_elec_j_per_bit,
            e_amp_j_per_bit_m2: cfg.energy.e_amp_j_per_bit_m2,
        };
        let agg = AggregationParams {
            header_bytes: cfg.wsn.aggregation_header_bytes,
            digest_bytes_per_packet: cfg.wsn.digest_bytes_per_packet,
        };

        let mut sim = Simulation {
            now: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            sensor_uplink_m: vec![0.0; sensors.len()],
            sensors,
            heads,
            consensus,
            tx_store: BTreeMap::new(),
            works: BTreeMap::new(),
            blocks: BTreeMap::new(),
            committed_up_to: 0,
            next_tx: 0,
            next_work: 0,
            created: 0,
            committed: 0,
            radio,
            agg,
            trace: Trace::default(),
            cfg,
        };

        sim.trace.push(TraceRecord::Meta {
            name: sim.cfg.name.clone(),
            seed: sim.cfg.seed,
            policy: sim.cfg.policy,
            duration_s: sim.cfg.duration_s,
            fingerprint: sim.cfg.fingerprint(),
        });
        for s in &sim.sensors {
            sim.trace.push(TraceRecord::Node {
                class: NodeClass::Sensor,
                id: s.id.0,
                x: s.position.x,
                y: s.position.y,
                initial_j: s.energy.initial_j,
            });
        }
        for h in &sim.heads {
            sim.trace.push(TraceRecord::Node {
                class: NodeClass::Head,
                id: h.id.0,
                x: h.position.x,
                y: h.position.y,
                initial_j: h.energy.initial_j,
            });
        }
        for v in &sim.consensus.validators {
            sim.trace.push(TraceRecord::Node {
                class: NodeClass::Validator,
                id: v.id.0,
                x: 0.0,
                y: 0.0,
                initial_j: v.pm.energy.initial_j,
            });
        }

        sim.recluster();

        // initial events: first sensing after one interval, first
        // dissemination after one (jittered) interval, first round after
        // one round length, downtime toggles as scheduled
        for i in 0..sim.sensors.len() {
            let at = sim.sensors[i].sensing_interval_s;
            sim.schedule(at, EventKind::Sense { sensor: i });
        }
        for (i, offset) in jitter.iter().enumerate() {
            let at = offset + sim.heads[i].dissemination_interval_s;
            sim.schedule(at, EventKind::Disseminate { head: i });
        }
        let round_len = sim.cfg.consensus.round_length_s;
        sim.schedule(round_len, EventKind::RoundStart);
        let downtime = sim.cfg.consensus.downtime.clone();
        for w in &downtime {
            sim.schedule(
                w.from_s,
                EventKind::DowntimeToggle {
                    validator: w.validator as usize,
                    active: false,
                },
            );
            sim.schedule(
                w.until_s,
                EventKind::DowntimeToggle {
                    validator: w.validator as usize,
                    active: true,
                },
            );
        }
        sim
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        debug_assert!(time.is_finite() && time >= self.now);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event { time, seq, kind });
    }

    fn link_delay_for(&self, bytes: u64) -> f64 {
        link_delay(
            bytes,
            self.cfg.link.bandwidth_bps,
            self.cfg.link.propagation_s,
        )
    }

    /// Nearest-head assignment over the currently alive heads, refreshing
    /// membership sets and cached uplink distances.
    fn recluster(&mut self) {
        let alive: Vec<ClusterHead> = self.heads.iter().filter(|h| h.alive).cloned().collect();
        if alive.is_empty() {
            return;
        }
        let assignment = assign_clusters(&self.sensors, &alive).expect("alive heads checked");
        for h in &mut self.heads {
            h.members.clear();
        }
        for (i, head_id) in assignment.iter().enumerate() {
            self.sensors[i].assigned_head = Some(*head_id);
            let head = &mut self.heads[head_id.0 as usize];
            if self.sensors[i].alive {
                head.members.insert(self.sensors[i].id);
            }
            self.sensor_uplink_m[i] = self.sensors[i].position.distance(&head.position);
        }
    }

    fn run_to_completion(&mut self) {
        while let Some(ev) = self.queue.pop() {
            if ev.time > self.cfg.duration_s {
                break;
            }
            self.now = ev.time;
            self.dispatch(ev.kind);
        }
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::Sense { sensor } => self.on_sense(sensor),
            EventKind::PacketArrive { head, sensor, bits } => {
                self.on_packet_arrive(head, sensor, bits)
            }
            EventKind::Disseminate { head } => self.on_disseminate(head),
            EventKind::TxArrive { tx } => self.on_tx_arrive(tx),
            EventKind::RoundStart => self.on_round_start(),
            EventKind::BlockArrive { block, verifier } => self.on_block_arrive(block, verifier),
            EventKind::TaskComplete { work } => self.on_task_complete(work),
            EventKind::VoteArrive {
                block,
                verifier,
                approve,
            } => self.on_vote_arrive(block, verifier, approve),
            EventKind::CommitApply { block } => self.on_commit_apply(block),
            EventKind::DowntimeToggle { validator, active } => self.on_toggle(validator, active),
        }
    }

    fn on_sense(&mut self, idx: usize) {
        if !self.sensors[idx].alive {
            return;
        }
        let distance = self.sensor_uplink_m[idx];
        let bits = self.cfg.wsn.packet_bits;
        let now = self.now;
        match self.sensors[idx].sense_and_send(now, bits, distance, &self.radio) {
            SendOutcome::Sent { bits, debit_j } => {
                let head = self.sensors[idx]
                    .assigned_head
                    .expect("assigned at clustering");
                self.trace.push(TraceRecord::Sense {
                    t: now,
                    sensor: self.sensors[idx].id.0,
                    head: head.0,
                    bits,
                });
                self.trace.push(TraceRecord::Debit {
                    t: now,
                    class: NodeClass::Sensor,
                    id: self.sensors[idx].id.0,
                    amount_j: debit_j,
                    cause: DebitCause::RadioTx,
                });
                let arrive = now + self.link_delay_for(bits.div_ceil(8));
                self.schedule(
                    arrive,
                    EventKind::PacketArrive {
                        head: head.0 as usize,
                        sensor: idx,
                        bits,
                    },
                );
                let next = now + self.sensors[idx].sensing_interval_s;
                self.schedule(next, EventKind::Sense { sensor: idx });
            }
            SendOutcome::Depleted => {
                self.trace.push(TraceRecord::Depleted {
                    t: now,
                    class: NodeClass::Sensor,
                    id: self.sensors[idx].id.0,
                });
                // membership covers alive sensors only
                let sensor_id = self.sensors[idx].id;
                if let Some(head) = self.sensors[idx].assigned_head {
                    self.heads[head.0 as usize].members.remove(&sensor_id);
                }
            }
        }
    }

    fn on_packet_arrive(&mut self, head: usize, sensor: usize, bits: u64) {
        if !self.heads[head].alive {
            return; // a silent head no longer receives
        }
        self.heads[head]
            .buffer
            .push(crate::cluster::BufferedPacket {
                from: self.sensors[sensor].id,
                bits,
                arrived_at: self.now,
            });
        self.trace.push(TraceRecord::PacketArrive {
            t: self.now,
            head: self.heads[head].id.0,
            sensor: self.sensors[sensor].id.0,
            bits,
        });
    }

    fn on_disseminate(&mut self, head: usize) {
        if !self.heads[head].alive {
            return;
        }
        if self.cfg.wsn.rotate_heads {
            self.recluster();
        }
        let tx_id = TxId(self.next_tx);
        let now = self.now;
        let outcome = self.heads[head].aggregate_and_emit(
            now,
            tx_id,
            &self.agg,
            self.cfg.wsn.uplink_distance_m,
            &self.radio,
        );
        match outcome {
            EmitOutcome::Emitted(e) => {
                self.next_tx += 1;
                self.created += 1;
                let head_id = self.heads[head].id.0;
                self.trace.push(TraceRecord::Debit {
                    t: now,
                    class: NodeClass::Head,
                    id: head_id,
                    amount_j: e.rx_debit_j,
                    cause: DebitCause::RadioRx,
                });
                self.trace.push(TraceRecord::Debit {
                    t: now,
                    class: NodeClass::Head,
                    id: head_id,
                    amount_j: e.tx_debit_j,
                    cause: DebitCause::RadioTx,
                });
                self.trace.push(TraceRecord::TxCreated {
                    t: now,
                    tx: e.tx.tx_id.0,
                    head: head_id,
                    size_bytes: e.tx.size_bytes,
                });
                let arrive = now + self.link_delay_for(e.tx.size_bytes);
                self.tx_store.insert(e.tx.tx_id, e.tx.clone());
                self.schedule(arrive, EventKind::TxArrive { tx: e.tx.tx_id });
            }
            EmitOutcome::Empty => {}
            EmitOutcome::Depleted => {
                self.trace.push(TraceRecord::Depleted {
                    t: now,
                    class: NodeClass::Head,
                    id: self.heads[head].id.0,
                });
                if self.cfg.wsn.rotate_heads {
                    self.recluster(); // orphaned sensors re-home
                }
                return; // no further dissemination from this head
            }
        }
        let next = now + self.heads[head].dissemination_interval_s;
        self.schedule(next, EventKind::Disseminate { head });
    }

    fn on_tx_arrive(&mut self, tx: TxId) {
        self.trace.push(TraceRecord::TxArrived {
            t: self.now,
            tx: tx.0,
        });
        for v in &mut self.consensus.validators {
            v.mempool.push(tx);
        }
    }

    fn on_round_start(&mut self) {
        let next = self.now + self.cfg.consensus.round_length_s;
        self.schedule(next, EventKind::RoundStart);

        let proposer = match self.consensus.next_proposer() {
            Some(p) => p,
            None => return,
        };
        let block = match self
            .consensus
            .propose_block(proposer, self.now, &self.tx_store)
        {
            Some(b) => b,
            None => return, // empty mempool skips the round
        };
        // votes are determined against the pre-announcement view; the
        // verification compute happens when the block data arrives
        let votes: BTreeMap<usize, bool> = (0..self.consensus.validators.len())
            .filter(|&v| v != proposer && self.consensus.validators[v].active)
            .map(|v| (v, self.consensus.verify_block(v, &block)))
            .collect();
        self.consensus.announce_block(&block);

        self.trace.push(TraceRecord::BlockProposed {
            t: self.now,
            index: block.index,
            proposer: self.consensus.validators[proposer].id.0,
            txs: block.transactions.len() as u32,
            bytes: block.body_bytes(),
        });

        let txs: Vec<&Transaction> = block
            .transactions
            .iter()
            .map(|t| self.tx_store.get(&t.tx_id).expect("stored"))
            .collect();
        let task = self.consensus.validation_task(&txs, 1.0);
        let index = block.index;
        self.blocks.insert(
            index,
            InFlightBlock {
                block,
                precomputed: votes,
                expected: BTreeSet::new(),
                votes: BTreeMap::new(),
                broadcast: false,
                tally_scheduled: false,
                ready_to_commit: false,
            },
        );
        self.place_task(task, WorkKind::Proposal, index);
    }

    /// Runs the placement procedure for a task and installs the work item
    /// where the outcome says: executing on a VM, queued on the turn VM,
    /// or parked in the global pending queue.
    fn place_task(&mut self, task: ValidationTask, kind: WorkKind, block: u64) {
        let outcome = self
            .consensus
            .select_validator(&task, self.cfg.policy)
            .expect("fleet has at least one validator");
        let work_id = self.next_work;
        self.next_work += 1;
        self.trace.push(TraceRecord::Selection {
            t: self.now,
            task: task.id.0,
            mode: outcome.mode,
            tbs_pm: outcome.tbs_candidate.pm as u32,
            tbs_vm: outcome.tbs_candidate.vm as u32,
            tbs_admits: outcome.tbs_admits,
            placed_pm: outcome.placed_on.map_or(-1, |v| v.pm as i64),
            placed_vm: outcome.placed_on.map_or(-1, |v| v.vm as i64),
            weight_evaluations: outcome.weight_evaluations,
        });
        self.works.insert(
            work_id,
            WorkItem {
                kind,
                block,
                task,
                placed_on: None,
                state: WorkState::PendingGlobal,
            },
        );
        match (outcome.mode, outcome.placed_on) {
            (SelectionMode::Tbs | SelectionMode::WbsFallback, Some(vm)) => {
                self.enter_vm(work_id, vm);
            }
            (SelectionMode::Queued, Some(vm)) => {
                // pure turn-based: wait on the chosen VM
                self.enter_vm(work_id, vm);
            }
            (SelectionMode::Queued, None) => {
                self.consensus
                    .pending_queue
                    .push_back(crate::virt::WorkId(work_id));
                self.trace.push(TraceRecord::QueueLen {
                    t: self.now,
                    scope: "global".to_string(),
                    len: self.consensus.pending_queue.len() as u32,
                });
            }
            _ => unreachable!("placement modes always carry a target or queue globally"),
        }
    }

    /// A work item enters a VM's system: it executes immediately when the
    /// VM admits it, otherwise it waits in the VM's queue. Either way it
    /// occupies the host from now on for energy purposes.
    fn enter_vm(&mut self, work_id: u64, vm: VmRef) {
        let now = self.now;
        self.works.get_mut(&work_id).expect("registered").placed_on = Some(vm);
        self.consensus.validators[vm.pm].pm.work_entered(now);
        let admitted = {
            let task = &self.works[&work_id].task;
            self.consensus.validators[vm.pm].pm.admit_task(vm.vm, task) == Admission::Accepted
        };
        if admitted {
            self.start_execution(work_id, vm);
        } else {
            let pm = &mut self.consensus.validators[vm.pm].pm;
            pm.vms[vm.vm].queue.push_back(crate::virt::WorkId(work_id));
            let len = pm.vms[vm.vm].queue.len() as u32;
            self.works.get_mut(&work_id).expect("registered").state = WorkState::Queued;
            self.trace.push(TraceRecord::QueueLen {
                t: now,
                scope: format!("{}:{}", vm.pm, vm.vm),
                len,
            });
        }
    }

    /// Resources are already committed; compute the service time and
    /// schedule completion.
    fn start_execution(&mut self, work_id: u64, vm: VmRef) {
        let now = self.now;
        let (service_s, end);
        {
            let work = self.works.get_mut(&work_id).expect("registered");
            let cores = self.consensus.validators[vm.pm].pm.vms[vm.vm].cores;
            service_s = service_time(&work.task, cores, self.cfg.virt.per_core_rate_units_per_s);
            end = now + service_s;
            work.state = WorkState::Executing;
            work.placed_on = Some(vm);
        }
        let vm_state = &mut self.consensus.validators[vm.pm].pm.vms[vm.vm];
        vm_state.busy_until = vm_state.busy_until.max(end);
        self.trace.push(TraceRecord::ExecStart {
            t: now,
            work: work_id,
            pm: vm.pm as u32,
            vm: vm.vm as u32,
            end,
        });
        self.schedule(end, EventKind::TaskComplete { work: work_id });
    }

    fn on_task_complete(&mut self, work_id: u64) {
        let (vm, kind, block, cancelled) = {
            let work = self.works.get(&work_id).expect("registered");
            (
                work.placed_on.expect("executing work is placed"),
                work.kind,
                work.block,
                work.state == WorkState::Cancelled,
            )
        };
        {
            let task = self.works[&work_id].task.clone();
            let pm = &mut self.consensus.validators[vm.pm].pm;
            pm.release_task(vm.vm, &task);
            pm.work_left(self.now);
        }
        self.works.get_mut(&work_id).expect("registered").state = WorkState::Done;
        self.trace.push(TraceRecord::ExecDone {
            t: self.now,
            work: work_id,
            pm: vm.pm as u32,
            vm: vm.vm as u32,
        });

        if !cancelled {
            match kind {
                WorkKind::Proposal => self.on_proposal_broadcast(block),
                WorkKind::Verify { verifier, approve } => {
                    let back = self.now + self.link_delay_for(VOTE_WIRE_BYTES);
                    self.schedule(
                        back,
                        EventKind::VoteArrive {
                            block,
                            verifier,
                            approve,
                        },
                    );
                }
            }
        }

        self.drain_vm_queue(vm);
        self.retry_pending();
    }

    /// The proposal work finished: the block leaves toward the other
    /// validators, who verify on arrival.
    fn on_proposal_broadcast(&mut self, index: u64) {
        let (wire_bytes, verifiers) = {
            let blk = self.blocks.get_mut(&index).expect("in flight");
            blk.broadcast = true;
            let verifiers: Vec<usize> = blk.precomputed.keys().copied().collect();
            blk.expected = verifiers.iter().copied().collect();
            (blk.block.wire_bytes(), verifiers)
        };
        let arrive = self.now + self.link_delay_for(wire_bytes);
        for v in verifiers {
            self.schedule(
                arrive,
                EventKind::BlockArrive {
                    block: index,
                    verifier: v,
                },
            );
        }
        self.check_tally(index);
    }

    fn on_block_arrive(&mut self, index: u64, verifier: usize) {
        if !self.blocks.contains_key(&index) {
            return; // resolved while the broadcast was in the air
        }
        if !self.consensus.validators[verifier].active {
            // down at arrival: it will never vote on this block
            self.blocks
                .get_mut(&index)
                .expect("checked")
                .expected
                .remove(&verifier);
            self.check_tally(index);
            return;
        }
        let approve = self.blocks[&index].precomputed[&verifier];
        let factor = self.cfg.consensus.verify_cost_factor;
        let proposal_work = {
            let blk = &self.blocks[&index];
            let txs: Vec<&Transaction> = blk
                .block
                .transactions
                .iter()
                .map(|t| self.tx_store.get(&t.tx_id).expect("stored"))
                .collect();
            self.consensus.validation_task(&txs, factor)
        };
        let vm = self.least_loaded_vm(verifier);
        let work_id = self.next_work;
        self.next_work += 1;
        self.works.insert(
            work_id,
            WorkItem {
                kind: WorkKind::Verify { verifier, approve },
                block: index,
                task: proposal_work,
                placed_on: None,
                state: WorkState::PendingGlobal,
            },
        );
        self.enter_vm(work_id, vm);
    }

    /// Verification is pinned to the verifier's own host, on its currently
    /// least-committed VM.
    fn least_loaded_vm(&self, verifier: usize) -> VmRef {
        let pm = &self.consensus.validators[verifier].pm;
        let mut best = 0usize;
        for i in 1..pm.vms.len() {
            let better = (pm.vms[i].committed_cores, pm.vms[i].queue.len())
                < (pm.vms[best].committed_cores, pm.vms[best].queue.len());
            if better {
                best = i;
            }
        }
        VmRef {
            pm: verifier,
            vm: best,
        }
    }

    fn on_vote_arrive(&mut self, index: u64, verifier: usize, approve: bool) {
        if !self.blocks.contains_key(&index) {
            return;
        }
        self.trace.push(TraceRecord::Vote {
            t: self.now,
            index,
            verifier: self.consensus.validators[verifier].id.0,
            approve,
        });
        {
            let blk = self.blocks.get_mut(&index).expect("checked");
            blk.votes.insert(verifier, approve);
            blk.expected.remove(&verifier);
        }
        self.check_tally(index);
    }

    /// The tally closes once every vote still expected from an active
    /// verifier has arrived (and the block itself has been broadcast).
    fn check_tally(&mut self, index: u64) {
        let ready = {
            match self.blocks.get(&index) {
                Some(blk) => {
                    blk.broadcast
                        && !blk.tally_scheduled
                        && self.consensus.active_count() > 0
                        && blk
                            .expected
                            .iter()
                            .all(|v| !self.consensus.validators[*v].active)
                }
                None => false,
            }
        };
        if ready {
            self.blocks
                .get_mut(&index)
                .expect("checked")
                .tally_scheduled = true;
            self.schedule(self.now, EventKind::CommitApply { block: index });
        }
    }

    fn on_commit_apply(&mut self, index: u64) {
        if let Some(blk) = self.blocks.get_mut(&index) {
            blk.ready_to_commit = true;
        }
        // apply in index order; a block tallied early waits for its parent
        while let Some(blk) = self.blocks.get(&(self.committed_up_to + 1)) {
            if !blk.ready_to_commit {
                break;
            }
            let index = self.committed_up_to + 1;
            let blk = self.blocks.remove(&index).expect("present");
            let approvals = blk.votes.values().filter(|a| **a).count();
            match self.consensus.commit_block(&blk.block, approvals) {
                CommitOutcome::Committed => {
                    self.committed += blk.block.transactions.len() as u64;
                    self.trace.push(TraceRecord::Committed {
                        t: self.now,
                        index,
                        txs: blk.block.transactions.len() as u32,
                        bytes: blk.block.body_bytes(),
                    });
                    for t in &blk.block.transactions {
                        self.trace.push(TraceRecord::TxCommitted {
                            t: self.now,
                            tx: t.tx_id.0,
                        });
                    }
                    self.committed_up_to = index;
                }
                CommitOutcome::Rejected => {
                    self.trace
                        .push(TraceRecord::Rejected { t: self.now, index });
                    self.purge_descendants(index);
                    self.consensus.reset_expected_to_tips();
                    break;
                }
            }
        }
    }

    /// A rejected block invalidates every announced block chained above
    /// it: their transactions return to circulation and their outstanding
    /// work is cancelled.
    fn purge_descendants(&mut self, from_index: u64) {
        let doomed: Vec<u64> = self
            .blocks
            .keys()
            .copied()
            .filter(|i| *i >= from_index)
            .collect();
        for index in doomed {
            if let Some(blk) = self.blocks.remove(&index) {
                self.consensus.release_block_txs(&blk.block);
            }
            for work in self.works.values_mut() {
                if work.block == index
                    && matches!(
                        work.state,
                        WorkState::Queued | WorkState::Executing | WorkState::PendingGlobal
                    )
                {
                    work.state = WorkState::Cancelled;
                }
            }
        }
    }

    fn on_toggle(&mut self, validator: usize, active: bool) {
        if self.consensus.validators[validator].active == active {
            return;
        }
        self.trace.push(TraceRecord::Toggle {
            t: self.now,
            validator: self.consensus.validators[validator].id.0,
            active,
        });
        self.consensus.validators[validator].active = active;
        if active {
            self.consensus.resync_validator(validator);
        }
        // open tallies may stop waiting for this validator, or may become
        // applicable again now that someone is back
        let open: Vec<u64> = self.blocks.keys().copied().collect();
        for index in open {
            self.check_tally(index);
        }
    }

    /// Starts whatever the freed capacity now admits, FIFO.
    fn drain_vm_queue(&mut self, vm: VmRef) {
        loop {
            let next = {
                let pm = &self.consensus.validators[vm.pm].pm;
                match pm.vms[vm.vm].queue.front() {
                    Some(w) => {
                        let work = &self.works[&w.0];
                        if work.state == WorkState::Cancelled {
                            Some((w.0, false))
                        } else if pm.can_admit(vm.vm, &work.task) {
                            Some((w.0, true))
                        } else {
                            None
                        }
                    }
                    None => None,
                }
            };
            match next {
                Some((work_id, admit)) => {
                    let pm = &mut self.consensus.validators[vm.pm].pm;
                    pm.vms[vm.vm].queue.pop_front();
                    let len = pm.vms[vm.vm].queue.len() as u32;
                    self.trace.push(TraceRecord::QueueLen {
                        t: self.now,
                        scope: format!("{}:{}", vm.pm, vm.vm),
                        len,
                    });
                    if admit {
                        let task = self.works[&work_id].task.clone();
                        let accepted = self.consensus.validators[vm.pm].pm.admit_task(vm.vm, &task)
                            == Admission::Accepted;
                        debug_assert!(accepted);
                        self.start_execution(work_id, vm);
                    } else {
                        // cancelled while waiting: drop it and free the host
                        self.consensus.validators[vm.pm].pm.work_left(self.now);
                        self.works.get_mut(&work_id).expect("registered").state = WorkState::Done;
                    }
                }
                None => break,
            }
        }
    }

    /// Head-of-line retry of the global pending queue on each completion.
    fn retry_pending(&mut self) {
        loop {
            let work_id = match self.consensus.pending_queue.front() {
                Some(w) => w.0,
                None => return,
            };
            if self.works[&work_id].state == WorkState::Cancelled {
                self.consensus.pending_queue.pop_front();
                self.works.get_mut(&work_id).expect("registered").state = WorkState::Done;
                self.trace.push(TraceRecord::QueueLen {
                    t: self.now,
                    scope: "global".to_string(),
                    len: self.consensus.pending_queue.len() as u32,
                });
                continue;
            }
            let task = self.works[&work_id].task.clone();
            let outcome = self
                .consensus
                .select_validator(&task, self.cfg.policy)
                .expect("fleet has at least one validator");
            self.trace.push(TraceRecord::Selection {
                t: self.now,
                task: task.id.0,
                mode: outcome.mode,
                tbs_pm: outcome.tbs_candidate.pm as u32,
                tbs_vm: outcome.tbs_candidate.vm as u32,
                tbs_admits: outcome.tbs_admits,
                placed_pm: outcome.placed_on.map_or(-1, |v| v.pm as i64),
                placed_vm: outcome.placed_on.map_or(-1, |v| v.vm as i64),
                weight_evaluations: outcome.weight_evaluations,
            });
            match (outcome.mode, outcome.placed_on) {
                (SelectionMode::Queued, None) => return, // still stuck; stays at head
                (_, Some(vm)) => {
                    self.consensus.pending_queue.pop_front();
                    self.trace.push(TraceRecord::QueueLen {
                        t: self.now,
                        scope: "global".to_string(),
                        len: self.consensus.pending_queue.len() as u32,
                    });
                    self.enter_vm(work_id, vm);
                }
                _ => unreachable!(),
            }
        }
    }

    fn finish(mut self) -> RunOutput {
        #[cfg(debug_assertions)]
        {
            // memberships partition exactly the alive sensors
            let mut seen: BTreeSet<SensorId> = BTreeSet::new();
            for h in &self.heads {
                for m in &h.members {
                    assert!(seen.insert(*m), "sensor {m} is in two clusters");
                }
            }
            let alive: BTreeSet<SensorId> = self
                .sensors
                .iter()
                .filter(|s| s.alive)
                .map(|s| s.id)
                .collect();
            assert_eq!(seen, alive, "memberships must partition alive sensors");
        }
        let duration = self.cfg.duration_s;
        // busy/idle power over the whole run, per host: each occupied VM
        // draws busy power for its full residence; the host draws idle
        // power whenever completely unoccupied
        for i in 0..self.consensus.validators.len() {
            let pm = &mut self.consensus.validators[i].pm;
            let busy = pm.occupied_vm_seconds(duration);
            let idle = (duration - pm.lit_seconds(duration)).max(0.0);
            let (busy_j, idle_j) = crate::virt::compute_energy(pm, duration, busy, idle);
            let id = self.consensus.validators[i].id.0;
            if busy_j > 0.0 {
                self.trace.push(TraceRecord::Debit {
                    t: duration,
                    class: NodeClass::Validator,
                    id,
                    amount_j: busy_j,
                    cause: DebitCause::ComputeBusy,
                });
            }
            if idle_j > 0.0 {
                self.trace.push(TraceRecord::Debit {
                    t: duration,
                    class: NodeClass::Validator,
                    id,
                    amount_j: idle_j,
                    cause: DebitCause::ComputeIdle,
                });
            }
        }
        for s in &self.sensors {
            self.trace.push(TraceRecord::Final {
                class: NodeClass::Sensor,
                id: s.id.0,
                remaining_j: s.energy.remaining_j,
            });
            debug_assert!(s.energy.conservation_error_j() <= 1e-9);
        }
        for h in &self.heads {
            self.trace.push(TraceRecord::Final {
                class: NodeClass::Head,
                id: h.id.0,
                remaining_j: h.energy.remaining_j,
            });
            debug_assert!(h.energy.conservation_error_j() <= 1e-9);
        }
        for v in &self.consensus.validators {
            self.trace.push(TraceRecord::Final {
                class: NodeClass::Validator,
                id: v.id.0,
                remaining_j: v.pm.energy.remaining_j,
            });
            debug_assert!(v.pm.energy.conservation_error_j() <= 1e-9);
        }
        let pending = self.created - self.committed;
        self.trace.push(TraceRecord::End {
            created: self.created,
            committed: self.committed,
            pending,
            dropped: 0,
        });

        // the longest replica is the canonical chain (all active replicas
        // agree; inactive ones may trail behind)
        let replica_chains: Vec<Chain> = self
            .consensus
            .validators
            .iter()
            .map(|v| v.chain.clone())
            .collect();
        let chain = replica_chains
            .iter()
            .max_by_key(|c| c.len())
            .expect("at least one validator")
            .clone();
        debug_assert!(chain.validate().is_ok());
        RunOutput {
            trace: self.trace,
            chain,
            replica_chains,
        }
    }
}
