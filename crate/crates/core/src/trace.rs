//! The timestamped event record a run produces and metrics are computed
//! from: newline-delimited, one record per event, fixed field order.
//!
//! The rendered form is byte-stable: identical runs render identical text,
//! which is what the determinism checks compare.

use crate::config::SelectionPolicy;
use crate::consensus::SelectionMode;
use crate::energy::DebitCause;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeClass {
    Sensor,
    Head,
    Validator,
}

impl NodeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeClass::Sensor => "sensor",
            NodeClass::Head => "head",
            NodeClass::Validator => "validator",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sensor" => Some(NodeClass::Sensor),
            "head" => Some(NodeClass::Head),
            "validator" => Some(NodeClass::Validator),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    /// Run identity: scenario name, seed, policy, duration, scenario
    /// fingerprint.
    Meta {
        name: String,
        seed: u64,
        policy: SelectionPolicy,
        duration_s: f64,
        fingerprint: String,
    },
    /// Node placement and initial budget (position is zero for validators,
    /// which sit outside the sensing area).
    Node {
        class: NodeClass,
        id: u32,
        x: f64,
        y: f64,
        initial_j: f64,
    },
    /// A sensor emitted a packet toward its head.
    Sense {
        t: f64,
        sensor: u32,
        head: u32,
        bits: u64,
    },
    /// A node's budget no longer covers its next action; it fell silent.
    Depleted { t: f64, class: NodeClass, id: u32 },
    /// A packet reached a head's aggregation buffer.
    PacketArrive {
        t: f64,
        head: u32,
        sensor: u32,
        bits: u64,
    },
    /// Transaction created by a head.
    TxCreated {
        t: f64,
        tx: u64,
        head: u32,
        size_bytes: u64,
    },
    /// Transaction reached the consensus network mempools.
    TxArrived { t: f64, tx: u64 },
    /// One placement decision, with enough detail to audit the procedure.
    Selection {
        t: f64,
        task: u64,
        mode: SelectionMode,
        tbs_pm: u32,
        tbs_vm: u32,
        tbs_admits: bool,
        placed_pm: i64,
        placed_vm: i64,
        weight_evaluations: u32,
    },
    /// Work began executing on a VM, with its completion time.
    ExecStart {
        t: f64,
        work: u64,
        pm: u32,
        vm: u32,
        end: f64,
    },
    /// Work finished and released its resources.
    ExecDone { t: f64, work: u64, pm: u32, vm: u32 },
    /// A block was announced by the round proposer.
    BlockProposed {
        t: f64,
        index: u64,
        proposer: u32,
        txs: u32,
        bytes: u64,
    },
    /// A verifier's vote arrived back at the proposer.
    Vote {
        t: f64,
        index: u64,
        verifier: u32,
        approve: bool,
    },
    /// Block committed to every active validator's chain.
    Committed {
        t: f64,
        index: u64,
        txs: u32,
        bytes: u64,
    },
    /// Transaction committed (its block was).
    TxCommitted { t: f64, tx: u64 },
    /// Block rejected by the vote tally.
    Rejected { t: f64, index: u64 },
    /// Energy debit against a node's budget.
    Debit {
        t: f64,
        class: NodeClass,
        id: u32,
        amount_j: f64,
        cause: DebitCause,
    },
    /// Queue length after a change: scope is "global" or "pm:vm".
    QueueLen { t: f64, scope: String, len: u32 },
    /// Validator availability toggled by the downtime schedule.
    Toggle {
        t: f64,
        validator: u32,
        active: bool,
    },
    /// Remaining budget at end of run.
    Final {
        class: NodeClass,
        id: u32,
        remaining_j: f64,
    },
    /// Transaction accounting at end of run.
    End {
        created: u64,
        committed: u64,
        pending: u64,
        dropped: u64,
    },
}

impl TraceRecord {
    pub fn time(&self) -> Option<f64> {
        match self {
            TraceRecord::Meta { .. }
            | TraceRecord::Node { .. }
            | TraceRecord::Final { .. }
            | TraceRecord::End { .. } => None,
            TraceRecord::Sense { t, .. }
            | TraceRecord::Depleted { t, .. }
            | TraceRecord::PacketArrive { t, .. }
            | TraceRecord::TxCreated { t, .. }
            | TraceRecord::TxArrived { t, .. }
            | TraceRecord::Selection { t, .. }
            | TraceRecord::ExecStart { t, .. }
            | TraceRecord::ExecDone { t, .. }
            | TraceRecord::BlockProposed { t, .. }
            | TraceRecord::Vote { t, .. }
            | TraceRecord::Committed { t, .. }
            | TraceRecord::TxCommitted { t, .. }
            | TraceRecord::Rejected { t, .. }
            | TraceRecord::Debit { t, .. }
            | TraceRecord::QueueLen { t, .. }
            | TraceRecord::Toggle { t, .. } => Some(*t),
        }
    }

    pub fn render(&self, out: &mut String) {
        match self {
            TraceRecord::Meta {
                name,
                seed,
                policy,
                duration_s,
                fingerprint,
            } => {
                let _ = writeln!(
                    out,
                    "META {name} {seed} {policy} {duration_s} {fingerprint}"
                );
            }
            TraceRecord::Node {
                class,
                id,
                x,
                y,
                initial_j,
            } => {
                let _ = writeln!(out, "NODE {} {id} {x} {y} {initial_j}", class.as_str());
            }
            TraceRecord::Sense {
                t,
                sensor,
                head,
                bits,
            } => {
                let _ = writeln!(out, "SENSE {t} {sensor} {head} {bits}");
            }
            TraceRecord::Depleted { t, class, id } => {
                let _ = writeln!(out, "DEPLETED {t} {} {id}", class.as_str());
            }
            TraceRecord::PacketArrive {
                t,
                head,
                sensor,
                bits,
            } => {
                let _ = writeln!(out, "PKT {t} {head} {sensor} {bits}");
            }
            TraceRecord::TxCreated {
                t,
                tx,
                head,
                size_bytes,
            } => {
                let _ = writeln!(out, "TXC {t} {tx} {head} {size_bytes}");
            }
            TraceRecord::TxArrived { t, tx } => {
                let _ = writeln!(out, "TXA {t} {tx}");
            }
            TraceRecord::Selection {
                t,
                task,
                mode,
                tbs_pm,
                tbs_vm,
                tbs_admits,
                placed_pm,
                placed_vm,
                weight_evaluations,
            } => {
                let _ = writeln!(
                    out,
                    "SEL {t} {task} {} {tbs_pm} {tbs_vm} {} {placed_pm} {placed_vm} {weight_evaluations}",
                    mode.as_str(),
                    *tbs_admits as u8,
                );
            }
            TraceRecord::ExecStart {
                t,
                work,
                pm,
                vm,
                end,
            } => {
                let _ = writeln!(out, "EXEC {t} {work} {pm} {vm} {end}");
            }
            TraceRecord::ExecDone { t, work, pm, vm } => {
                let _ = writeln!(out, "DONE {t} {work} {pm} {vm}");
            }
            TraceRecord::BlockProposed {
                t,
                index,
                proposer,
                txs,
                bytes,
            } => {
                let _ = writeln!(out, "BLK {t} {index} {proposer} {txs} {bytes}");
            }
            TraceRecord::Vote {
                t,
                index,
                verifier,
                approve,
            } => {
                let _ = writeln!(out, "VOTE {t} {index} {verifier} {}", *approve as u8);
            }
            TraceRecord::Committed {
                t,
                index,
                txs,
                bytes,
            } => {
                let _ = writeln!(out, "CMT {t} {index} {txs} {bytes}");
            }
            TraceRecord::TxCommitted { t, tx } => {
                let _ = writeln!(out, "TXK {t} {tx}");
            }
            TraceRecord::Rejected { t, index } => {
                let _ = writeln!(out, "REJ {t} {index}");
            }
            TraceRecord::Debit {
                t,
                class,
                id,
                amount_j,
                cause,
            } => {
                let _ = writeln!(out, "DEBIT {t} {} {id} {amount_j} {cause}", class.as_str());
            }
            TraceRecord::QueueLen { t, scope, len } => {
                let _ = writeln!(out, "QLEN {t} {scope} {len}");
            }
            TraceRecord::Toggle {
                t,
                validator,
                active,
            } => {
                let _ = writeln!(out, "TOGGLE {t} {validator} {}", *active as u8);
            }
            TraceRecord::Final {
                class,
                id,
                remaining_j,
            } => {
                let _ = writeln!(out, "FINAL {} {id} {remaining_j}", class.as_str());
            }
            TraceRecord::End {
                created,
                committed,
                pending,
                dropped,
            } => {
                let _ = writeln!(out, "END {created} {committed} {pending} {dropped}");
            }
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            r.render(&mut out);
        }
        out
    }

    pub fn meta(&self) -> Option<(&str, u64, SelectionPolicy, f64, &str)> {
        self.records.iter().find_map(|r| match r {
            TraceRecord::Meta {
                name,
                seed,
                policy,
                duration_s,
                fingerprint,
            } => Some((
                name.as_str(),
                *seed,
                *policy,
                *duration_s,
                fingerprint.as_str(),
            )),
            _ => None,
        })
    }

    pub fn parse(text: &str) -> Result<Self, TraceParseError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            records.push(parse_line(line).map_err(|message| TraceParseError {
                line: i + 1,
                message,
            })?);
        }
        Ok(Trace { records })
    }
}

fn parse_line(line: &str) -> Result<TraceRecord, String> {
    let fields: Vec<&str> = line.split(' ').collect();
    let kind = fields[0];
    let want = |n: usize| -> Result<(), String> {
        if fields.len() == n + 1 {
            Ok(())
        } else {
            Err(format!(
                "{kind} expects {n} fields, found {}",
                fields.len() - 1
            ))
        }
    };
    fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
        s.parse().map_err(|_| format!("bad {what}: {s}"))
    }
    fn flag(s: &str) -> Result<bool, String> {
        match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(format!("bad flag: {s}")),
        }
    }
    let class = |s: &str| NodeClass::parse(s).ok_or_else(|| format!("bad node class: {s}"));
    match kind {
        "META" => {
            want(5)?;
            Ok(TraceRecord::Meta {
                name: fields[1].to_string(),
                seed: num(fields[2], "seed")?,
                policy: SelectionPolicy::parse(fields[3])
                    .ok_or_else(|| format!("bad policy: {}", fields[3]))?,
                duration_s: num(fields[4], "duration")?,
                fingerprint: fields[5].to_string(),
            })
        }
        "NODE" => {
            want(5)?;
            Ok(TraceRecord::Node {
                class: class(fields[1])?,
                id: num(fields[2], "id")?,
                x: num(fields[3], "x")?,
                y: num(fields[4], "y")?,
                initial_j: num(fields[5], "initial_j")?,
            })
        }
        "SENSE" => {
            want(4)?;
            Ok(TraceRecord::Sense {
                t: num(fields[1], "t")?,
                sensor: num(fields[2], "sensor")?,
                head: num(fields[3], "head")?,
                bits: num(fields[4], "bits")?,
            })
        }
        "DEPLETED" => {
            want(3)?;
            Ok(TraceRecord::Depleted {
                t: num(fields[1], "t")?,
                class: class(fields[2])?,
                id: num(fields[3], "id")?,
            })
        }
        "PKT" => {
            want(4)?;
            Ok(TraceRecord::PacketArrive {
                t: num(fields[1], "t")?,
                head: num(fields[2], "head")?,
                sensor: num(fields[3], "sensor")?,
                bits: num(fields[4], "bits")?,
            })
        }
        "TXC" => {
            want(4)?;
            Ok(TraceRecord::TxCreated {
                t: num(fields[1], "t")?,
                tx: num(fields[2], "tx")?,
                head: num(fields[3], "head")?,
                size_bytes: num(fields[4], "size")?,
            })
        }
        "TXA" => {
            want(2)?;
            Ok(TraceRecord::TxArrived {
                t: num(fields[1], "t")?,
                tx: num(fields[2], "tx")?,
            })
        }
        "SEL" => {
            want(9)?;
            Ok(TraceRecord::Selection {
                t: num(fields[1], "t")?,
                task: num(fields[2], "task")?,
                mode: SelectionMode::parse(fields[3])
                    .ok_or_else(|| format!("bad mode: {}", fields[3]))?,
                tbs_pm: num(fields[4], "tbs_pm")?,
                tbs_vm: num(fields[5], "tbs_vm")?,
                tbs_admits: flag(fields[6])?,
                placed_pm: num(fields[7], "placed_pm")?,
                placed_vm: num(fields[8], "placed_vm")?,
                weight_evaluations: num(fields[9], "evaluations")?,
            })
        }
        "EXEC" => {
            want(5)?;
            Ok(TraceRecord::ExecStart {
                t: num(fields[1], "t")?,
                work: num(fields[2], "work")?,
                pm: num(fields[3], "pm")?,
                vm: num(fields[4], "vm")?,
                end: num(fields[5], "end")?,
            })
        }
        "DONE" => {
            want(4)?;
            Ok(TraceRecord::ExecDone {
                t: num(fields[1], "t")?,
                work: num(fields[2], "work")?,
                pm: num(fields[3], "pm")?,
                vm: num(fields[4], "vm")?,
            })
        }
        "BLK" => {
            want(5)?;
            Ok(TraceRecord::BlockProposed {
                t: num(fields[1], "t")?,
                index: num(fields[2], "index")?,
                proposer: num(fields[3], "proposer")?,
                txs: num(fields[4], "txs")?,
                bytes: num(fields[5], "bytes")?,
            })
        }
        "VOTE" => {
            want(4)?;
            Ok(TraceRecord::Vote {
                t: num(fields[1], "t")?,
                index: num(fields[2], "index")?,
                verifier: num(fields[3], "verifier")?,
                approve: flag(fields[4])?,
            })
        }
        "CMT" => {
            want(4)?;
            Ok(TraceRecord::Committed {
                t: num(fields[1], "t")?,
                index: num(fields[2], "index")?,
                txs: num(fields[3], "txs")?,
                bytes: num(fields[4], "bytes")?,
            })
        }
        "TXK" => {
            want(2)?;
            Ok(TraceRecord::TxCommitted {
                t: num(fields[1], "t")?,
                tx: num(fields[2], "tx")?,
            })
        }
        "REJ" => {
            want(2)?;
            Ok(TraceRecord::Rejected {
                t: num(fields[1], "t")?,
                index: num(fields[2], "index")?,
            })
        }
        "DEBIT" => {
            want(5)?;
            Ok(TraceRecord::Debit {
                t: num(fields[1], "t")?,
                class: class(fields[2])?,
                id: num(fields[3], "id")?,
                amount_j: num(fields[4], "amount")?,
                cause: DebitCause::parse(fields[5])
                    .ok_or_else(|| format!("bad cause: {}", fields[5]))?,
            })
        }
        "QLEN" => {
            want(3)?;
            Ok(TraceRecord::QueueLen {
                t: num(fields[1], "t")?,
                scope: fields[2].to_string(),
                len: num(fields[3], "len")?,
            })
        }
        "TOGGLE" => {
            want(3)?;
            Ok(TraceRecord::Toggle {
                t: num(fields[1], "t")?,
                validator: num(fields[2], "validator")?,
                active: flag(fields[3])?,
            })
        }
        "FINAL" => {
            want(3)?;
            Ok(TraceRecord::Final {
                class: class(fields[1])?,
                id: num(fields[2], "id")?,
                remaining_j: num(fields[3], "remaining_j")?,
            })
        }
        "END" => {
            want(4)?;
            Ok(TraceRecord::End {
                created: num(fields[1], "created")?,
                committed: num(fields[2], "committed")?,
                pending: num(fields[3], "pending")?,
                dropped: num(fields[4], "dropped")?,
            })
        }
        other => Err(format!("unknown record kind: {other}")),
    }
}

/// Replays the run invariants over a stored trace and returns every
/// violation found (empty means the trace checks out).
pub fn validate_trace(trace: &Trace) -> Vec<String> {
    use std::collections::{BTreeMap, BTreeSet};
    let mut violations = Vec::new();

    let (policy, duration) = match trace.meta() {
        Some((_, _, policy, duration, _)) => (policy, duration),
        None => {
            violations.push("missing META record".to_string());
            return violations;
        }
    };

    // timestamps within [0, duration], nondecreasing in file order
    let mut last_t = 0.0_f64;
    for (i, r) in trace.records.iter().enumerate() {
        if let Some(t) = r.time() {
            if !(0.0..=duration).contains(&t) {
                violations.push(format!("record {} outside [0, duration]: t = {t}", i + 1));
            }
            if t < last_t {
                violations.push(format!(
                    "record {} goes back in time: {t} < {last_t}",
                    i + 1
                ));
            }
            last_t = t;
        }
    }

    // per-node energy conservation: initial - sum(debits) = final remaining
    let mut initial: BTreeMap<(NodeClass, u32), f64> = BTreeMap::new();
    let mut spent: BTreeMap<(NodeClass, u32), f64> = BTreeMap::new();
    let mut finals: BTreeMap<(NodeClass, u32), f64> = BTreeMap::new();
    for r in &trace.records {
        match r {
            TraceRecord::Node {
                class,
                id,
                initial_j,
                ..
            } => {
                initial.insert((*class, *id), *initial_j);
            }
            TraceRecord::Debit {
                class,
                id,
                amount_j,
                ..
            } => {
                if *amount_j < 0.0 {
                    violations.push(format!("negative debit on {} {id}", class.as_str()));
                }
                *spent.entry((*class, *id)).or_insert(0.0) += amount_j;
            }
            TraceRecord::Final {
                class,
                id,
                remaining_j,
            } => {
                finals.insert((*class, *id), *remaining_j);
            }
            _ => {}
        }
    }
    for (key, init) in &initial {
        let spent = spent.get(key).copied().unwrap_or(0.0);
        match finals.get(key) {
            Some(remaining) => {
                if (init - spent - remaining).abs() > 1e-9 {
                    violations.push(format!(
                        "energy conservation broken on {} {}: |{init} - {spent} - {remaining}| > 1e-9",
                        key.0.as_str(),
                        key.1
                    ));
                }
            }
            None => violations.push(format!("no FINAL record for {} {}", key.0.as_str(), key.1)),
        }
    }

    // transaction lifecycle: created <= arrived <= committed, each at most once
    let mut created: BTreeMap<u64, f64> = BTreeMap::new();
    let mut arrived: BTreeMap<u64, f64> = BTreeMap::new();
    let mut committed: BTreeMap<u64, f64> = BTreeMap::new();
    for r in &trace.records {
        match r {
            TraceRecord::TxCreated { t, tx, .. } => {
                if created.insert(*tx, *t).is_some() {
                    violations.push(format!("tx {tx} created twice"));
                }
            }
            TraceRecord::TxArrived { t, tx } => {
                if arrived.insert(*tx, *t).is_some() {
                    violations.push(format!("tx {tx} arrived twice"));
                }
            }
            TraceRecord::TxCommitted { t, tx } if committed.insert(*tx, *t).is_some() => {
                violations.push(format!("tx {tx} committed twice"));
            }
            _ => {}
        }
    }
    for (tx, t_arr) in &arrived {
        match created.get(tx) {
            Some(t_c) if t_c <= t_arr => {}
            Some(_) => violations.push(format!("tx {tx} arrived before creation")),
            None => violations.push(format!("tx {tx} arrived but was never created")),
        }
    }
    for (tx, t_k) in &committed {
        match arrived.get(tx) {
            Some(t_a) if t_a <= t_k => {}
            Some(_) => violations.push(format!("tx {tx} committed before arrival")),
            None => violations.push(format!("tx {tx} committed but never arrived")),
        }
    }

    // accounting identity against the END record
    match trace.records.iter().find_map(|r| match r {
        TraceRecord::End {
            created,
            committed,
            pending,
            dropped,
        } => Some((*created, *committed, *pending, *dropped)),
        _ => None,
    }) {
        Some((c, k, p, d)) => {
            if c != k + p + d {
                violations.push(format!(
                    "accounting identity broken: created {c} != committed {k} + pending {p} + dropped {d}"
                ));
            }
            if c != created.len() as u64 {
                violations.push(format!(
                    "END created {c} does not match {} TXC records",
                    created.len()
                ));
            }
            if k != committed.len() as u64 {
                violations.push(format!(
                    "END committed {k} does not match {} TXK records",
                    committed.len()
                ));
            }
        }
        None => violations.push("missing END record".to_string()),
    }

    // selection procedure conformance
    for (i, r) in trace.records.iter().enumerate() {
        if let TraceRecord::Selection {
            mode,
            tbs_admits,
            weight_evaluations,
            ..
        } = r
        {
            match mode {
                SelectionMode::WbsFallback => {
                    if *tbs_admits {
                        violations.push(format!(
                            "record {}: weight fallback despite an admitting turn candidate",
                            i + 1
                        ));
                    }
                    if policy == SelectionPolicy::Tbs {
                        violations.push(format!(
                            "record {}: weight fallback under pure turn-based policy",
                            i + 1
                        ));
                    }
                }
                SelectionMode::Tbs => {
                    if !*tbs_admits {
                        violations.push(format!(
                            "record {}: turn-based placement on a non-admitting VM",
                            i + 1
                        ));
                    }
                }
                SelectionMode::Queued => {}
            }
            if *weight_evaluations > 0
                && (policy == SelectionPolicy::Tbs || *mode != SelectionMode::WbsFallback)
            {
                violations.push(format!("record {}: unexpected weight evaluations", i + 1));
            }
        }
    }

    // depletion is permanent: at most one record per node
    let mut depleted: BTreeSet<(NodeClass, u32)> = BTreeSet::new();
    for r in &trace.records {
        if let TraceRecord::Depleted { class, id, .. } = r {
            if !depleted.insert((*class, *id)) {
                violations.push(format!("{} {id} depleted twice", class.as_str()));
            }
        }
    }

    violations
}
