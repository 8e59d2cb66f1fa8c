//! The IoT wireless sensor network: sensor nodes, cluster heads, nearest-head
//! cluster formation, sensing/aggregation traffic, and the first-order radio
//! energy model.

use crate::energy::{DebitCause, NodeEnergy};
use crate::ledger::{sha256, Hash32, HeadId, Transaction, TxId};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SensorId(pub u32);

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// First-order radio constants: a per-bit electronics cost plus a
/// distance-squared amplifier cost on transmit.
#[derive(Debug, Clone, Copy)]
pub struct RadioParams {
    pub e_elec_j_per_bit: f64,
    pub e_amp_j_per_bit_m2: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            e_elec_j_per_bit: 50e-9,
            e_amp_j_per_bit_m2: 100e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadioDirection {
    Transmit,
    Receive,
}

/// Energy to move `bits` over `distance_m`. Receive cost is electronics
/// only; transmit adds the amplifier term.
pub fn radio_energy(
    direction: RadioDirection,
    bits: u64,
    distance_m: f64,
    params: &RadioParams,
) -> f64 {
    assert!(distance_m >= 0.0);
    let bits = bits as f64;
    match direction {
        RadioDirection::Transmit => {
            params.e_elec_j_per_bit * bits
                + params.e_amp_j_per_bit_m2 * bits * distance_m * distance_m
        }
        RadioDirection::Receive => params.e_elec_j_per_bit * bits,
    }
}

#[derive(Debug, Clone)]
pub struct SensorNode {
    pub id: SensorId,
    pub position: Position,
    pub energy: NodeEnergy,
    pub sensing_interval_s: f64,
    pub assigned_head: Option<HeadId>,
    pub alive: bool,
}

impl SensorNode {
    pub fn new(id: SensorId, position: Position, initial_j: f64, sensing_interval_s: f64) -> Self {
        Self {
            id,
            position,
            energy: NodeEnergy::new(initial_j),
            sensing_interval_s,
            assigned_head: None,
            alive: true,
        }
    }
}

/// A packet buffered at a cluster head awaiting aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferedPacket {
    pub from: SensorId,
    pub bits: u64,
    pub arrived_at: f64,
}

#[derive(Debug, Clone)]
pub struct ClusterHead {
    pub id: HeadId,
    pub position: Position,
    pub energy: NodeEnergy,
    pub members: BTreeSet<SensorId>,
    pub aggregation_window_s: f64,
    pub dissemination_interval_s: f64,
    pub buffer: Vec<BufferedPacket>,
    pub alive: bool,
}

impl ClusterHead {
    pub fn new(
        id: HeadId,
        position: Position,
        initial_j: f64,
        dissemination_interval_s: f64,
    ) -> Self {
        Self {
            id,
            position,
            energy: NodeEnergy::new(initial_j),
            members: BTreeSet::new(),
            aggregation_window_s: dissemination_interval_s,
            dissemination_interval_s,
            buffer: Vec::new(),
            alive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("cluster formation requires at least one head")]
    NoHeads,
}

/// Maps each sensor to the head minimizing Euclidean distance, ties broken
/// by lowest head id. Returns one head id per sensor, index-aligned.
pub fn assign_clusters(
    sensors: &[SensorNode],
    heads: &[ClusterHead],
) -> Result<Vec<HeadId>, ClusterError> {
    if heads.is_empty() {
        return Err(ClusterError::NoHeads);
    }
    let mut assignment = Vec::with_capacity(sensors.len());
    for sensor in sensors {
        let mut best = heads[0].id;
        let mut best_d = sensor.position.distance(&heads[0].position);
        for head in &heads[1..] {
            let d = sensor.position.distance(&head.position);
            if d < best_d || (d == best_d && head.id < best) {
                best = head.id;
                best_d = d;
            }
        }
        assignment.push(best);
    }
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SendOutcome {
    /// Packet scheduled toward the head; the sensor paid the transmit cost.
    Sent { bits: u64, debit_j: f64 },
    /// The remaining budget no longer covers a send; the node fell silent.
    Depleted,
}

impl SensorNode {
    /// One sensing emission toward the assigned head. The sensor transmits
    /// a fixed-size packet and pays first-order radio cost for the distance
    /// to its head, or falls silent forever once the budget no longer covers
    /// a send.
    pub fn sense_and_send(
        &mut self,
        now: f64,
        packet_bits: u64,
        distance_to_head_m: f64,
        radio: &RadioParams,
    ) -> SendOutcome {
        let cost = radio_energy(
            RadioDirection::Transmit,
            packet_bits,
            distance_to_head_m,
            radio,
        );
        if !self.alive || !self.energy.try_debit(now, cost, DebitCause::RadioTx) {
            self.alive = false;
            return SendOutcome::Depleted;
        }
        SendOutcome::Sent {
            bits: packet_bits,
            debit_j: cost,
        }
    }
}

/// Aggregation sizing: a fixed transaction header plus a per-packet digest.
#[derive(Debug, Clone, Copy)]
pub struct AggregationParams {
    pub header_bytes: u64,
    pub digest_bytes_per_packet: u64,
}

impl Default for AggregationParams {
    fn default() -> Self {
        Self {
            header_bytes: 64,
            digest_bytes_per_packet: 32,
        }
    }
}

impl AggregationParams {
    pub fn transaction_bytes(&self, packet_count: usize) -> u64 {
        self.header_bytes + self.digest_bytes_per_packet * packet_count as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmitOutcome {
    Emitted(EmittedTransaction),
    /// Nothing buffered this window.
    Empty,
    /// The head could not cover the receive-plus-transmit cost and stopped
    /// emitting.
    Depleted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedTransaction {
    pub tx: Transaction,
    pub packet_count: usize,
    pub rx_debit_j: f64,
    pub tx_debit_j: f64,
}

impl ClusterHead {
    /// Flushes the aggregation buffer into one transaction at a
    /// dissemination boundary. The head pays receive cost for every
    /// buffered packet and transmit cost for the emitted transaction over
    /// the uplink distance to the consensus network.
    pub fn aggregate_and_emit(
        &mut self,
        now: f64,
        tx_id: TxId,
        agg: &AggregationParams,
        uplink_distance_m: f64,
        radio: &RadioParams,
    ) -> EmitOutcome {
        if !self.alive {
            return EmitOutcome::Depleted;
        }
        if self.buffer.is_empty() {
            return EmitOutcome::Empty;
        }
        let packet_count = self.buffer.len();
        let rx_bits: u64 = self.buffer.iter().map(|p| p.bits).sum();
        let size_bytes = agg.transaction_bytes(packet_count);
        let rx_cost = radio_energy(RadioDirection::Receive, rx_bits, 0.0, radio);
        let tx_cost = radio_energy(
            RadioDirection::Transmit,
            size_bytes * 8,
            uplink_distance_m,
            radio,
        );
        if rx_cost + tx_cost > self.energy.remaining_j {
            self.alive = false;
            return EmitOutcome::Depleted;
        }
        self.energy.try_debit(now, rx_cost, DebitCause::RadioRx);
        self.energy.try_debit(now, tx_cost, DebitCause::RadioTx);
        let payload_digest = self.buffer_digest();
        self.buffer.clear();
        let tx = Transaction::new(tx_id, self.id, size_bytes, now, payload_digest);
        EmitOutcome::Emitted(EmittedTransaction {
            tx,
            packet_count,
            rx_debit_j: rx_cost,
            tx_debit_j: tx_cost,
        })
    }

    fn buffer_digest(&self) -> Hash32 {
        let mut bytes = Vec::with_capacity(self.buffer.len() * 20);
        for p in &self.buffer {
            bytes.extend_from_slice(&p.from.0.to_be_bytes());
            bytes.extend_from_slice(&p.bits.to_be_bytes());
            bytes.extend_from_slice(&p.arrived_at.to_bits().to_be_bytes());
        }
        sha256(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sensor_at(id: u32, x: f64, y: f64) -> SensorNode {
        SensorNode::new(SensorId(id), Position { x, y }, 3.0, 10.0)
    }

    fn head_at(id: u32, x: f64, y: f64) -> ClusterHead {
        ClusterHead::new(HeadId(id), Position { x, y }, 5.0, 30.0)
    }

    #[test]
    fn nearest_head_wins() {
        let sensors = vec![sensor_at(0, 0.0, 0.0)];
        let heads = vec![head_at(0, 1.0, 0.0), head_at(1, 5.0, 0.0)];
        assert_eq!(assign_clusters(&sensors, &heads).unwrap(), vec![HeadId(0)]);
    }

    #[test]
    fn equidistant_tie_breaks_to_lower_head_id() {
        let sensors = vec![sensor_at(0, 0.0, 0.0)];
        // present the farther-id head first to make the tie-break observable
        let heads = vec![head_at(7, -2.0, 0.0), head_at(3, 2.0, 0.0)];
        assert_eq!(assign_clusters(&sensors, &heads).unwrap(), vec![HeadId(3)]);
    }

    #[test]
    fn no_heads_is_an_error() {
        let sensors = vec![sensor_at(0, 0.0, 0.0)];
        assert_eq!(assign_clusters(&sensors, &[]), Err(ClusterError::NoHeads));
    }

    #[test]
    fn radio_energy_zero_bits_is_zero() {
        let p = RadioParams::default();
        assert_eq!(radio_energy(RadioDirection::Transmit, 0, 10.0, &p), 0.0);
        assert_eq!(radio_energy(RadioDirection::Receive, 0, 0.0, &p), 0.0);
    }

    #[test]
    fn radio_energy_matches_first_order_arithmetic() {
        let p = RadioParams::default();
        // 50e-9 * 1000 + 100e-12 * 1000 * 100 = 6.0e-5
        let tx = radio_energy(RadioDirection::Transmit, 1000, 10.0, &p);
        assert!((tx - 6.0e-5).abs() < 1e-15);
        // 50e-9 * 1000 = 5.0e-5
        let rx = radio_energy(RadioDirection::Receive, 1000, 0.0, &p);
        assert!((rx - 5.0e-5).abs() < 1e-15);
    }

    #[test]
    fn sense_and_send_debits_transmit_cost() {
        let mut s = sensor_at(0, 0.0, 0.0);
        let radio = RadioParams::default();
        match s.sense_and_send(10.0, 1000, 10.0, &radio) {
            SendOutcome::Sent { bits, debit_j } => {
                assert_eq!(bits, 1000);
                assert!((debit_j - 6.0e-5).abs() < 1e-15);
            }
            SendOutcome::Depleted => panic!("fresh sensor must send"),
        }
        assert_eq!(s.energy.debits.len(), 1);
        assert!(s.energy.conservation_error_j() <= 1e-9);
    }

    #[test]
    fn depleted_sensor_emits_nothing_and_dies() {
        let mut s = sensor_at(0, 0.0, 0.0);
        s.energy = NodeEnergy::new(1e-9);
        let radio = RadioParams::default();
        assert_eq!(
            s.sense_and_send(5.0, 1000, 10.0, &radio),
            SendOutcome::Depleted
        );
        assert!(!s.alive);
        assert_eq!(s.energy.debits.len(), 0);
        // once dead, it stays silent even for free sends
        assert_eq!(s.sense_and_send(6.0, 0, 0.0, &radio), SendOutcome::Depleted);
    }

    #[test]
    fn aggregation_sizes_transaction_from_buffer() {
        let mut h = head_at(0, 0.0, 0.0);
        for i in 0..3 {
            h.buffer.push(BufferedPacket {
                from: SensorId(i),
                bits: 1000,
                arrived_at: 10.0,
            });
        }
        let agg = AggregationParams::default();
        match h.aggregate_and_emit(30.0, TxId(1), &agg, 50.0, &RadioParams::default()) {
            EmitOutcome::Emitted(e) => {
                assert_eq!(e.tx.size_bytes, 64 + 3 * 32);
                assert_eq!(e.tx.created_at, 30.0);
                assert_eq!(e.packet_count, 3);
                assert!(h.buffer.is_empty());
                // rx for 3000 bits
                assert!((e.rx_debit_j - 1.5e-4).abs() < 1e-12);
            }
            other => panic!("expected emission, got {other:?}"),
        }
    }

    #[test]
    fn empty_buffer_emits_nothing() {
        let mut h = head_at(0, 0.0, 0.0);
        let out = h.aggregate_and_emit(
            30.0,
            TxId(1),
            &AggregationParams::default(),
            50.0,
            &RadioParams::default(),
        );
        assert_eq!(out, EmitOutcome::Empty);
    }

    #[test]
    fn depleted_head_stops_emitting() {
        let mut h = head_at(0, 0.0, 0.0);
        h.energy = NodeEnergy::new(1e-9);
        h.buffer.push(BufferedPacket {
            from: SensorId(0),
            bits: 1000,
            arrived_at: 1.0,
        });
        let out = h.aggregate_and_emit(
            30.0,
            TxId(1),
            &AggregationParams::default(),
            50.0,
            &RadioParams::default(),
        );
        assert_eq!(out, EmitOutcome::Depleted);
        assert!(!h.alive);
    }
}
