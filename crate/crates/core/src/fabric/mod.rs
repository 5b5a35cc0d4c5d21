//! The switch fabric: channels, ports, queue sets, arbitration, credits.
//!
//! Topology: every accelerator has one bidirectional link (an up and a down
//! [`Channel`]) to every switch. The tuple `(accelerator, switch)` names a
//! *port*; `port = accelerator * num_switches + switch` indexes every
//! per-port array. Each direction moves one flit per cycle; a packet is
//! delivered one link latency after its last flit leaves.
//!
//! On reception packets are demultiplexed by the INC header bit into the
//! in-switch-accelerator (ISA) or switch-core queue set, then by class
//! (request / response / read data / write data). Senders hold per-queue
//! credit ledgers sized to the receive depth; consumed credits return one
//! link latency after the consumer drains the packet. The switch core
//! forwards endpoint-to-endpoint traffic across an ideal crossbar, and the
//! ISA and core sets share each down channel through deficit round-robin
//! arbitration.

pub mod arbiter;
pub mod link;
pub mod packet;
pub mod queues;

use crate::config::SimConfig;
use crate::report::TrafficCounters;
use crate::trace::TraceLog;
use arbiter::{DeficitRoundRobin, TxSource};
use link::Channel;
use packet::{NodeId, Packet, QueueClass, NUM_QUEUE_CLASSES};
use queues::{PortCredits, PortRx};
use std::collections::VecDeque;

/// Transmit-side class queues of one source at one port.
#[derive(Debug, Default)]
pub struct TxQueueSet {
    queues: [VecDeque<Packet>; NUM_QUEUE_CLASSES],
    flits_queued: u64,
}

/// Classes in send priority order: small control packets first, then data.
const CLASS_PRIORITY: [QueueClass; NUM_QUEUE_CLASSES] = [
    QueueClass::Request,
    QueueClass::Response,
    QueueClass::ReadData,
    QueueClass::WriteData,
];

impl TxQueueSet {
    fn push(&mut self, packet: Packet, flit_bytes: u64) {
        self.flits_queued += packet.flits(flit_bytes);
        self.queues[QueueClass::of(packet.header.kind) as usize].push_back(packet);
    }

    /// Highest-priority class whose head packet fits its credit ledger.
    fn next_sendable(&self, credits: &PortCredits, flit_bytes: u64) -> Option<QueueClass> {
        for class in CLASS_PRIORITY {
            if let Some(head) = self.queues[class as usize].front() {
                let ledger = if head.header.inc_flag {
                    &credits.isa[class as usize]
                } else {
                    &credits.core[class as usize]
                };
                if ledger.can_take(head.flits(flit_bytes)) {
                    return Some(class);
                }
            }
        }
        None
    }

    fn pop(&mut self, class: QueueClass, flit_bytes: u64) -> Packet {
        let p = self.queues[class as usize].pop_front().expect("pop on empty class");
        self.flits_queued -= p.flits(flit_bytes);
        p
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(|q| q.is_empty())
    }

    fn total_packets(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

pub struct Fabric {
    num_accelerators: usize,
    num_switches: usize,
    flit_bytes: u64,
    latency_cycles: u64,
    /// Cap on forwarded flits parked at one egress before the crossbar
    /// stops pulling from ingress (end-to-end backpressure).
    forward_buffer_cap_flits: u64,

    up: Vec<Channel>,
    down: Vec<Channel>,
    /// Switch-side receive queues of the up channels.
    switch_rx: Vec<PortRx>,
    /// Accelerator-side receive queues of the down channels.
    acc_rx: Vec<PortRx>,
    /// Down-channel sources.
    isa_tx: Vec<TxQueueSet>,
    core_tx: Vec<TxQueueSet>,
    /// Up-channel source (the endpoint's single transmit set).
    acc_tx: Vec<TxQueueSet>,
    arbiters: Vec<DeficitRoundRobin>,
    /// Credits for the acc-side receive queues, held by down-channel senders.
    down_credits: Vec<PortCredits>,
    /// Credits for the switch-side receive queues, held by the endpoints.
    up_credits: Vec<PortCredits>,

    pub counters: TrafficCounters,
    pub trace: Option<TraceLog>,
}

impl Fabric {
    pub fn new(config: &SimConfig) -> Fabric {
        let ports = config.num_accelerators * config.num_switches;
        let depth = config.queue_depth_flits();
        let flit = config.flit_size_bytes;
        let latency = config.link_latency_cycles();
        Fabric {
            num_accelerators: config.num_accelerators,
            num_switches: config.num_switches,
            flit_bytes: flit,
            latency_cycles: latency,
            forward_buffer_cap_flits: depth,
            up: (0..ports).map(|_| Channel::new(latency, flit)).collect(),
            down: (0..ports).map(|_| Channel::new(latency, flit)).collect(),
            switch_rx: (0..ports).map(|_| PortRx::new(depth, flit)).collect(),
            acc_rx: (0..ports).map(|_| PortRx::new(depth, flit)).collect(),
            isa_tx: (0..ports).map(|_| TxQueueSet::default()).collect(),
            core_tx: (0..ports).map(|_| TxQueueSet::default()).collect(),
            acc_tx: (0..ports).map(|_| TxQueueSet::default()).collect(),
            arbiters: (0..ports).map(|_| DeficitRoundRobin::new()).collect(),
            down_credits: (0..ports).map(|_| PortCredits::new(depth)).collect(),
            up_credits: (0..ports).map(|_| PortCredits::new(depth)).collect(),
            counters: TrafficCounters::new(config.num_accelerators),
            trace: None,
        }
    }

    #[inline]
    pub fn port(&self, accelerator: usize, switch: usize) -> usize {
        accelerator * self.num_switches + switch
    }

    pub fn num_ports(&self) -> usize {
        self.up.len()
    }

    pub fn num_switches(&self) -> usize {
        self.num_switches
    }

    pub fn num_accelerators(&self) -> usize {
        self.num_accelerators
    }

    pub fn latency_cycles(&self) -> u64 {
        self.latency_cycles
    }

    // --- producer APIs ----------------------------------------------------

    fn count_injection(&mut self, packet: &Packet) {
        *self
            .counters
            .packets_by_kind
            .entry(packet.header.kind.name().to_string())
            .or_insert(0) += 1;
        if packet.header.kind.is_sync() {
            self.counters.sync_messages += 1;
        }
    }

    /// Endpoint injects a fresh packet toward a switch.
    pub fn acc_enqueue(&mut self, accelerator: usize, switch: usize, packet: Packet) {
        self.count_injection(&packet);
        let port = self.port(accelerator, switch);
        self.acc_tx[port].push(packet, self.flit_bytes);
    }

    /// ISA injects a fresh packet toward an accelerator.
    pub fn isa_enqueue(&mut self, switch: usize, accelerator: usize, packet: Packet) {
        self.count_injection(&packet);
        let port = self.port(accelerator, switch);
        self.isa_tx[port].push(packet, self.flit_bytes);
    }

    /// Pending flits in the ISA transmit set of a port (issue throttling).
    pub fn isa_tx_backlog_flits(&self, switch: usize, accelerator: usize) -> u64 {
        self.isa_tx[self.port(accelerator, switch)].flits_queued
    }

    /// Pending flits in an accelerator's transmit set toward one switch
    /// (agent-side send throttling).
    pub fn acc_tx_backlog_flits(&self, accelerator: usize, switch: usize) -> u64 {
        self.acc_tx[self.port(accelerator, switch)].flits_queued
    }

    // --- consumer APIs ----------------------------------------------------

    /// Pop from a switch-side ISA queue, refunding credits to the endpoint.
    pub fn switch_isa_pop(
        &mut self,
        now: u64,
        switch: usize,
        accelerator: usize,
        class: QueueClass,
    ) -> Option<Packet> {
        let port = self.port(accelerator, switch);
        let (packet, flits) = self.switch_rx[port].isa.queue_mut(class).pop()?;
        self.up_credits[port]
            .ledger_mut(true, class)
            .refund_at(now + self.latency_cycles, flits);
        Some(packet)
    }

    /// Pop from an accelerator-side queue (either set), refunding credits.
    pub fn acc_pop(
        &mut self,
        now: u64,
        accelerator: usize,
        switch: usize,
        isa_set: bool,
        class: QueueClass,
    ) -> Option<Packet> {
        let port = self.port(accelerator, switch);
        let set = if isa_set {
            &mut self.acc_rx[port].isa
        } else {
            &mut self.acc_rx[port].core
        };
        let (packet, flits) = set.queue_mut(class).pop()?;
        self.down_credits[port]
            .ledger_mut(isa_set, class)
            .refund_at(now + self.latency_cycles, flits);
        Some(packet)
    }

    // --- per-cycle machinery ----------------------------------------------

    /// Move delivered packets from channels into receive queues.
    pub fn deliver(&mut self, now: u64) -> bool {
        let mut activity = false;
        for port in 0..self.up.len() {
            let acc = port / self.num_switches;
            while let Some(packet) = self.up[port].pop_delivered(now) {
                activity = true;
                let len = packet.header.length as u64;
                self.counters.flits_up += packet.flits(self.flit_bytes);
                self.counters.payload_link_crossing_bytes += len;
                self.counters.payload_bytes_up_per_acc[acc] += len;
                if packet.header.kind.is_sync() {
                    self.counters.sync_link_crossings += 1;
                }
                if let Some(t) = &mut self.trace {
                    t.event(now, port, "up", "deliver", packet.header.kind.name());
                }
                self.switch_rx[port].demux(packet);
            }
            while let Some(packet) = self.down[port].pop_delivered(now) {
                activity = true;
                let len = packet.header.length as u64;
                self.counters.flits_down += packet.flits(self.flit_bytes);
                self.counters.payload_link_crossing_bytes += len;
                self.counters.payload_bytes_down_per_acc[acc] += len;
                if packet.header.kind.is_sync() {
                    self.counters.sync_link_crossings += 1;
                }
                if let Some(t) = &mut self.trace {
                    t.event(now, port, "down", "deliver", packet.header.kind.name());
                }
                self.acc_rx[port].demux(packet);
            }
        }
        activity
    }

    /// Ideal-crossbar forwarding: drain switch-core ingress queues into the
    /// destination port's core transmit set, bounded by an egress buffer cap
    /// so upstream credits provide end-to-end backpressure.
    pub fn forward(&mut self, now: u64) -> bool {
        let mut activity = false;
        for ingress in 0..self.switch_rx.len() {
            let switch = ingress % self.num_switches;
            for class in CLASS_PRIORITY {
                loop {
                    let dst = match self.switch_rx[ingress].core.queue(class).front() {
                        Some(p) => match p.header.dst {
                            NodeId::Accelerator(a) => a as usize,
                            NodeId::Switch(_) => {
                                panic!("switch-core packet addressed to a switch")
                            }
                        },
                        None => break,
                    };
                    let egress = self.port(dst, switch);
                    if self.core_tx[egress].flits_queued >= self.forward_buffer_cap_flits {
                        break;
                    }
                    let (packet, flits) =
                        self.switch_rx[ingress].core.queue_mut(class).pop().unwrap();
                    self.up_credits[ingress]
                        .ledger_mut(false, class)
                        .refund_at(now + self.latency_cycles, flits);
                    self.core_tx[egress].push(packet, self.flit_bytes);
                    activity = true;
                }
            }
        }
        activity
    }

    /// Inject ready packets into free channels: endpoints onto up channels,
    /// and the round-robin winner of (ISA, core) onto down channels.
    pub fn pump(&mut self, now: u64) -> bool {
        let mut activity = false;
        for port in 0..self.up.len() {
            self.up_credits[port].poll(now);
            self.down_credits[port].poll(now);

            // Up: single source.
            if self.up[port].can_inject(now) {
                if let Some(class) =
                    self.acc_tx[port].next_sendable(&self.up_credits[port], self.flit_bytes)
                {
                    let packet = self.acc_tx[port].pop(class, self.flit_bytes);
                    let flits = packet.flits(self.flit_bytes);
                    self.up_credits[port]
                        .ledger_mut(packet.header.inc_flag, class)
                        .take(flits);
                    if let Some(t) = &mut self.trace {
                        t.event(now, port, "up", "inject", packet.header.kind.name());
                    }
                    self.up[port].inject(now, packet);
                    activity = true;
                }
            }

            // Down: arbitrate between the ISA and switch-core sets.
            if self.down[port].can_inject(now) {
                let isa_class =
                    self.isa_tx[port].next_sendable(&self.down_credits[port], self.flit_bytes);
                let core_class =
                    self.core_tx[port].next_sendable(&self.down_credits[port], self.flit_bytes);
                if let Some(source) = self.arbiters[port]
                    .choose(isa_class.is_some(), core_class.is_some())
                {
                    let (set, class) = match source {
                        TxSource::Isa => (&mut self.isa_tx[port], isa_class.unwrap()),
                        TxSource::Core => (&mut self.core_tx[port], core_class.unwrap()),
                    };
                    let packet = set.pop(class, self.flit_bytes);
                    let flits = packet.flits(self.flit_bytes);
                    self.down_credits[port]
                        .ledger_mut(packet.header.inc_flag, class)
                        .take(flits);
                    self.arbiters[port].granted(source, flits);
                    if let Some(t) = &mut self.trace {
                        t.event(now, port, "down", "inject", packet.header.kind.name());
                    }
                    self.down[port].inject(now, packet);
                    activity = true;
                }
            }
        }
        activity
    }

    /// True when no packet is in a channel or transmit queue anywhere.
    pub fn is_quiescent(&self) -> bool {
        self.up.iter().all(Channel::is_idle)
            && self.down.iter().all(Channel::is_idle)
            && self.isa_tx.iter().all(TxQueueSet::is_empty)
            && self.core_tx.iter().all(TxQueueSet::is_empty)
            && self.acc_tx.iter().all(TxQueueSet::is_empty)
            && self.switch_rx.iter().all(|p| p.isa.total_len() + p.core.total_len() == 0)
            && self.acc_rx.iter().all(|p| p.isa.total_len() + p.core.total_len() == 0)
    }

    /// Human-readable inventory of everything in flight, for deadlock
    /// reports.
    pub fn inventory(&self) -> String {
        let mut out = String::new();
        for port in 0..self.up.len() {
            let acc = port / self.num_switches;
            let sw = port % self.num_switches;
            let up_ch = self.up[port].in_flight_count();
            let down_ch = self.down[port].in_flight_count();
            let srx = self.switch_rx[port].isa.total_len() + self.switch_rx[port].core.total_len();
            let arx = self.acc_rx[port].isa.total_len() + self.acc_rx[port].core.total_len();
            let tx = self.isa_tx[port].total_packets()
                + self.core_tx[port].total_packets()
                + self.acc_tx[port].total_packets();
            if up_ch + down_ch + srx + arx + tx > 0 {
                out.push_str(&format!(
                    "port(acc={acc},sw={sw}): up_ch={up_ch} down_ch={down_ch} \
                     switch_rx={srx} acc_rx={arx} tx_queued={tx}; "
                ));
            }
        }
        if out.is_empty() {
            out.push_str("nothing in flight");
        }
        out
    }

    /// Direct peek used by the ISA ingest loop.
    pub fn switch_isa_queue_len(
        &self,
        switch: usize,
        accelerator: usize,
        class: QueueClass,
    ) -> usize {
        self.switch_rx[self.port(accelerator, switch)]
            .isa
            .queue(class)
            .len()
    }

    /// Delivered flit totals per direction (conservation checks).
    pub fn delivered_flit_totals(&self) -> (u64, u64) {
        (
            self.up.iter().map(|c| c.delivered_flits).sum(),
            self.down.iter().map(|c| c.delivered_flits).sum(),
        )
    }
}
