//! Receive-side queue sets and credit flow control.
//!
//! Every port keeps two independent sets of typed queues — one for
//! in-switch-accelerator traffic, one for regular forwarded traffic —
//! selected by the header's one-bit INC flag. Each class queue has a fixed
//! flit depth; the transmitting side holds a credit ledger per queue and
//! may only inject a packet whose flits fit, so occupancy can never exceed
//! depth. Consumed credits fly back across the link and become available
//! one link latency later.

use super::packet::{Packet, QueueClass, NUM_QUEUE_CLASSES};
use std::collections::VecDeque;

/// One typed receive queue with an occupancy bound in flits.
#[derive(Debug)]
pub struct RxQueue {
    items: VecDeque<Packet>,
    occupancy_flits: u64,
    depth_flits: u64,
    flit_bytes: u64,
}

impl RxQueue {
    fn new(depth_flits: u64, flit_bytes: u64) -> RxQueue {
        RxQueue {
            items: VecDeque::new(),
            occupancy_flits: 0,
            depth_flits,
            flit_bytes,
        }
    }

    pub fn push(&mut self, packet: Packet) {
        self.occupancy_flits += packet.flits(self.flit_bytes);
        assert!(
            self.occupancy_flits <= self.depth_flits,
            "queue overflow: {} > {} flits — credit accounting violated",
            self.occupancy_flits,
            self.depth_flits
        );
        self.items.push_back(packet);
    }

    /// Dequeue the head packet; returns it with its flit count so the
    /// owner can refund credits.
    pub fn pop(&mut self) -> Option<(Packet, u64)> {
        let packet = self.items.pop_front()?;
        let flits = packet.flits(self.flit_bytes);
        self.occupancy_flits -= flits;
        Some((packet, flits))
    }

    pub fn front(&self) -> Option<&Packet> {
        self.items.front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// The four class queues of one traffic set at one port.
#[derive(Debug)]
pub struct RxQueueSet {
    queues: [RxQueue; NUM_QUEUE_CLASSES],
}

impl RxQueueSet {
    pub fn new(depth_flits: u64, flit_bytes: u64) -> RxQueueSet {
        RxQueueSet {
            queues: std::array::from_fn(|_| RxQueue::new(depth_flits, flit_bytes)),
        }
    }

    pub fn queue(&self, class: QueueClass) -> &RxQueue {
        &self.queues[class as usize]
    }

    pub fn queue_mut(&mut self, class: QueueClass) -> &mut RxQueue {
        &mut self.queues[class as usize]
    }

    pub fn total_len(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }
}

/// A receiving port: ISA set plus switch-core set, demultiplexed by the
/// INC flag.
#[derive(Debug)]
pub struct PortRx {
    pub isa: RxQueueSet,
    pub core: RxQueueSet,
}

impl PortRx {
    pub fn new(depth_flits: u64, flit_bytes: u64) -> PortRx {
        PortRx {
            isa: RxQueueSet::new(depth_flits, flit_bytes),
            core: RxQueueSet::new(depth_flits, flit_bytes),
        }
    }

    /// Steer a delivered packet into its set and class queue. The INC bit
    /// alone picks the set, so ISA traffic is isolated from forwarded
    /// traffic without inspecting anything else.
    pub fn demux(&mut self, packet: Packet) {
        let class = QueueClass::of(packet.header.kind);
        let set = if packet.header.inc_flag {
            &mut self.isa
        } else {
            &mut self.core
        };
        set.queue_mut(class).push(packet);
    }
}

/// Transmit-side credit ledger for one remote queue.
#[derive(Debug)]
pub struct CreditLedger {
    available_flits: u64,
    /// Credits in flight back to the sender: (cycle available, flits).
    refunds: VecDeque<(u64, u64)>,
}

impl CreditLedger {
    pub fn new(depth_flits: u64) -> CreditLedger {
        CreditLedger {
            available_flits: depth_flits,
            refunds: VecDeque::new(),
        }
    }

    /// Absorb refunds that have completed their return flight.
    pub fn poll(&mut self, now: u64) {
        while let Some(&(at, flits)) = self.refunds.front() {
            if at <= now {
                self.available_flits += flits;
                self.refunds.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn can_take(&self, flits: u64) -> bool {
        self.available_flits >= flits
    }

    pub fn take(&mut self, flits: u64) {
        debug_assert!(self.can_take(flits));
        self.available_flits -= flits;
    }

    /// Schedule a refund that becomes visible at `cycle`.
    pub fn refund_at(&mut self, cycle: u64, flits: u64) {
        self.refunds.push_back((cycle, flits));
    }

    pub fn available(&self) -> u64 {
        self.available_flits
    }
}

/// Credit ledgers for both sets of one remote port.
#[derive(Debug)]
pub struct PortCredits {
    pub isa: [CreditLedger; NUM_QUEUE_CLASSES],
    pub core: [CreditLedger; NUM_QUEUE_CLASSES],
}

impl PortCredits {
    pub fn new(depth_flits: u64) -> PortCredits {
        PortCredits {
            isa: std::array::from_fn(|_| CreditLedger::new(depth_flits)),
            core: std::array::from_fn(|_| CreditLedger::new(depth_flits)),
        }
    }

    pub fn ledger_mut(&mut self, inc_flag: bool, class: QueueClass) -> &mut CreditLedger {
        if inc_flag {
            &mut self.isa[class as usize]
        } else {
            &mut self.core[class as usize]
        }
    }

    pub fn poll(&mut self, now: u64) {
        for ledger in self.isa.iter_mut().chain(self.core.iter_mut()) {
            ledger.poll(now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::packet::{NodeId, PacketHeader, PacketKind};

    fn packet(kind: PacketKind, inc_flag: bool, tag: u32) -> Packet {
        Packet::new(PacketHeader {
            kind,
            inc_flag,
            src: NodeId::Accelerator(0),
            dst: NodeId::Switch(0),
            address: 0,
            length: match kind {
                PacketKind::ReadResp | PacketKind::WriteReq | PacketKind::ScaleData => 128,
                _ => 0,
            },
            tag,
            imm: 0,
        })
    }

    #[test]
    fn demux_steers_by_inc_flag_only() {
        let mut port = PortRx::new(1024, 16);
        port.demux(packet(PacketKind::WriteReq, true, 1));
        port.demux(packet(PacketKind::WriteReq, false, 2));
        assert_eq!(port.isa.queue(QueueClass::WriteData).len(), 1);
        assert_eq!(port.core.queue(QueueClass::WriteData).len(), 1);
        assert_eq!(
            port.isa.queue(QueueClass::WriteData).front().unwrap().header.tag,
            1
        );
    }

    #[test]
    fn demux_preserves_per_queue_fifo_order() {
        // Replay a mixed stream and check each class queue sees its
        // packets in injection order.
        let mut port = PortRx::new(4096, 16);
        let kinds = [
            PacketKind::ReadResp,
            PacketKind::WriteResp,
            PacketKind::ReadReq,
            PacketKind::WriteReq,
            PacketKind::AtomicInc,
        ];
        let mut expected: Vec<Vec<u32>> = vec![Vec::new(); NUM_QUEUE_CLASSES * 2];
        for tag in 0..100u32 {
            let kind = kinds[tag as usize % kinds.len()];
            let inc = tag % 3 == 0;
            let class = QueueClass::of(kind);
            expected[class as usize * 2 + inc as usize].push(tag);
            port.demux(packet(kind, inc, tag));
        }
        for class in QueueClass::ALL {
            for (set, inc) in [(&mut port.core, 0usize), (&mut port.isa, 1)] {
                let want = &expected[class as usize * 2 + inc];
                let mut got = Vec::new();
                while let Some((p, _)) = set.queue_mut(class).pop() {
                    got.push(p.header.tag);
                }
                assert_eq!(&got, want, "class {:?} inc {}", class.name(), inc);
            }
        }
    }

    #[test]
    #[should_panic(expected = "queue overflow")]
    fn queue_overflow_is_fatal() {
        let mut q = RxQueue::new(8, 16);
        q.push(packet(PacketKind::ReadResp, true, 0)); // 9 flits > 8
    }

    #[test]
    fn credits_refund_after_flight() {
        let mut ledger = CreditLedger::new(10);
        assert!(ledger.can_take(9));
        ledger.take(9);
        assert!(!ledger.can_take(2));
        ledger.refund_at(100, 9);
        ledger.poll(99);
        assert!(!ledger.can_take(2));
        ledger.poll(100);
        assert!(ledger.can_take(10));
    }
}
