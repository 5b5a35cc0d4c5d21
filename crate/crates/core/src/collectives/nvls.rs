//! Accelerator-initiated multicast All-Reduce (the switch-reduction
//! baseline).
//!
//! Each switch hosts a [`NvlsEngine`] exposing two multicast primitives:
//!
//! * **read-reduce** — a single read request fans out to every accelerator;
//!   the engine reduces the responses (same balanced-tree arithmetic as the
//!   offloaded path) and returns one reduced response to the initiator.
//! * **write-replicate** — a single write request is replicated to every
//!   accelerator; their acknowledgments are aggregated into one.
//!
//! The accelerators drive the collective: after an all-to-root barrier,
//! each initiates read-reduce then write-replicate for its share of the
//! message, so every payload crosses accelerator links four times (up to
//! the switch and down to the initiator, then up again and down to every
//! accelerator) against the offloaded path's two. A second barrier closes
//! the collective — two synchronization rounds against the offloaded
//! path's one.

use std::collections::BTreeMap;

use crate::config::{ElementType, SimConfig};
use crate::endpoint::Endpoint;
use crate::engine::{Agent, SwitchDevice};
use crate::error::SimError;
use crate::fabric::packet::{NodeId, Packet, PacketHeader, PacketKind, QueueClass};
use crate::fabric::Fabric;
use crate::isa::reduce_typed_slices;

use super::{push_mark, Marks, BARRIER_BASE, DATA_BASE};

const BARRIER_IN_COUNT: u64 = BARRIER_BASE;
const BARRIER_IN_FLAG: u64 = BARRIER_BASE + 8;
const BARRIER_OUT_COUNT: u64 = BARRIER_BASE + 16;
const BARRIER_OUT_FLAG: u64 = BARRIER_BASE + 24;

/// A fanned-out read reduction in flight.
struct ReadOp {
    initiator: usize,
    init_tag: u32,
    address: u64,
    length: u32,
    remaining: usize,
    /// Per-source payloads, indexed by accelerator id (data-carrying runs).
    sources: Vec<Option<Box<[u8]>>>,
}

/// A replicated write awaiting aggregation of its acknowledgments.
struct WriteOp {
    initiator: usize,
    init_tag: u32,
    remaining: usize,
}

/// The per-switch multicast engine.
pub struct NvlsEngine {
    switch_id: usize,
    num_accelerators: usize,
    carry_data: bool,
    compute_latency_cycles: u64,
    flit_bytes: u64,
    element_type: ElementType,
    /// The reduction serializer emits one payload flit per cycle.
    serializer_free_at: u64,
    read_seq: u32,
    write_seq: u32,
    reads: BTreeMap<u32, ReadOp>,
    writes: BTreeMap<u32, WriteOp>,
    pending_tx: BTreeMap<u64, Vec<(usize, Packet)>>,
}

impl NvlsEngine {
    pub fn new(switch_id: usize, config: &SimConfig) -> NvlsEngine {
        NvlsEngine {
            switch_id,
            num_accelerators: config.num_accelerators,
            carry_data: config.carry_data,
            compute_latency_cycles: config.isa_compute_latency_regular_cycles,
            flit_bytes: config.flit_size_bytes,
            element_type: config.element_type,
            serializer_free_at: 0,
            read_seq: 0,
            write_seq: 0,
            reads: BTreeMap::new(),
            writes: BTreeMap::new(),
            pending_tx: BTreeMap::new(),
        }
    }

    pub fn is_idle(&self) -> bool {
        self.reads.is_empty() && self.writes.is_empty() && self.pending_tx.is_empty()
    }

    pub fn step(&mut self, now: u64, fabric: &mut Fabric) -> Result<bool, SimError> {
        let mut activity = self.flush_pending(now, fabric);
        for acc in 0..self.num_accelerators {
            for class in QueueClass::ALL {
                while let Some(packet) = fabric.switch_isa_pop(now, self.switch_id, acc, class) {
                    activity = true;
                    self.handle(now, acc, packet, fabric)?;
                }
            }
        }
        Ok(activity)
    }

    fn flush_pending(&mut self, now: u64, fabric: &mut Fabric) -> bool {
        let mut activity = false;
        while let Some((&cycle, _)) = self.pending_tx.first_key_value() {
            if cycle > now {
                break;
            }
            let (_, sends) = self.pending_tx.pop_first().unwrap();
            for (acc, packet) in sends {
                fabric.isa_enqueue(self.switch_id, acc, packet);
                activity = true;
            }
        }
        activity
    }

    fn handle(
        &mut self,
        now: u64,
        from_acc: usize,
        packet: Packet,
        fabric: &mut Fabric,
    ) -> Result<(), SimError> {
        let h = packet.header;
        match h.kind {
            PacketKind::ReadReq => {
                let tag = self.read_seq;
                self.read_seq = self.read_seq.wrapping_add(1);
                self.reads.insert(
                    tag,
                    ReadOp {
                        initiator: from_acc,
                        init_tag: h.tag,
                        address: h.address,
                        length: h.imm as u32,
                        remaining: self.num_accelerators,
                        sources: vec![None; self.num_accelerators],
                    },
                );
                for acc in 0..self.num_accelerators {
                    let fan = Packet::new(PacketHeader {
                        kind: PacketKind::ReadReq,
                        inc_flag: true,
                        src: NodeId::Switch(self.switch_id as u16),
                        dst: NodeId::Accelerator(acc as u16),
                        address: h.address,
                        length: 0,
                        tag,
                        imm: h.imm,
                    });
                    fabric.isa_enqueue(self.switch_id, acc, fan);
                }
            }
            PacketKind::ReadResp => {
                let op = self.reads.get_mut(&h.tag).ok_or(SimError::InvalidInstruction {
                    instruction_id: h.tag,
                    reason: "read response for unknown multicast read".into(),
                })?;
                debug_assert!(op.sources[from_acc].is_none());
                op.sources[from_acc] = packet.payload;
                op.remaining -= 1;
                if op.remaining == 0 {
                    let op = self.reads.remove(&h.tag).unwrap();
                    self.finish_read(now, op);
                }
            }
            PacketKind::WriteReq => {
                let tag = self.write_seq;
                self.write_seq = self.write_seq.wrapping_add(1);
                self.writes.insert(
                    tag,
                    WriteOp {
                        initiator: from_acc,
                        init_tag: h.tag,
                        remaining: self.num_accelerators,
                    },
                );
                for acc in 0..self.num_accelerators {
                    let replica = Packet::with_payload(
                        PacketHeader {
                            kind: PacketKind::WriteReq,
                            inc_flag: true,
                            src: NodeId::Switch(self.switch_id as u16),
                            dst: NodeId::Accelerator(acc as u16),
                            address: h.address,
                            length: h.length,
                            tag,
                            imm: 0,
                        },
                        packet.payload.clone(),
                    );
                    fabric.isa_enqueue(self.switch_id, acc, replica);
                }
            }
            PacketKind::WriteResp => {
                let op = self.writes.get_mut(&h.tag).ok_or(SimError::InvalidInstruction {
                    instruction_id: h.tag,
                    reason: "write ack for unknown replicated write".into(),
                })?;
                op.remaining -= 1;
                if op.remaining == 0 {
                    let op = self.writes.remove(&h.tag).unwrap();
                    let ack = Packet::new(PacketHeader {
                        kind: PacketKind::WriteResp,
                        inc_flag: true,
                        src: NodeId::Switch(self.switch_id as u16),
                        dst: NodeId::Accelerator(op.initiator as u16),
                        address: h.address,
                        length: 0,
                        tag: op.init_tag,
                        imm: 0,
                    });
                    fabric.isa_enqueue(self.switch_id, op.initiator, ack);
                }
            }
            other => {
                return Err(SimError::InvalidInstruction {
                    instruction_id: h.tag,
                    reason: format!("unexpected {} at the multicast engine", other.name()),
                })
            }
        }
        Ok(())
    }

    /// All sources answered: reduce, serialize, and schedule the response.
    fn finish_read(&mut self, now: u64, op: ReadOp) {
        let payload = if self.carry_data {
            let sources: Vec<&[u8]> = op
                .sources
                .iter()
                .map(|s| s.as_deref().expect("data-carrying run got a bare response"))
                .collect();
            Some(reduce_typed_slices(&sources, self.element_type).into_boxed_slice())
        } else {
            None
        };
        let busy = (op.length as u64).div_ceil(self.flit_bytes);
        let start = self.serializer_free_at.max(now);
        let finish = start + busy;
        self.serializer_free_at = finish;
        let ready = finish + self.compute_latency_cycles;
        let response = Packet::with_payload(
            PacketHeader {
                kind: PacketKind::ReadResp,
                inc_flag: true,
                src: NodeId::Switch(self.switch_id as u16),
                dst: NodeId::Accelerator(op.initiator as u16),
                address: op.address,
                length: op.length,
                tag: op.init_tag,
                imm: 0,
            },
            payload,
        );
        self.pending_tx
            .entry(ready)
            .or_default()
            .push((op.initiator, response));
    }
}

impl SwitchDevice for NvlsEngine {
    fn step(&mut self, now: u64, fabric: &mut Fabric) -> Result<bool, SimError> {
        NvlsEngine::step(self, now, fabric)
    }
    fn is_idle(&self) -> bool {
        NvlsEngine::is_idle(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NvlsPhase {
    WaitStart,
    BarrierIn,
    Data,
    BarrierOut,
    Done,
}

/// One accelerator's side of the multicast collective.
pub(crate) struct NvlsAgent {
    acc: usize,
    n: usize,
    num_switches: usize,
    offset_cycles: u64,
    poll_interval_cycles: u64,
    /// `(switch, address, length)` of every chunk this accelerator initiates.
    chunks: Vec<(usize, u64, u32)>,
    /// Outstanding multicast operations allowed in flight.
    window: usize,
    phase: NvlsPhase,
    next_chunk: usize,
    completed: usize,
    inflight: usize,
    root_flagged_in: bool,
    root_flagged_out: bool,
    marks: Marks,
}

impl NvlsAgent {
    pub(crate) fn new(
        acc: usize,
        offset_cycles: u64,
        config: &SimConfig,
        stripes: &[(u64, u64)],
        marks: Marks,
    ) -> NvlsAgent {
        let n = config.num_accelerators;
        let payload = config.max_payload_bytes;
        // Round-robin chunk ownership inside each switch stripe, then
        // interleave the per-switch lists so the in-flight window keeps
        // every switch plane busy instead of draining one stripe at a time.
        let mut per_switch: Vec<Vec<(usize, u64, u32)>> = vec![Vec::new(); stripes.len()];
        for (s, &(start, len)) in stripes.iter().enumerate() {
            let count = len.div_ceil(payload);
            for c in 0..count {
                if c as usize % n == acc {
                    let off = c * payload;
                    let chunk_len = (len - off).min(payload);
                    per_switch[s].push((s, DATA_BASE + start + off, chunk_len as u32));
                }
            }
        }
        let longest = per_switch.iter().map(Vec::len).max().unwrap_or(0);
        let mut chunks = Vec::with_capacity(per_switch.iter().map(Vec::len).sum());
        for i in 0..longest {
            for list in &per_switch {
                if let Some(&chunk) = list.get(i) {
                    chunks.push(chunk);
                }
            }
        }
        // Cover twice the per-link in-flight byte budget on every plane.
        let window = (2 * config.min_table_capacity_bytes() * config.num_switches as u64)
            .div_ceil(payload)
            .max(16) as usize;
        NvlsAgent {
            acc,
            n,
            num_switches: config.num_switches,
            offset_cycles,
            poll_interval_cycles: config.poll_interval_cycles.max(1),
            chunks,
            window,
            phase: NvlsPhase::WaitStart,
            next_chunk: 0,
            completed: 0,
            inflight: 0,
            root_flagged_in: false,
            root_flagged_out: false,
            marks,
        }
    }

    fn send_barrier_arrival(&self, fabric: &mut Fabric, count_addr: u64) {
        let packet = Packet::new(PacketHeader {
            kind: PacketKind::AtomicInc,
            inc_flag: false,
            src: NodeId::Accelerator(self.acc as u16),
            dst: NodeId::Accelerator(0),
            address: count_addr,
            length: 0,
            tag: 0,
            imm: 1,
        });
        fabric.acc_enqueue(self.acc, self.acc % self.num_switches, packet);
    }

    /// Root duty: when everyone has arrived, release the barrier by writing
    /// the flag cell of every accelerator (its own included) via the fabric.
    fn root_release(&self, fabric: &mut Fabric, flag_addr: u64) {
        for acc in 0..self.n {
            let packet = Packet::new(PacketHeader {
                kind: PacketKind::FlagWrite,
                inc_flag: false,
                src: NodeId::Accelerator(self.acc as u16),
                dst: NodeId::Accelerator(acc as u16),
                address: flag_addr,
                length: 0,
                tag: 0,
                imm: 1,
            });
            fabric.acc_enqueue(self.acc, acc % self.num_switches, packet);
        }
    }

    fn pump_data(
        &mut self,
        fabric: &mut Fabric,
        endpoints: &mut [Endpoint],
    ) -> Result<bool, SimError> {
        let mut activity = false;
        while self.next_chunk < self.chunks.len() && self.inflight < self.window {
            let (switch, address, length) = self.chunks[self.next_chunk];
            let request = Packet::new(PacketHeader {
                kind: PacketKind::ReadReq,
                inc_flag: true,
                src: NodeId::Accelerator(self.acc as u16),
                dst: NodeId::Switch(switch as u16),
                address,
                length: 0,
                tag: self.next_chunk as u32,
                imm: length as u64,
            });
            fabric.acc_enqueue(self.acc, switch, request);
            self.next_chunk += 1;
            self.inflight += 1;
            activity = true;
        }
        let inbox = std::mem::take(&mut endpoints[self.acc].inbox);
        for packet in inbox {
            activity = true;
            let h = packet.header;
            let chunk_idx = h.tag as usize;
            let (switch, address, length) = self.chunks[chunk_idx];
            match h.kind {
                PacketKind::ReadResp => {
                    // Relay the reduced chunk back as a replicated write.
                    let write = Packet::with_payload(
                        PacketHeader {
                            kind: PacketKind::WriteReq,
                            inc_flag: true,
                            src: NodeId::Accelerator(self.acc as u16),
                            dst: NodeId::Switch(switch as u16),
                            address,
                            length,
                            tag: h.tag,
                            imm: 0,
                        },
                        packet.payload,
                    );
                    fabric.acc_enqueue(self.acc, switch, write);
                }
                PacketKind::WriteResp => {
                    self.completed += 1;
                    self.inflight -= 1;
                }
                other => {
                    return Err(SimError::InvalidInstruction {
                        instruction_id: h.tag,
                        reason: format!("unexpected {} at a multicast initiator", other.name()),
                    })
                }
            }
        }
        Ok(activity)
    }
}

impl Agent for NvlsAgent {
    fn step(
        &mut self,
        now: u64,
        fabric: &mut Fabric,
        endpoints: &mut [Endpoint],
    ) -> Result<bool, SimError> {
        let poll = now % self.poll_interval_cycles == 0;
        match self.phase {
            NvlsPhase::WaitStart => {
                if now < self.offset_cycles {
                    return Ok(false);
                }
                self.send_barrier_arrival(fabric, BARRIER_IN_COUNT);
                self.phase = NvlsPhase::BarrierIn;
                Ok(true)
            }
            NvlsPhase::BarrierIn => {
                if !poll {
                    return Ok(false);
                }
                let ep = &endpoints[self.acc];
                if self.acc == 0
                    && !self.root_flagged_in
                    && ep.sync_read(BARRIER_IN_COUNT) == self.n as u64
                {
                    self.root_flagged_in = true;
                    self.root_release(fabric, BARRIER_IN_FLAG);
                    return Ok(true);
                }
                if ep.sync_read(BARRIER_IN_FLAG) != 1 {
                    return Ok(false);
                }
                push_mark(&self.marks, format!("barrier-in done acc{}", self.acc), now);
                self.phase = NvlsPhase::Data;
                self.pump_data(fabric, endpoints)?;
                Ok(true)
            }
            NvlsPhase::Data => {
                let activity = self.pump_data(fabric, endpoints)?;
                if self.completed == self.chunks.len() {
                    push_mark(&self.marks, format!("data done acc{}", self.acc), now);
                    self.send_barrier_arrival(fabric, BARRIER_OUT_COUNT);
                    self.phase = NvlsPhase::BarrierOut;
                    return Ok(true);
                }
                Ok(activity)
            }
            NvlsPhase::BarrierOut => {
                if !poll {
                    return Ok(false);
                }
                let ep = &endpoints[self.acc];
                if self.acc == 0
                    && !self.root_flagged_out
                    && ep.sync_read(BARRIER_OUT_COUNT) == self.n as u64
                {
                    self.root_flagged_out = true;
                    self.root_release(fabric, BARRIER_OUT_FLAG);
                    return Ok(true);
                }
                if ep.sync_read(BARRIER_OUT_FLAG) != 1 {
                    return Ok(false);
                }
                self.phase = NvlsPhase::Done;
                Ok(true)
            }
            NvlsPhase::Done => Ok(false),
        }
    }

    fn done(&self) -> bool {
        self.phase == NvlsPhase::Done
    }
}
