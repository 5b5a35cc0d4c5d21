//! Accelerator endpoints: memory, the DMA/protocol responder, and sync
//! cells.
//!
//! An endpoint owns one accelerator's memory and answers fabric traffic at
//! that accelerator's ports. Read requests become read responses after the
//! accelerator's response latency, handed to the network in an order
//! shuffled within a bounded reorder window (DMA engines do not guarantee
//! issue order). Writes are posted: payload is applied on delivery and the
//! acknowledgment leaves the same cycle. Flag writes and atomic increments
//! land in a dedicated sync-cell namespace that collective drivers poll.

use crate::config::SimConfig;
use crate::error::SimError;
use crate::fabric::packet::{NodeId, Packet, PacketHeader, PacketKind, QueueClass};
use crate::fabric::Fabric;
use crate::rng::{SimRng, Stream};
use std::collections::{BTreeMap, VecDeque};

/// Sparse byte-addressable memory backed by explicitly allocated regions.
#[derive(Debug, Default)]
pub struct Memory {
    regions: BTreeMap<u64, Vec<u8>>,
}

impl Memory {
    pub fn new() -> Memory {
        Memory::default()
    }

    /// Allocate a zero-filled region. Regions must not overlap.
    pub fn alloc(&mut self, base: u64, len: usize) {
        if let Some((prev_base, prev)) = self.regions.range(..=base).next_back() {
            assert!(
                prev_base + prev.len() as u64 <= base,
                "region at {base:#x} overlaps region at {prev_base:#x}"
            );
        }
        if let Some((next_base, _)) = self.regions.range(base..).next() {
            assert!(
                base + len as u64 <= *next_base,
                "region at {base:#x} overlaps region at {next_base:#x}"
            );
        }
        self.regions.insert(base, vec![0u8; len]);
    }

    fn locate(&self, accelerator: usize, addr: u64, len: usize) -> Result<(u64, usize), SimError> {
        let fault = |reason: &str| SimError::MemoryFault {
            accelerator,
            address: addr,
            reason: reason.to_string(),
        };
        let (base, buf) = self
            .regions
            .range(..=addr)
            .next_back()
            .ok_or_else(|| fault("no region at or below address"))?;
        let offset = (addr - base) as usize;
        if offset + len > buf.len() {
            return Err(fault("access crosses region end"));
        }
        Ok((*base, offset))
    }

    pub fn read(&self, accelerator: usize, addr: u64, len: usize) -> Result<&[u8], SimError> {
        let (base, offset) = self.locate(accelerator, addr, len)?;
        Ok(&self.regions[&base][offset..offset + len])
    }

    pub fn write(&mut self, accelerator: usize, addr: u64, data: &[u8]) -> Result<(), SimError> {
        let (base, offset) = self.locate(accelerator, addr, data.len())?;
        self.regions.get_mut(&base).unwrap()[offset..offset + data.len()].copy_from_slice(data);
        Ok(())
    }

    pub fn write_f16_slice(
        &mut self,
        accelerator: usize,
        addr: u64,
        values: &[half::f16],
    ) -> Result<(), SimError> {
        let mut bytes = Vec::with_capacity(values.len() * 2);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.write(accelerator, addr, &bytes)
    }

    pub fn read_f16_slice(
        &self,
        accelerator: usize,
        addr: u64,
        count: usize,
    ) -> Result<Vec<half::f16>, SimError> {
        let bytes = self.read(accelerator, addr, count * 2)?;
        Ok(bytes
            .chunks_exact(2)
            .map(|c| half::f16::from_le_bytes([c[0], c[1]]))
            .collect())
    }
}

#[derive(Debug)]
struct DmaRead {
    ready_cycle: u64,
    via_switch: usize,
    requester: NodeId,
    inc_flag: bool,
    address: u64,
    length: u32,
    tag: u32,
}

/// One accelerator's network-facing state.
#[derive(Debug)]
pub struct Endpoint {
    pub id: usize,
    num_switches: usize,
    response_latency_cycles: u64,
    reorder_window: usize,
    carry_data: bool,
    pub memory: Memory,
    sync_cells: BTreeMap<u64, u64>,
    dma_pending: VecDeque<DmaRead>,
    rng: SimRng,
    /// Responses (write acks, read data) awaiting the collective driver.
    pub inbox: Vec<Packet>,
    /// Cycle the most recent in-network-compute data write landed in
    /// memory. Collective reports end their data window here: once the
    /// last write is resident everywhere, everything after it (write acks
    /// flying home, completion flags) is synchronization.
    pub last_inc_write_cycle: Option<u64>,
}

impl Endpoint {
    pub fn new(id: usize, config: &SimConfig) -> Endpoint {
        let rng = SimRng::new(config.rng_seed, Stream::DmaReorder { accelerator: id });
        Endpoint {
            id,
            num_switches: config.num_switches,
            response_latency_cycles: config.response_latency_cycles(),
            reorder_window: config.reorder_window.max(1),
            carry_data: config.carry_data,
            memory: Memory::new(),
            sync_cells: BTreeMap::new(),
            dma_pending: VecDeque::new(),
            rng,
            inbox: Vec::new(),
            last_inc_write_cycle: None,
        }
    }

    pub fn sync_read(&self, addr: u64) -> u64 {
        self.sync_cells.get(&addr).copied().unwrap_or(0)
    }

    pub fn sync_reset(&mut self) {
        self.sync_cells.clear();
    }

    /// Drain this accelerator's receive queues and advance the DMA engine.
    pub fn step(&mut self, now: u64, fabric: &mut Fabric) -> Result<bool, SimError> {
        let mut activity = false;
        for sw in 0..self.num_switches {
            for isa_set in [true, false] {
                for class in QueueClass::ALL {
                    while let Some(packet) = fabric.acc_pop(now, self.id, sw, isa_set, class) {
                        activity = true;
                        self.handle(now, sw, packet, fabric)?;
                    }
                }
            }
        }
        activity |= self.pump_dma(now, fabric)?;
        Ok(activity)
    }

    fn handle(
        &mut self,
        now: u64,
        via_switch: usize,
        packet: Packet,
        fabric: &mut Fabric,
    ) -> Result<(), SimError> {
        let h = packet.header;
        match h.kind {
            PacketKind::ReadReq => {
                fabric.counters.acc_read_requests += 1;
                self.dma_pending.push_back(DmaRead {
                    ready_cycle: now + self.response_latency_cycles,
                    via_switch,
                    requester: h.src,
                    inc_flag: h.inc_flag,
                    address: h.address,
                    // A read request is a single flit; the requested byte
                    // count travels in the immediate field.
                    length: h.imm as u32,
                    tag: h.tag,
                });
            }
            PacketKind::WriteReq | PacketKind::ScaleData => {
                fabric.counters.acc_write_requests += 1;
                if h.inc_flag {
                    self.last_inc_write_cycle = Some(now);
                }
                if self.carry_data {
                    let payload = packet
                        .payload
                        .as_deref()
                        .expect("data-carrying run received a bare write");
                    self.memory.write(self.id, h.address, payload)?;
                }
                // Posted write: acknowledge as soon as the last flit lands.
                let ack = Packet::new(PacketHeader {
                    kind: PacketKind::WriteResp,
                    inc_flag: h.inc_flag,
                    src: NodeId::Accelerator(self.id as u16),
                    dst: h.src,
                    address: h.address,
                    length: 0,
                    tag: h.tag,
                    imm: 0,
                });
                fabric.acc_enqueue(self.id, via_switch, ack);
            }
            PacketKind::FlagWrite => {
                self.sync_cells.insert(h.address, h.imm);
            }
            PacketKind::AtomicInc => {
                *self.sync_cells.entry(h.address).or_insert(0) += h.imm.max(1);
            }
            PacketKind::WriteResp | PacketKind::ReadResp => {
                self.inbox.push(packet);
            }
        }
        Ok(())
    }

    /// Hand at most one ready read response per cycle to the fabric,
    /// choosing pseudo-randomly among the first `reorder_window` ready
    /// entries.
    fn pump_dma(&mut self, now: u64, fabric: &mut Fabric) -> Result<bool, SimError> {
        let ready = self
            .dma_pending
            .iter()
            .take_while(|r| r.ready_cycle <= now)
            .count();
        if ready == 0 {
            return Ok(false);
        }
        let window = ready.min(self.reorder_window);
        let pick = if window == 1 {
            0
        } else {
            self.rng.index(window)
        };
        let req = self.dma_pending.remove(pick).unwrap();
        let payload = if self.carry_data {
            Some(
                self.memory
                    .read(self.id, req.address, req.length as usize)?
                    .to_vec()
                    .into_boxed_slice(),
            )
        } else {
            None
        };
        let header = PacketHeader {
            kind: PacketKind::ReadResp,
            inc_flag: req.inc_flag,
            src: NodeId::Accelerator(self.id as u16),
            dst: req.requester,
            address: req.address,
            length: req.length,
            tag: req.tag,
            imm: 0,
        };
        fabric.acc_enqueue(self.id, req.via_switch, Packet::with_payload(header, payload));
        Ok(true)
    }

    /// True when no read request is waiting on the DMA engine.
    pub fn dma_idle(&self) -> bool {
        self.dma_pending.is_empty()
    }
}
