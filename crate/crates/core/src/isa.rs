//! The in-switch accelerator (ISA): barrier counters, wave tables, the
//! reduction pipeline, and completion flags.
//!
//! One ISA instance sits in every switch. A collective hands it an
//! [`IsaInstruction`] naming a memory segment replicated across the source
//! accelerators. Execution is fully offloaded:
//!
//! 1. **Barrier** — every participant announces readiness with one atomic
//!    increment; the instruction starts when the count reaches the
//!    participant count.
//! 2. **Fetch** — the segment is consumed in *waves*. For each wave the ISA
//!    allocates one entry in every source port's wave table and issues the
//!    wave's read requests (scale reads first for the quantized path, then
//!    data reads). The wave tables bound outstanding data so the table
//!    capacity, not the destination, regulates flow.
//! 3. **Reduce** — when a wave entry is complete at every source port it
//!    enters the reduce pipeline: a serializer that streams one output flit
//!    per cycle, followed by a fixed pipeline latency. The entry is released
//!    when the wave leaves the serializer, freeing the table slot for the
//!    next wave while results drain.
//! 4. **Write-back** — the reduced wave is written to every destination
//!    (data packets, plus scale packets on the quantized path); once every
//!    write is acknowledged the ISA posts one completion flag per
//!    destination.
//!
//! Reduction order is a balanced adjacent-pair tree over sources sorted by
//! accelerator id, accumulated in f32 — identical to the functional
//! reference in [`crate::quant`], so data-mode runs can be verified bit for
//! bit.

use crate::config::{ElementType, SimConfig};
use crate::error::SimError;
use crate::fabric::packet::{NodeId, Packet, PacketHeader, PacketKind, QueueClass};
use crate::fabric::Fabric;
use crate::quant::{self, QuantBlockSpec, QuantizedTensor};
use crate::units::div_ceil_u64;
use half::f16;
use std::collections::{BTreeMap, VecDeque};

/// One collective segment, fully offloaded to a switch.
#[derive(Debug, Clone)]
pub struct IsaInstruction {
    pub id: u32,
    /// Quantized (dequantize → reduce → requantize) path.
    pub inq: bool,
    /// Bit i set: accelerator i contributes an operand.
    pub src_mask: u64,
    /// Bit i set: accelerator i receives the result and a completion flag.
    pub dst_mask: u64,
    /// Segment base address, identical on every participant.
    pub data_addr: u64,
    /// Segment length in bytes (code bytes on the quantized path).
    pub length_bytes: u64,
    /// Scale array base address (quantized path only).
    pub scale_addr: u64,
    /// Completion flag address on every destination.
    pub flag_addr: u64,
    pub flag_value: u64,
}

impl IsaInstruction {
    pub fn validate(&self, config: &SimConfig) -> Result<(), SimError> {
        let err = |reason: String| {
            Err(SimError::InvalidInstruction {
                instruction_id: self.id,
                reason,
            })
        };
        if self.src_mask == 0 {
            return err("src_mask must name at least one source".into());
        }
        if self.dst_mask == 0 {
            return err("dst_mask must name at least one destination".into());
        }
        let width = config.num_accelerators as u32;
        let valid = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
        if self.src_mask & !valid != 0 || self.dst_mask & !valid != 0 {
            return err(format!(
                "mask names an accelerator outside 0..{width}"
            ));
        }
        if self.length_bytes == 0 {
            return err("length_bytes must be positive".into());
        }
        if self.inq {
            let block = QuantBlockSpec::default().block_elements as u64;
            if self.length_bytes % block != 0 {
                return err(format!(
                    "quantized length_bytes must be a multiple of the {block}-element block"
                ));
            }
            if config.wave_size_bytes % block != 0 {
                return err(format!(
                    "wave_size_bytes must be a multiple of the {block}-element block"
                ));
            }
        } else if self.length_bytes % config.element_type.size_bytes() != 0 {
            return err("length_bytes must be a multiple of the element size".into());
        }
        Ok(())
    }

    pub fn participants(&self) -> u32 {
        (self.src_mask | self.dst_mask).count_ones()
    }
}

/// Geometry of one instruction's waves: byte spans, packet slots, tags.
///
/// A wave-table tag is `entry * slots_per_entry + slot`; scale packets (if
/// any) occupy the low slots, data packets follow.
#[derive(Debug, Clone, Copy)]
struct WavePlan {
    length_bytes: u64,
    wave_bytes: u64,
    payload_bytes: u64,
    flit_bytes: u64,
    /// Scale bytes per full wave (0 on the regular path).
    scale_bytes_full: u64,
    block_elements: u64,
}

impl WavePlan {
    fn new(instr: &IsaInstruction, wave_bytes: u64, payload_bytes: u64, flit_bytes: u64) -> WavePlan {
        let block = QuantBlockSpec::default().block_elements as u64;
        let scale_bytes_full = if instr.inq {
            // One code byte per element, two scale bytes per block.
            (wave_bytes / block) * 2
        } else {
            0
        };
        WavePlan {
            length_bytes: instr.length_bytes,
            wave_bytes,
            payload_bytes,
            flit_bytes,
            scale_bytes_full,
            block_elements: block,
        }
    }

    fn num_waves(&self) -> u64 {
        div_ceil_u64(self.length_bytes, self.wave_bytes)
    }

    /// Data bytes in wave `w` (the last wave may be short).
    fn data_len(&self, w: u64) -> u64 {
        (self.length_bytes - w * self.wave_bytes).min(self.wave_bytes)
    }

    /// Scale bytes in wave `w`.
    fn scale_len(&self, w: u64) -> u64 {
        if self.scale_bytes_full == 0 {
            0
        } else {
            div_ceil_u64(self.data_len(w), self.block_elements) * 2
        }
    }

    fn data_slots(&self, w: u64) -> u32 {
        div_ceil_u64(self.data_len(w), self.payload_bytes) as u32
    }

    fn scale_slots(&self, w: u64) -> u32 {
        div_ceil_u64(self.scale_len(w), self.payload_bytes) as u32
    }

    fn slots(&self, w: u64) -> u32 {
        self.scale_slots(w) + self.data_slots(w)
    }

    /// Slot count of a full wave; the tag stride.
    fn slots_per_entry(&self) -> u32 {
        (div_ceil_u64(self.scale_bytes_full, self.payload_bytes)
            + div_ceil_u64(self.wave_bytes, self.payload_bytes)) as u32
    }

    /// Serializer occupancy: one cycle per output payload flit.
    fn serialize_cycles(&self, w: u64) -> u64 {
        div_ceil_u64(self.data_len(w), self.flit_bytes)
            + div_ceil_u64(self.scale_len(w), self.flit_bytes)
    }

    /// Byte offset of a data slot within the segment.
    fn data_offset(&self, w: u64, data_slot: u32) -> u64 {
        w * self.wave_bytes + data_slot as u64 * self.payload_bytes
    }

    /// Byte offset of a scale slot within the scale array.
    fn scale_offset(&self, w: u64, scale_slot: u32) -> u64 {
        (w * self.wave_bytes / self.block_elements) * 2 + scale_slot as u64 * self.payload_bytes
    }

    fn chunk_len(&self, total: u64, slot_in_kind: u32) -> u64 {
        (total - slot_in_kind as u64 * self.payload_bytes).min(self.payload_bytes)
    }
}

#[derive(Debug)]
struct Entry {
    wave: u64,
    /// Packets still missing, per source index.
    missing: Vec<u32>,
    /// Per-source wave data (data mode only).
    data: Vec<Vec<u8>>,
    /// Per-source wave scales (data mode, quantized path only).
    scales: Vec<Vec<u8>>,
    ready: bool,
}

#[derive(Debug)]
struct Active {
    instr: IsaInstruction,
    plan: WavePlan,
    /// Source accelerator ids, sorted — the reduction operand order.
    sources: Vec<usize>,
    dests: Vec<usize>,
    next_wave: u64,
    waves_reduced: u64,
    entries: Vec<Option<Entry>>,
    /// Entries complete at every port, in completion order.
    reduce_queue: VecDeque<usize>,
    serializer: Option<(usize, u64)>, // (entry index, finish cycle)
    writes_expected: u64,
    write_acks: u64,
    writes_scheduled: u64,
    activated_at: u64,
}

/// When an instruction started (barrier fired) and retired (flags posted).
#[derive(Debug, Clone, Copy)]
pub struct InstrTimeline {
    pub id: u32,
    pub activated_at: u64,
    pub retired_at: u64,
}

/// The per-switch in-switch accelerator.
#[derive(Debug)]
pub struct Isa {
    switch_id: usize,
    num_accelerators: usize,
    carry_data: bool,
    element_type: ElementType,
    compute_latency_regular: u64,
    compute_latency_inq: u64,
    waves_per_table: usize,
    wave_size_bytes: u64,
    max_payload_bytes: u64,
    flit_size_bytes: u64,
    quant_spec: QuantBlockSpec,
    queue: VecDeque<IsaInstruction>,
    barrier_counts: BTreeMap<u64, u64>,
    active: Option<Active>,
    /// Output packets waiting out the pipeline latency: cycle -> sends.
    pending_tx: BTreeMap<u64, Vec<(usize, Packet)>>,
    write_tag_seq: u32,
    pub timeline: Vec<InstrTimeline>,
}

impl Isa {
    pub fn new(switch_id: usize, config: &SimConfig) -> Isa {
        Isa {
            switch_id,
            num_accelerators: config.num_accelerators,
            carry_data: config.carry_data,
            element_type: config.element_type,
            compute_latency_regular: config.isa_compute_latency_regular_cycles,
            compute_latency_inq: config.isa_compute_latency_inq_cycles,
            waves_per_table: config.waves_per_table,
            wave_size_bytes: config.wave_size_bytes,
            max_payload_bytes: config.max_payload_bytes,
            flit_size_bytes: config.flit_size_bytes,
            quant_spec: QuantBlockSpec::default(),
            queue: VecDeque::new(),
            barrier_counts: BTreeMap::new(),
            active: None,
            pending_tx: BTreeMap::new(),
            write_tag_seq: 0,
            timeline: Vec::new(),
        }
    }

    /// Enqueue a validated instruction.
    pub fn push_instruction(
        &mut self,
        instr: IsaInstruction,
        config: &SimConfig,
    ) -> Result<(), SimError> {
        instr.validate(config)?;
        self.queue.push_back(instr);
        Ok(())
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.active.is_none() && self.pending_tx.is_empty()
    }

    /// One simulation cycle. Call after `fabric.deliver(now)`.
    pub fn step(&mut self, now: u64, fabric: &mut Fabric) -> Result<bool, SimError> {
        let mut activity = false;
        activity |= self.flush_pending(now, fabric);
        activity |= self.ingest(now, fabric)?;
        activity |= self.advance_serializer(now);
        activity |= self.maybe_activate(now);
        activity |= self.issue_wave(fabric);
        activity |= self.maybe_complete(now, fabric);
        Ok(activity)
    }

    /// Hand delayed output packets whose time has come to the fabric.
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

    fn ingest(&mut self, now: u64, fabric: &mut Fabric) -> Result<bool, SimError> {
        let mut activity = false;
        for acc in 0..self.num_accelerators {
            for class in QueueClass::ALL {
                while let Some(packet) = fabric.switch_isa_pop(now, self.switch_id, acc, class) {
                    activity = true;
                    self.handle(acc, packet)?;
                }
            }
        }
        Ok(activity)
    }

    fn handle(&mut self, from_acc: usize, packet: Packet) -> Result<(), SimError> {
        let h = packet.header;
        match h.kind {
            PacketKind::AtomicInc => {
                *self.barrier_counts.entry(h.address).or_insert(0) += h.imm.max(1);
            }
            PacketKind::WriteResp => {
                let active = self.active.as_mut().ok_or_else(|| {
                    SimError::InvalidInstruction {
                        instruction_id: h.tag,
                        reason: "write ack with no active instruction".into(),
                    }
                })?;
                active.write_acks += 1;
            }
            PacketKind::ReadResp => self.ingest_read_resp(from_acc, packet)?,
            other => {
                return Err(SimError::InvalidInstruction {
                    instruction_id: h.tag,
                    reason: format!("unexpected {} at the ISA", other.name()),
                })
            }
        }
        Ok(())
    }

    fn ingest_read_resp(&mut self, from_acc: usize, packet: Packet) -> Result<(), SimError> {
        let carry_data = self.carry_data;
        let active = self.active.as_mut().ok_or_else(|| SimError::InvalidInstruction {
            instruction_id: packet.header.tag,
            reason: "read response with no active instruction".into(),
        })?;
        let plan = active.plan;
        let spe = plan.slots_per_entry();
        let tag = packet.header.tag;
        let entry_idx = (tag / spe) as usize;
        let slot = tag % spe;
        let src_idx = active
            .sources
            .binary_search(&from_acc)
            .map_err(|_| SimError::InvalidInstruction {
                instruction_id: active.instr.id,
                reason: format!("read response from non-source accelerator {from_acc}"),
            })?;
        let entry = active.entries[entry_idx]
            .as_mut()
            .ok_or_else(|| SimError::InvalidInstruction {
                instruction_id: active.instr.id,
                reason: format!("read response for free wave entry {entry_idx}"),
            })?;
        let w = entry.wave;
        let scale_slots = plan.scale_slots(w);
        if carry_data {
            let payload = packet
                .payload
                .as_deref()
                .expect("data-carrying run received a bare read response");
            if slot < scale_slots {
                let off = (slot as u64 * plan.payload_bytes) as usize;
                entry.scales[src_idx][off..off + payload.len()].copy_from_slice(payload);
            } else {
                let off = ((slot - scale_slots) as u64 * plan.payload_bytes) as usize;
                entry.data[src_idx][off..off + payload.len()].copy_from_slice(payload);
            }
        }
        entry.missing[src_idx] -= 1;
        if !entry.ready && entry.missing.iter().all(|&m| m == 0) {
            entry.ready = true;
            active.reduce_queue.push_back(entry_idx);
        }
        Ok(())
    }

    /// Pop finished waves out of the serializer (scheduling their output
    /// burst), then start the next queued wave.
    fn advance_serializer(&mut self, now: u64) -> bool {
        let Some(active) = self.active.as_mut() else {
            return false;
        };
        let mut activity = false;
        loop {
            if let Some((entry_idx, finish)) = active.serializer {
                if finish > now {
                    break;
                }
                active.serializer = None;
                activity = true;
                let entry = active.entries[entry_idx].take().expect("serializing a free entry");
                active.waves_reduced += 1;
                let latency = if active.instr.inq {
                    self.compute_latency_inq
                } else {
                    self.compute_latency_regular
                };
                let (data_out, scales_out) = if self.carry_data {
                    reduce_entry(&entry, &active.instr, self.element_type, self.quant_spec)
                } else {
                    (Vec::new(), Vec::new())
                };
                schedule_writeback(
                    active,
                    entry.wave,
                    data_out,
                    scales_out,
                    finish + latency,
                    self.switch_id,
                    &mut self.pending_tx,
                    &mut self.write_tag_seq,
                    self.carry_data,
                );
            }
            match active.reduce_queue.pop_front() {
                Some(entry_idx) => {
                    let wave = active.entries[entry_idx].as_ref().unwrap().wave;
                    let busy = active.plan.serialize_cycles(wave);
                    active.serializer = Some((entry_idx, now + busy));
                    activity = true;
                    // A zero-length wave cannot exist (length > 0), so the
                    // finish cycle is strictly in the future.
                }
                None => break,
            }
        }
        activity
    }

    /// Start the next instruction once its barrier has fired.
    fn maybe_activate(&mut self, now: u64) -> bool {
        if self.active.is_some() {
            return false;
        }
        let Some(front) = self.queue.front() else {
            return false;
        };
        let arrived = self
            .barrier_counts
            .get(&(front.id as u64))
            .copied()
            .unwrap_or(0);
        if arrived < front.participants() as u64 {
            return false;
        }
        let instr = self.queue.pop_front().unwrap();
        self.barrier_counts.remove(&(instr.id as u64));
        let plan = WavePlan::new(
            &instr,
            self.wave_size_bytes,
            self.max_payload_bytes,
            self.flit_size_bytes,
        );
        let sources: Vec<usize> = mask_bits(instr.src_mask);
        let dests: Vec<usize> = mask_bits(instr.dst_mask);
        let writes_per_wave_total: u64 = (0..plan.num_waves())
            .map(|w| plan.slots(w) as u64)
            .sum();
        self.active = Some(Active {
            writes_expected: writes_per_wave_total * dests.len() as u64,
            instr,
            plan,
            sources,
            dests,
            next_wave: 0,
            waves_reduced: 0,
            entries: (0..self.waves_per_table).map(|_| None).collect(),
            reduce_queue: VecDeque::new(),
            serializer: None,
            write_acks: 0,
            writes_scheduled: 0,
            activated_at: now,
        });
        true
    }

    /// Allocate a table entry and issue one wave's reads (scales first).
    fn issue_wave(&mut self, fabric: &mut Fabric) -> bool {
        let Some(active) = self.active.as_mut() else {
            return false;
        };
        if active.next_wave >= active.plan.num_waves() {
            return false;
        }
        let Some(entry_idx) = active.entries.iter().position(Option::is_none) else {
            return false;
        };
        let w = active.next_wave;
        active.next_wave += 1;
        let plan = active.plan;
        let scale_slots = plan.scale_slots(w);
        let data_slots = plan.data_slots(w);
        let slots = plan.slots(w);
        let num_sources = active.sources.len();
        active.entries[entry_idx] = Some(Entry {
            wave: w,
            missing: vec![slots; num_sources],
            data: if self.carry_data {
                vec![vec![0u8; plan.data_len(w) as usize]; num_sources]
            } else {
                Vec::new()
            },
            // scale_len is 0 on the regular path, giving empty buffers.
            scales: if self.carry_data {
                vec![vec![0u8; plan.scale_len(w) as usize]; num_sources]
            } else {
                Vec::new()
            },
            ready: false,
        });
        let spe = plan.slots_per_entry();
        for &acc in &active.sources {
            for slot in 0..slots {
                let (kind_addr, len) = if slot < scale_slots {
                    (
                        active.instr.scale_addr + plan.scale_offset(w, slot),
                        plan.chunk_len(plan.scale_len(w), slot),
                    )
                } else {
                    let ds = slot - scale_slots;
                    debug_assert!(ds < data_slots);
                    (
                        active.instr.data_addr + plan.data_offset(w, ds),
                        plan.chunk_len(plan.data_len(w), ds),
                    )
                };
                let packet = Packet::new(PacketHeader {
                    kind: PacketKind::ReadReq,
                    inc_flag: true,
                    src: NodeId::Switch(self.switch_id as u16),
                    dst: NodeId::Accelerator(acc as u16),
                    address: kind_addr,
                    length: 0,
                    tag: entry_idx as u32 * spe + slot,
                    imm: len,
                });
                fabric.isa_enqueue(self.switch_id, acc, packet);
            }
        }
        true
    }

    /// When the last wave is reduced, every write scheduled and every ack
    /// home, post the completion flags and retire the instruction.
    fn maybe_complete(&mut self, now: u64, fabric: &mut Fabric) -> bool {
        let Some(active) = self.active.as_ref() else {
            return false;
        };
        let done = active.waves_reduced == active.plan.num_waves()
            && active.writes_scheduled == active.writes_expected
            && active.write_acks == active.writes_expected
            && self.pending_tx.is_empty();
        if !done {
            return false;
        }
        let active = self.active.take().unwrap();
        for &acc in &active.dests {
            let packet = Packet::new(PacketHeader {
                kind: PacketKind::FlagWrite,
                inc_flag: true,
                src: NodeId::Switch(self.switch_id as u16),
                dst: NodeId::Accelerator(acc as u16),
                address: active.instr.flag_addr,
                length: 0,
                tag: active.instr.id,
                imm: active.instr.flag_value,
            });
            fabric.isa_enqueue(self.switch_id, acc, packet);
        }
        self.timeline.push(InstrTimeline {
            id: active.instr.id,
            activated_at: active.activated_at,
            retired_at: now,
        });
        true
    }
}

fn mask_bits(mask: u64) -> Vec<usize> {
    (0..64).filter(|i| mask & (1 << i) != 0).collect()
}

/// Reduce one complete wave entry into output bytes.
fn reduce_entry(
    entry: &Entry,
    instr: &IsaInstruction,
    element_type: ElementType,
    spec: QuantBlockSpec,
) -> (Vec<u8>, Vec<u8>) {
    if instr.inq {
        let elems = entry.data[0].len();
        let sources: Vec<Vec<f32>> = entry
            .data
            .iter()
            .zip(&entry.scales)
            .map(|(codes, scales)| {
                quant::dequantize(&QuantizedTensor::from_raw(spec, elems, codes, scales))
            })
            .collect();
        let mut reduced = vec![0.0f32; elems];
        let mut operands = vec![0.0f32; sources.len()];
        for (e, r) in reduced.iter_mut().enumerate() {
            for (s, src) in sources.iter().enumerate() {
                operands[s] = src[e];
            }
            *r = quant::tree_sum(&operands);
        }
        let out = quant::quantize(&reduced, spec);
        (out.code_bytes(), out.scale_bytes())
    } else {
        let sources: Vec<&[u8]> = entry.data.iter().map(Vec::as_slice).collect();
        (reduce_typed_slices(&sources, element_type), Vec::new())
    }
}

/// Element-wise balanced-tree reduction of same-length raw buffers, with a
/// single rounding to the element type. Shared by every switch-side reducer
/// so the arithmetic is identical across data paths.
pub(crate) fn reduce_typed_slices(sources: &[&[u8]], element_type: ElementType) -> Vec<u8> {
    let elem_bytes = element_type.size_bytes() as usize;
    let n = sources[0].len() / elem_bytes;
    let mut out = vec![0u8; sources[0].len()];
    let mut operands = vec![0.0f32; sources.len()];
    for e in 0..n {
        let off = e * elem_bytes;
        for (s, src) in sources.iter().enumerate() {
            operands[s] = match element_type {
                ElementType::F16 => f32::from(f16::from_le_bytes([src[off], src[off + 1]])),
                ElementType::F32 => {
                    f32::from_le_bytes([src[off], src[off + 1], src[off + 2], src[off + 3]])
                }
            };
        }
        let sum = quant::tree_sum(&operands);
        match element_type {
            ElementType::F16 => {
                out[off..off + 2].copy_from_slice(&f16::from_f32(sum).to_le_bytes())
            }
            ElementType::F32 => out[off..off + 4].copy_from_slice(&sum.to_le_bytes()),
        }
    }
    out
}

/// Queue one reduced wave's write burst for every destination.
#[allow(clippy::too_many_arguments)]
fn schedule_writeback(
    active: &mut Active,
    wave: u64,
    data_out: Vec<u8>,
    scales_out: Vec<u8>,
    at_cycle: u64,
    switch_id: usize,
    pending_tx: &mut BTreeMap<u64, Vec<(usize, Packet)>>,
    write_tag_seq: &mut u32,
    carry_data: bool,
) {
    let plan = active.plan;
    let sends = pending_tx.entry(at_cycle).or_default();
    for &acc in &active.dests {
        for slot in 0..plan.scale_slots(wave) {
            let len = plan.chunk_len(plan.scale_len(wave), slot);
            let payload =
                carry_payload(carry_data, &scales_out, slot as u64 * plan.payload_bytes, len);
            let packet = Packet::with_payload(
                PacketHeader {
                    kind: PacketKind::ScaleData,
                    inc_flag: true,
                    src: NodeId::Switch(switch_id as u16),
                    dst: NodeId::Accelerator(acc as u16),
                    address: active.instr.scale_addr + plan.scale_offset(wave, slot),
                    length: len as u32,
                    tag: *write_tag_seq,
                    imm: 0,
                },
                payload,
            );
            *write_tag_seq = write_tag_seq.wrapping_add(1);
            sends.push((acc, packet));
            active.writes_scheduled += 1;
        }
        for slot in 0..plan.data_slots(wave) {
            let len = plan.chunk_len(plan.data_len(wave), slot);
            let payload =
                carry_payload(carry_data, &data_out, slot as u64 * plan.payload_bytes, len);
            let packet = Packet::with_payload(
                PacketHeader {
                    kind: PacketKind::WriteReq,
                    inc_flag: true,
                    src: NodeId::Switch(switch_id as u16),
                    dst: NodeId::Accelerator(acc as u16),
                    address: active.instr.data_addr + plan.data_offset(wave, slot),
                    length: len as u32,
                    tag: *write_tag_seq,
                    imm: 0,
                },
                payload,
            );
            *write_tag_seq = write_tag_seq.wrapping_add(1);
            sends.push((acc, packet));
            active.writes_scheduled += 1;
        }
    }
}

fn carry_payload(carry: bool, buf: &[u8], offset: u64, len: u64) -> Option<Box<[u8]>> {
    if carry {
        let o = offset as usize;
        Some(buf[o..o + len as usize].to_vec().into_boxed_slice())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::Endpoint;

    fn base_instr() -> IsaInstruction {
        IsaInstruction {
            id: 7,
            inq: false,
            src_mask: 0b1111,
            dst_mask: 0b1111,
            data_addr: 0x1000,
            length_bytes: 1024,
            scale_addr: 0x8000,
            flag_addr: 0xF000,
            flag_value: 1,
        }
    }

    #[test]
    fn instruction_validation() {
        let cfg = SimConfig::switch_class_8();
        base_instr().validate(&cfg).unwrap();

        let mut i = base_instr();
        i.src_mask = 0;
        assert!(i.validate(&cfg).is_err());

        let mut i = base_instr();
        i.src_mask = 1 << 20; // only 8 accelerators exist
        assert!(i.validate(&cfg).is_err());

        let mut i = base_instr();
        i.length_bytes = 3; // not an f16 multiple
        assert!(i.validate(&cfg).is_err());

        let mut i = base_instr();
        i.inq = true;
        i.length_bytes = 96; // not a block multiple
        assert!(i.validate(&cfg).is_err());
        i.length_bytes = 128;
        i.validate(&cfg).unwrap();
    }

    #[test]
    fn wave_plan_geometry() {
        let cfg = SimConfig::switch_class_8();
        let mut instr = base_instr();
        instr.length_bytes = 10 * 1024;
        let plan = WavePlan::new(&instr, cfg.wave_size_bytes, cfg.max_payload_bytes, cfg.flit_size_bytes);
        assert_eq!(plan.num_waves(), 3);
        assert_eq!(plan.data_len(0), 4096);
        assert_eq!(plan.data_len(2), 2048);
        assert_eq!(plan.data_slots(0), 32);
        assert_eq!(plan.data_slots(2), 16);
        assert_eq!(plan.scale_slots(0), 0);
        assert_eq!(plan.slots_per_entry(), 32);
        assert_eq!(plan.serialize_cycles(0), 256);

        instr.inq = true;
        let plan = WavePlan::new(&instr, cfg.wave_size_bytes, cfg.max_payload_bytes, cfg.flit_size_bytes);
        // 4096 code bytes -> 64 blocks -> 128 scale bytes -> 1 slot.
        assert_eq!(plan.scale_len(0), 128);
        assert_eq!(plan.scale_slots(0), 1);
        assert_eq!(plan.slots_per_entry(), 33);
        assert_eq!(plan.serialize_cycles(0), 256 + 8);
        // Partial last wave: 2048 codes -> 32 blocks -> 64 scale bytes.
        assert_eq!(plan.scale_len(2), 64);
        assert_eq!(plan.scale_slots(2), 1);
        // Scale offsets are contiguous across waves.
        assert_eq!(plan.scale_offset(1, 0), 128);
    }

    fn seeded_f16(acc: usize, e: usize) -> f16 {
        // Quarter-integer grid values are exact in f16 and keep every
        // tree-sum partial result exact as well.
        f16::from_f32(((acc * 131 + e * 17) % 61) as f32 * 0.25 - 7.0)
    }

    fn run_allreduce(carry_data: bool) -> (u64, Vec<Vec<u8>>, crate::report::TrafficCounters) {
        let mut cfg = SimConfig::switch_class_8();
        cfg.num_accelerators = 4;
        cfg.num_switches = 1;
        cfg.carry_data = carry_data;
        let instr = base_instr();
        let n = cfg.num_accelerators;

        let mut fabric = Fabric::new(&cfg);
        let mut endpoints: Vec<Endpoint> = (0..n).map(|a| Endpoint::new(a, &cfg)).collect();
        let mut isa = Isa::new(0, &cfg);
        isa.push_instruction(instr.clone(), &cfg).unwrap();

        for (a, ep) in endpoints.iter_mut().enumerate() {
            ep.memory.alloc(instr.data_addr, instr.length_bytes as usize);
            if carry_data {
                let values: Vec<f16> = (0..instr.length_bytes as usize / 2)
                    .map(|e| seeded_f16(a, e))
                    .collect();
                ep.memory
                    .write_f16_slice(a, instr.data_addr, &values)
                    .unwrap();
            }
            // Arrival announcement: one atomic increment to the switch.
            fabric.acc_enqueue(
                a,
                0,
                Packet::new(PacketHeader {
                    kind: PacketKind::AtomicInc,
                    inc_flag: true,
                    src: NodeId::Accelerator(a as u16),
                    dst: NodeId::Switch(0),
                    address: instr.id as u64,
                    length: 0,
                    tag: 0,
                    imm: 1,
                }),
            );
        }

        let mut finish = None;
        for now in 0..500_000u64 {
            fabric.deliver(now);
            for ep in endpoints.iter_mut() {
                ep.step(now, &mut fabric).unwrap();
            }
            isa.step(now, &mut fabric).unwrap();
            fabric.forward(now);
            fabric.pump(now);
            if endpoints.iter().all(|ep| ep.sync_read(instr.flag_addr) == instr.flag_value) {
                finish = Some(now);
                break;
            }
        }
        let finish = finish.expect("all-reduce did not complete");
        assert!(isa.is_idle());
        let segments = endpoints
            .iter()
            .map(|ep| {
                if carry_data {
                    ep.memory
                        .read(0, instr.data_addr, instr.length_bytes as usize)
                        .unwrap()
                        .to_vec()
                } else {
                    Vec::new()
                }
            })
            .collect();
        (finish, segments, fabric.counters.clone())
    }

    #[test]
    fn offloaded_allreduce_matches_tree_oracle() {
        let (_, segments, counters) = run_allreduce(true);
        let elems = 512;
        let mut expected = Vec::with_capacity(elems * 2);
        for e in 0..elems {
            let operands: Vec<f32> = (0..4).map(|a| f32::from(seeded_f16(a, e))).collect();
            expected.extend_from_slice(&f16::from_f32(quant::tree_sum(&operands)).to_le_bytes());
        }
        for seg in &segments {
            assert_eq!(seg, &expected);
        }
        // Two data hops per byte: N * message up (read responses) plus
        // N * message down (result writes).
        assert_eq!(counters.payload_link_crossing_bytes, 2 * 4 * 1024);
        // One sync hop each way per accelerator: arrivals up, flags down.
        assert_eq!(counters.sync_messages, 8);
        assert_eq!(counters.sync_link_crossings, 8);
        assert_eq!(counters.acc_read_requests, 4 * 8);
        assert_eq!(counters.acc_write_requests, 4 * 8);
    }

    #[test]
    fn timing_is_independent_of_payload_carrying() {
        let (t_data, _, _) = run_allreduce(true);
        let (t_bare, _, _) = run_allreduce(false);
        assert_eq!(t_data, t_bare);
    }
}
