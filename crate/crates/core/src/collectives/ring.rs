//! Accelerator-driven ring All-Reduce over the same fabric.
//!
//! The classic `2(N-1)`-step ring: `N-1` reduce-scatter steps in which each
//! accelerator sends one chunk to its downstream neighbor and folds the
//! chunk it receives, then `N-1` all-gather steps that circulate the reduced
//! chunks verbatim. Chunk writes are striped packet-by-packet across every
//! switch, so the ring gets the full multi-plane injection bandwidth.
//!
//! Each step is fenced: the sender waits for every write acknowledgment
//! (its packets traverse different switches, so delivery order across
//! planes is not guaranteed), then posts a per-step flag to the neighbor's
//! sync cell. The receiver consumes a staging slot only after seeing the
//! flag. Neighbor data is folded with one f16 rounding per hop, which is
//! exactly the arithmetic [`super::oracle::ring_reduce_f16`] models.

use half::f16;

use crate::config::SimConfig;
use crate::endpoint::Endpoint;
use crate::engine::Agent;
use crate::error::SimError;
use crate::fabric::packet::{NodeId, Packet, PacketHeader, PacketKind};
use crate::fabric::Fabric;

use super::{DATA_BASE, FLAG_BASE, STAGING_BASE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RingPhase {
    WaitStart,
    /// Waiting for the previous step's flag before folding its staging slot.
    WaitFlag,
    Send,
    /// All sends done; waiting to fold the final incoming chunk.
    FinalWait,
    Done,
}

pub(crate) struct RingAgent {
    acc: usize,
    n: usize,
    num_switches: usize,
    offset_cycles: u64,
    poll_interval_cycles: u64,
    chunk_bytes: u64,
    payload_bytes: u64,
    packets_per_chunk: u64,
    /// Un-acked write budget; sized to keep every plane's round trip full.
    window_packets: u64,
    carry_data: bool,
    total_steps: u64,
    step_idx: u64,
    phase: RingPhase,
    send_cursor: u64,
    acked: u64,
}

impl RingAgent {
    pub(crate) fn new(
        acc: usize,
        offset_cycles: u64,
        config: &SimConfig,
        message_bytes: u64,
    ) -> RingAgent {
        let n = config.num_accelerators;
        let chunk_bytes = message_bytes / n as u64;
        let payload_bytes = config.max_payload_bytes;
        let packets_per_chunk = chunk_bytes.div_ceil(payload_bytes);
        assert!(packets_per_chunk < 1 << 20, "step tag space exceeded");
        let packet_flits = config.packet_flits(payload_bytes);
        let round_trip = 2 * config.link_latency_cycles() + 2 * packet_flits;
        let per_link = round_trip.div_ceil(packet_flits) + 1;
        let window_packets = (2 * config.num_switches as u64 * per_link).max(64);
        let total_steps = 2 * (n as u64 - 1);
        RingAgent {
            acc,
            n,
            num_switches: config.num_switches,
            offset_cycles,
            poll_interval_cycles: config.poll_interval_cycles.max(1),
            chunk_bytes,
            payload_bytes,
            packets_per_chunk,
            window_packets,
            carry_data: config.carry_data,
            total_steps,
            step_idx: 0,
            phase: if total_steps == 0 {
                RingPhase::Done
            } else {
                RingPhase::WaitStart
            },
            send_cursor: 0,
            acked: 0,
        }
    }

    /// Chunk this accelerator transmits at global step `g`.
    fn send_chunk(&self, g: u64) -> u64 {
        let n = self.n as u64;
        if g < n - 1 {
            (self.acc as u64 + n - g % n) % n
        } else {
            let k = g - (n - 1);
            (self.acc as u64 + 1 + n - k % n) % n
        }
    }

    /// Chunk this accelerator receives at global step `g`, and whether the
    /// step folds (reduce-scatter) or copies (all-gather).
    fn recv_chunk(&self, g: u64) -> (u64, bool) {
        let n = self.n as u64;
        if g < n - 1 {
            ((self.acc as u64 + n - 1 - g % n + n) % n, true)
        } else {
            let k = g - (n - 1);
            ((self.acc as u64 + n - k % n) % n, false)
        }
    }

    /// Fold (or copy) staging slot `g` into the local message buffer.
    fn consume_staging(&self, g: u64, endpoints: &mut [Endpoint]) -> Result<(), SimError> {
        if !self.carry_data {
            return Ok(());
        }
        let (chunk, fold) = self.recv_chunk(g);
        let elems = (self.chunk_bytes / 2) as usize;
        let staged_addr = STAGING_BASE + g * self.chunk_bytes;
        let data_addr = DATA_BASE + chunk * self.chunk_bytes;
        let memory = &mut endpoints[self.acc].memory;
        let staged = memory.read_f16_slice(self.acc, staged_addr, elems)?;
        if fold {
            let mut local = memory.read_f16_slice(self.acc, data_addr, elems)?;
            for (l, s) in local.iter_mut().zip(&staged) {
                *l = f16::from_f32(s.to_f32() + l.to_f32());
            }
            memory.write_f16_slice(self.acc, data_addr, &local)?;
        } else {
            memory.write_f16_slice(self.acc, data_addr, &staged)?;
        }
        Ok(())
    }

    fn drain_acks(&mut self, endpoints: &mut [Endpoint]) -> bool {
        let inbox = std::mem::take(&mut endpoints[self.acc].inbox);
        let mut any = false;
        for packet in inbox {
            debug_assert_eq!(packet.header.kind, PacketKind::WriteResp);
            debug_assert_eq!(packet.header.tag >> 20, self.step_idx as u32);
            self.acked += 1;
            any = true;
        }
        any
    }

    /// Issue chunk writes up to the ack window.
    fn pump_sends(&mut self, fabric: &mut Fabric, endpoints: &[Endpoint]) -> Result<bool, SimError> {
        let g = self.step_idx;
        let chunk = self.send_chunk(g);
        let dest = (self.acc + 1) % self.n;
        let mut any = false;
        while self.send_cursor < self.packets_per_chunk
            && self.send_cursor - self.acked < self.window_packets
        {
            let p = self.send_cursor;
            let off = p * self.payload_bytes;
            let len = (self.chunk_bytes - off).min(self.payload_bytes);
            let switch = ((p + g) as usize) % self.num_switches;
            let payload = if self.carry_data {
                let src_addr = DATA_BASE + chunk * self.chunk_bytes + off;
                let bytes = endpoints[self.acc]
                    .memory
                    .read(self.acc, src_addr, len as usize)?;
                Some(bytes.to_vec().into_boxed_slice())
            } else {
                None
            };
            let header = PacketHeader {
                kind: PacketKind::WriteReq,
                inc_flag: false,
                src: NodeId::Accelerator(self.acc as u16),
                dst: NodeId::Accelerator(dest as u16),
                address: STAGING_BASE + g * self.chunk_bytes + off,
                length: len as u32,
                tag: ((g as u32) << 20) | p as u32,
                imm: 0,
            };
            fabric.acc_enqueue(self.acc, switch, Packet::with_payload(header, payload));
            self.send_cursor += 1;
            any = true;
        }
        Ok(any)
    }

    fn send_flag(&self, fabric: &mut Fabric) {
        let g = self.step_idx;
        let dest = (self.acc + 1) % self.n;
        let packet = Packet::new(PacketHeader {
            kind: PacketKind::FlagWrite,
            inc_flag: false,
            src: NodeId::Accelerator(self.acc as u16),
            dst: NodeId::Accelerator(dest as u16),
            address: FLAG_BASE + g * 8,
            length: 0,
            tag: (g as u32) << 20,
            imm: 1,
        });
        fabric.acc_enqueue(self.acc, g as usize % self.num_switches, packet);
    }

    fn flag_set(&self, g: u64, endpoints: &[Endpoint]) -> bool {
        endpoints[self.acc].sync_read(FLAG_BASE + g * 8) == 1
    }
}

impl Agent for RingAgent {
    fn step(
        &mut self,
        now: u64,
        fabric: &mut Fabric,
        endpoints: &mut [Endpoint],
    ) -> Result<bool, SimError> {
        let mut activity = false;
        loop {
            match self.phase {
                RingPhase::WaitStart => {
                    if now < self.offset_cycles {
                        return Ok(activity);
                    }
                    self.phase = RingPhase::Send;
                    activity = true;
                }
                RingPhase::WaitFlag => {
                    if now % self.poll_interval_cycles != 0
                        || !self.flag_set(self.step_idx - 1, endpoints)
                    {
                        return Ok(activity);
                    }
                    self.consume_staging(self.step_idx - 1, endpoints)?;
                    self.phase = RingPhase::Send;
                    activity = true;
                }
                RingPhase::Send => {
                    activity |= self.drain_acks(endpoints);
                    activity |= self.pump_sends(fabric, endpoints)?;
                    let complete = self.send_cursor == self.packets_per_chunk
                        && self.acked == self.packets_per_chunk;
                    if !complete {
                        return Ok(activity);
                    }
                    self.send_flag(fabric);
                    self.step_idx += 1;
                    self.send_cursor = 0;
                    self.acked = 0;
                    self.phase = if self.step_idx == self.total_steps {
                        RingPhase::FinalWait
                    } else {
                        RingPhase::WaitFlag
                    };
                    activity = true;
                }
                RingPhase::FinalWait => {
                    if now % self.poll_interval_cycles != 0
                        || !self.flag_set(self.total_steps - 1, endpoints)
                    {
                        return Ok(activity);
                    }
                    self.consume_staging(self.total_steps - 1, endpoints)?;
                    self.phase = RingPhase::Done;
                    return Ok(true);
                }
                RingPhase::Done => return Ok(activity),
            }
        }
    }

    fn done(&self) -> bool {
        self.phase == RingPhase::Done
    }
}
