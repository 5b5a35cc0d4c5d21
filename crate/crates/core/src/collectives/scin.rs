//! Driver side of the offloaded All-Reduce.
//!
//! The accelerators' entire contribution is synchronization: each posts one
//! barrier-arrival increment per involved switch, then polls its local flag
//! cells until every switch has written completion. All data movement is
//! performed by the in-switch accelerators against the instructions queued
//! by [`stripe_instruction`].

use crate::config::SimConfig;
use crate::endpoint::Endpoint;
use crate::engine::Agent;
use crate::error::SimError;
use crate::fabric::packet::{NodeId, Packet, PacketHeader, PacketKind};
use crate::fabric::Fabric;
use crate::isa::IsaInstruction;
use crate::quant::QuantBlockSpec;

use super::{DATA_BASE, FLAG_BASE, SCALE_BASE};

/// Instruction id namespace for collective stripes: switch `s` runs `100+s`.
const INSTRUCTION_ID_BASE: u32 = 100;

/// The instruction covering one switch's contiguous stripe of the message.
pub(crate) fn stripe_instruction(
    switch: usize,
    start_byte: u64,
    length_bytes: u64,
    inq: bool,
    participant_mask: u64,
    quant_spec: QuantBlockSpec,
) -> IsaInstruction {
    let scale_addr = if inq {
        // Scales are stored contiguously, two bytes per block, so a stripe
        // starting at a block boundary starts at a fixed scale offset.
        debug_assert_eq!(start_byte % quant_spec.block_elements as u64, 0);
        SCALE_BASE + (start_byte / quant_spec.block_elements as u64) * 2
    } else {
        0
    };
    IsaInstruction {
        id: INSTRUCTION_ID_BASE + switch as u32,
        inq,
        src_mask: participant_mask,
        dst_mask: participant_mask,
        data_addr: DATA_BASE + start_byte,
        length_bytes,
        scale_addr,
        flag_addr: FLAG_BASE + 8 * switch as u64,
        flag_value: 1,
    }
}

/// One accelerator's view of the offloaded collective.
pub(crate) struct ScinAgent {
    acc: usize,
    offset_cycles: u64,
    poll_interval_cycles: u64,
    /// `(switch, instruction id, flag address, flag value)` per involved switch.
    targets: Vec<(usize, u32, u64, u64)>,
    arrived: bool,
    done: bool,
}

impl ScinAgent {
    pub(crate) fn new(
        acc: usize,
        offset_cycles: u64,
        config: &SimConfig,
        stripes: &[(u64, u64)],
        _inq: bool,
    ) -> ScinAgent {
        let targets = stripes
            .iter()
            .enumerate()
            .filter(|(_, &(_, len))| len > 0)
            .map(|(s, _)| {
                (
                    s,
                    INSTRUCTION_ID_BASE + s as u32,
                    FLAG_BASE + 8 * s as u64,
                    1u64,
                )
            })
            .collect();
        ScinAgent {
            acc,
            offset_cycles,
            poll_interval_cycles: config.poll_interval_cycles.max(1),
            targets,
            arrived: false,
            done: false,
        }
    }
}

impl Agent for ScinAgent {
    fn step(
        &mut self,
        now: u64,
        fabric: &mut Fabric,
        endpoints: &mut [Endpoint],
    ) -> Result<bool, SimError> {
        if self.done {
            return Ok(false);
        }
        if !self.arrived {
            if now < self.offset_cycles {
                return Ok(false);
            }
            for &(switch, instr_id, _, _) in &self.targets {
                let packet = Packet::new(PacketHeader {
                    kind: PacketKind::AtomicInc,
                    inc_flag: true,
                    src: NodeId::Accelerator(self.acc as u16),
                    dst: NodeId::Switch(switch as u16),
                    address: instr_id as u64,
                    length: 0,
                    tag: instr_id,
                    imm: 1,
                });
                fabric.acc_enqueue(self.acc, switch, packet);
            }
            self.arrived = true;
            return Ok(true);
        }
        if now % self.poll_interval_cycles != 0 {
            return Ok(false);
        }
        let ep = &endpoints[self.acc];
        if self
            .targets
            .iter()
            .all(|&(_, _, flag_addr, flag_value)| ep.sync_read(flag_addr) == flag_value)
        {
            self.done = true;
        }
        Ok(false)
    }

    fn done(&self) -> bool {
        self.done
    }
}
