//! Packet and header definitions.

use serde::{Deserialize, Serialize};

/// A fabric node: accelerator endpoint or switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Accelerator(u16),
    Switch(u16),
}

impl NodeId {
    pub fn accelerator(self) -> Option<usize> {
        match self {
            NodeId::Accelerator(a) => Some(a as usize),
            NodeId::Switch(_) => None,
        }
    }
}

/// Transaction kinds carried by the fabric.
///
/// `ReadReq`, `WriteResp`, `AtomicInc` and `FlagWrite` are single-flit
/// packets; the others carry payload. `ScaleData` is the dedicated
/// write-class packet that carries requantized scale factors back to the
/// accelerators on the INQ path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PacketKind {
    ReadReq,
    ReadResp,
    WriteReq,
    WriteResp,
    AtomicInc,
    FlagWrite,
    ScaleData,
}

impl PacketKind {
    pub fn name(self) -> &'static str {
        match self {
            PacketKind::ReadReq => "read_req",
            PacketKind::ReadResp => "read_resp",
            PacketKind::WriteReq => "write_req",
            PacketKind::WriteResp => "write_resp",
            PacketKind::AtomicInc => "atomic_inc",
            PacketKind::FlagWrite => "flag_write",
            PacketKind::ScaleData => "scale_data",
        }
    }

    /// Synchronization traffic (barrier increments and completion flags).
    pub fn is_sync(self) -> bool {
        matches!(self, PacketKind::AtomicInc | PacketKind::FlagWrite)
    }
}

/// Queue class a packet lands in on reception. Separating the classes
/// removes head-of-line blocking between small control packets and data
/// streams; each class has independent credits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueClass {
    Request = 0,
    Response = 1,
    ReadData = 2,
    WriteData = 3,
}

pub const NUM_QUEUE_CLASSES: usize = 4;

impl QueueClass {
    pub fn of(kind: PacketKind) -> QueueClass {
        match kind {
            PacketKind::ReadReq | PacketKind::AtomicInc => QueueClass::Request,
            PacketKind::WriteResp => QueueClass::Response,
            PacketKind::ReadResp => QueueClass::ReadData,
            PacketKind::WriteReq | PacketKind::FlagWrite | PacketKind::ScaleData => {
                QueueClass::WriteData
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QueueClass::Request => "request",
            QueueClass::Response => "response",
            QueueClass::ReadData => "read_data",
            QueueClass::WriteData => "write_data",
        }
    }

    pub const ALL: [QueueClass; NUM_QUEUE_CLASSES] = [
        QueueClass::Request,
        QueueClass::Response,
        QueueClass::ReadData,
        QueueClass::WriteData,
    ];
}

/// Packet header. `inc_flag` is the one-bit discriminator that steers a
/// packet into the in-switch-accelerator queue set (`true`) or the regular
/// switch-core forwarding set (`false`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketHeader {
    pub kind: PacketKind,
    pub inc_flag: bool,
    pub src: NodeId,
    pub dst: NodeId,
    /// Target memory address; 48 bits.
    pub address: u64,
    /// Payload length in bytes (0 for single-flit packets).
    pub length: u32,
    /// Reassembly tag: identifies (table entry, packet offset) for
    /// wave-table traffic, or the requester's transaction id otherwise.
    pub tag: u32,
    /// Small immediate: flag value, barrier instruction id, or — for read
    /// requests, which are single-flit — the requested byte count.
    pub imm: u64,
}

pub const ADDRESS_BITS: u32 = 48;

impl PacketHeader {
    pub fn validate(&self) {
        debug_assert!(
            self.address < (1u64 << ADDRESS_BITS),
            "address {:#x} exceeds {} bits",
            self.address,
            ADDRESS_BITS
        );
    }
}

/// A packet in flight. Payload bytes are carried only when the run is in
/// data mode; header `length` is authoritative for timing either way.
#[derive(Debug, Clone)]
pub struct Packet {
    pub header: PacketHeader,
    pub payload: Option<Box<[u8]>>,
}

impl Packet {
    pub fn new(header: PacketHeader) -> Packet {
        header.validate();
        debug_assert!(header.length == 0 || header.kind != PacketKind::ReadReq);
        Packet {
            header,
            payload: None,
        }
    }

    pub fn with_payload(header: PacketHeader, payload: Option<Box<[u8]>>) -> Packet {
        header.validate();
        if let Some(p) = &payload {
            debug_assert_eq!(p.len(), header.length as usize);
        }
        Packet { header, payload }
    }

    /// Flits on the wire: one header flit plus payload flits.
    pub fn flits(&self, flit_bytes: u64) -> u64 {
        1 + (self.header.length as u64).div_ceil(flit_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_class_mapping() {
        assert_eq!(QueueClass::of(PacketKind::ReadReq), QueueClass::Request);
        assert_eq!(QueueClass::of(PacketKind::AtomicInc), QueueClass::Request);
        assert_eq!(QueueClass::of(PacketKind::WriteResp), QueueClass::Response);
        assert_eq!(QueueClass::of(PacketKind::ReadResp), QueueClass::ReadData);
        assert_eq!(QueueClass::of(PacketKind::WriteReq), QueueClass::WriteData);
        assert_eq!(QueueClass::of(PacketKind::FlagWrite), QueueClass::WriteData);
        assert_eq!(QueueClass::of(PacketKind::ScaleData), QueueClass::WriteData);
    }

    #[test]
    fn flit_counts() {
        let header = PacketHeader {
            kind: PacketKind::ReadResp,
            inc_flag: true,
            src: NodeId::Accelerator(0),
            dst: NodeId::Switch(0),
            address: 0,
            length: 128,
            tag: 0,
            imm: 0,
        };
        let p = Packet::new(header);
        assert_eq!(p.flits(16), 9); // 8 payload flits + 1 header flit

        let single = Packet::new(PacketHeader {
            kind: PacketKind::ReadReq,
            length: 0,
            ..header
        });
        assert_eq!(single.flits(16), 1);
    }
}
