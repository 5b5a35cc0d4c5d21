//! Run reports: timing spans, phase breakdown, traffic accounting and the
//! correctness digest.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One labelled span of a run, in picoseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub start_ps: u64,
    pub end_ps: u64,
}

impl Phase {
    pub fn duration_ps(&self) -> u64 {
        self.end_ps.saturating_sub(self.start_ps)
    }
}

/// Aggregate traffic counters, maintained by the fabric as packets move.
///
/// "Link crossing" counts each traversal of one directional link, so a
/// datum that is read up to a switch and written back down counts its
/// payload twice. These exact totals back the structural hop-count checks
/// (e.g. a switch-reduced All-Reduce moves every payload byte across
/// exactly two links).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounters {
    /// Flits delivered accelerator -> switch.
    pub flits_up: u64,
    /// Flits delivered switch -> accelerator.
    pub flits_down: u64,
    /// Payload bytes summed over every link crossing.
    pub payload_link_crossing_bytes: u64,
    /// Payload bytes delivered upward, per accelerator (all its links).
    pub payload_bytes_up_per_acc: Vec<u64>,
    /// Payload bytes delivered downward, per accelerator.
    pub payload_bytes_down_per_acc: Vec<u64>,
    /// Link crossings by synchronization packets (AtomicInc, FlagWrite).
    pub sync_link_crossings: u64,
    /// Synchronization packets injected at their origin.
    pub sync_messages: u64,
    /// ReadReq packets injected by accelerators (zero under full offload).
    pub acc_read_requests: u64,
    /// WriteReq packets injected by accelerators.
    pub acc_write_requests: u64,
    /// Packets injected, by kind name.
    pub packets_by_kind: BTreeMap<String, u64>,
}

impl TrafficCounters {
    pub fn new(num_accelerators: usize) -> Self {
        TrafficCounters {
            payload_bytes_up_per_acc: vec![0; num_accelerators],
            payload_bytes_down_per_acc: vec![0; num_accelerators],
            ..Default::default()
        }
    }
}

/// Which span of the run the headline bandwidth is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBasis {
    /// From collective start (all participants arrived) to last resume,
    /// including barrier and completion signalling.
    WithSync,
    /// Transfer phase only.
    DataOnly,
}

/// The result of one collective run. Identical config + spec + seed
/// reproduce this structure byte for byte (via [`RunReport::to_json`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Algorithm name (`scin`, `scin_inq`, `ring`, `nvls_like`).
    pub algorithm: String,
    /// Bytes transferred per accelerator buffer (int8 code bytes for INQ).
    pub message_bytes: u64,
    /// 16-bit-equivalent bytes; equals `message_bytes` except for INQ,
    /// where it is twice the code bytes. Bandwidth uses this figure.
    pub equivalent_bytes: u64,
    pub num_accelerators: usize,
    pub num_switches: usize,
    /// Fabric cycles simulated from collective start to final resume.
    pub total_cycles: u64,
    /// Fabric cycle period, for exact time reconstruction.
    pub clock_period_ps: u64,
    /// Span including synchronization, picoseconds.
    pub total_time_ps: u64,
    /// Transfer span only (first issue to last write response), picoseconds.
    pub data_time_ps: u64,
    /// `total_time_ps - data_time_ps`: barrier plus completion signalling.
    pub sync_overhead_ps: u64,
    /// Which span `achieved_bandwidth_bytes_per_sec` uses.
    pub bandwidth_basis: TimeBasis,
    /// `equivalent_bytes / span`, bytes per second.
    pub achieved_bandwidth_bytes_per_sec: f64,
    /// Payload bytes moved, summed over link crossings.
    pub payload_bytes_moved: u64,
    pub phases: Vec<Phase>,
    pub counters: TrafficCounters,
    /// FNV-1a digest of the participating result buffers, when the run
    /// carried data; `None` in timing-only mode.
    pub correctness_digest: Option<String>,
}

impl RunReport {
    /// Deterministic JSON rendering (stable field order, stable float text).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn total_time_ns(&self) -> f64 {
        self.total_time_ps as f64 / 1e3
    }

    pub fn data_time_ns(&self) -> f64 {
        self.data_time_ps as f64 / 1e3
    }
}

/// 64-bit FNV-1a over a byte stream; the correctness digest.
#[derive(Debug, Clone)]
pub struct Digest {
    state: u64,
}

impl Default for Digest {
    fn default() -> Self {
        Digest {
            state: 0xcbf2_9ce4_8422_2325,
        }
    }
}

impl Digest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(0x100_0000_01b3);
        }
    }

    pub fn finish_hex(&self) -> String {
        format!("{:016x}", self.state)
    }
}
