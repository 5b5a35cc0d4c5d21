//! Simulator configuration: fabric geometry, link timing, ISA sizing.
//!
//! Time is integer picoseconds throughout. The primary timing field is
//! `clock_period_ps` — one fabric cycle moves one flit per link direction —
//! because the interesting link rates (e.g. 112.5 GB/s per direction with
//! 16 B flits) do not all correspond to an integer-hertz frequency whose
//! period is a whole picosecond count. Config files may alternatively give
//! `clock_frequency_hz`, which must divide 10^12 exactly.

use crate::error::SimError;
use crate::units::{self, PS_PER_SEC};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Element type carried by non-INQ collectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    /// IEEE binary16 wire/storage with f32 accumulation.
    F16,
    /// f32 wire/storage and accumulation.
    F32,
}

impl ElementType {
    pub fn size_bytes(self) -> u64 {
        match self {
            ElementType::F16 => 2,
            ElementType::F32 => 4,
        }
    }
}

/// Full simulator configuration.
///
/// The defaults (`SimConfig::default()` = [`SimConfig::switch_class_8`])
/// describe an 8-accelerator, 4-switch fabric: 250 ns links, 142 ps cycle
/// (16 B flit per cycle per direction ≈ 112.68 GB/s per direction per link,
/// ≈ 901 GB/s aggregate bidirectional per accelerator), 128 B max payload,
/// one 16 B header flit per packet, 20/100-cycle regular/INQ reduction
/// pipelines, 4 KB waves, 16 wave entries and 64 KB of data capacity per
/// wave table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Number of accelerator endpoints.
    pub num_accelerators: usize,
    /// Number of switches; each accelerator has one link per switch.
    pub num_switches: usize,
    /// One-way link latency, endpoint <-> switch, in nanoseconds.
    pub link_latency_ns: u64,
    /// Fabric cycle period in picoseconds. One flit per cycle per direction.
    pub clock_period_ps: u64,
    /// Flit size in bytes.
    pub flit_size_bytes: u64,
    /// Maximum packet payload in bytes (whole flits).
    pub max_payload_bytes: u64,
    /// Packet header size in bytes; exactly one flit.
    pub header_bytes: u64,
    /// Accelerator DMA read turnaround latency (L_acc), nanoseconds.
    pub accelerator_response_latency_ns: u64,
    /// Reduction pipeline latency for the regular path, in cycles.
    pub isa_compute_latency_regular_cycles: u64,
    /// Reduction pipeline latency for the INQ path, in cycles.
    pub isa_compute_latency_inq_cycles: u64,
    /// Wave size in bytes: the transfer granule regulated by the wave tables.
    pub wave_size_bytes: u64,
    /// Number of wave entries per table (outstanding waves per port).
    pub waves_per_table: usize,
    /// Data capacity per wave table in bytes, excluding scale storage.
    pub table_capacity_bytes: u64,
    /// Element type for non-INQ reductions.
    pub element_type: ElementType,
    /// How often a waiting accelerator samples its completion flag, cycles.
    pub poll_interval_cycles: u64,
    /// DMA response reorder window: responses may leave the endpoint in any
    /// order within a sliding window of this many ready responses.
    pub reorder_window: usize,
    /// Carry payload bytes through the fabric (enables result verification);
    /// disable for large timing-only sweeps.
    pub carry_data: bool,
    /// Abort with a deadlock report after this many cycles without progress.
    pub deadlock_timeout_cycles: u64,
    /// Master seed for every random stream in the run.
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::switch_class_8()
    }
}

impl SimConfig {
    /// 8-accelerator, 4-switch fabric of DGX-class link rates.
    pub fn switch_class_8() -> Self {
        SimConfig {
            num_accelerators: 8,
            num_switches: 4,
            link_latency_ns: 250,
            clock_period_ps: 142, // 16 B / 142 ps ≈ 112.68 GB/s per direction
            flit_size_bytes: 16,
            max_payload_bytes: 128,
            header_bytes: 16,
            accelerator_response_latency_ns: 100,
            isa_compute_latency_regular_cycles: 20,
            isa_compute_latency_inq_cycles: 100,
            wave_size_bytes: 4096,
            waves_per_table: 16,
            table_capacity_bytes: 64 * 1024,
            element_type: ElementType::F16,
            poll_interval_cycles: 1,
            reorder_window: 4,
            carry_data: false,
            deadlock_timeout_cycles: 2_000_000,
            rng_seed: 1,
        }
    }

    /// The same fabric scaled to 16 accelerators.
    pub fn switch_class_16() -> Self {
        SimConfig {
            num_accelerators: 16,
            ..Self::switch_class_8()
        }
    }

    /// FPGA-prototype-scale fabric: one switch, four endpoints, 64 Gb/s per
    /// link direction (32 B flit at 250 MHz), 360 ns one-way latency, 4 KB
    /// payloads and waves.
    pub fn prototype() -> Self {
        SimConfig {
            num_accelerators: 4,
            num_switches: 1,
            link_latency_ns: 360,
            clock_period_ps: 4_000, // 250 MHz
            flit_size_bytes: 32,
            max_payload_bytes: 4096,
            header_bytes: 32,
            accelerator_response_latency_ns: 280,
            isa_compute_latency_regular_cycles: 20,
            isa_compute_latency_inq_cycles: 100,
            wave_size_bytes: 4096,
            waves_per_table: 16,
            table_capacity_bytes: 64 * 1024,
            element_type: ElementType::F16,
            poll_interval_cycles: 1,
            reorder_window: 4,
            carry_data: false,
            deadlock_timeout_cycles: 2_000_000,
            rng_seed: 1,
        }
    }

    // --- derived timing -------------------------------------------------

    /// Fabric clock frequency implied by the period, in hertz.
    pub fn clock_frequency_hz(&self) -> f64 {
        PS_PER_SEC as f64 / self.clock_period_ps as f64
    }

    /// Raw bandwidth per link per direction: one flit per cycle.
    pub fn link_bandwidth_per_direction_bytes_per_sec(&self) -> f64 {
        self.flit_size_bytes as f64 * PS_PER_SEC as f64 / self.clock_period_ps as f64
    }

    /// One-way link latency in cycles (rounded up).
    pub fn link_latency_cycles(&self) -> u64 {
        units::ps_to_cycles_ceil(units::ns_to_ps(self.link_latency_ns), self.clock_period_ps)
    }

    /// Accelerator response latency in cycles (rounded up).
    pub fn response_latency_cycles(&self) -> u64 {
        units::ps_to_cycles_ceil(
            units::ns_to_ps(self.accelerator_response_latency_ns),
            self.clock_period_ps,
        )
    }

    /// Flits in a packet of `payload_bytes`: one header flit plus payload.
    pub fn packet_flits(&self, payload_bytes: u64) -> u64 {
        1 + units::div_ceil_u64(payload_bytes, self.flit_size_bytes)
    }

    /// Maximum achievable unidirectional payload bandwidth per accelerator,
    /// aggregated over its switch links.
    ///
    /// In an All-Reduce each link direction carries, per `max_payload` bytes
    /// of payload, one data packet (payload + header) and one single-flit
    /// companion (read request downstream, write response upstream), so the
    /// payload fraction is p/(p + 2h).
    pub fn max_payload_bandwidth_bytes_per_sec(&self) -> f64 {
        let p = self.max_payload_bytes as f64;
        let h = self.header_bytes as f64;
        self.num_switches as f64
            * self.link_bandwidth_per_direction_bytes_per_sec()
            * (p / (p + 2.0 * h))
    }

    /// Asymptotic ring All-Reduce bandwidth bound: N/(2(N-1)) of the
    /// payload bandwidth.
    pub fn ring_bandwidth_bound_bytes_per_sec(&self) -> f64 {
        let n = self.num_accelerators as f64;
        self.max_payload_bandwidth_bytes_per_sec() * n / (2.0 * (n - 1.0))
    }

    /// Minimum per-table buffer capacity by `C_min = B (2L + L_acc)`,
    /// rounded up to a flit.
    pub fn min_table_capacity_bytes(&self) -> u64 {
        let b = units::div_ceil_u64(
            self.flit_size_bytes * PS_PER_SEC,
            self.clock_period_ps,
        );
        units::min_buffer_capacity_flit_rounded(
            b,
            units::ns_to_ps(self.link_latency_ns),
            units::ns_to_ps(self.accelerator_response_latency_ns),
            self.flit_size_bytes,
        )
    }

    /// Receive queue depth in flits, sized so credit flow control never
    /// throttles a saturated link. The credit loop spans the packet's own
    /// serialization plus both link flights (grant out, refund back); on
    /// top of that flight-time product, whole-packet admission with
    /// per-packet refunds needs two max packets of slack — one in flight
    /// and one ready to be granted.
    pub fn queue_depth_flits(&self) -> u64 {
        let b = units::div_ceil_u64(
            self.flit_size_bytes * PS_PER_SEC,
            self.clock_period_ps,
        );
        let bytes = units::min_buffer_capacity_flit_rounded(
            b,
            units::ns_to_ps(self.link_latency_ns),
            0,
            self.flit_size_bytes,
        );
        bytes / self.flit_size_bytes + 2 * self.packet_flits(self.max_payload_bytes)
    }

    /// Payload chunks per wave.
    pub fn packets_per_wave(&self) -> u64 {
        units::div_ceil_u64(self.wave_size_bytes, self.max_payload_bytes)
    }

    // --- validation and I/O ----------------------------------------------

    /// Check every invariant; returns the offending field in the message.
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.num_accelerators < 1 || self.num_accelerators > 64 {
            return err(format!(
                "num_accelerators must be in 1..=64, got {}",
                self.num_accelerators
            ));
        }
        if self.num_switches < 1 || self.num_switches > 16 {
            return err(format!(
                "num_switches must be in 1..=16, got {}",
                self.num_switches
            ));
        }
        if self.clock_period_ps == 0 {
            return err("clock_period_ps must be positive".into());
        }
        if self.link_latency_ns == 0 {
            return err("link_latency_ns must be positive".into());
        }
        if self.flit_size_bytes == 0 {
            return err("flit_size_bytes must be positive".into());
        }
        if self.header_bytes != self.flit_size_bytes {
            return err(format!(
                "header_bytes must equal flit_size_bytes (one header flit): {} vs {}",
                self.header_bytes, self.flit_size_bytes
            ));
        }
        if self.max_payload_bytes == 0 || self.max_payload_bytes % self.flit_size_bytes != 0 {
            return err(format!(
                "max_payload_bytes must be a positive multiple of flit_size_bytes, got {}",
                self.max_payload_bytes
            ));
        }
        if self.wave_size_bytes == 0 || self.wave_size_bytes % self.flit_size_bytes != 0 {
            return err(format!(
                "wave_size_bytes must be a positive multiple of flit_size_bytes, got {}",
                self.wave_size_bytes
            ));
        }
        // A wave is either a whole number of max-payload packets or a
        // single shorter packet; ragged tails inside a wave would shear
        // the tag addressing.
        if self.wave_size_bytes % self.max_payload_bytes != 0
            && self.max_payload_bytes % self.wave_size_bytes != 0
        {
            return err(format!(
                "wave_size_bytes ({}) must be a multiple of max_payload_bytes ({}) or divide it evenly",
                self.wave_size_bytes, self.max_payload_bytes
            ));
        }
        if self.waves_per_table == 0 {
            return err("waves_per_table must be positive".into());
        }
        if self.wave_size_bytes * self.waves_per_table as u64 > self.table_capacity_bytes {
            return err(format!(
                "waves_per_table * wave_size_bytes ({} * {}) exceeds table_capacity_bytes ({})",
                self.waves_per_table, self.wave_size_bytes, self.table_capacity_bytes
            ));
        }
        if self.max_payload_bytes % self.element_type.size_bytes() != 0 {
            return err("max_payload_bytes must be a multiple of the element size".into());
        }
        if self.poll_interval_cycles == 0 {
            return err("poll_interval_cycles must be positive".into());
        }
        if self.reorder_window == 0 {
            return err("reorder_window must be positive".into());
        }
        if self.deadlock_timeout_cycles == 0 {
            return err("deadlock_timeout_cycles must be positive".into());
        }
        Ok(())
    }

    /// Load from a TOML file. Accepts `clock_frequency_hz` in place of
    /// `clock_period_ps` when the frequency's period is an exact picosecond
    /// count; unknown keys are rejected.
    pub fn load_toml(path: &Path) -> Result<SimConfig, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::InvalidConfig(msg) => {
                SimError::InvalidConfig(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    /// Parse from TOML text (see [`SimConfig::load_toml`]).
    pub fn from_toml_str(text: &str) -> Result<SimConfig, SimError> {
        // No deny_unknown_fields here: it cannot coexist with `flatten`.
        // Unknown keys are still rejected when `rest` lands in `SimConfig`.
        #[derive(Deserialize)]
        struct WithFrequency {
            clock_frequency_hz: Option<u64>,
            #[serde(flatten)]
            rest: toml::Table,
        }
        let raw: WithFrequency = toml::from_str(text)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let mut table = raw.rest;
        if let Some(freq) = raw.clock_frequency_hz {
            if freq == 0 || PS_PER_SEC % freq != 0 {
                return Err(SimError::InvalidConfig(format!(
                    "clock_frequency_hz: {freq} Hz has a non-integer picosecond period; \
                     give clock_period_ps instead"
                )));
            }
            if table.contains_key("clock_period_ps") {
                return Err(SimError::InvalidConfig(
                    "give either clock_period_ps or clock_frequency_hz, not both".into(),
                ));
            }
            table.insert(
                "clock_period_ps".into(),
                toml::Value::Integer((PS_PER_SEC / freq) as i64),
            );
        }
        let config: SimConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| SimError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Serialize to TOML text.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
