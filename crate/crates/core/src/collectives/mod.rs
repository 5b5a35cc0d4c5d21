//! All-Reduce drivers for the three compared data paths.
//!
//! Three implementations of the same collective, sharing one fabric and one
//! accelerator model so their timing and traffic are directly comparable:
//!
//! * [`Algorithm::Scin`] / [`Algorithm::ScinInq`] — offloaded: accelerators
//!   post one barrier arrival per involved switch and poll a flag; the
//!   in-switch accelerators fetch, reduce, and write back, striped across
//!   switches in whole waves.
//! * [`Algorithm::Ring`] — accelerator-driven ring: `2(N-1)` store-and-forward
//!   steps of chunk writes to the downstream neighbor's staging buffers,
//!   ack-fenced and flagged, striped packet-by-packet across switches.
//! * [`Algorithm::NvlsLike`] — accelerator-initiated multicast: each
//!   accelerator drives read-reduce and write-replicate operations for its
//!   shard through the switches' multicast engines, bracketed by two
//!   all-to-root barriers.
//!
//! [`run_collective`] wires a scenario, runs it to completion, optionally
//! checks every accelerator's result bit-for-bit against the matching
//! reduction oracle, and assembles a [`RunReport`].

pub mod oracle;

mod nvls;
mod ring;
mod scin;

pub use nvls::NvlsEngine;

use std::cell::RefCell;
use std::rc::Rc;
use std::str::FromStr;

use half::f16;

use crate::config::{ElementType, SimConfig};
use crate::engine::{Agent, InertSwitch, Simulation, SwitchDevice};
use crate::error::SimError;
use crate::isa::Isa;
use crate::quant::{self, QuantBlockSpec, QuantizedTensor};
use crate::report::{Digest, Phase, RunReport, TimeBasis};
use crate::rng::{SimRng, Stream};
use crate::trace::TraceLog;

/// Base of the message buffer in every accelerator's memory.
pub const DATA_BASE: u64 = 0x0010_0000;
/// Base of the per-block scale buffer (quantized runs).
pub const SCALE_BASE: u64 = 0x0800_0000;
/// Base of the ring staging buffers (one slot per ring step).
pub const STAGING_BASE: u64 = 0x1000_0000;
/// Base of the completion-flag sync cells (8 bytes per flag).
pub const FLAG_BASE: u64 = 0x2000_0000;
/// Base of the sync cells used by the multicast baseline's barriers.
pub const BARRIER_BASE: u64 = 0x3000_0000;

/// Which All-Reduce implementation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Switch-offloaded, f16 end to end.
    Scin,
    /// Switch-offloaded with block-quantized int8 payloads and f16 scales.
    ScinInq,
    /// Accelerator-driven ring over the same fabric.
    Ring,
    /// Accelerator-initiated switch multicast (read-reduce / write-replicate).
    NvlsLike,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Scin => "scin",
            Algorithm::ScinInq => "scin-inq",
            Algorithm::Ring => "ring",
            Algorithm::NvlsLike => "nvls-like",
        }
    }

    pub const ALL: [Algorithm; 4] = [
        Algorithm::Scin,
        Algorithm::ScinInq,
        Algorithm::Ring,
        Algorithm::NvlsLike,
    ];
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Algorithm, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                format!("unknown algorithm {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// One All-Reduce scenario.
#[derive(Debug, Clone)]
pub struct CollectiveSpec {
    pub algorithm: Algorithm,
    pub message_bytes: u64,
    /// Cycle at which each accelerator joins the collective. Empty means
    /// everyone starts at cycle 0; otherwise one entry per accelerator.
    pub arrival_offsets_cycles: Vec<u64>,
    /// Carry payloads through the fabric and check every accelerator's
    /// result bit-for-bit against the reduction oracle.
    pub verify: bool,
}

impl CollectiveSpec {
    pub fn new(algorithm: Algorithm, message_bytes: u64) -> CollectiveSpec {
        CollectiveSpec {
            algorithm,
            message_bytes,
            arrival_offsets_cycles: Vec::new(),
            verify: false,
        }
    }

    pub fn verified(mut self) -> CollectiveSpec {
        self.verify = true;
        self
    }

    pub fn with_offsets(mut self, offsets: Vec<u64>) -> CollectiveSpec {
        self.arrival_offsets_cycles = offsets;
        self
    }
}

/// Shared scratch for agent-reported progress marks: `(label, cycle)`.
pub(crate) type Marks = Rc<RefCell<Vec<(String, u64)>>>;

pub(crate) fn push_mark(marks: &Marks, label: String, cycle: u64) {
    marks.borrow_mut().push((label, cycle));
}

/// The seeded f16 message an accelerator contributes (regular runs).
pub fn seeded_message_f16(seed: u64, accelerator: usize, elements: usize) -> Vec<f16> {
    let mut rng = SimRng::new(seed, Stream::DataInit { accelerator });
    (0..elements)
        .map(|_| f16::from_f32(rng.f32_in(-4.0, 4.0)))
        .collect()
}

/// The seeded f32 message an accelerator contributes before driver-side
/// quantization (quantized runs).
pub fn seeded_message_f32(seed: u64, accelerator: usize, elements: usize) -> Vec<f32> {
    let mut rng = SimRng::new(seed, Stream::DataInit { accelerator });
    (0..elements).map(|_| rng.f32_in(-4.0, 4.0)).collect()
}

/// Contiguous per-switch split of `message_bytes` in whole `granule` units.
/// Earlier switches absorb the remainder; trailing switches may get nothing
/// when the message is small.
pub fn stripe_ranges(message_bytes: u64, granule: u64, num_switches: usize) -> Vec<(u64, u64)> {
    assert!(granule > 0);
    let units = message_bytes.div_ceil(granule);
    let s = num_switches as u64;
    let base = units / s;
    let rem = units % s;
    let mut ranges = Vec::with_capacity(num_switches);
    let mut unit = 0u64;
    for i in 0..s {
        let take = base + u64::from(i < rem);
        let start = (unit * granule).min(message_bytes);
        let end = ((unit + take) * granule).min(message_bytes);
        ranges.push((start, end - start));
        unit += take;
    }
    ranges
}

fn validate_scenario(cfg: &SimConfig, spec: &CollectiveSpec) -> Result<(), SimError> {
    let n = cfg.num_accelerators as u64;
    let m = spec.message_bytes;
    if m == 0 {
        return Err(SimError::InvalidConfig("message_bytes must be positive".into()));
    }
    if !spec.arrival_offsets_cycles.is_empty()
        && spec.arrival_offsets_cycles.len() != cfg.num_accelerators
    {
        return Err(SimError::InvalidConfig(format!(
            "expected {} arrival offsets, got {}",
            cfg.num_accelerators,
            spec.arrival_offsets_cycles.len()
        )));
    }
    let elem = cfg.element_type.size_bytes();
    match spec.algorithm {
        Algorithm::Scin | Algorithm::NvlsLike => {
            if m % elem != 0 {
                return Err(SimError::InvalidConfig(format!(
                    "message of {m} bytes is not a whole number of {elem}-byte elements"
                )));
            }
        }
        Algorithm::ScinInq => {
            let block = QuantBlockSpec::default().block_elements as u64;
            if m % block != 0 {
                return Err(SimError::InvalidConfig(format!(
                    "quantized message of {m} bytes is not a whole number of {block}-element blocks"
                )));
            }
        }
        Algorithm::Ring => {
            if m % (n * elem) != 0 {
                return Err(SimError::InvalidConfig(format!(
                    "ring message of {m} bytes does not split into {n} aligned chunks"
                )));
            }
        }
    }
    if spec.verify && cfg.element_type != ElementType::F16 {
        return Err(SimError::InvalidConfig(
            "result verification is implemented for f16 elements".into(),
        ));
    }
    Ok(())
}

fn offsets(cfg: &SimConfig, spec: &CollectiveSpec) -> Vec<u64> {
    if spec.arrival_offsets_cycles.is_empty() {
        vec![0; cfg.num_accelerators]
    } else {
        spec.arrival_offsets_cycles.clone()
    }
}

/// Run one All-Reduce scenario end to end and report timing, traffic, and
/// (optionally) verified correctness.
pub fn run_collective(config: &SimConfig, spec: &CollectiveSpec) -> Result<RunReport, SimError> {
    run_collective_traced(config, spec, None)
}

/// [`run_collective`] with an optional fabric event trace, flushed and
/// closed when the run finishes.
pub fn run_collective_traced(
    config: &SimConfig,
    spec: &CollectiveSpec,
    trace: Option<TraceLog>,
) -> Result<RunReport, SimError> {
    let mut cfg = config.clone();
    if spec.verify {
        cfg.carry_data = true;
    }
    cfg.validate()?;
    validate_scenario(&cfg, spec)?;

    let n = cfg.num_accelerators;
    let m = spec.message_bytes;
    let offsets = offsets(&cfg, spec);
    let quant_spec = QuantBlockSpec::default();
    let marks: Marks = Rc::new(RefCell::new(Vec::new()));

    // Switch devices.
    let switches: Vec<Box<dyn SwitchDevice>> = match spec.algorithm {
        Algorithm::Scin | Algorithm::ScinInq => {
            let inq = spec.algorithm == Algorithm::ScinInq;
            let stripes = stripe_ranges(m, cfg.wave_size_bytes, cfg.num_switches);
            let full_mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
            let mut devices = Vec::with_capacity(cfg.num_switches);
            for (s, &(start, len)) in stripes.iter().enumerate() {
                let mut isa = Isa::new(s, &cfg);
                if len > 0 {
                    isa.push_instruction(
                        scin::stripe_instruction(s, start, len, inq, full_mask, quant_spec),
                        &cfg,
                    )?;
                }
                devices.push(Box::new(isa) as Box<dyn SwitchDevice>);
            }
            devices
        }
        Algorithm::Ring => (0..cfg.num_switches)
            .map(|_| Box::new(InertSwitch) as Box<dyn SwitchDevice>)
            .collect(),
        Algorithm::NvlsLike => (0..cfg.num_switches)
            .map(|s| Box::new(NvlsEngine::new(s, &cfg)) as Box<dyn SwitchDevice>)
            .collect(),
    };

    let mut sim = Simulation::new(&cfg, switches)?;
    sim.fabric.trace = trace;

    // Source data. Generated (and later checked) only when carrying payloads;
    // timing-only runs never touch accelerator memory.
    let elements = (m / cfg.element_type.size_bytes()) as usize;
    let mut sources_f16: Vec<Vec<f16>> = Vec::new();
    let mut sources_f32: Vec<Vec<f32>> = Vec::new();
    if cfg.carry_data {
        for a in 0..n {
            let ep = &mut sim.endpoints[a];
            ep.memory.alloc(DATA_BASE, m as usize);
            match spec.algorithm {
                Algorithm::ScinInq => {
                    let values = seeded_message_f32(cfg.rng_seed, a, m as usize);
                    let tensor = quant::quantize(&values, quant_spec);
                    ep.memory.alloc(SCALE_BASE, tensor.scale_bytes().len());
                    ep.memory.write(a, DATA_BASE, &tensor.code_bytes())?;
                    ep.memory.write(a, SCALE_BASE, &tensor.scale_bytes())?;
                    sources_f32.push(values);
                }
                _ => {
                    let values = seeded_message_f16(cfg.rng_seed, a, elements);
                    ep.memory.write_f16_slice(a, DATA_BASE, &values)?;
                    if spec.algorithm == Algorithm::Ring {
                        let chunk = (m / n as u64) as usize;
                        ep.memory.alloc(STAGING_BASE, 2 * (n - 1) * chunk);
                    }
                    sources_f16.push(values);
                }
            }
        }
    }

    // Agents, one per accelerator.
    let mut agents: Vec<Box<dyn Agent>> = match spec.algorithm {
        Algorithm::Scin | Algorithm::ScinInq => {
            let inq = spec.algorithm == Algorithm::ScinInq;
            let stripes = stripe_ranges(m, cfg.wave_size_bytes, cfg.num_switches);
            (0..n)
                .map(|a| {
                    Box::new(scin::ScinAgent::new(a, offsets[a], &cfg, &stripes, inq))
                        as Box<dyn Agent>
                })
                .collect()
        }
        Algorithm::Ring => (0..n)
            .map(|a| Box::new(ring::RingAgent::new(a, offsets[a], &cfg, m)) as Box<dyn Agent>)
            .collect(),
        Algorithm::NvlsLike => {
            let stripes = stripe_ranges(m, cfg.max_payload_bytes, cfg.num_switches);
            (0..n)
                .map(|a| {
                    Box::new(nvls::NvlsAgent::new(a, offsets[a], &cfg, &stripes, marks.clone()))
                        as Box<dyn Agent>
                })
                .collect()
        }
    };

    let finished_cycle = sim.run(&mut agents)?;
    if let Some(t) = sim.fabric.trace.take() {
        t.finish();
    }

    // Bit-exact correctness against the matching oracle.
    let mut digest = Digest::new();
    if cfg.carry_data {
        verify_results(&mut sim, spec, &sources_f16, &sources_f32, quant_spec, &mut digest)?;
    } else {
        digest.update(&finished_cycle.to_le_bytes());
        digest.update(&sim.fabric.counters.flits_up.to_le_bytes());
        digest.update(&sim.fabric.counters.flits_down.to_le_bytes());
        digest.update(&sim.fabric.counters.payload_link_crossing_bytes.to_le_bytes());
        digest.update(&sim.fabric.counters.sync_link_crossings.to_le_bytes());
    }

    Ok(assemble_report(&sim, spec, finished_cycle, &marks, digest))
}

fn verify_results(
    sim: &mut Simulation,
    spec: &CollectiveSpec,
    sources_f16: &[Vec<f16>],
    sources_f32: &[Vec<f32>],
    quant_spec: QuantBlockSpec,
    digest: &mut Digest,
) -> Result<(), SimError> {
    let n = sim.config.num_accelerators;
    let m = spec.message_bytes as usize;
    let (expected_data, expected_scales): (Vec<u8>, Vec<u8>) = match spec.algorithm {
        Algorithm::Scin | Algorithm::NvlsLike => {
            let reduced = oracle::tree_reduce_f16(sources_f16);
            (f16_bytes(&reduced), Vec::new())
        }
        Algorithm::ScinInq => {
            let reduced: QuantizedTensor = oracle::inq_reduce(sources_f32, quant_spec);
            (reduced.code_bytes(), reduced.scale_bytes())
        }
        Algorithm::Ring => {
            let chunk_elems = sources_f16[0].len() / n;
            let ranges: Vec<(usize, usize)> = (0..n)
                .map(|c| (c * chunk_elems, (c + 1) * chunk_elems))
                .collect();
            let reduced = oracle::ring_reduce_f16(sources_f16, &ranges);
            (f16_bytes(&reduced), Vec::new())
        }
    };
    for a in 0..n {
        let got = sim.endpoints[a].memory.read(a, DATA_BASE, m)?;
        if let Some(off) = first_mismatch(got, &expected_data) {
            return Err(SimError::ResultMismatch {
                algorithm: spec.algorithm.name(),
                accelerator: a,
                byte_offset: off as u64,
            });
        }
        if a == 0 {
            digest.update(got);
        }
        if !expected_scales.is_empty() {
            let got = sim.endpoints[a]
                .memory
                .read(a, SCALE_BASE, expected_scales.len())?;
            if let Some(off) = first_mismatch(got, &expected_scales) {
                return Err(SimError::ResultMismatch {
                    algorithm: spec.algorithm.name(),
                    accelerator: a,
                    byte_offset: (m + off) as u64,
                });
            }
            if a == 0 {
                digest.update(got);
            }
        }
    }
    Ok(())
}

fn f16_bytes(values: &[f16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 2);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn first_mismatch(got: &[u8], expected: &[u8]) -> Option<usize> {
    if got.len() != expected.len() {
        return Some(got.len().min(expected.len()));
    }
    (0..got.len()).find(|&i| got[i] != expected[i])
}

fn assemble_report(
    sim: &Simulation,
    spec: &CollectiveSpec,
    finished_cycle: u64,
    marks: &Marks,
    digest: Digest,
) -> RunReport {
    let cfg = &sim.config;
    let total_time_ps = sim.elapsed_ps(finished_cycle);
    let equivalent_bytes = match spec.algorithm {
        // Quantized payloads stand in for an f16 message twice their size.
        Algorithm::ScinInq => 2 * spec.message_bytes,
        _ => spec.message_bytes,
    };

    // The data window: the portion of the run that moves and reduces the
    // message, excluding arrival sync and completion notification. It ends
    // when the last reduced write lands in accelerator memory — the acks
    // flying home and the completion flags after that are sync.
    let last_write_landed = sim
        .endpoints
        .iter()
        .filter_map(|e| e.last_inc_write_cycle)
        .max();
    let (data_start_cycle, data_end_cycle, basis) = match spec.algorithm {
        Algorithm::Scin | Algorithm::ScinInq => {
            let timelines: Vec<crate::isa::InstrTimeline> =
                sim.switches.iter().flat_map(|s| s.timeline()).collect();
            let start = timelines.iter().map(|t| t.activated_at).min().unwrap_or(0);
            let end = last_write_landed.unwrap_or(finished_cycle);
            (start, end, TimeBasis::DataOnly)
        }
        Algorithm::Ring => (0, finished_cycle, TimeBasis::WithSync),
        Algorithm::NvlsLike => {
            let marks = marks.borrow();
            let start = marks
                .iter()
                .filter(|(l, _)| l.starts_with("barrier-in done"))
                .map(|&(_, c)| c)
                .min()
                .unwrap_or(0);
            let end = last_write_landed.unwrap_or(finished_cycle);
            (start, end, TimeBasis::DataOnly)
        }
    };
    let data_time_ps = sim.elapsed_ps(data_end_cycle.saturating_sub(data_start_cycle));
    let sync_overhead_ps = total_time_ps.saturating_sub(data_time_ps);
    let bandwidth_time_ps = match basis {
        TimeBasis::DataOnly => data_time_ps,
        TimeBasis::WithSync => total_time_ps,
    };
    let achieved = if bandwidth_time_ps == 0 {
        0.0
    } else {
        equivalent_bytes as f64 / (bandwidth_time_ps as f64 * 1e-12)
    };

    let phases = match spec.algorithm {
        Algorithm::Ring => vec![Phase {
            name: "ring steps".into(),
            start_ps: 0,
            end_ps: total_time_ps,
        }],
        _ => vec![
            Phase {
                name: "arrival sync".into(),
                start_ps: 0,
                end_ps: sim.elapsed_ps(data_start_cycle),
            },
            Phase {
                name: "reduce".into(),
                start_ps: sim.elapsed_ps(data_start_cycle),
                end_ps: sim.elapsed_ps(data_end_cycle),
            },
            Phase {
                name: "completion".into(),
                start_ps: sim.elapsed_ps(data_end_cycle),
                end_ps: total_time_ps,
            },
        ],
    };

    RunReport {
        algorithm: spec.algorithm.name().to_string(),
        message_bytes: spec.message_bytes,
        equivalent_bytes,
        num_accelerators: cfg.num_accelerators,
        num_switches: cfg.num_switches,
        total_cycles: finished_cycle,
        clock_period_ps: cfg.clock_period_ps,
        total_time_ps,
        data_time_ps,
        sync_overhead_ps,
        bandwidth_basis: basis,
        achieved_bandwidth_bytes_per_sec: achieved,
        payload_bytes_moved: sim.fabric.counters.payload_link_crossing_bytes,
        phases,
        counters: sim.fabric.counters.clone(),
        correctness_digest: Some(digest.finish_hex()),
    }
}
