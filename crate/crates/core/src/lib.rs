//! Cycle-level simulator for switch-centric in-network collective offload.
//!
//! The crate models a small multi-accelerator fabric in which the switches
//! carry an in-switch accelerator (ISA) that executes collective reductions
//! directly against accelerator memory: the ISA reads operand waves from
//! every participant, reduces them in a fixed tree, and writes the result
//! back in place. Accelerators only signal arrival (one atomic increment per
//! switch) and wait for a completion flag — two data hops and one
//! synchronization hop per datum, against four and two for an
//! accelerator-initiated pull/push scheme.
//!
//! The main pieces:
//!
//! - [`config`] — fabric geometry, link timing, wave/table sizing, seeds.
//! - [`fabric`] — flit-clocked links, per-port dual queue sets (switch-core
//!   vs ISA traffic, demultiplexed by a one-bit header flag), credit flow
//!   control and deficit round-robin transmit arbitration.
//! - [`endpoint`] — accelerator memory, the DMA engine that answers
//!   read/write transactions, and the arrive/poll synchronization client.
//! - [`isa`] — the in-switch accelerator: instruction queue, barrier
//!   counters, wave tables, the reduction pipeline, and the optional
//!   dequantize→reduce→requantize (INQ) path.
//! - [`collectives`] — All-Reduce implementations on top of the fabric
//!   (`Scin`, `ScinInq`, `Ring`, `NvlsLike`), plus order-faithful scalar
//!   oracles and result verification.
//! - [`quant`] — block-wise symmetric int quantization and the functional
//!   reference paths used to study in-network vs ring-hop quantization.
//! - [`llmperf`] — an analytic latency model for tensor-parallel
//!   transformer inference driven by simulated collective times.
//!
//! Everything is deterministic: time is integer picoseconds, every random
//! choice comes from a named counter-based generator seeded from the
//! config, and a run with the same config and seed reproduces its
//! [`report::RunReport`] byte for byte.

pub mod collectives;
pub mod config;
pub mod endpoint;
pub mod engine;
pub mod error;
pub mod fabric;
pub mod isa;
pub mod llmperf;
pub mod quant;
pub mod report;
pub mod rng;
pub mod tensorio;
pub mod trace;
pub mod units;

pub use config::SimConfig;
pub use error::SimError;
pub use report::RunReport;
