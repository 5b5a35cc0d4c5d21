//! Analytic latency model for tensor-parallel transformer inference.
//!
//! In tensor-parallel inference every transformer layer ends its attention
//! and MLP blocks with an All-Reduce over the output activations, and the
//! accelerator stalls until the collective completes — compute and
//! communication do not overlap. Stage latency therefore decomposes into a
//! measured compute term plus a sum of All-Reduce times:
//!
//! - **TTFT** (time to first token) = prefill compute + `2·layers`
//!   All-Reduce operations of `bytes_per_elem·b·s·h` bytes each;
//! - **TPOT** (time per output token) = per-token decode compute +
//!   `2·layers` All-Reduce operations of `bytes_per_elem·b·h` bytes each.
//!
//! Compute comes from a [`ComputeProfile`] (measured on real hardware, or
//! generated by [`synthetic_profile`] to hit a target communication
//! fraction); per-operation communication time is interpolated from a
//! [`CommTable`] built out of simulated collective runs, so the model never
//! pays one fabric simulation per layer.

use crate::collectives::{run_collective, Algorithm, CollectiveSpec};
use crate::config::SimConfig;
use crate::error::SimError;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Inference stage. Prefill processes the whole prompt at once; decode
/// generates output tokens autoregressively, one All-Reduce pair per layer
/// per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Prefill,
    Decode,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Prefill => "prefill",
            Stage::Decode => "decode",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Stage, String> {
        match s {
            "prefill" => Ok(Stage::Prefill),
            "decode" => Ok(Stage::Decode),
            other => Err(format!("unknown stage {other:?} (expected prefill|decode)")),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Compute-kernel precision a profile row was measured at. Communication
/// payloads stay 16-bit either way (frameworks reduce activations in
/// half precision); faster low-precision kernels only shrink the compute
/// share of each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Precision {
    Fp16,
    Fp8,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Fp16 => "fp16",
            Precision::Fp8 => "fp8",
        }
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Precision, String> {
        match s {
            "fp16" => Ok(Precision::Fp16),
            "fp8" => Ok(Precision::Fp8),
            other => Err(format!("unknown precision {other:?} (expected fp16|fp8)")),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Transformer shape parameters that size the All-Reduce traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub num_layers: u32,
    /// Hidden dimension `h` in elements.
    pub hidden_size: u64,
    /// Bytes per communicated element (2 for f16 activations).
    pub comm_precision_bytes: u64,
}

impl ModelShape {
    pub fn new(num_layers: u32, hidden_size: u64, comm_precision_bytes: u64) -> ModelShape {
        ModelShape {
            num_layers,
            hidden_size,
            comm_precision_bytes,
        }
    }

    /// LLaMA-2-7B: 32 layers, h = 4096.
    pub fn llama2_7b() -> ModelShape {
        ModelShape::new(32, 4096, 2)
    }

    /// LLaMA-2-13B: 40 layers, h = 5120.
    pub fn llama2_13b() -> ModelShape {
        ModelShape::new(40, 5120, 2)
    }

    /// LLaMA-2-70B: 80 layers, h = 8192.
    pub fn llama2_70b() -> ModelShape {
        ModelShape::new(80, 8192, 2)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_layers == 0 {
            return Err(SimError::InvalidConfig("num_layers must be positive".into()));
        }
        if self.hidden_size == 0 {
            return Err(SimError::InvalidConfig("hidden_size must be positive".into()));
        }
        if self.comm_precision_bytes == 0 {
            return Err(SimError::InvalidConfig(
                "comm_precision_bytes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Number of output tokens a TPOT measurement averages over.
pub const DEFAULT_OUTPUT_TOKENS: u64 = 64;

/// One inference request shape: batch size, prompt length, output length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceWorkload {
    pub batch_size: u64,
    pub prefill_length: u64,
    pub output_tokens: u64,
}

impl InferenceWorkload {
    pub fn new(batch_size: u64, prefill_length: u64) -> InferenceWorkload {
        InferenceWorkload {
            batch_size,
            prefill_length,
            output_tokens: DEFAULT_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.batch_size == 0 {
            return Err(SimError::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if self.prefill_length == 0 {
            return Err(SimError::InvalidConfig("prefill_length must be ≥ 1".into()));
        }
        if self.output_tokens == 0 {
            return Err(SimError::InvalidConfig("output_tokens must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Bytes moved by one All-Reduce in `stage`: `bytes·b·s·h` during prefill,
/// `bytes·b·h` during decode (one token's activations per request).
pub fn allreduce_message_bytes(
    stage: Stage,
    shape: &ModelShape,
    workload: &InferenceWorkload,
) -> u64 {
    let per_token = shape.comm_precision_bytes * workload.batch_size * shape.hidden_size;
    match stage {
        Stage::Prefill => per_token * workload.prefill_length,
        Stage::Decode => per_token,
    }
}

/// All-Reduce operations in `stage`: two per layer, and during decode two
/// per layer for every generated token.
pub fn allreduce_count(stage: Stage, num_layers: u32, output_tokens: u64) -> u64 {
    match stage {
        Stage::Prefill => 2 * num_layers as u64,
        Stage::Decode => 2 * num_layers as u64 * output_tokens,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct ProfileKey {
    stage: Stage,
    batch_size: u64,
    seq_len: u64,
    tp_size: u32,
    precision: Precision,
}

/// Measured per-stage compute times, keyed by (stage, batch, sequence
/// length, tensor-parallel size, precision). A prefill entry is the whole
/// stage's compute; a decode entry is compute per output token.
#[derive(Debug, Clone, Default)]
pub struct ComputeProfile {
    entries: BTreeMap<ProfileKey, u64>,
}

impl ComputeProfile {
    pub fn new() -> ComputeProfile {
        ComputeProfile::default()
    }

    pub fn insert(
        &mut self,
        stage: Stage,
        batch_size: u64,
        seq_len: u64,
        tp_size: u32,
        precision: Precision,
        compute_ns: u64,
    ) {
        self.entries.insert(
            ProfileKey {
                stage,
                batch_size,
                seq_len,
                tp_size,
                precision,
            },
            compute_ns,
        );
    }

    pub fn get(
        &self,
        stage: Stage,
        batch_size: u64,
        seq_len: u64,
        tp_size: u32,
        precision: Precision,
    ) -> Option<u64> {
        self.entries
            .get(&ProfileKey {
                stage,
                batch_size,
                seq_len,
                tp_size,
                precision,
            })
            .copied()
    }

    fn require(
        &self,
        stage: Stage,
        batch_size: u64,
        seq_len: u64,
        tp_size: u32,
        precision: Precision,
    ) -> Result<u64, SimError> {
        self.get(stage, batch_size, seq_len, tp_size, precision)
            .ok_or_else(|| {
                SimError::InvalidInput {
                    path: "compute profile".into(),
                    reason: format!(
                        "missing row stage={stage} batch={batch_size} seq_len={seq_len} \
                         tp={tp_size} precision={precision}; estimating a workload needs \
                         both a prefill and a decode row for that key"
                    ),
                }
            })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse the profile CSV: header `stage,batch,seq_len,tp,precision,compute_ns`,
    /// one row per measurement.
    pub fn from_csv(text: &str) -> Result<ComputeProfile, SimError> {
        let bad = |line: usize, reason: String| SimError::InvalidInput {
            path: "compute profile csv".into(),
            reason: format!("line {}: {reason}", line + 1),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(0, "empty file".into()))?;
        if header.trim() != "stage,batch,seq_len,tp,precision,compute_ns" {
            return Err(bad(
                0,
                format!(
                    "expected header stage,batch,seq_len,tp,precision,compute_ns, got {header:?}"
                ),
            ));
        }
        let mut profile = ComputeProfile::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(bad(idx, format!("expected 6 fields, got {}", fields.len())));
            }
            let stage = Stage::from_str(fields[0]).map_err(|e| bad(idx, e))?;
            let batch_size: u64 = fields[1]
                .parse()
                .map_err(|e| bad(idx, format!("batch: {e}")))?;
            let seq_len: u64 = fields[2]
                .parse()
                .map_err(|e| bad(idx, format!("seq_len: {e}")))?;
            let tp_size: u32 = fields[3]
                .parse()
                .map_err(|e| bad(idx, format!("tp: {e}")))?;
            let precision = Precision::from_str(fields[4]).map_err(|e| bad(idx, e))?;
            let compute_ns: u64 = fields[5]
                .parse()
                .map_err(|e| bad(idx, format!("compute_ns: {e}")))?;
            profile.insert(stage, batch_size, seq_len, tp_size, precision, compute_ns);
        }
        Ok(profile)
    }

    /// Serialize back to the CSV schema, rows in key order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,batch,seq_len,tp,precision,compute_ns\n");
        for (k, ns) in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                k.stage, k.batch_size, k.seq_len, k.tp_size, k.precision, ns
            ));
        }
        out
    }
}

/// Simulated All-Reduce completion times for one algorithm, keyed by the
/// f16-equivalent message size. Lookups interpolate linearly between
/// simulated points, clamp below the smallest, and extrapolate along the
/// last segment above the largest (completion time is asymptotically
/// linear in message size).
#[derive(Debug, Clone, Default)]
pub struct CommTable {
    points_ps: BTreeMap<u64, u64>,
}

impl CommTable {
    pub fn new() -> CommTable {
        CommTable::default()
    }

    pub fn insert(&mut self, message_bytes: u64, total_time_ps: u64) {
        self.points_ps.insert(message_bytes, total_time_ps);
    }

    pub fn is_empty(&self) -> bool {
        self.points_ps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points_ps.len()
    }

    /// Build a table by simulating `algorithm` at each message size on
    /// `config`. Sizes are native instruction lengths (code bytes for the
    /// quantized path); keys are the f16-equivalent sizes from the run
    /// reports, so one lookup convention serves every algorithm.
    pub fn from_simulations(
        config: &SimConfig,
        algorithm: Algorithm,
        message_sizes: &[u64],
    ) -> Result<CommTable, SimError> {
        let mut table = CommTable::new();
        for &bytes in message_sizes {
            let report = run_collective(config, &CollectiveSpec::new(algorithm, bytes))?;
            table.insert(report.equivalent_bytes, report.total_time_ps);
        }
        Ok(table)
    }

    /// Interpolated completion time for an f16-equivalent message.
    pub fn lookup_ps(&self, message_bytes: u64) -> Result<f64, SimError> {
        let empty = || SimError::InvalidInput {
            path: "comm table".into(),
            reason: "no simulated points".into(),
        };
        let (&first_b, &first_t) = self.points_ps.iter().next().ok_or_else(empty)?;
        let &last_b = self.points_ps.keys().next_back().unwrap();
        if message_bytes <= first_b {
            return Ok(first_t as f64);
        }
        if message_bytes >= last_b {
            // Extrapolate along the last segment; a single-point table
            // degrades to a constant.
            let mut iter = self.points_ps.iter().rev();
            let (&b1, &t1) = iter.next().unwrap();
            return Ok(match iter.next() {
                Some((&b0, &t0)) => {
                    let slope = (t1 as f64 - t0 as f64) / (b1 as f64 - b0 as f64);
                    t1 as f64 + slope * (message_bytes - b1) as f64
                }
                None => t1 as f64,
            });
        }
        let (&b0, &t0) = self.points_ps.range(..=message_bytes).next_back().unwrap();
        if b0 == message_bytes {
            return Ok(t0 as f64);
        }
        let (&b1, &t1) = self.points_ps.range(message_bytes..).next().unwrap();
        let frac = (message_bytes - b0) as f64 / (b1 - b0) as f64;
        Ok(t0 as f64 + frac * (t1 as f64 - t0 as f64))
    }
}

/// Comm tables for every algorithm an estimate compares.
#[derive(Debug, Clone, Default)]
pub struct CommTables {
    tables: BTreeMap<String, CommTable>,
}

impl CommTables {
    pub fn new() -> CommTables {
        CommTables::default()
    }

    pub fn add(&mut self, algorithm: Algorithm, table: CommTable) {
        self.tables.insert(algorithm.name().to_string(), table);
    }

    pub fn lookup_ps(&self, algorithm: Algorithm, message_bytes: u64) -> Result<f64, SimError> {
        self.tables
            .get(algorithm.name())
            .ok_or_else(|| SimError::InvalidInput {
                path: "comm tables".into(),
                reason: format!("no table for algorithm {}", algorithm.name()),
            })?
            .lookup_ps(message_bytes)
    }
}

/// Which algorithm serves each stage. Quantization suits the
/// bandwidth-bound prefill; the latency-bound decode stays unquantized,
/// so the quantized candidate pairs `ScinInq` prefill with `Scin` decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllReducePlan {
    pub prefill: Algorithm,
    pub decode: Algorithm,
}

impl AllReducePlan {
    pub fn ring() -> AllReducePlan {
        AllReducePlan {
            prefill: Algorithm::Ring,
            decode: Algorithm::Ring,
        }
    }

    pub fn offloaded() -> AllReducePlan {
        AllReducePlan {
            prefill: Algorithm::Scin,
            decode: Algorithm::Scin,
        }
    }

    pub fn offloaded_quantized_prefill() -> AllReducePlan {
        AllReducePlan {
            prefill: Algorithm::ScinInq,
            decode: Algorithm::Scin,
        }
    }
}

/// One stage's latency decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageEstimate {
    pub compute_ps: f64,
    pub comm_ps: f64,
}

impl StageEstimate {
    pub fn total_ps(&self) -> f64 {
        self.compute_ps + self.comm_ps
    }

    pub fn comm_fraction(&self) -> f64 {
        if self.total_ps() == 0.0 {
            0.0
        } else {
            self.comm_ps / self.total_ps()
        }
    }
}

/// TTFT and per-token TPOT for one (workload, plan) pairing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyEstimate {
    pub ttft: StageEstimate,
    pub tpot: StageEstimate,
}

/// Latency for one plan: stage compute from the profile plus All-Reduce
/// counts times interpolated per-operation completion time.
pub fn estimate_latency(
    profile: &ComputeProfile,
    shape: &ModelShape,
    workload: &InferenceWorkload,
    tp_size: u32,
    precision: Precision,
    tables: &CommTables,
    plan: &AllReducePlan,
) -> Result<LatencyEstimate, SimError> {
    shape.validate()?;
    workload.validate()?;
    let b = workload.batch_size;
    let s = workload.prefill_length;

    let prefill_compute_ns = profile.require(Stage::Prefill, b, s, tp_size, precision)?;
    let prefill_msg = allreduce_message_bytes(Stage::Prefill, shape, workload);
    let prefill_ops = allreduce_count(Stage::Prefill, shape.num_layers, workload.output_tokens);
    let ttft = StageEstimate {
        compute_ps: prefill_compute_ns as f64 * 1000.0,
        comm_ps: prefill_ops as f64 * tables.lookup_ps(plan.prefill, prefill_msg)?,
    };

    let decode_compute_ns = profile.require(Stage::Decode, b, s, tp_size, precision)?;
    let decode_msg = allreduce_message_bytes(Stage::Decode, shape, workload);
    let ops_per_token = 2 * shape.num_layers as u64;
    let tpot = StageEstimate {
        compute_ps: decode_compute_ns as f64 * 1000.0,
        comm_ps: ops_per_token as f64 * tables.lookup_ps(plan.decode, decode_msg)?,
    };

    Ok(LatencyEstimate { ttft, tpot })
}

/// A candidate plan's latency next to the ring baseline's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupReport {
    pub baseline: LatencyEstimate,
    pub candidate: LatencyEstimate,
    pub ttft_speedup: f64,
    pub tpot_speedup: f64,
}

/// Estimate TTFT and TPOT for `candidate` and for the ring baseline on the
/// same profile, and report the speedups.
pub fn estimate_ttft_tpot(
    profile: &ComputeProfile,
    shape: &ModelShape,
    workload: &InferenceWorkload,
    tp_size: u32,
    precision: Precision,
    tables: &CommTables,
    candidate: &AllReducePlan,
) -> Result<SpeedupReport, SimError> {
    let baseline = estimate_latency(
        profile,
        shape,
        workload,
        tp_size,
        precision,
        tables,
        &AllReducePlan::ring(),
    )?;
    let cand = estimate_latency(profile, shape, workload, tp_size, precision, tables, candidate)?;
    let ratio = |base: StageEstimate, c: StageEstimate| {
        if c.total_ps() == 0.0 {
            1.0
        } else {
            base.total_ps() / c.total_ps()
        }
    };
    Ok(SpeedupReport {
        baseline,
        candidate: cand,
        ttft_speedup: ratio(baseline.ttft, cand.ttft),
        tpot_speedup: ratio(baseline.tpot, cand.tpot),
    })
}

/// Default synthetic-profile calibration targets: the fraction of stage
/// time spent in All-Reduce for f16 tensor-parallel inference on an 8-way
/// system, and the larger fractions left when faster fp8 kernels shrink
/// the compute share.
pub const PREFILL_COMM_FRACTION_FP16: f64 = 0.47;
pub const DECODE_COMM_FRACTION_FP16: f64 = 0.25;
pub const PREFILL_COMM_FRACTION_FP8: f64 = 0.59;
pub const DECODE_COMM_FRACTION_FP8: f64 = 0.30;

/// Generate a profile whose compute terms put the ring baseline at exactly
/// the requested communication fractions for this workload — the knob that
/// lets communication-bound studies run without GPU profiling. Compute is
/// rounded to whole nanoseconds.
pub fn synthetic_profile(
    shape: &ModelShape,
    workload: &InferenceWorkload,
    tp_size: u32,
    precision: Precision,
    ring_table: &CommTable,
    prefill_comm_fraction: f64,
    decode_comm_fraction: f64,
) -> Result<ComputeProfile, SimError> {
    shape.validate()?;
    workload.validate()?;
    for (name, f) in [
        ("prefill_comm_fraction", prefill_comm_fraction),
        ("decode_comm_fraction", decode_comm_fraction),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "{name} must be inside (0, 1), got {f}"
            )));
        }
    }
    let b = workload.batch_size;
    let s = workload.prefill_length;
    let mut profile = ComputeProfile::new();

    let prefill_ops = allreduce_count(Stage::Prefill, shape.num_layers, workload.output_tokens);
    let prefill_comm_ps = prefill_ops as f64
        * ring_table.lookup_ps(allreduce_message_bytes(Stage::Prefill, shape, workload))?;
    let prefill_compute_ns =
        (prefill_comm_ps * (1.0 - prefill_comm_fraction) / prefill_comm_fraction / 1000.0).round();
    profile.insert(
        Stage::Prefill,
        b,
        s,
        tp_size,
        precision,
        prefill_compute_ns as u64,
    );

    let ops_per_token = 2 * shape.num_layers as u64;
    let decode_comm_ps = ops_per_token as f64
        * ring_table.lookup_ps(allreduce_message_bytes(Stage::Decode, shape, workload))?;
    let decode_compute_ns =
        (decode_comm_ps * (1.0 - decode_comm_fraction) / decode_comm_fraction / 1000.0).round();
    profile.insert(
        Stage::Decode,
        b,
        s,
        tp_size,
        precision,
        decode_compute_ns as u64,
    );
    Ok(profile)
}
