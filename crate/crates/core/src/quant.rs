//! Block-wise symmetric integer quantization and the functional reference
//! paths for in-network (INQ) versus ring-hop (RQ) quantized All-Reduce.
//!
//! Format: along the hidden dimension, every `block_elements` values form a
//! block sharing one scale. The scale is `max|x| / qmax` (with
//! `qmax = 2^(bits-1) - 1`), stored as an IEEE binary16; codes are
//! round-half-away-from-zero and saturate at ±qmax. A zero block stores
//! scale 1 and all-zero codes.
//!
//! The arithmetic here — block quantize/dequantize and the balanced
//! source-index reduction tree — is the single definition used by both the
//! functional paths in this module and the in-switch pipeline in
//! [`crate::isa`]; the two are cross-checked bit for bit in the test suites.

use half::f16;
use serde::{Deserialize, Serialize};

/// Block quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantBlockSpec {
    /// Elements per block sharing one scale factor.
    pub block_elements: usize,
    /// Code width in bits (codes are stored one per byte in this model).
    pub bits: u8,
}

impl Default for QuantBlockSpec {
    fn default() -> Self {
        QuantBlockSpec {
            block_elements: 64,
            bits: 8,
        }
    }
}

impl QuantBlockSpec {
    /// Largest representable code magnitude, e.g. 127 for 8 bits.
    pub fn qmax(&self) -> i32 {
        (1i32 << (self.bits - 1)) - 1
    }

    /// Scale-factor bytes per element (f16 scale amortized over the block).
    pub fn scale_bytes_per_element(&self) -> f64 {
        2.0 / self.block_elements as f64
    }

    /// Compression ratio versus 16-bit elements, counting code and scale
    /// bytes. 8-bit/64-element blocks give 2 / (1 + 1/32) = 64/33 ≈ 1.94.
    pub fn compression_ratio_vs_f16(&self) -> f64 {
        let quantized_bytes_per_element =
            self.bits as f64 / 8.0 + self.scale_bytes_per_element();
        2.0 / quantized_bytes_per_element
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.block_elements == 0 {
            return Err("block_elements must be positive".into());
        }
        if !(2..=8).contains(&self.bits) {
            return Err(format!("bits must be in 2..=8, got {}", self.bits));
        }
        Ok(())
    }
}

/// A quantized tensor: one code byte per element plus one f16 scale per
/// block. `len` is the element count (the last block may be partial).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub spec: QuantBlockSpec,
    pub len: usize,
    pub codes: Vec<i8>,
    pub scales: Vec<f16>,
}

impl QuantizedTensor {
    pub fn num_blocks(&self) -> usize {
        self.len.div_ceil(self.spec.block_elements)
    }

    /// Code bytes as raw little-endian storage.
    pub fn code_bytes(&self) -> Vec<u8> {
        self.codes.iter().map(|&c| c as u8).collect()
    }

    /// Scale bytes as raw little-endian f16 storage.
    pub fn scale_bytes(&self) -> Vec<u8> {
        self.scales
            .iter()
            .flat_map(|s| s.to_le_bytes())
            .collect()
    }

    pub fn from_raw(
        spec: QuantBlockSpec,
        len: usize,
        code_bytes: &[u8],
        scale_bytes: &[u8],
    ) -> Self {
        assert_eq!(code_bytes.len(), len);
        let num_blocks = len.div_ceil(spec.block_elements);
        assert_eq!(scale_bytes.len(), num_blocks * 2);
        QuantizedTensor {
            spec,
            len,
            codes: code_bytes.iter().map(|&b| b as i8).collect(),
            scales: scale_bytes
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]))
                .collect(),
        }
    }
}

/// Round half away from zero, the rule used for all code generation.
#[inline]
pub fn round_half_away(x: f32) -> f32 {
    if x >= 0.0 {
        (x + 0.5).floor()
    } else {
        (x - 0.5).ceil()
    }
}

/// Quantize one block in place: returns the f16 scale and writes codes.
///
/// A block of zeros gets scale 1; a block whose scale would round to zero
/// in f16 is clamped to the smallest positive f16 so dequantization stays
/// finite.
pub fn quantize_block(values: &[f32], spec: QuantBlockSpec, codes: &mut [i8]) -> f16 {
    debug_assert_eq!(values.len(), codes.len());
    let qmax = spec.qmax() as f32;
    let mut amax = 0.0f32;
    for &v in values {
        debug_assert!(v.is_finite(), "quantize input must be finite");
        amax = amax.max(v.abs());
    }
    if amax == 0.0 {
        codes.fill(0);
        return f16::ONE;
    }
    let mut scale = f16::from_f32(amax / qmax);
    if scale == f16::from_bits(0) {
        scale = f16::from_bits(1); // smallest positive subnormal
    }
    let inv = f32::from(scale);
    for (c, &v) in codes.iter_mut().zip(values) {
        let q = round_half_away(v / inv).clamp(-qmax, qmax);
        *c = q as i8;
    }
    scale
}

/// Quantize a full tensor block by block.
pub fn quantize(values: &[f32], spec: QuantBlockSpec) -> QuantizedTensor {
    let mut codes = vec![0i8; values.len()];
    let mut scales = Vec::with_capacity(values.len().div_ceil(spec.block_elements));
    for (vals, code_chunk) in values
        .chunks(spec.block_elements)
        .zip(codes.chunks_mut(spec.block_elements))
    {
        scales.push(quantize_block(vals, spec, code_chunk));
    }
    QuantizedTensor {
        spec,
        len: values.len(),
        codes,
        scales,
    }
}

/// Dequantize one element.
#[inline]
pub fn dequantize_code(code: i8, scale: f16) -> f32 {
    code as f32 * f32::from(scale)
}

/// Dequantize a full tensor.
pub fn dequantize(t: &QuantizedTensor) -> Vec<f32> {
    let mut out = Vec::with_capacity(t.len);
    for (block, chunk) in t.codes.chunks(t.spec.block_elements).enumerate() {
        let scale = t.scales[block];
        out.extend(chunk.iter().map(|&c| dequantize_code(c, scale)));
    }
    out
}

/// Balanced reduction over sources in index order: adjacent pairs are
/// summed per level, an odd trailing operand passes through unchanged.
/// This fixed order is shared by the in-switch reduction unit and the
/// scalar oracles, so results are reproducible bit for bit.
#[inline]
pub fn tree_sum(operands: &[f32]) -> f32 {
    debug_assert!(!operands.is_empty());
    let mut level: Vec<f32> = operands.to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            next.push(if pair.len() == 2 { pair[0] + pair[1] } else { pair[0] });
        }
        level = next;
    }
    level[0]
}

/// Per-source quantization event counts for a path simulation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathCounters {
    /// Quantization events that touched source `i`'s data on its way to
    /// the final result (including the shared final quantization).
    pub events_per_source: Vec<u32>,
}

impl PathCounters {
    pub fn max_events(&self) -> u32 {
        self.events_per_source.iter().copied().max().unwrap_or(0)
    }
}

/// Output of a quantized All-Reduce path simulation.
#[derive(Debug, Clone)]
pub struct PathResult {
    /// Values visible at every destination after final dequantization.
    pub values: Vec<f32>,
    /// The quantized tensor that crossed the last hop (codes + scales).
    pub network_output: QuantizedTensor,
    pub counters: PathCounters,
}

/// In-network quantized All-Reduce, functional reference.
///
/// Each source tensor is quantized once (at its producer), the switch
/// dequantizes all of them, reduces with [`tree_sum`] in f32, requantizes
/// once, and every destination dequantizes the broadcast result: exactly
/// two quantization events on any datum's path, independent of N.
pub fn simulate_inq_path(inputs: &[Vec<f32>], spec: QuantBlockSpec) -> PathResult {
    assert!(!inputs.is_empty());
    let len = inputs[0].len();
    assert!(inputs.iter().all(|x| x.len() == len), "ragged inputs");

    let quantized: Vec<QuantizedTensor> =
        inputs.iter().map(|x| quantize(x, spec)).collect();
    let dequantized: Vec<Vec<f32>> = quantized.iter().map(dequantize).collect();

    let mut reduced = Vec::with_capacity(len);
    let mut operands = vec![0.0f32; inputs.len()];
    for i in 0..len {
        for (o, d) in operands.iter_mut().zip(&dequantized) {
            *o = d[i];
        }
        reduced.push(tree_sum(&operands));
    }

    let network_output = quantize(&reduced, spec);
    let values = dequantize(&network_output);
    // Source quantization + the shared in-network requantization.
    let counters = PathCounters {
        events_per_source: vec![2; inputs.len()],
    };
    PathResult {
        values,
        network_output,
        counters,
    }
}

/// Ring-hop quantized All-Reduce, functional reference.
///
/// Emulates reduce-scatter where every hop requantizes the running sum:
/// hop j computes `q(deq(q_prev) + x_j)`, and the final owner's chunk is
/// quantized once more for the all-gather broadcast. Data folded in at hop
/// j passes `N - j` running-sum quantizations plus the final one.
pub fn simulate_rq_path(inputs: &[Vec<f32>], spec: QuantBlockSpec) -> PathResult {
    assert!(inputs.len() >= 2);
    let len = inputs[0].len();
    assert!(inputs.iter().all(|x| x.len() == len), "ragged inputs");
    let n = inputs.len();

    let mut events = vec![0u32; n];
    // Hop 1: source 0 quantizes and sends.
    let mut wire = quantize(&inputs[0], spec);
    events[0] += 1;
    // Hops 2..N: dequantize, add own contribution in f32, requantize.
    for (j, input) in inputs.iter().enumerate().skip(1) {
        let received = dequantize(&wire);
        let sum: Vec<f32> = received
            .iter()
            .zip(input)
            .map(|(&r, &x)| r + x)
            .collect();
        if j == n - 1 {
            // Final owner quantizes once for the all-gather broadcast.
            wire = quantize(&sum, spec);
            for e in events.iter_mut().take(n) {
                *e += 1;
            }
        } else {
            wire = quantize(&sum, spec);
            for e in events.iter_mut().take(j + 1) {
                *e += 1;
            }
        }
    }
    let values = dequantize(&wire);
    PathResult {
        values,
        network_output: wire,
        counters: PathCounters {
            events_per_source: events,
        },
    }
}

/// Mean squared error between two equal-length slices.
pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64
}
