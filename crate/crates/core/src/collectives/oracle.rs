//! Order-faithful scalar references for each collective.
//!
//! Every All-Reduce implementation in this crate commits to an exact
//! floating-point evaluation order, and its oracle reproduces that order
//! with plain scalar code — no fabric, no packets — so fabric results can
//! be compared bit for bit:
//!
//! - the offloaded switch reduction (and the multicast baseline's port
//!   reduction) sums each element over sources in a balanced
//!   adjacent-pair tree, accumulating in f32 and rounding once to f16;
//! - the ring folds hop by hop, rounding to f16 at every hop, chunk `k`
//!   starting at accelerator `k` and visiting `k+1, k+2, ...` in ring
//!   order.

use crate::quant::{self, QuantBlockSpec, QuantizedTensor};
use half::f16;

/// Switch-reduction reference: balanced tree over sources, f32 accumulate,
/// one rounding to f16.
pub fn tree_reduce_f16(inputs: &[Vec<f16>]) -> Vec<f16> {
    let n = inputs[0].len();
    let mut out = Vec::with_capacity(n);
    let mut operands = vec![0.0f32; inputs.len()];
    for e in 0..n {
        for (s, input) in inputs.iter().enumerate() {
            operands[s] = f32::from(input[e]);
        }
        out.push(f16::from_f32(quant::tree_sum(&operands)));
    }
    out
}

/// Quantized-path reference: sources already quantized once, dequantize,
/// tree-reduce in f32, requantize once.
pub fn inq_reduce(inputs_f32: &[Vec<f32>], spec: QuantBlockSpec) -> QuantizedTensor {
    let quantized: Vec<Vec<f32>> = inputs_f32
        .iter()
        .map(|v| quant::dequantize(&quant::quantize(v, spec)))
        .collect();
    let n = quantized[0].len();
    let mut reduced = Vec::with_capacity(n);
    let mut operands = vec![0.0f32; quantized.len()];
    for e in 0..n {
        for (s, q) in quantized.iter().enumerate() {
            operands[s] = q[e];
        }
        reduced.push(quant::tree_sum(&operands));
    }
    quant::quantize(&reduced, spec)
}

/// Ring reference: chunk `k` is folded sequentially starting at
/// accelerator `k`, each hop rounding to f16. `chunk_ranges` gives each
/// chunk's element range.
pub fn ring_reduce_f16(inputs: &[Vec<f16>], chunk_ranges: &[(usize, usize)]) -> Vec<f16> {
    let n_accs = inputs.len();
    assert_eq!(chunk_ranges.len(), n_accs);
    let mut out = vec![f16::ZERO; inputs[0].len()];
    for (k, &(start, end)) in chunk_ranges.iter().enumerate() {
        for e in start..end {
            let mut v = inputs[k][e];
            for hop in 1..n_accs {
                let j = (k + hop) % n_accs;
                v = f16::from_f32(f32::from(v) + f32::from(inputs[j][e]));
            }
            out[e] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_and_ring_agree_on_exact_values() {
        // Small integers are exact in f16, so every order gives the same sum.
        let inputs: Vec<Vec<f16>> = (0..4)
            .map(|a| (0..8).map(|e| f16::from_f32((a + e) as f32)).collect())
            .collect();
        let ranges = [(0, 2), (2, 4), (4, 6), (6, 8)];
        let tree = tree_reduce_f16(&inputs);
        let ring = ring_reduce_f16(&inputs, &ranges);
        assert_eq!(tree, ring);
        assert_eq!(f32::from(tree[3]), 0.0 + 1.0 + 2.0 + 3.0 + 4.0 * 3.0);
    }

    #[test]
    fn tree_and_ring_differ_under_rounding() {
        // With values that round, hop-order matters; the oracles must not
        // silently be the same function.
        let mut differs = false;
        for trial in 0..32 {
            let inputs: Vec<Vec<f16>> = (0..8)
                .map(|a| {
                    (0..16)
                        .map(|e| {
                            let x = ((a * 37 + e * 11 + trial * 101) % 97) as f32 / 7.0 - 6.0;
                            f16::from_f32(x)
                        })
                        .collect()
                })
                .collect();
            let ranges: Vec<(usize, usize)> = (0..8).map(|k| (k * 2, k * 2 + 2)).collect();
            if tree_reduce_f16(&inputs) != ring_reduce_f16(&inputs, &ranges) {
                differs = true;
                break;
            }
        }
        assert!(differs, "expected at least one rounding divergence");
    }
}
