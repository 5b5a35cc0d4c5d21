//! Time and size arithmetic, kept exact in integer picoseconds.
//!
//! Every public API in the crate carries its unit in the name
//! (`_ps`, `_ns`, `_bytes`, `_cycles`, `_bytes_per_sec`). Conversions here
//! use integer arithmetic with explicit rounding so that a cycle count times
//! the cycle period is always an exact picosecond value.

/// Picoseconds per second.
pub const PS_PER_SEC: u64 = 1_000_000_000_000;
/// Picoseconds per nanosecond.
pub const PS_PER_NS: u64 = 1_000;

/// Ceiling division for u64.
#[inline]
pub fn div_ceil_u64(num: u64, den: u64) -> u64 {
    debug_assert!(den > 0);
    num.div_ceil(den)
}

/// Round `value` up to the next multiple of `quantum` (`quantum > 0`).
#[inline]
pub fn round_up_to(value: u64, quantum: u64) -> u64 {
    div_ceil_u64(value, quantum) * quantum
}

/// Convert nanoseconds to picoseconds (exact).
#[inline]
pub fn ns_to_ps(ns: u64) -> u64 {
    ns * PS_PER_NS
}

/// Convert a picosecond duration to cycles of `period_ps`, rounding up.
/// A zero duration is zero cycles.
#[inline]
pub fn ps_to_cycles_ceil(ps: u64, period_ps: u64) -> u64 {
    div_ceil_u64(ps, period_ps)
}

/// Exact picosecond timestamp of a cycle count.
#[inline]
pub fn cycles_to_ps(cycles: u64, period_ps: u64) -> u64 {
    cycles
        .checked_mul(period_ps)
        .expect("cycle count overflowed picosecond range")
}

/// Buffer capacity needed to keep a link of bandwidth `B` busy across a
/// request round trip: `C_min = B * (2*L + L_acc)`.
///
/// `L` is the one-way link latency and `L_acc` the responder's turnaround
/// latency, so `2L + L_acc` is the time from issuing a read until its data
/// returns; by Little's law the in-flight window must hold that many bytes.
/// Computed exactly in u128 and rounded up to a whole byte.
pub fn min_buffer_capacity_bytes(
    bandwidth_bytes_per_sec: u64,
    link_latency_ps: u64,
    response_latency_ps: u64,
) -> u64 {
    let window_ps = 2 * link_latency_ps as u128 + response_latency_ps as u128;
    let numer = bandwidth_bytes_per_sec as u128 * window_ps;
    let bytes = numer.div_ceil(PS_PER_SEC as u128);
    u64::try_from(bytes).expect("buffer capacity overflowed u64")
}

/// `min_buffer_capacity_bytes` rounded up to a whole number of flits.
pub fn min_buffer_capacity_flit_rounded(
    bandwidth_bytes_per_sec: u64,
    link_latency_ps: u64,
    response_latency_ps: u64,
    flit_bytes: u64,
) -> u64 {
    round_up_to(
        min_buffer_capacity_bytes(bandwidth_bytes_per_sec, link_latency_ps, response_latency_ps),
        flit_bytes,
    )
}
