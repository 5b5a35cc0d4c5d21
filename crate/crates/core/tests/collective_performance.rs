//! Timing- and bandwidth-level checks of the All-Reduce data paths on the
//! switch-class system: latency ordering at small messages, bandwidth
//! asymptotes at mid-size ones, and the quantized path's equivalent-bandwidth
//! gain. Large-message sweeps live in the acceptance suite; everything here
//! stays at or below 4 MiB to keep the runtime in seconds.

use scin_core::collectives::{run_collective, Algorithm, CollectiveSpec};
use scin_core::config::SimConfig;
use scin_core::report::RunReport;

fn run(cfg: &SimConfig, algo: Algorithm, bytes: u64) -> RunReport {
    run_collective(cfg, &CollectiveSpec::new(algo, bytes)).unwrap()
}

fn gbps(report: &RunReport) -> f64 {
    report.achieved_bandwidth_bytes_per_sec / 1e9
}

#[test]
fn small_message_latency_ordering() {
    // 4 KB: the offloaded path needs two data hops and one sync op, the
    // multicast baseline four data hops and two sync barriers, the ring
    // 2(n-1) fenced steps. Total (sync-included) latency must order
    // accordingly, with a wide gap to the ring.
    let cfg = SimConfig::switch_class_8();
    let scin = run(&cfg, Algorithm::Scin, 4096);
    let nvls = run(&cfg, Algorithm::NvlsLike, 4096);
    let ring = run(&cfg, Algorithm::Ring, 4096);
    assert!(
        scin.total_time_ps < nvls.total_time_ps,
        "offloaded {} ps should beat multicast {} ps at 4 KB",
        scin.total_time_ps,
        nvls.total_time_ps
    );
    assert!(
        nvls.total_time_ps < ring.total_time_ps,
        "multicast {} ps should beat ring {} ps at 4 KB",
        nvls.total_time_ps,
        ring.total_time_ps
    );
    let ratio = ring.total_time_ps as f64 / scin.total_time_ps as f64;
    assert!(ratio >= 5.0, "ring/offloaded latency ratio {ratio:.2} < 5 at 4 KB");
}

#[test]
fn bandwidth_grows_toward_the_payload_bound() {
    let cfg = SimConfig::switch_class_8();
    let bound = cfg.max_payload_bandwidth_bytes_per_sec();
    let mut last = 0.0;
    for bytes in [65536u64, 1 << 20, 4 << 20] {
        let r = run(&cfg, Algorithm::Scin, bytes);
        let bw = r.achieved_bandwidth_bytes_per_sec;
        assert!(
            bw > last,
            "bandwidth should grow with message size: {bw:.3e} after {last:.3e}"
        );
        assert!(
            bw <= bound,
            "achieved {bw:.3e} B/s exceeds the payload bound {bound:.3e}"
        );
        last = bw;
    }
    // By 4 MiB the pipeline is deep enough to be within 15% of the bound.
    assert!(
        last >= 0.85 * bound,
        "4 MiB bandwidth {last:.3e} below 85% of the payload bound {bound:.3e}"
    );
}

#[test]
fn ring_bandwidth_respects_its_algorithm_bound() {
    // Ring All-Reduce moves 2(n-1)/n of the message over every link per
    // direction, capping algorithm bandwidth at n/(2(n-1)) of the payload
    // bound regardless of message size.
    let cfg = SimConfig::switch_class_8();
    let n = cfg.num_accelerators as f64;
    let bound = cfg.max_payload_bandwidth_bytes_per_sec() * n / (2.0 * (n - 1.0));
    for bytes in [1u64 << 20, 4 << 20] {
        let r = run(&cfg, Algorithm::Ring, bytes);
        assert!(
            r.achieved_bandwidth_bytes_per_sec <= bound,
            "ring bandwidth {:.3e} exceeds its bound {bound:.3e} at {bytes} B",
            r.achieved_bandwidth_bytes_per_sec
        );
    }
}

#[test]
fn multicast_bandwidth_respects_its_fanout_bound() {
    // The multicast engine reads n copies up and replicates n copies down
    // per n chunks reduced, capping at n/(n+1) of the payload bound. Its
    // four-hop chunk pipeline converges to that bound more slowly than the
    // two-hop offloaded path, so the floor check sits at 16 MiB.
    let cfg = SimConfig::switch_class_8();
    let n = cfg.num_accelerators as f64;
    let bound = cfg.max_payload_bandwidth_bytes_per_sec() * n / (n + 1.0);
    let mut last = 0.0;
    for bytes in [4u64 << 20, 8 << 20, 16 << 20] {
        let r = run(&cfg, Algorithm::NvlsLike, bytes);
        let bw = r.achieved_bandwidth_bytes_per_sec;
        assert!(bw <= bound, "multicast bandwidth {bw:.3e} exceeds its bound {bound:.3e}");
        assert!(bw > last, "multicast bandwidth should grow: {bw:.3e} after {last:.3e}");
        last = bw;
    }
    assert!(
        last >= 0.80 * bound,
        "multicast bandwidth {last:.3e} below 80% of its bound {bound:.3e} at 16 MiB"
    );
}

#[test]
fn quantized_path_doubles_equivalent_bandwidth() {
    // Same instruction length: int8 codes plus one f16 scale per 64-element
    // block stand in for an f16 message twice the size, at 33/32 the wire
    // bytes — equivalent bandwidth lands near 2 / (33/32) = 1.94x.
    let cfg = SimConfig::switch_class_8();
    let scin = run(&cfg, Algorithm::Scin, 1 << 20);
    let inq = run(&cfg, Algorithm::ScinInq, 1 << 20);
    assert_eq!(inq.equivalent_bytes, 2 * inq.message_bytes);
    let ratio = gbps(&inq) / gbps(&scin);
    assert!(
        (1.80..=2.0).contains(&ratio),
        "equivalent-bandwidth gain {ratio:.3} outside [1.80, 2.0]"
    );
}

#[test]
fn sync_overhead_does_not_scale_with_message_size() {
    // Arrival sync and completion notification are fixed-latency exchanges;
    // growing the message 16x must leave the sync overhead untouched.
    let cfg = SimConfig::switch_class_8();
    let small = run(&cfg, Algorithm::Scin, 65536);
    let large = run(&cfg, Algorithm::Scin, 1 << 20);
    let diff = large.sync_overhead_ps.abs_diff(small.sync_overhead_ps);
    assert!(
        diff < 100_000,
        "sync overhead moved by {diff} ps between 64 KiB and 1 MiB"
    );
}

#[test]
fn doubling_the_fabric_leaves_small_message_latency_flat() {
    // Offloaded completion time is hop-dominated: twice the accelerators
    // and switches should not move 4 KB latency by more than 10%. The ring
    // gains 2x the steps and must slow down markedly.
    let cfg8 = SimConfig::switch_class_8();
    let cfg16 = SimConfig::switch_class_16();
    let scin8 = run(&cfg8, Algorithm::Scin, 4096);
    let scin16 = run(&cfg16, Algorithm::Scin, 4096);
    let growth = scin16.total_time_ps as f64 / scin8.total_time_ps as f64;
    assert!(
        growth < 1.10,
        "offloaded 4 KB latency grew {growth:.3}x from 8 to 16 nodes"
    );
    let ring8 = run(&cfg8, Algorithm::Ring, 4096);
    let ring16 = run(&cfg16, Algorithm::Ring, 4096);
    assert!(
        ring16.total_time_ps as f64 > 1.5 * ring8.total_time_ps as f64,
        "ring 4 KB latency should grow with node count: {} -> {} ps",
        ring8.total_time_ps,
        ring16.total_time_ps
    );
}
