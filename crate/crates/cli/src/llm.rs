//! The llm-study job: simulate the workload's All-Reduce points, compose
//! them with a compute profile, and tabulate TTFT/TPOT for the ring
//! baseline and the offloaded plans.

use crate::jobs::Job;
use crate::CliError;
use scin_core::collectives::{Algorithm, CollectiveSpec};
use scin_core::config::SimConfig;
use scin_core::llmperf::{
    allreduce_message_bytes, estimate_ttft_tpot, synthetic_profile, AllReducePlan, CommTable,
    CommTables, ComputeProfile, InferenceWorkload, ModelShape, Precision, Stage,
    DECODE_COMM_FRACTION_FP16, DECODE_COMM_FRACTION_FP8, PREFILL_COMM_FRACTION_FP16,
    PREFILL_COMM_FRACTION_FP8,
};
use scin_core::report::RunReport;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

struct StudyPlan {
    shape: ModelShape,
    workload: InferenceWorkload,
    tp_size: u32,
    precision: Precision,
    /// f16 message sizes the comm tables are sampled at, ascending.
    sizes: Vec<u64>,
}

fn plan(job: &Job) -> Result<StudyPlan, CliError> {
    let Job::LlmStudy {
        model,
        batch_size,
        prefill_length,
        output_tokens,
        tp_size,
        precision,
        ..
    } = job
    else {
        unreachable!("plan called on an llm-study job");
    };
    let shape = match model.as_str() {
        "llama2-7b" => ModelShape::llama2_7b(),
        "llama2-13b" => ModelShape::llama2_13b(),
        "llama2-70b" => ModelShape::llama2_70b(),
        other => {
            return Err(CliError::config(format!(
                "unknown model {other:?}; expected llama2-7b, llama2-13b, or llama2-70b"
            )))
        }
    };
    let precision = Precision::from_str(precision).map_err(CliError::config)?;
    let workload = InferenceWorkload {
        batch_size: *batch_size,
        prefill_length: *prefill_length,
        output_tokens: *output_tokens,
    };
    let prefill_msg = allreduce_message_bytes(Stage::Prefill, &shape, &workload);
    let decode_msg = allreduce_message_bytes(Stage::Decode, &shape, &workload);
    // Anchor the interpolation at both stage sizes plus a few midpoints.
    let mut sizes = BTreeSet::from([decode_msg, prefill_msg]);
    for mid in [64 * 1024, 1 << 20, 4 << 20] {
        if mid > decode_msg && mid < prefill_msg {
            sizes.insert(mid);
        }
    }
    Ok(StudyPlan {
        shape,
        workload,
        tp_size: *tp_size,
        precision,
        sizes: sizes.into_iter().collect(),
    })
}

/// The simulations an llm-study job needs: every sampled size for the ring
/// and offloaded paths, and half-size (code-byte) runs for the quantized
/// path, in one fixed order.
pub fn study_units(
    job: &Job,
    base_config: &SimConfig,
) -> Result<Vec<(SimConfig, CollectiveSpec)>, CliError> {
    let plan = plan(job)?;
    let mut units = Vec::new();
    for algorithm in [Algorithm::Ring, Algorithm::Scin, Algorithm::ScinInq] {
        for &bytes in &plan.sizes {
            let native = match algorithm {
                Algorithm::ScinInq => bytes / 2,
                _ => bytes,
            };
            units.push((
                base_config.clone(),
                CollectiveSpec::new(algorithm, native),
            ));
        }
    }
    Ok(units)
}

/// Render the study CSV (`workload, algorithm, ttft_ns, tpot_ns, speedup`,
/// speedup being TTFT versus the ring baseline) from the reports produced
/// by [`study_units`].
pub fn study_csv(job: &Job, reports: &[RunReport]) -> Result<String, CliError> {
    let Job::LlmStudy { profile_csv, model, .. } = job else {
        unreachable!("study_csv called on an llm-study job");
    };
    let plan = plan(job)?;
    let k = plan.sizes.len();
    assert_eq!(reports.len(), 3 * k, "one report per study unit");

    let mut tables = CommTables::new();
    let mut ring_table = CommTable::new();
    for (chunk, algorithm) in reports
        .chunks(k)
        .zip([Algorithm::Ring, Algorithm::Scin, Algorithm::ScinInq])
    {
        let mut table = CommTable::new();
        for report in chunk {
            table.insert(report.equivalent_bytes, report.total_time_ps);
        }
        if algorithm == Algorithm::Ring {
            ring_table = table.clone();
        }
        tables.add(algorithm, table);
    }

    let profile = match profile_csv {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            ComputeProfile::from_csv(&text)?
        }
        None => {
            let (f_prefill, f_decode) = match plan.precision {
                Precision::Fp16 => (PREFILL_COMM_FRACTION_FP16, DECODE_COMM_FRACTION_FP16),
                Precision::Fp8 => (PREFILL_COMM_FRACTION_FP8, DECODE_COMM_FRACTION_FP8),
            };
            synthetic_profile(
                &plan.shape,
                &plan.workload,
                plan.tp_size,
                plan.precision,
                &ring_table,
                f_prefill,
                f_decode,
            )?
        }
    };

    let workload_id = format!(
        "{model}_b{}_s{}_tok{}_tp{}_{}",
        plan.workload.batch_size,
        plan.workload.prefill_length,
        plan.workload.output_tokens,
        plan.tp_size,
        plan.precision,
    );
    let mut csv = String::from("workload,algorithm,ttft_ns,tpot_ns,speedup\n");
    for (name, candidate) in [
        ("ring", AllReducePlan::ring()),
        ("scin", AllReducePlan::offloaded()),
        ("scin-inq", AllReducePlan::offloaded_quantized_prefill()),
    ] {
        let s = estimate_ttft_tpot(
            &profile,
            &plan.shape,
            &plan.workload,
            plan.tp_size,
            plan.precision,
            &tables,
            &candidate,
        )?;
        writeln!(
            csv,
            "{},{},{:.1},{:.1},{:.4}",
            workload_id,
            name,
            s.candidate.ttft.total_ps() / 1e3,
            s.candidate.tpot.total_ps() / 1e3,
            s.ttft_speedup,
        )
        .expect("string write");
        println!(
            "llm {workload_id} {name}: TTFT {:.3} ms (x{:.3}), TPOT {:.3} us (x{:.3})",
            s.candidate.ttft.total_ps() / 1e9,
            s.ttft_speedup,
            s.candidate.tpot.total_ps() / 1e6,
            s.tpot_speedup,
        );
    }
    Ok(csv)
}
