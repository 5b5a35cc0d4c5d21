//! Scenario files and their execution.
//!
//! A scenario file is a JSON array of jobs. Each job expands into one or
//! more simulation units (config + collective spec); units fan out across
//! worker threads, one simulation instance per worker, and every artifact
//! is assembled from the ordered unit results so output bytes never depend
//! on scheduling.

use crate::llm;
use crate::CliError;
use scin_core::collectives::{run_collective_traced, Algorithm, CollectiveSpec};
use scin_core::config::SimConfig;
use scin_core::report::RunReport;
use scin_core::trace::TraceLog;
use scin_core::SimError;
use serde::Deserialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

fn default_wave_counts() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}

fn default_wave_buffer() -> u64 {
    64 * 1024
}

fn default_wave_message() -> u64 {
    8 * 1024 * 1024
}

fn default_wave_algorithm() -> String {
    "scin".into()
}

fn default_batch() -> u64 {
    1
}

fn default_output_tokens() -> u64 {
    scin_core::llmperf::DEFAULT_OUTPUT_TOKENS
}

fn default_tp() -> u32 {
    8
}

fn default_precision() -> String {
    "fp16".into()
}

/// One entry of a scenario file.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Job {
    /// A single All-Reduce run; the full report is written as JSON and
    /// summarized as a row of `runs.csv`.
    Allreduce {
        algorithm: String,
        message_bytes: u64,
        /// Carry payloads and check results against the reduction oracle.
        #[serde(default)]
        verify: bool,
        /// Basename for the report file; defaults to the job position.
        #[serde(default)]
        label: Option<String>,
    },
    /// Bandwidth versus message size for several algorithms.
    SizeSweep {
        algorithms: Vec<String>,
        message_bytes: Vec<u64>,
        #[serde(default)]
        verify: bool,
    },
    /// Bandwidth versus outstanding-wave count at a fixed table budget:
    /// `k` waves of `buffer_bytes / k` each.
    WaveSweep {
        #[serde(default = "default_wave_buffer")]
        buffer_bytes: u64,
        #[serde(default = "default_wave_counts")]
        wave_counts: Vec<usize>,
        #[serde(default = "default_wave_message")]
        message_bytes: u64,
        #[serde(default = "default_wave_algorithm")]
        algorithm: String,
    },
    /// Tensor-parallel inference latency study: simulate All-Reduce times
    /// at the workload's message sizes, compose them with a compute
    /// profile, and compare offloaded plans against the ring baseline.
    LlmStudy {
        /// `llama2-7b`, `llama2-13b`, or `llama2-70b`.
        model: String,
        #[serde(default = "default_batch")]
        batch_size: u64,
        prefill_length: u64,
        #[serde(default = "default_output_tokens")]
        output_tokens: u64,
        #[serde(default = "default_tp")]
        tp_size: u32,
        #[serde(default = "default_precision")]
        precision: String,
        /// Measured compute profile CSV; omitted means a synthetic profile
        /// calibrated to the precision's communication fractions.
        #[serde(default)]
        profile_csv: Option<PathBuf>,
    },
}

pub fn load_jobs(path: &Path) -> Result<Vec<Job>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn parse_algorithm(name: &str) -> Result<Algorithm, CliError> {
    Algorithm::from_str(name).map_err(CliError::config)
}

/// One simulation to run: a fully resolved config and scenario.
struct Unit {
    config: SimConfig,
    spec: CollectiveSpec,
    trace: Option<PathBuf>,
}

/// Run every unit, fanning out across `workers` threads. Results come back
/// in unit order regardless of which worker finished first.
fn run_units(units: Vec<Unit>, workers: usize) -> Vec<Result<RunReport, SimError>> {
    let n = units.len();
    if n == 0 {
        return Vec::new();
    }
    let workers = workers.max(1).min(n);
    if workers == 1 {
        return units.into_iter().map(run_unit).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunReport, SimError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let units: Vec<Mutex<Option<Unit>>> = units.into_iter().map(|u| Mutex::new(Some(u))).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    return;
                }
                let unit = units[i].lock().unwrap().take().expect("unit taken once");
                let result = run_unit(unit);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("all units ran"))
        .collect()
}

fn run_unit(unit: Unit) -> Result<RunReport, SimError> {
    let trace = match &unit.trace {
        Some(path) => Some(TraceLog::create(path)?),
        None => None,
    };
    run_collective_traced(&unit.config, &unit.spec, trace)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Execute a scenario file's jobs and write all artifacts under `out_dir`.
/// Returns the number of simulations run.
pub fn run_jobs(
    jobs: &[Job],
    base_config: &SimConfig,
    out_dir: &Path,
    trace: Option<&Path>,
    workers: usize,
) -> Result<usize, CliError> {
    // Expand jobs into units, remembering each job's slice of the unit list.
    let mut units: Vec<Unit> = Vec::new();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let allreduce_jobs = jobs
        .iter()
        .filter(|j| matches!(j, Job::Allreduce { .. }))
        .count();
    for (idx, job) in jobs.iter().enumerate() {
        let start = units.len();
        match job {
            Job::Allreduce {
                algorithm,
                message_bytes,
                verify,
                ..
            } => {
                let mut spec = CollectiveSpec::new(parse_algorithm(algorithm)?, *message_bytes);
                if *verify {
                    spec = spec.verified();
                }
                let trace_path = trace.map(|t| {
                    if allreduce_jobs == 1 {
                        t.to_path_buf()
                    } else {
                        let mut name = t.as_os_str().to_os_string();
                        name.push(format!(".job{idx}"));
                        PathBuf::from(name)
                    }
                });
                units.push(Unit {
                    config: base_config.clone(),
                    spec,
                    trace: trace_path,
                });
            }
            Job::SizeSweep {
                algorithms,
                message_bytes,
                verify,
            } => {
                for name in algorithms {
                    let algorithm = parse_algorithm(name)?;
                    for &bytes in message_bytes {
                        let mut spec = CollectiveSpec::new(algorithm, bytes);
                        if *verify {
                            spec = spec.verified();
                        }
                        units.push(Unit {
                            config: base_config.clone(),
                            spec,
                            trace: None,
                        });
                    }
                }
            }
            Job::WaveSweep {
                buffer_bytes,
                wave_counts,
                message_bytes,
                algorithm,
            } => {
                let algorithm = parse_algorithm(algorithm)?;
                for &k in wave_counts {
                    if k == 0 || *buffer_bytes % k as u64 != 0 {
                        return Err(CliError::config(format!(
                            "wave-sweep: {k} waves do not divide the {buffer_bytes}-byte buffer"
                        )));
                    }
                    let mut config = base_config.clone();
                    config.table_capacity_bytes = *buffer_bytes;
                    config.waves_per_table = k;
                    config.wave_size_bytes = *buffer_bytes / k as u64;
                    units.push(Unit {
                        config,
                        spec: CollectiveSpec::new(algorithm, *message_bytes),
                        trace: None,
                    });
                }
            }
            Job::LlmStudy { .. } => {
                for (config, spec) in llm::study_units(job, base_config)? {
                    units.push(Unit {
                        config,
                        spec,
                        trace: None,
                    });
                }
            }
        }
        spans.push((start, units.len()));
    }

    let total = units.len();
    let mut results: Vec<Option<Result<RunReport, SimError>>> =
        run_units(units, workers).into_iter().map(Some).collect();

    // Assemble artifacts in job order.
    let mut runs_csv = String::from(
        "label,algorithm,message_bytes,equivalent_bytes,total_time_ns,data_time_ns,\
         sync_overhead_ns,bandwidth_gbytes_per_sec,digest\n",
    );
    for (idx, job) in jobs.iter().enumerate() {
        let (start, end) = spans[idx];
        let reports: Vec<RunReport> = results[start..end]
            .iter_mut()
            .map(|slot| slot.take().expect("span visited once").map_err(CliError::from))
            .collect::<Result<_, _>>()?;
        match job {
            Job::Allreduce { label, .. } => {
                let report = &reports[0];
                let label = label.clone().unwrap_or_else(|| format!("job{idx}"));
                writeln!(
                    runs_csv,
                    "{},{},{},{},{:.1},{:.1},{:.1},{:.3},{}",
                    label,
                    report.algorithm,
                    report.message_bytes,
                    report.equivalent_bytes,
                    report.total_time_ns(),
                    report.data_time_ns(),
                    report.sync_overhead_ps as f64 / 1e3,
                    report.achieved_bandwidth_bytes_per_sec / 1e9,
                    report.correctness_digest.as_deref().unwrap_or("-"),
                )
                .expect("string write");
                write_file(&out_dir.join(format!("report_{label}.json")), &report.to_json())?;
                println!(
                    "run {label}: {} {} B in {:.3} us ({:.3} GB/s)",
                    report.algorithm,
                    report.message_bytes,
                    report.total_time_ns() / 1e3,
                    report.achieved_bandwidth_bytes_per_sec / 1e9,
                );
            }
            Job::SizeSweep { .. } => {
                let mut csv = String::from(
                    "algorithm,message_bytes,equivalent_bytes,total_time_ns,data_time_ns,\
                     bandwidth_gbytes_per_sec\n",
                );
                for report in &reports {
                    writeln!(
                        csv,
                        "{},{},{},{:.1},{:.1},{:.3}",
                        report.algorithm,
                        report.message_bytes,
                        report.equivalent_bytes,
                        report.total_time_ns(),
                        report.data_time_ns(),
                        report.achieved_bandwidth_bytes_per_sec / 1e9,
                    )
                    .expect("string write");
                }
                let path = out_dir.join(format!("bandwidth_job{idx}.csv"));
                write_file(&path, &csv)?;
                println!("size sweep job{idx}: {} points -> {}", reports.len(), path.display());
            }
            Job::WaveSweep {
                buffer_bytes,
                wave_counts,
                ..
            } => {
                let best = reports
                    .iter()
                    .map(|r| r.achieved_bandwidth_bytes_per_sec)
                    .fold(0.0f64, f64::max);
                let mut csv = String::from(
                    "waves,wave_size_bytes,bandwidth_gbytes_per_sec,fraction_of_best,saturated\n",
                );
                for (k, report) in wave_counts.iter().zip(&reports) {
                    let fraction = report.achieved_bandwidth_bytes_per_sec / best;
                    writeln!(
                        csv,
                        "{},{},{:.3},{:.4},{}",
                        k,
                        buffer_bytes / *k as u64,
                        report.achieved_bandwidth_bytes_per_sec / 1e9,
                        fraction,
                        fraction >= 0.95,
                    )
                    .expect("string write");
                }
                let path = out_dir.join(format!("waves_job{idx}.csv"));
                write_file(&path, &csv)?;
                println!("wave sweep job{idx}: {} points -> {}", reports.len(), path.display());
            }
            Job::LlmStudy { .. } => {
                let csv = llm::study_csv(job, &reports)?;
                let path = out_dir.join(format!("llm_job{idx}.csv"));
                write_file(&path, &csv)?;
                println!("llm study job{idx} -> {}", path.display());
            }
        }
    }
    write_file(&out_dir.join("runs.csv"), &runs_csv)?;
    Ok(total)
}
