//! Benchmark harness: runs the full pipeline on generated dummy datasets
//! and records wall time per phase plus the per-function breakdown (kNN,
//! lookup, corrcoef, io).

use std::time::Instant;

use crate::ccm::CcmParams;
use crate::error::Result;
use crate::io::RowSink;
use crate::metrics::MetricsSnapshot;
use crate::scheduler::run_local_streamed;
use crate::synth::scaled_dummy;

#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub mode: &'static str,
    pub n: usize,
    pub l: usize,
    pub e_max: usize,
    pub threads: usize,
    pub run: usize,
    pub phase1_wall_secs: f64,
    pub phase2_wall_secs: f64,
    pub total_wall_secs: f64,
    pub phase1: MetricsSnapshot,
    pub phase2: MetricsSnapshot,
}

impl BenchRecord {
    pub const CSV_HEADER: &'static str = "mode,n,l,e_max,threads,run,phase1_wall_secs,\
phase2_wall_secs,total_wall_secs,phase1_knn_secs,phase1_lookup_secs,phase1_corrcoef_secs,\
phase2_knn_secs,phase2_lookup_secs,phase2_corrcoef_secs,phase2_io_secs";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.mode,
            self.n,
            self.l,
            self.e_max,
            self.threads,
            self.run,
            self.phase1_wall_secs,
            self.phase2_wall_secs,
            self.total_wall_secs,
            self.phase1.knn_secs,
            self.phase1.lookup_secs,
            self.phase1.corrcoef_secs,
            self.phase2.knn_secs,
            self.phase2.lookup_secs,
            self.phase2.corrcoef_secs,
            self.phase2.io_secs,
        )
    }
}

/// One timed pipeline run on a generated dataset, writing the map to a
/// throwaway sink so output cost is measured too.
pub fn bench_once(
    mode: &'static str,
    n: usize,
    l: usize,
    e_max: usize,
    threads: usize,
    run: usize,
    seed: u64,
) -> Result<BenchRecord> {
    let ts = scaled_dummy(n, l, seed)?;
    let params = CcmParams::new(e_max, 1);
    let dir = tempfile_dir()?;
    let sink = RowSink::create(&dir.join(format!("bench-{mode}-{n}x{l}-{run}.edm1")), n)?;
    let io_nanos = std::sync::atomic::AtomicU64::new(0);

    let started = Instant::now();
    let outcome = run_local_streamed(threads, &ts, &params, &|i, row| {
        let t0 = Instant::now();
        sink.write_row(i, row).expect("bench sink write");
        io_nanos.fetch_add(
            t0.elapsed().as_nanos() as u64,
            std::sync::atomic::Ordering::Relaxed,
        );
    })?;
    let total = started.elapsed().as_secs_f64();

    let mut phase2 = outcome.phase2_metrics;
    phase2.io_secs += io_nanos.load(std::sync::atomic::Ordering::Relaxed) as f64 / 1e9;
    Ok(BenchRecord {
        mode,
        n,
        l,
        e_max,
        threads,
        run,
        phase1_wall_secs: outcome.phase1_secs,
        phase2_wall_secs: outcome.phase2_secs,
        total_wall_secs: total,
        phase1: outcome.phase1_metrics,
        phase2,
    })
}

fn tempfile_dir() -> Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join("edm-bench");
    std::fs::create_dir_all(&dir).map_err(|e| crate::error::Error::io(&dir, e))?;
    Ok(dir)
}

/// Time-step scaling: fixed N, a sweep over L. The kNN phase dominates as
/// L grows (quadratic in L).
pub fn bench_scale_l(
    n: usize,
    ls: &[usize],
    e_max: usize,
    threads: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for &l in ls {
        for run in 0..runs {
            out.push(bench_once("scale-l", n, l, e_max, threads, run, seed)?);
        }
    }
    Ok(out)
}

/// Series-count scaling: fixed L, a sweep over N. The lookup phase
/// dominates as N grows (quadratic in N).
pub fn bench_scale_n(
    l: usize,
    ns: &[usize],
    e_max: usize,
    threads: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for &n in ns {
        for run in 0..runs {
            out.push(bench_once("scale-n", n, l, e_max, threads, run, seed)?);
        }
    }
    Ok(out)
}

/// Thread scaling on one dataset size.
pub fn bench_workers(
    n: usize,
    l: usize,
    e_max: usize,
    thread_counts: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for &threads in thread_counts {
        for run in 0..runs {
            out.push(bench_once("workers", n, l, e_max, threads, run, seed)?);
        }
    }
    Ok(out)
}

/// Median of a sample (not in-place; ties split evenly).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
