//! Master-worker runs over TCP loopback: result equivalence with the
//! local mode, determinism across worker counts, fault recovery, the
//! phase barrier, and the self-scheduling makespan bound.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use edm_core::ccm::{CcmParams, SentinelRecord};
use edm_core::io::{read_manifest, write_dataset_edm1, Dtype, Format, RowSink};
use edm_core::scheduler::{
    run_worker, run_worker_with, Compute, Master, MasterConfig, WorkerConfig,
};
use edm_core::synth::noise_dataset;
use edm_core::types::OptimalEmbedding;
use edm_core::{Result, TimeSeriesSet};

fn master_config(dataset: &Path, output: &Path, e_max: usize) -> MasterConfig {
    MasterConfig {
        bind: "127.0.0.1:0".into(),
        dataset_path: dataset.to_path_buf(),
        format: Format::Edm1,
        params: CcmParams::new(e_max, 1),
        output_path: output.to_path_buf(),
        manifest_path: None,
        opt_e_path: None,
        tasks_per_request: 1,
        push_dataset: false,
    }
}

/// Reference output: run locally and stream rows into a sink file.
fn reference_map_file(ts: &TimeSeriesSet, params: &CcmParams, path: &Path) {
    let sink = RowSink::create(path, ts.n_series()).unwrap();
    edm_core::scheduler::run_local_streamed(1, ts, params, &|i, row| {
        sink.write_row(i, row).unwrap();
    })
    .unwrap();
}

fn run_distributed(
    config: MasterConfig,
    worker_configs: Vec<WorkerConfig>,
) -> (edm_core::scheduler::MasterReport, Vec<Result<()>>) {
    let master = Master::bind(config).unwrap();
    let addr = master.local_addr().to_string();
    let master_handle = std::thread::spawn(move || master.run());
    let worker_handles: Vec<_> = worker_configs
        .into_iter()
        .map(|mut wc| {
            wc.master_addr = addr.clone();
            std::thread::spawn(move || run_worker(&wc))
        })
        .collect();
    let report = master_handle.join().unwrap().unwrap();
    let worker_results = worker_handles
        .into_iter()
        .map(|h| h.join().unwrap())
        .collect();
    (report, worker_results)
}

fn worker(dir: &Path, id: u32) -> WorkerConfig {
    let mut wc = WorkerConfig::new("placeholder");
    wc.threads = 1;
    wc.worker_id = id;
    wc.workdir = dir.to_path_buf();
    wc
}

#[test]
fn one_worker_collects_all_results_and_matches_local() {
    let dir = tempfile::tempdir().unwrap();
    let ts = noise_dataset(5, 80, 31).unwrap();
    let dataset = dir.path().join("data.edm1");
    write_dataset_edm1(&dataset, &ts, Dtype::F64).unwrap();
    let params = CcmParams::new(3, 1);

    let reference = dir.path().join("reference.edm1");
    reference_map_file(&ts, &params, &reference);

    let output = dir.path().join("map.edm1");
    let (report, worker_results) = run_distributed(
        master_config(&dataset, &output, 3),
        vec![worker(dir.path(), 1)],
    );
    assert_eq!(report.n_series, 5);
    assert_eq!(report.workers_seen, 1);
    assert!(worker_results[0].is_ok());
    assert_eq!(
        std::fs::read(&output).unwrap(),
        std::fs::read(&reference).unwrap()
    );

    let manifest = read_manifest(&report.manifest_path).unwrap();
    assert_eq!(manifest.rows.len(), 5);
    assert!(manifest.rows.iter().all(|r| r.worker == "w1"));
    assert!(report.opt_e_path.exists());
}

#[test]
fn worker_counts_produce_byte_identical_maps() {
    let dir = tempfile::tempdir().unwrap();
    let ts = noise_dataset(8, 70, 5).unwrap();
    let dataset = dir.path().join("data.edm1");
    write_dataset_edm1(&dataset, &ts, Dtype::F64).unwrap();

    let mut outputs = Vec::new();
    for count in [1usize, 2, 4] {
        let output = dir.path().join(format!("map-{count}.edm1"));
        let workers = (0..count)
            .map(|i| worker(dir.path(), 100 * count as u32 + i as u32))
            .collect();
        let (_, results) = run_distributed(master_config(&dataset, &output, 3), workers);
        assert!(results.iter().all(|r| r.is_ok()));
        outputs.push(std::fs::read(&output).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn pushed_dataset_with_inline_results_matches_path_mode() {
    let dir = tempfile::tempdir().unwrap();
    let ts = noise_dataset(6, 60, 9).unwrap();
    let dataset = dir.path().join("data.edm1");
    write_dataset_edm1(&dataset, &ts, Dtype::F64).unwrap();

    let path_output = dir.path().join("by-path.edm1");
    run_distributed(
        master_config(&dataset, &path_output, 3),
        vec![worker(dir.path(), 7)],
    );

    let push_output = dir.path().join("by-push.edm1");
    let mut config = master_config(&dataset, &push_output, 3);
    config.push_dataset = true;
    let (report, results) = run_distributed(config, vec![worker(dir.path(), 8)]);
    assert!(results[0].is_ok());
    // Inline rows are merged on arrival; the final pass copies nothing.
    let manifest = read_manifest(&report.manifest_path).unwrap();
    assert!(manifest
        .rows
        .iter()
        .all(|r| r.path == push_output.to_string_lossy()));

    assert_eq!(
        std::fs::read(&path_output).unwrap(),
        std::fs::read(&push_output).unwrap()
    );
}

#[test]
fn killed_worker_does_not_corrupt_the_map() {
    let dir = tempfile::tempdir().unwrap();
    let ts = noise_dataset(10, 200, 13).unwrap();
    let dataset = dir.path().join("data.edm1");
    write_dataset_edm1(&dataset, &ts, Dtype::F64).unwrap();
    let params = CcmParams::new(3, 1);

    let reference = dir.path().join("reference.edm1");
    reference_map_file(&ts, &params, &reference);

    let output = dir.path().join("map.edm1");
    let master = Master::bind(master_config(&dataset, &output, 3)).unwrap();
    let addr = master.local_addr().to_string();
    let master_handle = std::thread::spawn(move || master.run());

    // The dying worker runs alone first so it is guaranteed to pick up
    // phase-2 work; it never acknowledges its second row.
    let mut dying = worker(dir.path(), 66);
    dying.master_addr = addr.clone();
    dying.fail_after_rows = Some(2);
    dying.max_reconnect_attempts = 0;
    let dying_handle = std::thread::spawn(move || run_worker(&dying));

    std::thread::sleep(Duration::from_millis(100));
    let mut healthy = worker(dir.path(), 67);
    healthy.master_addr = addr;
    let healthy_handle = std::thread::spawn(move || run_worker(&healthy));

    let report = master_handle.join().unwrap().unwrap();
    assert!(
        dying_handle.join().unwrap().is_err(),
        "injected fault must surface"
    );
    assert!(healthy_handle.join().unwrap().is_ok());
    assert_eq!(report.n_series, 10);
    assert_eq!(
        std::fs::read(&output).unwrap(),
        std::fs::read(&reference).unwrap()
    );
}

// --- fake computes for scheduling-behavior tests ---

struct DelayCompute {
    n: usize,
    delays: Vec<Duration>,
}

impl Compute for DelayCompute {
    fn n_series(&self) -> usize {
        self.n
    }

    fn simplex(&self, series: usize, _e_lo: usize, e_hi: usize) -> Result<OptimalEmbedding> {
        Ok(OptimalEmbedding {
            series_id: series,
            best_e: 1,
            rho: 0.5,
            rho_by_e: vec![0.5; e_hi],
            feasible_e_max: e_hi,
        })
    }

    fn ccm_row(&self, series: usize, _opt_e: &[usize]) -> Result<(Vec<f64>, Vec<SentinelRecord>)> {
        std::thread::sleep(self.delays[series]);
        Ok((vec![0.0; self.n], Vec::new()))
    }
}

fn skewed_delays(n: usize, seed: u64) -> Vec<Duration> {
    // Deterministic long-tailed distribution in [5, 130] ms.
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            Duration::from_micros(5_000 + (u * u * u * 125_000.0) as u64)
        })
        .collect()
}

#[test]
fn makespan_respects_self_scheduling_bound() {
    let dir = tempfile::tempdir().unwrap();
    let n = 24usize;
    let workers = 4usize;
    let ts = noise_dataset(n, 20, 1).unwrap();
    let dataset = dir.path().join("data.edm1");
    write_dataset_edm1(&dataset, &ts, Dtype::F64).unwrap();

    for seed in 0..10u64 {
        let delays = skewed_delays(n, seed);
        let total: Duration = delays.iter().sum();
        let max = delays.iter().max().copied().unwrap();
        let p = workers.min(n) as f64;
        let ideal = total.as_secs_f64() / p;
        let bound = (1.0 + 1.0 / p) * ideal + max.as_secs_f64();

        let output = dir.path().join(format!("map-{seed}.edm1"));
        let master = Master::bind(master_config(&dataset, &output, 2)).unwrap();
        let addr = master.local_addr().to_string();
        let master_handle = std::thread::spawn(move || master.run());
        let handles: Vec<_> = (0..workers)
            .map(|i| {
                let mut wc = worker(dir.path(), seed as u32 * 10 + i as u32);
                wc.master_addr = addr.clone();
                let delays = delays.clone();
                std::thread::spawn(move || {
                    run_worker_with(&wc, &|ts, _params| {
                        Arc::new(DelayCompute {
                            n: ts.n_series(),
                            delays: delays.clone(),
                        })
                    })
                })
            })
            .collect();
        let report = master_handle.join().unwrap().unwrap();
        for h in handles {
            h.join().unwrap().unwrap();
        }
        assert!(
            report.phase2_secs <= bound,
            "seed {seed}: makespan {:.3}s exceeds bound {bound:.3}s (ideal {ideal:.3}s, max {:.3}s)",
            report.phase2_secs,
            max.as_secs_f64()
        );
    }
}

struct BarrierCompute {
    n: usize,
    simplex_done: Arc<AtomicUsize>,
    violations: Arc<AtomicUsize>,
}

impl Compute for BarrierCompute {
    fn n_series(&self) -> usize {
        self.n
    }

    fn simplex(&self, series: usize, _e_lo: usize, e_hi: usize) -> Result<OptimalEmbedding> {
        // Stagger completions so a premature phase-2 dispatch would race in.
        std::thread::sleep(Duration::from_millis(1 + (series as u64 * 7) % 20));
        self.simplex_done.fetch_add(1, Ordering::SeqCst);
        Ok(OptimalEmbedding {
            series_id: series,
            best_e: 1 + series % 3,
            rho: 0.1,
            rho_by_e: vec![0.1; e_hi],
            feasible_e_max: e_hi,
        })
    }

    fn ccm_row(&self, _series: usize, opt_e: &[usize]) -> Result<(Vec<f64>, Vec<SentinelRecord>)> {
        let complete = self.simplex_done.load(Ordering::SeqCst) == self.n
            && opt_e.len() == self.n
            && opt_e.iter().all(|&e| e >= 1);
        if !complete {
            self.violations.fetch_add(1, Ordering::SeqCst);
        }
        Ok((vec![0.0; self.n], Vec::new()))
    }
}

#[test]
fn no_row_task_runs_before_phase1_completes() {
    let dir = tempfile::tempdir().unwrap();
    let n = 16usize;
    let ts = noise_dataset(n, 20, 2).unwrap();
    let dataset = dir.path().join("data.edm1");
    write_dataset_edm1(&dataset, &ts, Dtype::F64).unwrap();

    let simplex_done = Arc::new(AtomicUsize::new(0));
    let violations = Arc::new(AtomicUsize::new(0));

    let output = dir.path().join("map.edm1");
    let master = Master::bind(master_config(&dataset, &output, 3)).unwrap();
    let addr = master.local_addr().to_string();
    let master_handle = std::thread::spawn(move || master.run());
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let mut wc = worker(dir.path(), 200 + i);
            wc.master_addr = addr.clone();
            let simplex_done = simplex_done.clone();
            let violations = violations.clone();
            std::thread::spawn(move || {
                run_worker_with(&wc, &|ts, _| {
                    Arc::new(BarrierCompute {
                        n: ts.n_series(),
                        simplex_done: simplex_done.clone(),
                        violations: violations.clone(),
                    })
                })
            })
        })
        .collect();
    master_handle.join().unwrap().unwrap();
    for h in handles {
        h.join().unwrap().unwrap();
    }
    assert_eq!(violations.load(Ordering::SeqCst), 0);
}
