//! The worker side: connect, receive the job setup, then loop
//! request -> compute -> report until shutdown. Causal-map rows are
//! persisted to a worker-local file before they are acknowledged, so a
//! row acked to the master is always durable.

use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::ccm::CcmParams;
use crate::error::{Error, Result};
use crate::io::{self, encode_row_f32, Format, RowSink};
use crate::metrics::{Category, Timers};
use crate::scheduler::protocol::{
    read_message, write_message, DatasetSource, JobSetup, Message, TaskKind, TaskResult,
    PROTOCOL_VERSION,
};
use crate::scheduler::{sentinel_cause_code, Compute, EdmCompute};
use crate::types::TimeSeriesSet;

/// Env var consulted for the default master address.
pub const MASTER_ADDR_ENV: &str = "EDM_MASTER_ADDR";

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub master_addr: String,
    /// Local pool size for row-internal parallelism.
    pub threads: usize,
    /// Label reported in HELLO and used in row-file names and manifests.
    pub worker_id: u32,
    /// Directory for the worker-local row file.
    pub workdir: PathBuf,
    /// Reconnect attempts (exponential backoff) before giving up.
    pub max_reconnect_attempts: usize,
    /// Fault injection for tests: abort the process loop after this many
    /// completed rows, before acknowledging the last one.
    pub fail_after_rows: Option<usize>,
}

impl WorkerConfig {
    pub fn new(master_addr: impl Into<String>) -> Self {
        WorkerConfig {
            master_addr: master_addr.into(),
            threads: std::thread::available_parallelism().map_or(1, |p| p.get()),
            worker_id: std::process::id(),
            workdir: std::env::temp_dir(),
            max_reconnect_attempts: 5,
            fail_after_rows: None,
        }
    }
}

/// Runs a worker against the real computation backend.
pub fn run_worker(config: &WorkerConfig) -> Result<()> {
    run_worker_with(config, &|ts, params| Arc::new(EdmCompute::new(ts, params)))
}

/// Runs a worker with a custom computation backend (used by tests to
/// inject delays and faults).
pub fn run_worker_with(
    config: &WorkerConfig,
    factory: &dyn Fn(TimeSeriesSet, CcmParams) -> Arc<dyn Compute>,
) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let timers = Timers::new();

    let mut compute: Option<Arc<dyn Compute>> = None;
    let mut job: Option<JobSetup> = None;
    let mut opt_e: Option<Vec<usize>> = None;
    let mut sink: Option<RowSink> = None;
    let mut rows_completed = 0usize;
    let mut done_received = false;

    let mut attempts = 0usize;
    'connection: loop {
        let mut stream = match TcpStream::connect(&config.master_addr) {
            Ok(s) => {
                attempts = 0;
                s
            }
            Err(e) => {
                attempts += 1;
                if attempts > config.max_reconnect_attempts {
                    log::error!("giving up on master {}: {e}", config.master_addr);
                    return Err(Error::MasterUnreachable { attempts });
                }
                let backoff = Duration::from_millis(100u64 << (attempts - 1).min(6));
                log::warn!(
                    "connect to {} failed ({e}); retry {attempts}/{} in {backoff:?}",
                    config.master_addr,
                    config.max_reconnect_attempts
                );
                std::thread::sleep(backoff);
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        write_message(
            &mut stream,
            &Message::Hello {
                version: PROTOCOL_VERSION,
                worker_id: config.worker_id,
                threads: config.threads as u32,
            },
        )?;
        if compute.is_some() {
            // Reconnect with state already loaded: resume immediately.
            write_message(&mut stream, &Message::TaskReq)?;
        }

        loop {
            let msg = match read_message(&mut stream) {
                Ok(Some(m)) => m,
                Ok(None) | Err(_) => {
                    if done_received {
                        return Ok(());
                    }
                    attempts += 1;
                    if attempts > config.max_reconnect_attempts {
                        return Err(Error::MasterUnreachable { attempts });
                    }
                    let backoff = Duration::from_millis(100u64 << (attempts - 1).min(6));
                    log::warn!("connection to master lost; reconnecting in {backoff:?}");
                    std::thread::sleep(backoff);
                    continue 'connection;
                }
            };
            match msg {
                Message::PushDataset(setup) => {
                    if compute.is_none() {
                        let ts = load_dataset(&setup)?;
                        let params = CcmParams {
                            e_max: setup.e_max as usize,
                            tau: setup.tau as usize,
                            exclude_self: setup.exclude_self,
                            ..Default::default()
                        };
                        let c = factory(ts, params);
                        // Warm-up compute before asking for work, so slow
                        // first-task initialization does not skew the
                        // measured task times.
                        pool.install(warmup);
                        compute = Some(c);
                        job = Some(setup);
                        write_message(&mut stream, &Message::TaskReq)?;
                    }
                }
                Message::OptEBcast(v) => {
                    opt_e = Some(v.into_iter().map(|e| e as usize).collect());
                }
                Message::Task(batch) => {
                    let c = compute
                        .as_ref()
                        .ok_or_else(|| Error::Protocol("task before dataset".into()))?;
                    for task in batch {
                        match task.kind {
                            TaskKind::SimplexE => {
                                let opt = pool.install(|| {
                                    c.simplex(
                                        task.series as usize,
                                        task.e_lo as usize,
                                        task.e_hi as usize,
                                    )
                                })?;
                                write_message(
                                    &mut stream,
                                    &Message::Result(TaskResult::Simplex {
                                        task_id: task.task_id,
                                        series: task.series,
                                        best_e: opt.best_e as u32,
                                        rho: opt.rho,
                                        rho_by_e: opt.rho_by_e.clone(),
                                    }),
                                )?;
                            }
                            TaskKind::CcmRow => {
                                let opt = opt_e.as_ref().ok_or_else(|| {
                                    Error::Protocol("row task before optE broadcast".into())
                                })?;
                                let (row, sentinels) =
                                    pool.install(|| c.ccm_row(task.series as usize, opt))?;
                                let sink = match &sink {
                                    Some(s) => s,
                                    None => {
                                        let path = config.workdir.join(format!(
                                            "edm-worker-{}-{}.rows.edm1",
                                            config.worker_id,
                                            std::process::id()
                                        ));
                                        sink = Some(RowSink::create(&path, c.n_series())?);
                                        sink.as_ref().unwrap()
                                    }
                                };
                                let t0 = Instant::now();
                                sink.write_row(task.series as usize, &row)?;
                                timers.add(Category::Io, t0);
                                rows_completed += 1;
                                if config
                                    .fail_after_rows
                                    .is_some_and(|k| rows_completed >= k)
                                {
                                    // Simulated crash: the row is on disk
                                    // but never acknowledged.
                                    log::warn!(
                                        "fault injection: dying after {rows_completed} rows"
                                    );
                                    return Err(Error::Protocol(
                                        "fault injection: worker aborted".into(),
                                    ));
                                }
                                let inline = job
                                    .as_ref()
                                    .is_some_and(|j| j.inline_results)
                                    .then(|| encode_row_f32(&row));
                                write_message(
                                    &mut stream,
                                    &Message::Result(TaskResult::CcmRow {
                                        task_id: task.task_id,
                                        series: task.series,
                                        path: sink.path().to_string_lossy().into_owned(),
                                        inline,
                                        sentinels: sentinels
                                            .iter()
                                            .map(|s| {
                                                (s.col as u32, sentinel_cause_code(s.cause))
                                            })
                                            .collect(),
                                    }),
                                )?;
                            }
                        }
                    }
                    write_message(&mut stream, &Message::TaskReq)?;
                }
                Message::Done => {
                    done_received = true;
                }
                Message::Shutdown => {
                    return if done_received || compute.is_none() {
                        Ok(())
                    } else {
                        Err(Error::Protocol("master shut us down mid-run".into()))
                    };
                }
                other => {
                    log::warn!("unexpected message from master: {other:?}");
                }
            }
        }
    }
}

fn load_dataset(setup: &JobSetup) -> Result<TimeSeriesSet> {
    match &setup.dataset {
        DatasetSource::Path { path, format } => {
            let fmt = match format {
                0 => Format::Csv,
                1 => Format::Edm1,
                other => {
                    return Err(Error::Protocol(format!("bad dataset format code {other}")))
                }
            };
            io::read_dataset(std::path::Path::new(path), fmt)
        }
        DatasetSource::Inline(bytes) => io::read_dataset_edm1_slice(bytes),
    }
}

/// A small throwaway computation that touches the same kernels as real
/// tasks (allocator, thread pool, libm), absorbing one-time start-up cost.
fn warmup() {
    let mut x = 0.42f64;
    let series: Vec<f64> = (0..64)
        .map(|_| {
            x = 3.8 * x * (1.0 - x);
            x
        })
        .collect();
    let _ = crate::simplex::find_optimal_e(&series, 0, 3, 1);
}
