//! The master side of the distributed run: accounts tasks, dispatches them
//! to workers on request, collects results, re-queues work lost to
//! disconnects, and merges worker row files into the final causal map.

use std::collections::{HashMap, HashSet, VecDeque};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::Arc;
use std::time::Instant;

use crate::ccm::CcmParams;
use crate::error::{Error, Result};
use crate::io::{
    self, copy_row_bytes, decode_row_f32, file_sha256, write_manifest, write_opt_e_csv,
    DatasetInfo, Format, ParamsInfo, RowInfo, RowSink, RunManifest, SentinelInfo, TimingsInfo,
};
use crate::scheduler::protocol::{
    read_message, write_message, DatasetSource, JobSetup, Message, TaskAssignment, TaskKind,
    TaskResult, PROTOCOL_VERSION,
};
use crate::scheduler::sentinel_cause_from_code;
use crate::types::{OptimalEmbedding, TimeSeriesSet};

#[derive(Debug, Clone)]
pub struct MasterConfig {
    /// Bind address, e.g. "127.0.0.1:4810" (port 0 picks an ephemeral one).
    pub bind: String,
    pub dataset_path: PathBuf,
    pub format: Format,
    pub params: CcmParams,
    pub output_path: PathBuf,
    /// Defaults to `<output>.manifest.toml`.
    pub manifest_path: Option<PathBuf>,
    /// Defaults to `<output>.opt_e.csv`.
    pub opt_e_path: Option<PathBuf>,
    /// Tasks handed out per worker request (batching for tiny series).
    pub tasks_per_request: usize,
    /// Embed the dataset in PUSH_DATASET instead of sending the path;
    /// workers then return row bytes inline and the master writes them.
    pub push_dataset: bool,
}

#[derive(Debug, Clone)]
pub struct MasterReport {
    pub map_path: PathBuf,
    pub manifest_path: PathBuf,
    pub opt_e_path: PathBuf,
    pub n_series: usize,
    pub phase1_secs: f64,
    pub phase2_secs: f64,
    pub merge_secs: f64,
    pub workers_seen: usize,
}

enum Event {
    Connected { key: u64, write: TcpStream },
    Msg { key: u64, msg: Message },
    Disconnected { key: u64 },
}

struct WorkerConn {
    write: TcpStream,
    label: String,
    helloed: bool,
    pending_req: bool,
}

/// Where a completed row's bytes live.
enum RowSource {
    /// Worker-local file readable by the master.
    WorkerFile(PathBuf),
    /// Already written into the final sink (inline-results mode).
    Final,
}

pub struct Master {
    listener: TcpListener,
    config: MasterConfig,
    ts: TimeSeriesSet,
    dataset_sha: String,
}

impl Master {
    /// Loads the dataset and binds the listening socket.
    pub fn bind(config: MasterConfig) -> Result<Master> {
        if config.tasks_per_request == 0 {
            return Err(Error::InvalidArgument(
                "tasks_per_request must be >= 1".into(),
            ));
        }
        let ts = io::read_dataset(&config.dataset_path, config.format)?;
        let dataset_sha = file_sha256(&config.dataset_path)?;
        let listener = TcpListener::bind(&config.bind).map_err(|e| {
            Error::Protocol(format!("bind {} failed: {e}", config.bind))
        })?;
        Ok(Master {
            listener,
            config,
            ts,
            dataset_sha,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    /// Runs both phases to completion and merges the output. Returns once
    /// the causal map, optE report, and manifest are on disk.
    pub fn run(self) -> Result<MasterReport> {
        let n = self.ts.n_series();
        let e_max = self.config.params.e_max;
        let started = Instant::now();

        let map_path = self.config.output_path.clone();
        let manifest_path = self
            .config
            .manifest_path
            .clone()
            .unwrap_or_else(|| append_ext(&map_path, "manifest.toml"));
        let opt_e_path = self
            .config
            .opt_e_path
            .clone()
            .unwrap_or_else(|| append_ext(&map_path, "opt_e.csv"));
        let sink = RowSink::create(&map_path, n)?;

        let inline_dataset = if self.config.push_dataset {
            Some(io::write_dataset_edm1_vec(&self.ts, io::Dtype::F64))
        } else {
            None
        };

        let (tx, rx) = channel::<Event>();
        let stop = Arc::new(AtomicBool::new(false));
        let accept_handle = spawn_accept_loop(self.listener, tx.clone(), stop.clone())?;

        // Phase 1 queue: one simplex task per series, full E range.
        let mut next_task_id: u64 = 0;
        let mut queue: VecDeque<TaskAssignment> = (0..n)
            .map(|i| {
                let t = TaskAssignment {
                    task_id: next_task_id,
                    kind: TaskKind::SimplexE,
                    series: i as u32,
                    e_lo: 1,
                    e_hi: e_max as u32,
                };
                next_task_id += 1;
                t
            })
            .collect();

        let mut workers: HashMap<u64, WorkerConn> = HashMap::new();
        let mut in_flight: HashMap<u64, (TaskAssignment, u64)> = HashMap::new();
        let mut done_tasks: HashSet<u64> = HashSet::new();
        let mut opt_results: Vec<Option<OptimalEmbedding>> = vec![None; n];
        let mut opt_done = 0usize;
        let mut opt_e: Vec<u32> = Vec::new();
        let mut row_sources: Vec<Option<(RowSource, String)>> = (0..n).map(|_| None).collect();
        let mut sentinels: Vec<SentinelInfo> = Vec::new();
        let mut rows_done = 0usize;
        let mut workers_seen = 0usize;
        let mut phase = 1u8;
        let mut phase1_secs = 0.0f64;
        let mut phase2_started = Instant::now();

        let job = |inline: &Option<Vec<u8>>| JobSetup {
            e_max: e_max as u32,
            tau: self.config.params.tau as u32,
            exclude_self: self.config.params.exclude_self,
            inline_results: inline.is_some(),
            dataset: match inline {
                Some(bytes) => DatasetSource::Inline(bytes.clone()),
                None => DatasetSource::Path {
                    path: self.config.dataset_path.to_string_lossy().into_owned(),
                    format: match self.config.format {
                        Format::Csv => 0,
                        Format::Edm1 => 1,
                    },
                },
            },
        };

        macro_rules! send {
            ($conn:expr, $msg:expr) => {
                if let Err(e) = write_message(&mut $conn.write, &$msg) {
                    log::warn!("send to worker {} failed: {e}", $conn.label);
                }
            };
        }

        let dispatch = |worker_key: u64,
                            workers: &mut HashMap<u64, WorkerConn>,
                            queue: &mut VecDeque<TaskAssignment>,
                            in_flight: &mut HashMap<u64, (TaskAssignment, u64)>| {
            let Some(conn) = workers.get_mut(&worker_key) else {
                return;
            };
            if !conn.helloed || !conn.pending_req || queue.is_empty() {
                return;
            }
            let mut batch = Vec::new();
            while batch.len() < self.config.tasks_per_request {
                match queue.pop_front() {
                    Some(t) => batch.push(t),
                    None => break,
                }
            }
            for t in &batch {
                in_flight.insert(t.task_id, (*t, worker_key));
            }
            conn.pending_req = false;
            send!(conn, Message::Task(batch));
        };

        loop {
            let event = rx.recv().map_err(|_| {
                Error::Protocol("master event channel closed unexpectedly".into())
            })?;
            match event {
                Event::Connected { key, write } => {
                    let _ = write.set_nodelay(true);
                    workers.insert(
                        key,
                        WorkerConn {
                            write,
                            label: format!("conn{key}"),
                            helloed: false,
                            pending_req: false,
                        },
                    );
                }
                Event::Disconnected { key } => {
                    if let Some(conn) = workers.remove(&key) {
                        log::info!("worker {} disconnected", conn.label);
                    }
                    // Re-queue whatever the worker still held.
                    let lost: Vec<u64> = in_flight
                        .iter()
                        .filter(|(_, (_, w))| *w == key)
                        .map(|(id, _)| *id)
                        .collect();
                    for id in lost {
                        let (task, _) = in_flight.remove(&id).expect("present");
                        log::info!("re-queueing task {id} (series {})", task.series);
                        queue.push_back(task);
                    }
                    let keys: Vec<u64> = workers.keys().copied().collect();
                    for k in keys {
                        dispatch(k, &mut workers, &mut queue, &mut in_flight);
                    }
                }
                Event::Msg { key, msg } => match msg {
                    Message::Hello {
                        version,
                        worker_id,
                        threads,
                    } => {
                        let Some(conn) = workers.get_mut(&key) else {
                            continue;
                        };
                        if version != PROTOCOL_VERSION {
                            log::warn!(
                                "worker {worker_id} speaks protocol {version}, want {PROTOCOL_VERSION}; rejecting"
                            );
                            send!(conn, Message::Shutdown);
                            continue;
                        }
                        conn.helloed = true;
                        conn.label = format!("w{worker_id}");
                        workers_seen += 1;
                        log::info!(
                            "worker {} connected ({threads} threads)",
                            conn.label
                        );
                        send!(conn, Message::PushDataset(job(&inline_dataset)));
                        if phase == 2 {
                            send!(conn, Message::OptEBcast(opt_e.clone()));
                        }
                    }
                    Message::TaskReq => {
                        if let Some(conn) = workers.get_mut(&key) {
                            conn.pending_req = true;
                        }
                        dispatch(key, &mut workers, &mut queue, &mut in_flight);
                    }
                    Message::Result(result) => {
                        let task_id = match &result {
                            TaskResult::Simplex { task_id, .. } => *task_id,
                            TaskResult::CcmRow { task_id, .. } => *task_id,
                        };
                        if done_tasks.contains(&task_id) {
                            // Duplicate (task was re-queued and both copies
                            // finished): idempotently ignored.
                            continue;
                        }
                        done_tasks.insert(task_id);
                        let assignment = in_flight.remove(&task_id).map(|(t, _)| t);
                        let label = workers
                            .get(&key)
                            .map(|c| c.label.clone())
                            .unwrap_or_else(|| format!("conn{key}"));
                        match result {
                            TaskResult::Simplex {
                                series,
                                best_e,
                                rho,
                                rho_by_e,
                                ..
                            } => {
                                let i = series as usize;
                                if i >= n || opt_results[i].is_some() {
                                    continue;
                                }
                                let feasible = rho_by_e
                                    .iter()
                                    .rposition(|r| !r.is_nan())
                                    .map_or(0, |p| p + 1);
                                opt_results[i] = Some(OptimalEmbedding {
                                    series_id: i,
                                    best_e: best_e as usize,
                                    rho,
                                    rho_by_e,
                                    feasible_e_max: feasible,
                                });
                                opt_done += 1;
                                if opt_done == n && phase == 1 {
                                    phase = 2;
                                    phase1_secs = started.elapsed().as_secs_f64();
                                    phase2_started = Instant::now();
                                    opt_e = opt_results
                                        .iter()
                                        .map(|o| o.as_ref().expect("complete").best_e as u32)
                                        .collect();
                                    log::info!("phase 1 complete; broadcasting optE");
                                    for conn in workers.values_mut() {
                                        if conn.helloed {
                                            send!(conn, Message::OptEBcast(opt_e.clone()));
                                        }
                                    }
                                    for i in 0..n {
                                        queue.push_back(TaskAssignment {
                                            task_id: next_task_id,
                                            kind: TaskKind::CcmRow,
                                            series: i as u32,
                                            e_lo: 0,
                                            e_hi: 0,
                                        });
                                        next_task_id += 1;
                                    }
                                    let keys: Vec<u64> = workers.keys().copied().collect();
                                    for k in keys {
                                        dispatch(k, &mut workers, &mut queue, &mut in_flight);
                                    }
                                }
                            }
                            TaskResult::CcmRow {
                                series,
                                path,
                                inline,
                                sentinels: row_sentinels,
                                ..
                            } => {
                                let i = series as usize;
                                if i >= n || row_sources[i].is_some() {
                                    continue;
                                }
                                let source = match inline {
                                    Some(bytes) => {
                                        let values = decode_row_f32(&bytes);
                                        if values.len() != n {
                                            log::warn!(
                                                "row {i}: inline payload has wrong length; re-queueing"
                                            );
                                            done_tasks.remove(&task_id);
                                            if let Some(t) = assignment {
                                                queue.push_back(t);
                                            }
                                            continue;
                                        }
                                        sink.write_row(i, &values)?;
                                        RowSource::Final
                                    }
                                    None => RowSource::WorkerFile(PathBuf::from(path)),
                                };
                                row_sources[i] = Some((source, label));
                                for (col, code) in row_sentinels {
                                    sentinels.push(SentinelInfo {
                                        row: i as u32,
                                        col,
                                        cause: format!(
                                            "{:?}",
                                            sentinel_cause_from_code(code)
                                        ),
                                    });
                                }
                                rows_done += 1;
                                if rows_done == n {
                                    break; // all rows acked: finish up
                                }
                            }
                        }
                    }
                    other => {
                        log::warn!("unexpected message from worker: {other:?}");
                    }
                },
            }
        }

        let phase2_secs = phase2_started.elapsed().as_secs_f64();
        stop.store(true, Ordering::SeqCst);

        // Merge: copy rows that still live in worker-local files.
        let merge_started = Instant::now();
        let mut row_infos = Vec::with_capacity(n);
        for (i, source) in row_sources.iter().enumerate() {
            let (source, label) = source.as_ref().expect("all rows done");
            let path_str = match source {
                RowSource::WorkerFile(path) => {
                    copy_row_bytes(path, n, i, &sink)?;
                    path.to_string_lossy().into_owned()
                }
                RowSource::Final => map_path.to_string_lossy().into_owned(),
            };
            row_infos.push(RowInfo {
                row: i as u32,
                worker: label.clone(),
                path: path_str,
            });
        }
        let merge_secs = merge_started.elapsed().as_secs_f64();

        let opt: Vec<OptimalEmbedding> = opt_results
            .into_iter()
            .map(|o| o.expect("phase 1 complete"))
            .collect();
        write_opt_e_csv(&opt_e_path, &opt, &self.ts)?;
        sentinels.sort_by_key(|s| (s.row, s.col));
        let manifest = RunManifest {
            dataset: DatasetInfo {
                path: self.config.dataset_path.to_string_lossy().into_owned(),
                sha256: self.dataset_sha.clone(),
                time_steps: self.ts.len() as u32,
                n_series: n as u32,
            },
            params: ParamsInfo {
                e_max: e_max as u32,
                tau: self.config.params.tau as u32,
                exclude_self: self.config.params.exclude_self,
                tp_simplex: 1,
                tp_ccm: 0,
                output_dtype: "float32".into(),
            },
            opt_e_path: opt_e_path.to_string_lossy().into_owned(),
            timings: TimingsInfo {
                phase1_secs,
                phase2_secs,
                merge_secs,
                total_secs: started.elapsed().as_secs_f64(),
            },
            phase1_metrics: None,
            phase2_metrics: None,
            rows: row_infos,
            sentinels,
        };
        write_manifest(&manifest_path, &manifest)?;

        // Tell everyone we are finished.
        for conn in workers.values_mut() {
            let _ = write_message(&mut conn.write, &Message::Done);
            let _ = write_message(&mut conn.write, &Message::Shutdown);
        }
        drop(workers);
        let _ = accept_handle.join();

        Ok(MasterReport {
            map_path,
            manifest_path,
            opt_e_path,
            n_series: n,
            phase1_secs,
            phase2_secs,
            merge_secs,
            workers_seen,
        })
    }
}

fn append_ext(path: &std::path::Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn spawn_accept_loop(
    listener: TcpListener,
    tx: Sender<Event>,
    stop: Arc<AtomicBool>,
) -> Result<std::thread::JoinHandle<()>> {
    listener
        .set_nonblocking(true)
        .map_err(|e| Error::Protocol(format!("listener setup failed: {e}")))?;
    let handle = std::thread::Builder::new()
        .name("edm-master-accept".into())
        .spawn(move || {
            let mut next_key: u64 = 0;
            loop {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                match listener.accept() {
                    Ok((stream, _peer)) => {
                        let key = next_key;
                        next_key += 1;
                        let Ok(write) = stream.try_clone() else {
                            continue;
                        };
                        if tx
                            .send(Event::Connected { key, write })
                            .is_err()
                        {
                            return;
                        }
                        let reader_tx = tx.clone();
                        let mut read_stream = stream;
                        let _ = read_stream.set_nonblocking(false);
                        std::thread::Builder::new()
                            .name(format!("edm-master-reader-{key}"))
                            .spawn(move || loop {
                                match read_message(&mut read_stream) {
                                    Ok(Some(msg)) => {
                                        if reader_tx.send(Event::Msg { key, msg }).is_err() {
                                            return;
                                        }
                                    }
                                    Ok(None) | Err(_) => {
                                        let _ =
                                            reader_tx.send(Event::Disconnected { key });
                                        return;
                                    }
                                }
                            })
                            .expect("spawn reader");
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(std::time::Duration::from_millis(20));
                    }
                    Err(_) => {
                        std::thread::sleep(std::time::Duration::from_millis(20));
                    }
                }
            }
        })
        .map_err(|e| Error::Protocol(format!("spawn accept loop: {e}")))?;
    Ok(handle)
}
