//! `edm`: causal inference over time-series datasets from the command
//! line. Subcommands cover the local pipeline, the standalone
//! embedding-dimension search, the distributed master/worker pair,
//! synthetic dataset generation, and timing benchmarks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edm_core::bench::{self, BenchRecord};
use edm_core::ccm::CcmParams;
use edm_core::io::{
    self, file_sha256, write_manifest, write_opt_e_csv, DatasetInfo, Dtype, Format, ParamsInfo,
    RowInfo, RowSink, RunManifest, TimingsInfo,
};
use edm_core::knn::KnnOptions;
use edm_core::scheduler::{
    run_local_naive, run_local_phase1, run_local_streamed, run_worker, Master, MasterConfig,
    WorkerConfig,
};
use edm_core::synth;
use edm_core::{Error, TimeSeriesSet};

#[derive(Parser)]
#[command(
    name = "edm",
    version,
    about = "Empirical Dynamic Modeling: simplex projection and all-to-all convergent cross mapping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-phase causal-inference pipeline locally and write the
    /// causal map, optE report, and run manifest.
    Pipeline(PipelineArgs),
    /// Phase 1 only: per-series optimal embedding dimension, with the
    /// full rho(E) curves as CSV.
    Simplex(SimplexArgs),
    /// Serve a dataset to workers and merge their results.
    Master(MasterArgs),
    /// Connect to a master and compute tasks until shutdown.
    Worker(WorkerArgs),
    /// Generate synthetic datasets (coupled logistic pairs, noise, or
    /// benchmark dummies).
    Gen(GenArgs),
    /// Timing benchmarks with a per-function breakdown CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Edm1,
}

/// Explicit format, or inferred from the path extension (.edm1 = binary,
/// anything else = CSV).
fn resolve_format(path: &Path, format: Option<FormatArg>) -> Format {
    match format {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Edm1) => Format::Edm1,
        None => match path.extension().and_then(|e| e.to_str()) {
            Some("edm1") => Format::Edm1,
            _ => Format::Csv,
        },
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Input dataset (CSV: one row per time step; or EDM1 binary).
    #[arg(long)]
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Maximum embedding dimension evaluated in phase 1.
    #[arg(long, default_value_t = 20)]
    emax: usize,
    /// Time lag between embedding coordinates.
    #[arg(long, default_value_t = 1)]
    tau: usize,
    /// Output causal map (EDM1, float32).
    #[arg(long)]
    output: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Use the reference per-pair algorithm instead of table reuse.
    #[arg(long)]
    naive: bool,
    /// Keep self-matches as neighbor candidates (reference pseudocode
    /// behavior).
    #[arg(long)]
    no_self_exclusion: bool,
    /// Memory budget for a materialized distance matrix, in MiB.
    #[arg(long, default_value_t = 256)]
    knn_budget_mib: usize,
    /// Manifest path (default: <output>.manifest.toml).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// optE report path (default: <output>.opt_e.csv).
    #[arg(long)]
    opt_e: Option<PathBuf>,
}

#[derive(Args)]
struct SimplexArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, default_value_t = 20)]
    emax: usize,
    #[arg(long, default_value_t = 1)]
    tau: usize,
    /// Output CSV with one row per series: best E, skill, full rho(E).
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct MasterArgs {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:4810")]
    bind: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, default_value_t = 20)]
    emax: usize,
    #[arg(long, default_value_t = 1)]
    tau: usize,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    no_self_exclusion: bool,
    /// Tasks handed to a worker per request.
    #[arg(long, default_value_t = 1)]
    tasks_per_request: usize,
    /// Send the dataset over the wire instead of a path (workers then
    /// return rows inline too).
    #[arg(long)]
    push_dataset: bool,
    #[arg(long, default_value_t = 256)]
    knn_budget_mib: usize,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    opt_e: Option<PathBuf>,
}

#[derive(Args)]
struct WorkerArgs {
    /// Master address (falls back to $EDM_MASTER_ADDR).
    #[arg(long, env = "EDM_MASTER_ADDR")]
    master: String,
    /// Local pool size for row-internal parallelism (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Worker label used in manifests and row-file names (default: pid).
    #[arg(long)]
    worker_id: Option<u32>,
    /// Directory for the worker-local row file (default: system temp).
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Reconnect attempts before exiting nonzero.
    #[arg(long, default_value_t = 5)]
    max_reconnect: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenKind {
    /// Unidirectionally coupled logistic-map pairs (columns x0,y0,x1,...).
    Coupled,
    /// Standard normal i.i.d. series.
    Noise,
    /// Independent chaotic series for benchmarking.
    Dummy,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value_t = GenKind::Coupled)]
    kind: GenKind,
    /// Coupled pairs to generate (kind=coupled).
    #[arg(long, default_value_t = 1)]
    pairs: usize,
    /// Series count (kind=noise|dummy).
    #[arg(long, default_value_t = 10)]
    series: usize,
    /// Time steps per series.
    #[arg(long, default_value_t = 1000)]
    length: usize,
    /// Coupling strength of x onto y (x drives y).
    #[arg(long, default_value_t = 0.32)]
    beta_yx: f64,
    /// Coupling strength of y onto x.
    #[arg(long, default_value_t = 0.0)]
    beta_xy: f64,
    /// Logistic rate of the driver x.
    #[arg(long, default_value_t = 3.7)]
    rx: f64,
    /// Logistic rate of the driven y.
    #[arg(long, default_value_t = 3.8)]
    ry: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Output format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMode {
    ScaleN,
    ScaleL,
    Workers,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    mode: BenchMode,
    /// Timed runs per configuration (dataset seed varies per run).
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Output CSV.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Fixed series count (scale-l, workers).
    #[arg(long)]
    n: Option<usize>,
    /// Fixed series length (scale-n, workers).
    #[arg(long)]
    l: Option<usize>,
    /// L sweep for scale-l.
    #[arg(long, value_delimiter = ',')]
    ls: Option<Vec<usize>>,
    /// N sweep for scale-n.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Thread sweep for workers mode.
    #[arg(long, value_delimiter = ',')]
    thread_counts: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    emax: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn default_threads(requested: Option<usize>) -> usize {
    requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Simplex(args) => cmd_simplex(args),
        Command::Master(args) => cmd_master(args),
        Command::Worker(args) => cmd_worker(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn ccm_params(emax: usize, tau: usize, no_self_exclusion: bool, budget_mib: usize) -> CcmParams {
    CcmParams {
        e_max: emax,
        tau,
        exclude_self: !no_self_exclusion,
        knn: KnnOptions {
            max_matrix_bytes: budget_mib << 20,
        },
    }
}

fn cmd_pipeline(args: PipelineArgs) -> edm_core::Result<()> {
    let started = Instant::now();
    let format = resolve_format(&args.input, args.format);
    let ts = io::read_dataset(&args.input, format)?;
    let sha = file_sha256(&args.input)?;
    let params = ccm_params(args.emax, args.tau, args.no_self_exclusion, args.knn_budget_mib);
    let threads = default_threads(args.threads);
    let n = ts.n_series();

    let sink = RowSink::create(&args.output, n)?;
    let outcome = if args.naive {
        let outcome = run_local_naive(threads, &ts, &params)?;
        for i in 0..n {
            sink.write_row(i, outcome.map.row(i))?;
        }
        outcome
    } else {
        run_local_streamed(threads, &ts, &params, &|i, row| {
            sink.write_row(i, row).expect("row write failed");
        })?
    };

    let opt_e_path = args
        .opt_e
        .unwrap_or_else(|| append_ext(&args.output, "opt_e.csv"));
    write_opt_e_csv(&opt_e_path, &outcome.opt_e, &ts)?;

    let manifest_path = args
        .manifest
        .unwrap_or_else(|| append_ext(&args.output, "manifest.toml"));
    let worker = if args.naive { "local-naive" } else { "local" };
    let manifest = RunManifest {
        dataset: DatasetInfo {
            path: args.input.to_string_lossy().into_owned(),
            sha256: sha,
            time_steps: ts.len() as u32,
            n_series: n as u32,
        },
        params: ParamsInfo {
            e_max: args.emax as u32,
            tau: args.tau as u32,
            exclude_self: !args.no_self_exclusion,
            tp_simplex: 1,
            tp_ccm: 0,
            output_dtype: "float32".into(),
        },
        opt_e_path: opt_e_path.to_string_lossy().into_owned(),
        timings: TimingsInfo {
            phase1_secs: outcome.phase1_secs,
            phase2_secs: outcome.phase2_secs,
            merge_secs: 0.0,
            total_secs: started.elapsed().as_secs_f64(),
        },
        phase1_metrics: Some(outcome.phase1_metrics),
        phase2_metrics: Some(outcome.phase2_metrics),
        rows: (0..n)
            .map(|i| RowInfo {
                row: i as u32,
                worker: worker.into(),
                path: args.output.to_string_lossy().into_owned(),
            })
            .collect(),
        sentinels: RunManifest::sentinel_info(&outcome.sentinels),
    };
    write_manifest(&manifest_path, &manifest)?;
    println!(
        "causal map {} ({n}x{n}), manifest {}, optE {}",
        args.output.display(),
        manifest_path.display(),
        opt_e_path.display()
    );
    Ok(())
}

fn cmd_simplex(args: SimplexArgs) -> edm_core::Result<()> {
    let format = resolve_format(&args.input, args.format);
    let ts = io::read_dataset(&args.input, format)?;
    let params = ccm_params(args.emax, args.tau, false, 256);
    let opt = run_local_phase1(default_threads(args.threads), &ts, &params)?;
    write_opt_e_csv(&args.report, &opt, &ts)?;
    println!(
        "optimal embeddings for {} series written to {}",
        ts.n_series(),
        args.report.display()
    );
    Ok(())
}

fn cmd_master(args: MasterArgs) -> edm_core::Result<()> {
    let format = resolve_format(&args.input, args.format);
    let config = MasterConfig {
        bind: args.bind,
        dataset_path: args.input,
        format,
        params: ccm_params(args.emax, args.tau, args.no_self_exclusion, args.knn_budget_mib),
        output_path: args.output,
        manifest_path: args.manifest,
        opt_e_path: args.opt_e,
        tasks_per_request: args.tasks_per_request,
        push_dataset: args.push_dataset,
    };
    let master = Master::bind(config)?;
    println!("master listening on {}", master.local_addr());
    let report = master.run()?;
    println!(
        "complete: {} rows from {} worker(s); map {}, manifest {}",
        report.n_series,
        report.workers_seen,
        report.map_path.display(),
        report.manifest_path.display()
    );
    Ok(())
}

fn cmd_worker(args: WorkerArgs) -> edm_core::Result<()> {
    let config = WorkerConfig {
        master_addr: args.master,
        threads: default_threads(args.threads),
        worker_id: args.worker_id.unwrap_or_else(std::process::id),
        workdir: args.workdir.unwrap_or_else(std::env::temp_dir),
        max_reconnect_attempts: args.max_reconnect,
        fail_after_rows: None,
    };
    run_worker(&config)
}

fn cmd_gen(args: GenArgs) -> edm_core::Result<()> {
    let ts: TimeSeriesSet = match args.kind {
        GenKind::Coupled => {
            let params = synth::CoupledLogisticParams {
                r_x: args.rx,
                r_y: args.ry,
                beta_xy: args.beta_xy,
                beta_yx: args.beta_yx,
            };
            synth::coupled_logistic(args.pairs, args.length, &params, args.seed)?
        }
        GenKind::Noise => synth::noise_dataset(args.series, args.length, args.seed)?,
        GenKind::Dummy => synth::scaled_dummy(args.series, args.length, args.seed)?,
    };
    match resolve_format(&args.output, args.format) {
        Format::Csv => io::write_dataset_csv(&args.output, &ts)?,
        Format::Edm1 => io::write_dataset_edm1(&args.output, &ts, Dtype::F64)?,
    }
    println!(
        "wrote {} series x {} steps to {}",
        ts.n_series(),
        ts.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> edm_core::Result<()> {
    let threads = default_threads(args.threads);
    let runs = args.seeds;
    let records = match args.mode {
        BenchMode::ScaleL => {
            let n = args.n.unwrap_or(200);
            let ls = args.ls.unwrap_or_else(|| vec![2000, 4000]);
            bench::bench_scale_l(n, &ls, args.emax, threads, runs, args.seed)?
        }
        BenchMode::ScaleN => {
            let l = args.l.unwrap_or(1000);
            let ns = args.ns.unwrap_or_else(|| vec![500, 1000]);
            bench::bench_scale_n(l, &ns, args.emax, threads, runs, args.seed)?
        }
        BenchMode::Workers => {
            let n = args.n.unwrap_or(500);
            let l = args.l.unwrap_or(1000);
            let counts = args.thread_counts.unwrap_or_else(|| vec![1, 2, 4, 8]);
            bench::bench_workers(n, l, args.emax, &counts, runs, args.seed)?
        }
    };

    let mut text = String::from(BenchRecord::CSV_HEADER);
    text.push('\n');
    for r in &records {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    std::fs::write(&args.report, text).map_err(|e| Error::io(&args.report, e))?;
    print_bench_summary(&records);
    println!("report written to {}", args.report.display());
    Ok(())
}

fn print_bench_summary(records: &[BenchRecord]) {
    let keys: std::collections::BTreeSet<(usize, usize, usize)> =
        records.iter().map(|r| (r.n, r.l, r.threads)).collect();
    for (n, l, threads) in keys {
        let group: Vec<&BenchRecord> = records
            .iter()
            .filter(|r| r.n == n && r.l == l && r.threads == threads)
            .collect();
        let med = |f: fn(&BenchRecord) -> f64| {
            bench::median(&group.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        println!(
            "N={n} L={l} threads={threads}: total {:.3}s | phase2 knn {:.3}s lookup {:.3}s \
             corrcoef {:.3}s io {:.3}s (medians of {} runs)",
            med(|r| r.total_wall_secs),
            med(|r| r.phase2.knn_secs),
            med(|r| r.phase2.lookup_secs),
            med(|r| r.phase2.corrcoef_secs),
            med(|r| r.phase2.io_secs),
            group.len()
        );
    }
}

fn append_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
