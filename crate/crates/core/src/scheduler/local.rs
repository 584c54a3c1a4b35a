//! Single-node mode: the whole pipeline on an in-process thread pool with
//! a shared work queue (work stealing), no sockets involved.

use crate::ccm::{full_causal_inference_streamed, CcmOutcome, CcmParams};
use crate::error::{Error, Result};
use crate::types::TimeSeriesSet;

/// Runs both phases on `threads` worker threads. Results are identical to
/// a master plus one worker, and to any other thread count.
pub fn run_local(threads: usize, ts: &TimeSeriesSet, params: &CcmParams) -> Result<CcmOutcome> {
    run_local_streamed(threads, ts, params, &|_, _| {})
}

pub fn run_local_streamed(
    threads: usize,
    ts: &TimeSeriesSet,
    params: &CcmParams,
    on_row: &(dyn Fn(usize, &[f64]) + Sync),
) -> Result<CcmOutcome> {
    let pool = build_pool(threads)?;
    pool.install(|| full_causal_inference_streamed(ts, params, on_row))
}

/// The reference algorithm (per-pair kNN recomputation) on a local pool.
pub fn run_local_naive(
    threads: usize,
    ts: &TimeSeriesSet,
    params: &CcmParams,
) -> Result<CcmOutcome> {
    let pool = build_pool(threads)?;
    pool.install(|| crate::ccm::naive_causal_inference(ts, params))
}

/// Phase 1 only, on a local pool.
pub fn run_local_phase1(
    threads: usize,
    ts: &TimeSeriesSet,
    params: &CcmParams,
) -> Result<Vec<crate::types::OptimalEmbedding>> {
    let pool = build_pool(threads)?;
    pool.install(|| {
        crate::ccm::phase1_optimal_embeddings(ts, params, &crate::metrics::Timers::new())
    })
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(Error::InvalidArgument("threads must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}
