//! Self-scheduling master-worker task distribution.
//!
//! Two deployment modes share the same work units (one library series per
//! task): `run_local` executes everything in-process on a work-stealing
//! thread pool, while [`master`] and [`worker`] distribute the same tasks
//! over a length-prefixed TCP protocol. Workers pull a task, compute,
//! report, and ask again, so load imbalance from heterogeneous task costs
//! is absorbed without static partitioning. Phase 2 never starts before
//! every phase-1 result has been collected.

pub mod local;
pub mod master;
pub mod protocol;
pub mod worker;

use std::sync::Arc;

use crate::ccm::{
    ccm_row_timed, precompute_library_tables_with, CcmParams, SentinelCause, SentinelRecord,
};
use crate::error::Result;
use crate::metrics::Timers;
use crate::simplex::find_optimal_e_timed;
use crate::types::{OptimalEmbedding, TimeSeriesSet};

pub use local::{run_local, run_local_naive, run_local_phase1, run_local_streamed};
pub use master::{Master, MasterConfig, MasterReport};
pub use protocol::PROTOCOL_VERSION;
pub use worker::{run_worker, run_worker_with, WorkerConfig};

/// Work-unit kinds dispatched by the master. Each phase covers every
/// series index exactly once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Phase 1: optimal-embedding search for one series over an E range.
    SimplexE,
    /// Phase 2: one causal-map row from one library series.
    CcmRow,
}

/// Run phases. The barrier between them is structural: the master only
/// builds the CcmRow queue after the optE vector is complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunPhase {
    Phase1Simplex,
    BroadcastOptE,
    Phase2Ccm,
}

/// The computations a worker performs, abstracted so tests can substitute
/// instrumented or delayed implementations.
pub trait Compute: Send + Sync {
    fn n_series(&self) -> usize;

    /// Optimal embedding of one series over E in [e_lo, e_hi].
    fn simplex(&self, series: usize, e_lo: usize, e_hi: usize) -> Result<OptimalEmbedding>;

    /// One causal-map row given the complete optE vector.
    fn ccm_row(&self, series: usize, opt_e: &[usize])
        -> Result<(Vec<f64>, Vec<SentinelRecord>)>;
}

/// The real computation backend over a loaded dataset.
pub struct EdmCompute {
    ts: TimeSeriesSet,
    params: CcmParams,
    timers: Arc<Timers>,
}

impl EdmCompute {
    pub fn new(ts: TimeSeriesSet, params: CcmParams) -> Self {
        EdmCompute {
            ts,
            params,
            timers: Arc::new(Timers::new()),
        }
    }

    pub fn dataset(&self) -> &TimeSeriesSet {
        &self.ts
    }

    pub fn timers(&self) -> &Arc<Timers> {
        &self.timers
    }
}

impl Compute for EdmCompute {
    fn n_series(&self) -> usize {
        self.ts.n_series()
    }

    fn simplex(&self, series: usize, _e_lo: usize, e_hi: usize) -> Result<OptimalEmbedding> {
        find_optimal_e_timed(
            self.ts.series(series),
            series,
            e_hi,
            self.params.tau,
            &self.timers,
        )
    }

    fn ccm_row(
        &self,
        series: usize,
        opt_e: &[usize],
    ) -> Result<(Vec<f64>, Vec<SentinelRecord>)> {
        let tables = precompute_library_tables_with(
            self.ts.series(series),
            series,
            &self.params,
            &self.timers,
        )?;
        Ok(ccm_row_timed(&tables, &self.ts, opt_e, &self.timers))
    }
}

pub(crate) fn sentinel_cause_code(cause: SentinelCause) -> u8 {
    match cause {
        SentinelCause::UndefinedCorrelation => 0,
        SentinelCause::InfeasibleEmbedding => 1,
    }
}

pub(crate) fn sentinel_cause_from_code(code: u8) -> SentinelCause {
    match code {
        1 => SentinelCause::InfeasibleEmbedding,
        _ => SentinelCause::UndefinedCorrelation,
    }
}
