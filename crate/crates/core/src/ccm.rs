//! All-to-all Convergent Cross Mapping.
//!
//! The main path precomputes, per library series, one kNN table for every
//! embedding dimension and reuses those tables across all N targets; the
//! naive path rebuilds the table for every (library, target) pair exactly
//! as the reference algorithm does. Both produce identical causal maps;
//! the naive path exists as the equivalence oracle and complexity
//! baseline.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::{compute_knn_table_with, KnnOptions};
use crate::metrics::{Category, MetricsSnapshot, Timers};
use crate::simplex::find_optimal_e_timed;
use crate::types::{pearson_rho, CausalMap, EmbeddingSpec, KnnTable, OptimalEmbedding, TimeSeriesSet};

/// Parameters of a causal-inference run.
#[derive(Debug, Clone, Copy)]
pub struct CcmParams {
    pub e_max: usize,
    pub tau: usize,
    /// Remove the query's own time index from its candidate neighbors.
    /// On by default: a self-neighbor at distance zero makes cross-map
    /// prediction trivially reuse the simultaneous value.
    pub exclude_self: bool,
    pub knn: KnnOptions,
}

impl Default for CcmParams {
    fn default() -> Self {
        CcmParams {
            e_max: 20,
            tau: 1,
            exclude_self: true,
            knn: KnnOptions::default(),
        }
    }
}

impl CcmParams {
    pub fn new(e_max: usize, tau: usize) -> Self {
        CcmParams {
            e_max,
            tau,
            ..Default::default()
        }
    }
}

/// Why a causal-map entry holds the undefined sentinel instead of a skill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SentinelCause {
    /// Zero variance in the target or the predictions.
    UndefinedCorrelation,
    /// No kNN table exists for the required embedding dimension.
    InfeasibleEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct SentinelRecord {
    pub row: usize,
    pub col: usize,
    pub cause: SentinelCause,
}

/// Per-library-series kNN tables, one per embedding dimension 1..=E_max.
/// Tables are immutable once built; dimensions the series is too short for
/// are recorded instead.
#[derive(Debug, Clone)]
pub struct LibraryTables {
    pub series_id: usize,
    pub tau: usize,
    tables: Vec<Option<KnnTable>>,
    infeasible: Vec<usize>,
}

impl LibraryTables {
    /// The table for dimension `e`, if the series supports it.
    pub fn table(&self, e: usize) -> Option<&KnnTable> {
        self.tables.get(e - 1).and_then(|t| t.as_ref())
    }

    pub fn e_max(&self) -> usize {
        self.tables.len()
    }

    /// Dimensions for which no table could be built.
    pub fn infeasible(&self) -> &[usize] {
        &self.infeasible
    }
}

/// Builds the per-dimension kNN tables for one library series
/// (library = target = the series itself).
pub fn precompute_library_tables(
    series: &[f64],
    series_id: usize,
    e_max: usize,
    tau: usize,
) -> Result<LibraryTables> {
    precompute_library_tables_with(
        series,
        series_id,
        &CcmParams::new(e_max, tau),
        &Timers::new(),
    )
}

pub fn precompute_library_tables_with(
    series: &[f64],
    series_id: usize,
    params: &CcmParams,
    timers: &Timers,
) -> Result<LibraryTables> {
    if params.e_max == 0 {
        return Err(Error::InvalidArgument("E_max must be >= 1".into()));
    }
    let t0 = Instant::now();
    let tables: Vec<Option<KnnTable>> = (1..=params.e_max)
        .into_par_iter()
        .map(|e| {
            let spec = EmbeddingSpec::new(e, params.tau, 0)?;
            match compute_knn_table_with(series, series, &spec, params.exclude_self, &params.knn)
            {
                Ok(t) => Ok(Some(t)),
                Err(Error::SeriesTooShort { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    timers.add(Category::Knn, t0);
    let infeasible = tables
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.is_none().then_some(i + 1))
        .collect();
    Ok(LibraryTables {
        series_id,
        tau: params.tau,
        tables,
        infeasible,
    })
}

/// Cross-map prediction of `target` through a library's kNN table:
/// prediction[i] = sum_j w(i,j) * target[idx(i,j)]. No horizon shift is
/// applied (simultaneous cross mapping, Tp = 0).
pub fn cross_map_lookup(table: &KnnTable, target: &[f64], e: usize) -> Result<Vec<f64>> {
    if table.e != e {
        return Err(Error::InvalidArgument(format!(
            "table was built for E={}, lookup requested E={e}",
            table.e
        )));
    }
    if target.len() != table.min_t + table.n_queries() {
        return Err(Error::LengthMismatch {
            left: target.len(),
            right: table.min_t + table.n_queries(),
        });
    }
    let mut pred = Vec::with_capacity(table.n_queries());
    for i in 0..table.n_queries() {
        let idx = table.indices_row(i);
        let w = table.weights_row(i);
        let mut acc = 0.0;
        for (&j, &wj) in idx.iter().zip(w) {
            acc += wj * target[j as usize];
        }
        pred.push(acc);
    }
    Ok(pred)
}

/// One row of the causal map: the skills of predicting every series j from
/// the manifold of the library series. Undefined or infeasible entries get
/// the NaN sentinel and a cause record instead of failing the row.
pub fn ccm_row(
    tables: &LibraryTables,
    ts: &TimeSeriesSet,
    opt_e: &[usize],
) -> (Vec<f64>, Vec<SentinelRecord>) {
    ccm_row_timed(tables, ts, opt_e, &Timers::new())
}

pub fn ccm_row_timed(
    tables: &LibraryTables,
    ts: &TimeSeriesSet,
    opt_e: &[usize],
    timers: &Timers,
) -> (Vec<f64>, Vec<SentinelRecord>) {
    let i = tables.series_id;
    let entries: Vec<(f64, Option<SentinelCause>)> = (0..ts.n_series())
        .into_par_iter()
        .with_min_len(64)
        .map(|j| {
            let e_j = opt_e[j];
            let Some(table) = tables.table(e_j) else {
                return (f64::NAN, Some(SentinelCause::InfeasibleEmbedding));
            };
            let target = ts.series(j);
            let t0 = Instant::now();
            let pred = cross_map_lookup(table, target, e_j).expect("table invariants hold");
            timers.add(Category::Lookup, t0);
            let t0 = Instant::now();
            let observed = &target[table.min_t..];
            let rho = pearson_rho(observed, &pred).expect("lengths match by construction");
            timers.add(Category::Corrcoef, t0);
            if rho.is_nan() {
                (rho, Some(SentinelCause::UndefinedCorrelation))
            } else {
                (rho, None)
            }
        })
        .collect();

    let mut row = Vec::with_capacity(entries.len());
    let mut sentinels = Vec::new();
    for (j, (rho, cause)) in entries.into_iter().enumerate() {
        row.push(rho);
        if let Some(cause) = cause {
            sentinels.push(SentinelRecord { row: i, col: j, cause });
        }
    }
    (row, sentinels)
}

/// Everything a causal-inference run produces besides the map itself.
#[derive(Debug, Clone)]
pub struct CcmOutcome {
    pub map: CausalMap,
    pub opt_e: Vec<OptimalEmbedding>,
    pub sentinels: Vec<SentinelRecord>,
    pub phase1_secs: f64,
    pub phase2_secs: f64,
    pub phase1_metrics: MetricsSnapshot,
    pub phase2_metrics: MetricsSnapshot,
}

/// Phase 1: the optimal embedding dimension of every series.
pub fn phase1_optimal_embeddings(
    ts: &TimeSeriesSet,
    params: &CcmParams,
    timers: &Timers,
) -> Result<Vec<OptimalEmbedding>> {
    (0..ts.n_series())
        .into_par_iter()
        .map(|i| find_optimal_e_timed(ts.series(i), i, params.e_max, params.tau, timers))
        .collect()
}

/// Full causal inference with per-library table reuse. `on_row` receives
/// each completed row immediately (row streaming for asynchronous output);
/// it must tolerate rows arriving in any order.
pub fn full_causal_inference_streamed(
    ts: &TimeSeriesSet,
    params: &CcmParams,
    on_row: &(dyn Fn(usize, &[f64]) + Sync),
) -> Result<CcmOutcome> {
    let phase1_timers = Timers::new();
    let t1 = Instant::now();
    let opt = phase1_optimal_embeddings(ts, params, &phase1_timers)?;
    let phase1_secs = t1.elapsed().as_secs_f64();
    let opt_e: Vec<usize> = opt.iter().map(|o| o.best_e).collect();

    let phase2_timers = Timers::new();
    let t2 = Instant::now();
    let n = ts.n_series();
    let rows: Vec<(Vec<f64>, Vec<SentinelRecord>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let tables =
                precompute_library_tables_with(ts.series(i), i, params, &phase2_timers)?;
            let (row, sentinels) = ccm_row_timed(&tables, ts, &opt_e, &phase2_timers);
            on_row(i, &row);
            Ok((row, sentinels))
        })
        .collect::<Result<_>>()?;
    let phase2_secs = t2.elapsed().as_secs_f64();

    let mut map = CausalMap::new(n);
    let mut sentinels = Vec::new();
    for (i, (row, s)) in rows.into_iter().enumerate() {
        map.set_row(i, &row);
        sentinels.extend(s);
    }
    Ok(CcmOutcome {
        map,
        opt_e: opt,
        sentinels,
        phase1_secs,
        phase2_secs,
        phase1_metrics: phase1_timers.snapshot(),
        phase2_metrics: phase2_timers.snapshot(),
    })
}

/// Full causal inference (improved algorithm, per-library table reuse).
pub fn full_causal_inference(ts: &TimeSeriesSet, params: &CcmParams) -> Result<CcmOutcome> {
    full_causal_inference_streamed(ts, params, &|_, _| {})
}

/// Reference algorithm: recomputes the kNN table for every (library,
/// target) pair. Deliberately unoptimized; must agree with
/// [`full_causal_inference`] elementwise.
pub fn naive_causal_inference(ts: &TimeSeriesSet, params: &CcmParams) -> Result<CcmOutcome> {
    let phase1_timers = Timers::new();
    let t1 = Instant::now();
    let opt = phase1_optimal_embeddings(ts, params, &phase1_timers)?;
    let phase1_secs = t1.elapsed().as_secs_f64();
    let opt_e: Vec<usize> = opt.iter().map(|o| o.best_e).collect();

    let phase2_timers = Timers::new();
    let t2 = Instant::now();
    let n = ts.n_series();
    let rows: Vec<(Vec<f64>, Vec<SentinelRecord>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let library = ts.series(i);
            let mut row = Vec::with_capacity(n);
            let mut sentinels = Vec::new();
            for j in 0..n {
                let e_j = opt_e[j];
                let spec = EmbeddingSpec::new(e_j, params.tau, 0)?;
                let t0 = Instant::now();
                let table = match compute_knn_table_with(
                    library,
                    library,
                    &spec,
                    params.exclude_self,
                    &params.knn,
                ) {
                    Ok(t) => {
                        phase2_timers.add(Category::Knn, t0);
                        t
                    }
                    Err(Error::SeriesTooShort { .. }) => {
                        row.push(f64::NAN);
                        sentinels.push(SentinelRecord {
                            row: i,
                            col: j,
                            cause: SentinelCause::InfeasibleEmbedding,
                        });
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let target = ts.series(j);
                let t0 = Instant::now();
                let pred = cross_map_lookup(&table, target, e_j)?;
                phase2_timers.add(Category::Lookup, t0);
                let t0 = Instant::now();
                let rho = pearson_rho(&target[table.min_t..], &pred)?;
                phase2_timers.add(Category::Corrcoef, t0);
                if rho.is_nan() {
                    sentinels.push(SentinelRecord {
                        row: i,
                        col: j,
                        cause: SentinelCause::UndefinedCorrelation,
                    });
                }
                row.push(rho);
            }
            Ok((row, sentinels))
        })
        .collect::<Result<_>>()?;
    let phase2_secs = t2.elapsed().as_secs_f64();

    let mut map = CausalMap::new(n);
    let mut sentinels = Vec::new();
    for (i, (row, s)) in rows.into_iter().enumerate() {
        map.set_row(i, &row);
        sentinels.extend(s);
    }
    Ok(CcmOutcome {
        map,
        opt_e: opt,
        sentinels,
        phase1_secs,
        phase2_secs,
        phase1_metrics: phase1_timers.snapshot(),
        phase2_metrics: phase2_timers.snapshot(),
    })
}
