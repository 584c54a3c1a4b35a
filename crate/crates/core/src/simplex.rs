//! Simplex projection and the optimal-embedding-dimension search.
//!
//! A series is split into a library half and a target half; for each
//! candidate dimension E the target points are forecast one step ahead
//! from the weighted futures of their E+1 nearest library points, and the
//! E with the highest forecast skill wins.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::compute_knn_table;
use crate::metrics::{Category, Timers};
use crate::types::{pearson_rho, EmbeddingSpec, OptimalEmbedding};

/// Prediction horizon used throughout the embedding-dimension search.
/// One-step-ahead forecasting is what defines the search; it is not
/// configurable in this phase.
pub const SEARCH_TP: usize = 1;

/// Splits a series into (library, target): the first ceil(L/2) samples and
/// the rest. An odd length puts the extra sample in the library.
pub fn split_library_target(series: &[f64]) -> Result<(&[f64], &[f64])> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort {
            e: 1,
            needed: 2,
            have: series.len(),
        });
    }
    let mid = series.len().div_ceil(2);
    Ok(series.split_at(mid))
}

/// Forecasts and their observed counterparts, aligned pairwise.
#[derive(Debug, Clone)]
pub struct SimplexPrediction {
    pub predictions: Vec<f64>,
    pub observed: Vec<f64>,
}

/// Simplex forecast of every embeddable target point from the library.
///
/// For a target point at time t the forecast of t+Tp is the weighted
/// average of library[idx + Tp] over its E+1 library neighbors. Points
/// whose observation t+Tp or any neighbor future idx+Tp fall outside the
/// data are dropped from both output vectors.
pub fn simplex_predict(
    library: &[f64],
    target: &[f64],
    spec: &EmbeddingSpec,
) -> Result<SimplexPrediction> {
    simplex_predict_timed(library, target, spec, &Timers::new())
}

pub fn simplex_predict_timed(
    library: &[f64],
    target: &[f64],
    spec: &EmbeddingSpec,
    timers: &Timers,
) -> Result<SimplexPrediction> {
    let t0 = Instant::now();
    // Library and target are disjoint halves, so self-matches cannot occur
    // and no exclusion is applied.
    let table = compute_knn_table(library, target, spec, false)?;
    timers.add(Category::Knn, t0);

    let t0 = Instant::now();
    let mut predictions = Vec::with_capacity(table.n_queries());
    let mut observed = Vec::with_capacity(table.n_queries());
    for i in 0..table.n_queries() {
        let t = table.min_t + i;
        let obs_t = t + spec.tp;
        if obs_t >= target.len() {
            continue;
        }
        let idx = table.indices_row(i);
        if idx.iter().any(|&j| j as usize + spec.tp >= library.len()) {
            continue;
        }
        let w = table.weights_row(i);
        let mut pred = 0.0;
        for (&j, &wj) in idx.iter().zip(w) {
            pred += wj * library[j as usize + spec.tp];
        }
        predictions.push(pred);
        observed.push(target[obs_t]);
    }
    timers.add(Category::Lookup, t0);

    if predictions.is_empty() {
        return Err(Error::EmptyPredictionSet {
            e: spec.e,
            tau: spec.tau,
            tp: spec.tp,
        });
    }
    Ok(SimplexPrediction {
        predictions,
        observed,
    })
}

/// Largest E <= e_max for which the split halves support the search:
/// the library must hold at least E+1 embedded candidates and the target
/// at least one point with an observable future.
fn feasible_e_max(lib_len: usize, tgt_len: usize, e_max: usize, tau: usize) -> usize {
    (1..=e_max)
        .take_while(|&e| {
            let min_t = (e - 1) * tau;
            let lib_points = lib_len.saturating_sub(min_t);
            let tgt_points = tgt_len.saturating_sub(min_t);
            lib_points >= e + 1 && tgt_points > SEARCH_TP
        })
        .last()
        .unwrap_or(0)
}

/// Evaluates rho(E) for E = 1..=e_max and returns the argmax, breaking
/// ties toward the smaller E. Undefined skills (NaN) never win; if every
/// evaluated E is undefined the result is flagged with best_e = 1 and a
/// NaN rho. When the series is too short for e_max the evaluated range is
/// truncated and recorded in `feasible_e_max`.
pub fn find_optimal_e(
    series: &[f64],
    series_id: usize,
    e_max: usize,
    tau: usize,
) -> Result<OptimalEmbedding> {
    find_optimal_e_timed(series, series_id, e_max, tau, &Timers::new())
}

pub fn find_optimal_e_timed(
    series: &[f64],
    series_id: usize,
    e_max: usize,
    tau: usize,
    timers: &Timers,
) -> Result<OptimalEmbedding> {
    if e_max == 0 {
        return Err(Error::InvalidArgument("E_max must be >= 1".into()));
    }
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    let (library, target) = split_library_target(series)?;
    let feasible = feasible_e_max(library.len(), target.len(), e_max, tau);
    if feasible == 0 {
        return Err(Error::SeriesTooShort {
            e: 1,
            needed: 2 * (1 + SEARCH_TP),
            have: series.len(),
        });
    }

    let rho_feasible: Vec<f64> = (1..=feasible)
        .into_par_iter()
        .map(|e| {
            let spec = EmbeddingSpec::new(e, tau, SEARCH_TP).expect("validated above");
            match simplex_predict_timed(library, target, &spec, timers) {
                Ok(p) => {
                    let t0 = Instant::now();
                    let rho = pearson_rho(&p.predictions, &p.observed).unwrap_or(f64::NAN);
                    timers.add(Category::Corrcoef, t0);
                    rho
                }
                // A dimension that leaves no usable predictions is recorded
                // as undefined rather than failing the whole search.
                Err(Error::SeriesTooShort { .. }) | Err(Error::EmptyPredictionSet { .. }) => {
                    f64::NAN
                }
                Err(_) => f64::NAN,
            }
        })
        .collect();

    let mut rho_by_e = vec![f64::NAN; e_max];
    rho_by_e[..feasible].copy_from_slice(&rho_feasible);

    let mut best_e = 1;
    let mut best_rho = f64::NAN;
    for (i, &r) in rho_by_e.iter().enumerate() {
        if r.is_nan() {
            continue;
        }
        if best_rho.is_nan() || r > best_rho {
            best_rho = r;
            best_e = i + 1;
        }
    }

    Ok(OptimalEmbedding {
        series_id,
        best_e,
        rho: best_rho,
        rho_by_e,
        feasible_e_max: feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn split_even() {
        let (lib, tgt) = split_library_target(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(lib, &[1.0, 2.0]);
        assert_eq!(tgt, &[3.0, 4.0]);
    }

    #[test]
    fn split_odd_favors_library() {
        let (lib, tgt) = split_library_target(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(lib, &[1.0, 2.0, 3.0]);
        assert_eq!(tgt, &[4.0, 5.0]);
    }

    #[test]
    fn split_rejects_tiny_series() {
        assert!(split_library_target(&[1.0]).is_err());
    }

    #[test]
    fn periodic_series_is_predictable() {
        // sin sampled at 25 points per cycle, L=200.
        let series: Vec<f64> = (0..200)
            .map(|i| (i as f64 * std::f64::consts::TAU / 25.0).sin())
            .collect();
        let (lib, tgt) = split_library_target(&series).unwrap();
        let spec = EmbeddingSpec::new(2, 1, 1).unwrap();
        let p = simplex_predict(lib, tgt, &spec).unwrap();
        let rho = pearson_rho(&p.predictions, &p.observed).unwrap();
        assert!(rho >= 0.99, "rho = {rho}");
    }

    #[test]
    fn exact_repeat_gives_perfect_skill() {
        // Second half repeats the first half exactly: every target point
        // has a zero-distance library match whose future is the true value.
        let half: Vec<f64> = (0..40).map(|i| (i as f64 * 0.61).sin() * 3.0).collect();
        let mut series = half.clone();
        series.extend_from_slice(&half);
        let (lib, tgt) = split_library_target(&series).unwrap();
        let spec = EmbeddingSpec::new(1, 1, 1).unwrap();
        let p = simplex_predict(lib, tgt, &spec).unwrap();
        let rho = pearson_rho(&p.predictions, &p.observed).unwrap();
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn predictions_observed_same_length() {
        let series: Vec<f64> = (0..60).map(|i| (i as f64 * 1.7).sin()).collect();
        let (lib, tgt) = split_library_target(&series).unwrap();
        for e in 1..=4 {
            let spec = EmbeddingSpec::new(e, 1, 1).unwrap();
            let p = simplex_predict(lib, tgt, &spec).unwrap();
            assert_eq!(p.predictions.len(), p.observed.len());
            assert!(!p.predictions.is_empty());
        }
    }

    #[test]
    fn constant_series_is_flagged_undefined() {
        let series = vec![2.5; 50];
        let r = find_optimal_e(&series, 0, 5, 1).unwrap();
        assert!(r.is_undefined());
        assert_eq!(r.best_e, 1);
        assert!(r.rho_by_e.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn e_max_one_returns_one() {
        let series: Vec<f64> = (0..50).map(|i| (i as f64 * 0.9).sin()).collect();
        let r = find_optimal_e(&series, 0, 1, 1).unwrap();
        assert_eq!(r.best_e, 1);
        assert_eq!(r.feasible_e_max, 1);
    }

    #[test]
    fn short_series_truncates_range() {
        let series: Vec<f64> = (0..12).map(|i| (i as f64 * 0.9).sin()).collect();
        let r = find_optimal_e(&series, 0, 10, 1).unwrap();
        assert!(r.feasible_e_max < 10);
        assert!(r.rho_by_e[r.feasible_e_max..].iter().all(|v| v.is_nan()));
    }

    #[test]
    fn affine_scaling_preserves_argmax() {
        let mut x = 0.41;
        let series: Vec<f64> = (0..160)
            .map(|_| {
                x = 3.8 * x * (1.0 - x);
                x
            })
            .collect();
        let base = find_optimal_e(&series, 0, 8, 1).unwrap();
        for (alpha, beta) in [(2.0, 0.0), (0.5, 1.0), (3.7, -2.0)] {
            let scaled: Vec<f64> = series.iter().map(|v| alpha * v + beta).collect();
            let r = find_optimal_e(&scaled, 0, 8, 1).unwrap();
            assert_eq!(r.best_e, base.best_e);
        }
    }
}
