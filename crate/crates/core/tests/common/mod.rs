//! Brute-force reference implementations used as test oracles.
//!
//! Everything here is deliberately written from scratch against the
//! documented contracts — materialized embeddings, full sorts, direct
//! formulas — and never calls into the library's kNN/CCM code paths, so
//! it can serve as an independent check of them.

#![allow(dead_code)]

use edm_core::TimeSeriesSet;

/// Materialized delay embedding: one row per embeddable point (time
/// indices (E-1)*tau ..= L-1), columns k = 0..E hold x(t - k*tau).
pub fn embed(series: &[f64], e: usize, tau: usize) -> Vec<(usize, Vec<f64>)> {
    let min_t = (e - 1) * tau;
    (min_t..series.len())
        .map(|t| (t, (0..e).map(|k| series[t - k * tau]).collect()))
        .collect()
}

/// Full-sort k nearest neighbors of every embedded target point among the
/// embedded library points. Returns per query: (time index, Euclidean
/// distance), nearest first, ties broken by smaller time index.
pub fn brute_knn(
    library: &[f64],
    target: &[f64],
    e: usize,
    tau: usize,
    k: usize,
    exclude_self: bool,
) -> Vec<Vec<(usize, f64)>> {
    let lib = embed(library, e, tau);
    let tgt = embed(target, e, tau);
    tgt.iter()
        .map(|(qt, qp)| {
            let mut cands: Vec<(usize, f64)> = lib
                .iter()
                .filter(|(lt, _)| !(exclude_self && lt == qt))
                .map(|(lt, lp)| {
                    let mut d = 0.0;
                    for (a, b) in qp.iter().zip(lp) {
                        let diff = a - b;
                        d += diff * diff;
                    }
                    (*lt, d)
                })
                .collect();
            cands.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            cands.truncate(k);
            cands.into_iter().map(|(t, d)| (t, d.sqrt())).collect()
        })
        .collect()
}

/// Exponential weighting rule from the contract: w = exp(-d/d1) normalized;
/// zero nearest distance switches to exact-match weighting with the 1e-12
/// floor.
pub fn weights(dists: &[f64]) -> Vec<f64> {
    let d1 = dists[0];
    let raw: Vec<f64> = if d1 > 0.0 {
        dists.iter().map(|&d| (-d / d1).exp()).collect()
    } else {
        dists
            .iter()
            .map(|&d| if d == 0.0 { 1.0 } else { (-d / 1e-12).exp() })
            .collect()
    };
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Pearson correlation via the sum-of-products route (a different
/// algebraic path than the library's two-pass form). NaN when undefined.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let sx: f64 = a.iter().sum();
    let sy: f64 = b.iter().sum();
    let sxx: f64 = a.iter().map(|x| x * x).sum();
    let syy: f64 = b.iter().map(|y| y * y).sum();
    let sxy: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if a.windows(2).all(|w| w[0] == w[1]) || b.windows(2).all(|w| w[0] == w[1]) {
        return f64::NAN;
    }
    if vx <= 0.0 || vy <= 0.0 {
        return f64::NAN;
    }
    ((n * sxy - sx * sy) / (vx * vy).sqrt()).clamp(-1.0, 1.0)
}

/// Naive simplex projection skill: split halves, brute-force neighbors,
/// one-step-ahead weighted forecast, Pearson. NaN when infeasible or
/// undefined.
pub fn simplex_rho(series: &[f64], e: usize, tau: usize) -> f64 {
    let tp = 1usize;
    let mid = series.len().div_ceil(2);
    let (library, target) = series.split_at(mid);
    let min_t = (e - 1) * tau;
    let k = e + 1;
    if library.len() < min_t + 1 || library.len() - min_t < k {
        return f64::NAN;
    }
    if target.len() < min_t + tp + 1 {
        return f64::NAN;
    }
    let nn = brute_knn(library, target, e, tau, k, false);
    let mut preds = Vec::new();
    let mut obs = Vec::new();
    for (q, row) in nn.iter().enumerate() {
        let t = min_t + q;
        if t + tp >= target.len() {
            continue;
        }
        if row.iter().any(|&(lt, _)| lt + tp >= library.len()) {
            continue;
        }
        let dists: Vec<f64> = row.iter().map(|&(_, d)| d).collect();
        let w = weights(&dists);
        let p: f64 = row
            .iter()
            .zip(&w)
            .map(|(&(lt, _), &wj)| wj * library[lt + tp])
            .sum();
        preds.push(p);
        obs.push(target[t + tp]);
    }
    if preds.is_empty() {
        return f64::NAN;
    }
    pearson(&preds, &obs)
}

/// Reference optimal-E search: argmax of `simplex_rho` over 1..=e_max,
/// ties toward smaller E, undefined values never win.
pub fn best_e(series: &[f64], e_max: usize, tau: usize) -> usize {
    let mut best = 1;
    let mut best_rho = f64::NAN;
    for e in 1..=e_max {
        let r = simplex_rho(series, e, tau);
        if r.is_nan() {
            continue;
        }
        if best_rho.is_nan() || r > best_rho {
            best_rho = r;
            best = e;
        }
    }
    best
}

/// Reference all-to-all CCM built only from oracle pieces: per pair
/// (i, j), brute-force neighbors of library i at dimension optE[j],
/// weighted lookup into series j, Pearson against the embeddable range.
pub fn naive_ccm(ts: &TimeSeriesSet, e_max: usize, tau: usize, exclude_self: bool) -> Vec<Vec<f64>> {
    let n = ts.n_series();
    let opt_e: Vec<usize> = (0..n).map(|j| best_e(ts.series(j), e_max, tau)).collect();
    (0..n)
        .map(|i| {
            let library = ts.series(i);
            (0..n)
                .map(|j| {
                    let e = opt_e[j];
                    let min_t = (e - 1) * tau;
                    let k = e + 1;
                    let points = library.len().saturating_sub(min_t);
                    if points.saturating_sub(usize::from(exclude_self)) < k {
                        return f64::NAN;
                    }
                    let nn = brute_knn(library, library, e, tau, k, exclude_self);
                    let target = ts.series(j);
                    let preds: Vec<f64> = nn
                        .iter()
                        .map(|row| {
                            let dists: Vec<f64> = row.iter().map(|&(_, d)| d).collect();
                            let w = weights(&dists);
                            row.iter()
                                .zip(&w)
                                .map(|(&(lt, _), &wj)| wj * target[lt])
                                .sum()
                        })
                        .collect();
                    pearson(&target[min_t..], &preds)
                })
                .collect()
        })
        .collect()
}

/// Deterministic chaotic test series.
pub fn logistic_series(n: usize, x0: f64, r: f64) -> Vec<f64> {
    let mut x = x0;
    (0..n)
        .map(|_| {
            x = r * x * (1.0 - x);
            x
        })
        .collect()
}
