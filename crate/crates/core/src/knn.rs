//! Exact k-nearest-neighbor search over delay-embedded series.
//!
//! Embeddings are never materialized: coordinates are read on the fly
//! through [`EmbeddedView`], and the distance loop nest keeps the innermost
//! loop striding contiguously over library points. Squared distances are
//! used for selection (order-preserving, cheaper); the square root is
//! applied once to the selected k before weighting.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{EmbeddedView, EmbeddingSpec, KnnTable};

/// Floor used in the exponential weighting when the nearest distance is
/// exactly zero: exact matches get weight 1, everything else decays as
/// exp(-d / EPS_ABS), which underflows to 0 for any non-tiny d. Exact
/// matches therefore dominate the prediction.
pub const EPS_ABS: f64 = 1e-12;

/// Tuning knobs for the kNN search.
#[derive(Debug, Clone, Copy)]
pub struct KnnOptions {
    /// Largest distance matrix (in bytes) that may be materialized at once.
    /// Larger problems fall back to row-blocked processing with identical
    /// output.
    pub max_matrix_bytes: usize,
}

impl Default for KnnOptions {
    fn default() -> Self {
        KnnOptions {
            max_matrix_bytes: 256 << 20,
        }
    }
}

/// Dense matrix of squared distances between every target (query) point
/// and every library point in E-space.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n_queries: usize,
    n_library: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_library(&self) -> usize {
        self.n_library
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n_library + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n_library..(i + 1) * self.n_library]
    }
}

/// Squared-distance rows for queries `q0..q0 + rows`, written into `out`
/// (rows * n_library). The k loop is outer and the library loop innermost
/// so memory access is contiguous.
fn fill_distance_rows(library: &EmbeddedView, target: &EmbeddedView, q0: usize, out: &mut [f64]) {
    let n_l = library.n_points();
    let e = library.spec().e;
    for (r, row) in out.chunks_exact_mut(n_l).enumerate() {
        row.fill(0.0);
        for k in 0..e {
            let tq = target.coord(q0 + r, k);
            for (acc, &x) in row.iter_mut().zip(library.coord_slice(k)) {
                let d = tq - x;
                *acc += d * d;
            }
        }
    }
}

/// Full all-pairs squared-distance matrix between the embedded target
/// (rows) and library (columns) points.
///
/// Refuses matrices larger than the default memory budget; use
/// [`compute_knn_table`] for large inputs, which processes rows in blocks
/// without materializing the whole matrix.
pub fn all_pairs_distances(
    library: &EmbeddedView,
    target: &EmbeddedView,
) -> Result<DistanceMatrix> {
    all_pairs_distances_with(library, target, &KnnOptions::default())
}

pub fn all_pairs_distances_with(
    library: &EmbeddedView,
    target: &EmbeddedView,
    opts: &KnnOptions,
) -> Result<DistanceMatrix> {
    if library.spec() != target.spec() {
        return Err(Error::InvalidArgument(
            "library and target embedding specs differ".into(),
        ));
    }
    let n_q = target.n_points();
    let n_l = library.n_points();
    let bytes = n_q
        .checked_mul(n_l)
        .and_then(|c| c.checked_mul(8))
        .unwrap_or(usize::MAX);
    if bytes > opts.max_matrix_bytes {
        return Err(Error::BudgetExceeded {
            rows: n_q,
            cols: n_l,
            budget: opts.max_matrix_bytes,
        });
    }
    let mut d = vec![0.0; n_q * n_l];
    d.par_chunks_mut(n_l)
        .enumerate()
        .for_each(|(q, row)| fill_distance_rows(library, target, q, row));
    Ok(DistanceMatrix {
        n_queries: n_q,
        n_library: n_l,
        d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    d: f64,
    idx: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        // Distances are finite by precondition; ties break toward the
        // smaller index so selection is deterministic.
        self.d
            .partial_cmp(&other.d)
            .unwrap_or(Ordering::Equal)
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Heap-based selection of the k smallest candidates from an iterator,
/// O(n log k). Returns them in non-decreasing (distance, index) order.
fn heap_select(cands: impl Iterator<Item = Cand>, k: usize) -> Vec<Cand> {
    let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
    for c in cands {
        if heap.len() < k {
            heap.push(c);
        } else if let Some(&top) = heap.peek() {
            if c < top {
                heap.pop();
                heap.push(c);
            }
        }
    }
    heap.into_sorted_vec()
}

/// The k smallest distances (non-decreasing) with their co-sorted indices.
/// Equal distances break ties toward the smaller index.
pub fn partial_select(
    distances: &[f64],
    indices: &[usize],
    k: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if distances.len() != indices.len() {
        return Err(Error::LengthMismatch {
            left: distances.len(),
            right: indices.len(),
        });
    }
    if k > distances.len() {
        return Err(Error::InvalidArgument(format!(
            "k={k} exceeds row length {}",
            distances.len()
        )));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument(
            "distances must be finite".into(),
        ));
    }
    let sel = heap_select(
        distances
            .iter()
            .zip(indices)
            .map(|(&d, &i)| Cand { d, idx: i as u32 }),
        k,
    );
    Ok((
        sel.iter().map(|c| c.idx as usize).collect(),
        sel.iter().map(|c| c.d).collect(),
    ))
}

/// Exponential-scaled, normalized weights for one row of non-decreasing
/// Euclidean distances: w_j = exp(-d_j / d_1), then w / sum(w). When the
/// nearest distance is zero, exact matches get weight 1 and the rest decay
/// with the [`EPS_ABS`] floor (far neighbors may underflow to weight 0).
pub fn normalize_weights(distances: &[f64]) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("empty distance row".into()));
    }
    if distances
        .windows(2)
        .any(|w| w[0] > w[1] || w[0] < 0.0)
        || distances[0] < 0.0
    {
        return Err(Error::InvalidArgument(
            "distances must be non-negative and non-decreasing".into(),
        ));
    }
    let mut w = distances.to_vec();
    weights_in_place(&mut w);
    Ok(w)
}

/// Replaces a row of non-decreasing distances with its normalized weights.
fn weights_in_place(row: &mut [f64]) {
    let d1 = row[0];
    if d1 > 0.0 {
        for w in row.iter_mut() {
            *w = (-*w / d1).exp();
        }
    } else {
        for w in row.iter_mut() {
            *w = if *w == 0.0 { 1.0 } else { (-*w / EPS_ABS).exp() };
        }
    }
    let sum: f64 = row.iter().sum();
    for w in row.iter_mut() {
        *w /= sum;
    }
}

/// Selected neighbors before weighting: time indices and Euclidean
/// distances, both row-major `n_queries x k`.
#[derive(Debug, Clone)]
pub struct NeighborLists {
    pub min_t: usize,
    pub n_queries: usize,
    pub k: usize,
    pub indices: Vec<u32>,
    pub distances: Vec<f64>,
}

/// Top-(E+1) neighbor search: selection only, no weighting. `exclude_self`
/// removes the library candidate whose time index equals the query's own
/// (meaningful when library and target are the same series).
pub fn knn_neighbors(
    library: &[f64],
    target: &[f64],
    spec: &EmbeddingSpec,
    exclude_self: bool,
) -> Result<NeighborLists> {
    knn_neighbors_with(library, target, spec, exclude_self, &KnnOptions::default())
}

pub fn knn_neighbors_with(
    library: &[f64],
    target: &[f64],
    spec: &EmbeddingSpec,
    exclude_self: bool,
    opts: &KnnOptions,
) -> Result<NeighborLists> {
    let lib = EmbeddedView::new(library, *spec)?;
    let tgt = EmbeddedView::new(target, *spec)?;
    let n_q = tgt.n_points();
    let n_l = lib.n_points();
    let k = spec.e + 1;
    let lib_min_t = spec.min_t();
    let tgt_min_t = spec.min_t();

    // Worst-case candidate count (exclusion can remove at most one).
    let min_cands = if exclude_self { n_l - 1 } else { n_l };
    if min_cands < k {
        return Err(Error::SeriesTooShort {
            e: spec.e,
            needed: k,
            have: min_cands,
        });
    }

    let mut indices = vec![0u32; n_q * k];
    let mut distances = vec![0.0; n_q * k];

    // Row-blocked processing: one block when the matrix fits the budget
    // (the fully materialized path), smaller blocks otherwise. Per-row
    // arithmetic is identical either way, so the output does not depend on
    // the block size.
    let rows_per_block = (opts.max_matrix_bytes / (n_l * 8)).clamp(1, n_q);

    indices
        .par_chunks_mut(rows_per_block * k)
        .zip(distances.par_chunks_mut(rows_per_block * k))
        .enumerate()
        .for_each(|(b, (idx_chunk, dist_chunk))| {
            let q0 = b * rows_per_block;
            let rows = idx_chunk.len() / k;
            let mut scratch = vec![0.0; rows * n_l];
            let block = &mut scratch[..];
            fill_distance_rows(&lib, &tgt, q0, block);
            // Selection per row can run in parallel when there is a single
            // large block; nested par_iter shares the same pool.
            block
                .par_chunks_exact(n_l)
                .zip(idx_chunk.par_chunks_mut(k))
                .zip(dist_chunk.par_chunks_mut(k))
                .enumerate()
                .with_min_len(16)
                .for_each(|(r, ((row, idx_out), dist_out))| {
                    let q_time = tgt_min_t + q0 + r;
                    let sel = if exclude_self {
                        heap_select(
                            row.iter().enumerate().filter_map(|(j, &d)| {
                                (lib_min_t + j != q_time).then_some(Cand { d, idx: j as u32 })
                            }),
                            k,
                        )
                    } else {
                        heap_select(
                            row.iter()
                                .enumerate()
                                .map(|(j, &d)| Cand { d, idx: j as u32 }),
                            k,
                        )
                    };
                    debug_assert_eq!(sel.len(), k);
                    for (c, (io, dn)) in sel.iter().zip(idx_out.iter_mut().zip(dist_out.iter_mut()))
                    {
                        *io = (lib_min_t as u32) + c.idx;
                        *dn = c.d.sqrt();
                    }
                });
        });

    Ok(NeighborLists {
        min_t: tgt_min_t,
        n_queries: n_q,
        k,
        indices,
        distances,
    })
}

/// Per-query top-(E+1) neighbor table with normalized weights.
pub fn compute_knn_table(
    library: &[f64],
    target: &[f64],
    spec: &EmbeddingSpec,
    exclude_self: bool,
) -> Result<KnnTable> {
    compute_knn_table_with(library, target, spec, exclude_self, &KnnOptions::default())
}

pub fn compute_knn_table_with(
    library: &[f64],
    target: &[f64],
    spec: &EmbeddingSpec,
    exclude_self: bool,
    opts: &KnnOptions,
) -> Result<KnnTable> {
    let mut lists = knn_neighbors_with(library, target, spec, exclude_self, opts)?;
    for row in lists.distances.chunks_exact_mut(lists.k) {
        weights_in_place(row);
    }
    Ok(KnnTable::new(
        spec.e,
        spec.tau,
        lists.min_t,
        lists.n_queries,
        lists.k,
        lists.indices,
        lists.distances,
    ))
}
