//! Domain types and numeric primitives shared by every other module.
//!
//! All indices are 0-based. Predictive-skill values ("rho") are Pearson
//! correlations in [-1, 1]; a NaN rho is the dedicated "undefined" sentinel
//! used when a correlation does not exist (zero-variance input).

use crate::error::{Error, Result};

/// A rectangular set of N real-valued time series, each of length L.
///
/// Logically an L x N matrix (rows = time steps, columns = series); stored
/// with each series contiguous so per-series kernels stride by 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSet {
    data: Vec<f64>,
    len: usize,
    names: Option<Vec<String>>,
}

impl TimeSeriesSet {
    /// Builds a set from per-series vectors. All series must have the same
    /// length L >= 2 and contain only finite values.
    pub fn from_series(series: Vec<Vec<f64>>, names: Option<Vec<String>>) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InvalidArgument("dataset has no series".into()));
        }
        let len = series[0].len();
        if len < 2 {
            return Err(Error::InvalidArgument(format!(
                "series length must be >= 2, got {len}"
            )));
        }
        for (j, s) in series.iter().enumerate() {
            if s.len() != len {
                return Err(Error::InvalidArgument(format!(
                    "series {j} has length {} but series 0 has length {len}",
                    s.len()
                )));
            }
            if let Some(t) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite value in series {j} at time step {t}"
                )));
            }
        }
        if let Some(ref n) = names {
            if n.len() != series.len() {
                return Err(Error::LengthMismatch {
                    left: n.len(),
                    right: series.len(),
                });
            }
        }
        let mut data = Vec::with_capacity(len * series.len());
        for s in &series {
            data.extend_from_slice(s);
        }
        Ok(TimeSeriesSet { data, len, names })
    }

    /// Builds a set from row-major rows (one row per time step).
    pub fn from_rows(rows: &[Vec<f64>], names: Option<Vec<String>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("dataset has no rows".into()));
        }
        let n = rows[0].len();
        let mut series = vec![Vec::with_capacity(rows.len()); n];
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "row {t} has {} columns but row 0 has {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                series[j].push(v);
            }
        }
        Self::from_series(series, names)
    }

    /// Number of series (columns).
    pub fn n_series(&self) -> usize {
        self.data.len() / self.len
    }

    /// Number of time steps (rows).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// One series as a contiguous slice.
    pub fn series(&self, j: usize) -> &[f64] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Series name, or its index rendered as `s<j>` when unnamed.
    pub fn name_of(&self, j: usize) -> String {
        match &self.names {
            Some(n) => n[j].clone(),
            None => format!("s{j}"),
        }
    }
}

/// Delay-embedding parameters: dimension E, lag tau, prediction horizon Tp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingSpec {
    pub e: usize,
    pub tau: usize,
    pub tp: usize,
}

impl EmbeddingSpec {
    pub fn new(e: usize, tau: usize, tp: usize) -> Result<Self> {
        if e == 0 {
            return Err(Error::InvalidArgument("E must be >= 1".into()));
        }
        if tau == 0 {
            return Err(Error::InvalidArgument("tau must be >= 1".into()));
        }
        Ok(EmbeddingSpec { e, tau, tp })
    }

    /// Time index of the first embeddable point: (E-1) * tau.
    pub fn min_t(&self) -> usize {
        (self.e - 1) * self.tau
    }

    /// Number of embeddable points in a series of length `len`,
    /// or an error if there are none (requires (E-1)*tau + Tp < len).
    pub fn n_points(&self, len: usize) -> Result<usize> {
        let need = self.min_t() + self.tp + 1;
        if len < need {
            return Err(Error::SeriesTooShort {
                e: self.e,
                needed: need,
                have: len,
            });
        }
        Ok(len - self.min_t())
    }
}

/// Coordinate k of the embedded point at time t: x(t - k*tau).
///
/// Pure index arithmetic; no copy of the series is made.
pub fn embed_coordinate(series: &[f64], spec: &EmbeddingSpec, t: usize, k: usize) -> Result<f64> {
    if k >= spec.e {
        return Err(Error::InvalidArgument(format!(
            "coordinate index {k} out of range for E={}",
            spec.e
        )));
    }
    if t < spec.min_t() || t >= series.len() {
        return Err(Error::InvalidArgument(format!(
            "time index {t} outside the embeddable range [{}, {}]",
            spec.min_t(),
            series.len().saturating_sub(1)
        )));
    }
    Ok(series[t - k * spec.tau])
}

/// A lazily embedded view of one series: point p(t) = (x(t), x(t-tau), ...,
/// x(t-(E-1)tau)) for t in [(E-1)tau, L-1]. Point i of the view corresponds
/// to time index min_t + i.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddedView<'a> {
    source: &'a [f64],
    spec: EmbeddingSpec,
}

impl<'a> EmbeddedView<'a> {
    pub fn new(source: &'a [f64], spec: EmbeddingSpec) -> Result<Self> {
        spec.n_points(source.len())?;
        Ok(EmbeddedView { source, spec })
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn series(&self) -> &'a [f64] {
        self.source
    }

    /// Number of embeddable points: L - (E-1)*tau.
    pub fn n_points(&self) -> usize {
        self.source.len() - self.spec.min_t()
    }

    /// Time index of point i.
    pub fn time_of(&self, i: usize) -> usize {
        self.spec.min_t() + i
    }

    /// Coordinate k of point i (point indices, not time indices).
    pub fn coord(&self, i: usize, k: usize) -> f64 {
        self.source[self.spec.min_t() + i - k * self.spec.tau]
    }

    /// The coordinate-k values of all points as one contiguous slice:
    /// element i is coord(i, k). This is what makes the innermost distance
    /// loop stride contiguously over library points.
    pub fn coord_slice(&self, k: usize) -> &'a [f64] {
        let start = self.spec.min_t() - k * self.spec.tau;
        &self.source[start..start + self.n_points()]
    }
}

/// Per-query nearest-neighbor table: for each of the n_queries embedded
/// points, the time indices of its k nearest library points and their
/// exponential-scaled, row-normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnTable {
    pub e: usize,
    pub tau: usize,
    /// Time index of query row 0; row i is the query at time min_t + i.
    pub min_t: usize,
    n_queries: usize,
    k: usize,
    indices: Vec<u32>,
    weights: Vec<f64>,
}

impl KnnTable {
    pub(crate) fn new(
        e: usize,
        tau: usize,
        min_t: usize,
        n_queries: usize,
        k: usize,
        indices: Vec<u32>,
        weights: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(indices.len(), n_queries * k);
        debug_assert_eq!(weights.len(), n_queries * k);
        KnnTable {
            e,
            tau,
            min_t,
            n_queries,
            k,
            indices,
            weights,
        }
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    /// Neighbors per query (E + 1).
    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor time indices of query row i, nearest first.
    pub fn indices_row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Normalized weights of query row i, co-ordered with `indices_row`.
    pub fn weights_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.k..(i + 1) * self.k]
    }
}

/// Result of the embedding-dimension search for one series.
#[derive(Debug, Clone)]
pub struct OptimalEmbedding {
    pub series_id: usize,
    /// argmax over E of simplex skill; ties break toward smaller E.
    pub best_e: usize,
    /// Skill at best_e; NaN when no E produced a defined skill.
    pub rho: f64,
    /// rho(E) for E = 1..=E_max requested; NaN marks infeasible or
    /// undefined evaluations. Kept for diagnostics output.
    pub rho_by_e: Vec<f64>,
    /// Largest E that was actually evaluated (range is truncated when the
    /// series is too short for the requested E_max).
    pub feasible_e_max: usize,
}

impl OptimalEmbedding {
    /// True when every evaluated E produced an undefined skill.
    pub fn is_undefined(&self) -> bool {
        self.rho.is_nan()
    }
}

/// N x N matrix of cross-map skills. Entry (i, j) is the skill of
/// predicting series j from the reconstructed manifold of series i; a high
/// value means j causally drives i. NaN is the undefined sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalMap {
    n: usize,
    rho: Vec<f64>,
}

impl CausalMap {
    pub fn new(n: usize) -> Self {
        CausalMap {
            n,
            rho: vec![f64::NAN; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rho[i * self.n..(i + 1) * self.n]
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        assert_eq!(row.len(), self.n);
        self.rho[i * self.n..(i + 1) * self.n].copy_from_slice(row);
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }
}

/// Pearson product-moment correlation of two equal-length vectors.
///
/// Returns the NaN sentinel when either vector is constant (zero variance):
/// a dead series has no defined correlation, which must stay distinct from
/// "no skill" (rho = 0). The result is clamped to [-1, 1] to absorb
/// floating-point overshoot.
pub fn pearson_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson_rho needs at least 2 samples, got {}",
            a.len()
        )));
    }
    // Exact constant detection: the mean of a constant vector is not always
    // bit-equal to its value, so a variance test alone can miss this case.
    if a.windows(2).all(|w| w[0] == w[1]) || b.windows(2).all(|w| w[0] == w[1]) {
        return Ok(f64::NAN);
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(f64::NAN);
    }
    Ok((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}
