//! Lightweight per-function timing counters.
//!
//! Tasks accumulate the time spent in each hot function (kNN search,
//! table lookup, correlation, file output) into shared atomic counters;
//! `cmd bench` and run manifests report the totals. With parallel workers
//! the totals are summed task time, not wall time.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

#[derive(Debug, Default)]
pub struct Timers {
    knn_nanos: AtomicU64,
    lookup_nanos: AtomicU64,
    corrcoef_nanos: AtomicU64,
    io_nanos: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Category {
    Knn,
    Lookup,
    Corrcoef,
    Io,
}

impl Timers {
    pub fn new() -> Self {
        Timers::default()
    }

    pub fn add(&self, cat: Category, since: Instant) {
        let nanos = since.elapsed().as_nanos() as u64;
        self.counter(cat).fetch_add(nanos, Ordering::Relaxed);
    }

    fn counter(&self, cat: Category) -> &AtomicU64 {
        match cat {
            Category::Knn => &self.knn_nanos,
            Category::Lookup => &self.lookup_nanos,
            Category::Corrcoef => &self.corrcoef_nanos,
            Category::Io => &self.io_nanos,
        }
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        let load = |a: &AtomicU64| a.load(Ordering::Relaxed) as f64 / 1e9;
        MetricsSnapshot {
            knn_secs: load(&self.knn_nanos),
            lookup_secs: load(&self.lookup_nanos),
            corrcoef_secs: load(&self.corrcoef_nanos),
            io_secs: load(&self.io_nanos),
        }
    }
}

/// Accumulated seconds per function category.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsSnapshot {
    pub knn_secs: f64,
    pub lookup_secs: f64,
    pub corrcoef_secs: f64,
    pub io_secs: f64,
}
