//! Dataset ingestion, causal-map persistence with streamed row writes, and
//! run manifests.
//!
//! Two file formats are supported. CSV is the interchange format: one row
//! per time step, optional header of series names. EDM1 is the binary
//! format: a 16-byte header (magic `EDM1`, u32 rows, u32 cols, u8 dtype
//! where 0 = float32 and 1 = float64, three zero bytes reserved) followed
//! by the row-major payload. All multi-byte integers are little-endian.
//! Causal maps are stored as float32 with the undefined sentinel encoded
//! as the quiet-NaN bit pattern 0x7FC00000.

use std::fs::File;
use std::io::{Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ccm::SentinelRecord;
use crate::error::{Error, Result};
use crate::metrics::MetricsSnapshot;
use crate::types::{OptimalEmbedding, TimeSeriesSet};

pub const MAGIC: &[u8; 4] = b"EDM1";
pub const HEADER_LEN: usize = 16;
/// Quiet-NaN bit pattern used on disk for undefined causal-map entries.
pub const SENTINEL_BITS_F32: u32 = 0x7FC0_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Input format selector for `read_dataset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Edm1,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "edm1" => Ok(Format::Edm1),
            other => Err(Error::InvalidArgument(format!(
                "unknown format '{other}' (expected csv or edm1)"
            ))),
        }
    }
}

fn header_bytes(rows: u32, cols: u32, dtype: Dtype) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(MAGIC);
    h[4..8].copy_from_slice(&rows.to_le_bytes());
    h[8..12].copy_from_slice(&cols.to_le_bytes());
    h[12] = dtype.code();
    h
}

fn parse_header(path: &Path, h: &[u8; HEADER_LEN]) -> Result<(u32, u32, Dtype)> {
    if &h[0..4] != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "bad magic (not an EDM1 file)".into(),
        });
    }
    let rows = u32::from_le_bytes(h[4..8].try_into().unwrap());
    let cols = u32::from_le_bytes(h[8..12].try_into().unwrap());
    let dtype = Dtype::from_code(h[12]).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        msg: format!("unknown dtype code {}", h[12]),
    })?;
    Ok((rows, cols, dtype))
}

/// Reads a dataset (rows = time steps, columns = series) in either format.
pub fn read_dataset(path: &Path, format: Format) -> Result<TimeSeriesSet> {
    match format {
        Format::Csv => read_dataset_csv(path),
        Format::Edm1 => read_dataset_edm1(path),
    }
}

fn read_dataset_csv(path: &Path) -> Result<TimeSeriesSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut names: Option<Vec<String>> = None;
    let mut series: Vec<Vec<f64>> = Vec::new();
    let mut n_cols = 0usize;
    let mut data_rows = 0usize;

    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        if idx == 0 {
            // A first row with any non-numeric cell is a header.
            let parsed: Vec<Option<f64>> =
                record.iter().map(|c| c.parse::<f64>().ok()).collect();
            if parsed.iter().any(|p| p.is_none()) {
                names = Some(record.iter().map(str::to_owned).collect());
                n_cols = record.len();
                series = vec![Vec::new(); n_cols];
                continue;
            }
            n_cols = record.len();
            series = vec![Vec::new(); n_cols];
        }
        if record.len() != n_cols {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("ragged row: expected {n_cols} cells, found {}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("non-numeric cell '{cell}' in column {col}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("non-finite value '{cell}' in column {col}"),
                });
            }
            series[col].push(v);
        }
        data_rows += 1;
    }
    if data_rows == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: if names.is_some() { 2 } else { 1 },
            msg: "no data rows".into(),
        });
    }
    TimeSeriesSet::from_series(series, names)
}

fn read_dataset_edm1(path: &Path) -> Result<TimeSeriesSet> {
    let (rows, cols, values) = read_matrix(path)?;
    let mut series = vec![Vec::with_capacity(rows); cols];
    for t in 0..rows {
        for (j, s) in series.iter_mut().enumerate() {
            s.push(values[t * cols + j]);
        }
    }
    TimeSeriesSet::from_series(series, None)
}

/// Reads any EDM1 matrix as f64 values (row-major), with exact payload
/// length validation.
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = [0u8; HEADER_LEN];
    file.read_exact(&mut h)
        .map_err(|e| Error::io(path, e))?;
    let (rows, cols, dtype) = parse_header(path, &h)?;
    let (rows, cols) = (rows as usize, cols as usize);
    let expected = rows * cols * dtype.size();
    let mut payload = Vec::with_capacity(expected);
    file.read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if payload.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!(
                "payload length {} does not match rows*cols*dtype = {expected}",
                payload.len()
            ),
        });
    }
    let values = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((rows, cols, values))
}

/// Serializes a dataset to EDM1 bytes (rows = time steps, columns =
/// series), as pushed over the wire to pathless workers.
pub fn write_dataset_edm1_vec(ts: &TimeSeriesSet, dtype: Dtype) -> Vec<u8> {
    let rows = ts.len();
    let cols = ts.n_series();
    let mut buf = Vec::with_capacity(HEADER_LEN + rows * cols * dtype.size());
    buf.extend_from_slice(&header_bytes(rows as u32, cols as u32, dtype));
    for t in 0..rows {
        for j in 0..cols {
            let v = ts.series(j)[t];
            match dtype {
                Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    buf
}

/// Writes a dataset as EDM1 (rows = time steps, columns = series).
pub fn write_dataset_edm1(path: &Path, ts: &TimeSeriesSet, dtype: Dtype) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&write_dataset_edm1_vec(ts, dtype))
        .map_err(|e| Error::io(path, e))
}

/// Parses an in-memory EDM1 dataset (the PUSH_DATASET payload).
pub fn read_dataset_edm1_slice(bytes: &[u8]) -> Result<TimeSeriesSet> {
    let label = Path::new("<inline dataset>");
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            path: label.to_path_buf(),
            msg: "shorter than the EDM1 header".into(),
        });
    }
    let h: [u8; HEADER_LEN] = bytes[..HEADER_LEN].try_into().unwrap();
    let (rows, cols, dtype) = parse_header(label, &h)?;
    let (rows, cols) = (rows as usize, cols as usize);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != rows * cols * dtype.size() {
        return Err(Error::Format {
            path: label.to_path_buf(),
            msg: "payload length does not match header".into(),
        });
    }
    let mut series = vec![Vec::with_capacity(rows); cols];
    for t in 0..rows {
        for (j, s) in series.iter_mut().enumerate() {
            let off = (t * cols + j) * dtype.size();
            let v = match dtype {
                Dtype::F32 => {
                    f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()) as f64
                }
                Dtype::F64 => f64::from_le_bytes(payload[off..off + 8].try_into().unwrap()),
            };
            s.push(v);
        }
    }
    TimeSeriesSet::from_series(series, None)
}

/// Writes a dataset as CSV. Float formatting uses Rust's shortest
/// round-trip representation, so reading the file back reproduces the
/// exact values.
pub fn write_dataset_csv(path: &Path, ts: &TimeSeriesSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let as_io = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    if let Some(names) = ts.names() {
        w.write_record(names).map_err(as_io)?;
    }
    let mut row = Vec::with_capacity(ts.n_series());
    for t in 0..ts.len() {
        row.clear();
        for j in 0..ts.n_series() {
            row.push(ts.series(j)[t].to_string());
        }
        w.write_record(&row).map_err(as_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// On-disk (and on-wire) encoding of one causal-map row: float32
/// little-endian, NaN mapped to the documented sentinel bit pattern.
pub fn encode_row_f32(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for &v in values {
        let bits = if v.is_nan() {
            SENTINEL_BITS_F32
        } else {
            (v as f32).to_bits()
        };
        out.extend_from_slice(&bits.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_row_f32`] (f32 -> f64 widening is exact).
pub fn decode_row_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect()
}

/// A causal-map output file accepting rows in any order. Rows are written
/// as float32 at offset `HEADER_LEN + i * N * 4`; positioned writes keep
/// concurrent writes to distinct rows safe within one process. A duplicate
/// write of identical bytes is idempotent; differing bytes are an error.
pub struct RowSink {
    file: File,
    path: PathBuf,
    n: usize,
    written: Mutex<Vec<bool>>,
}

impl RowSink {
    /// Creates (truncating) an N x N float32 map file. Rows are not
    /// pre-written; the file is extended to its final size and unwritten
    /// rows read back as zero bytes.
    pub fn create(path: &Path, n: usize) -> Result<Self> {
        // Read access is needed to verify duplicate row writes.
        let mut file = std::fs::OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        file.write_all(&header_bytes(n as u32, n as u32, Dtype::F32))
            .map_err(|e| Error::io(path, e))?;
        file.set_len((HEADER_LEN + n * n * 4) as u64)
            .map_err(|e| Error::io(path, e))?;
        Ok(RowSink {
            file,
            path: path.to_path_buf(),
            n,
            written: Mutex::new(vec![false; n]),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_row(&self, i: usize, values: &[f64]) -> Result<()> {
        if i >= self.n {
            return Err(Error::InvalidArgument(format!(
                "row index {i} out of range for N={}",
                self.n
            )));
        }
        if values.len() != self.n {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: self.n,
            });
        }
        let bytes = encode_row_f32(values);
        let offset = (HEADER_LEN + i * self.n * 4) as u64;
        {
            let mut written = self.written.lock().unwrap();
            if written[i] {
                // Duplicate: idempotent only when the bytes agree.
                let mut existing = vec![0u8; bytes.len()];
                self.file
                    .read_exact_at(&mut existing, offset)
                    .map_err(|e| Error::io(&self.path, e))?;
                if existing == bytes {
                    return Ok(());
                }
                return Err(Error::Format {
                    path: self.path.clone(),
                    msg: format!("conflicting duplicate write of row {i}"),
                });
            }
            written[i] = true;
        }
        self.file
            .write_all_at(&bytes, offset)
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Copies row `i` (raw bytes) from a worker-local map file into `sink`.
pub fn copy_row_bytes(src: &Path, n: usize, i: usize, dst: &RowSink) -> Result<()> {
    let file = File::open(src).map_err(|e| Error::io(src, e))?;
    let mut buf = vec![0u8; n * 4];
    file.read_exact_at(&mut buf, (HEADER_LEN + i * n * 4) as u64)
        .map_err(|e| Error::io(src, e))?;
    // Decode to f64 and rewrite: the f32 -> f64 -> f32 round trip is exact,
    // and the sink's duplicate checking applies.
    let values: Vec<f64> = buf
        .chunks_exact(4)
        .map(|c| {
            let bits = u32::from_le_bytes(c.try_into().unwrap());
            f32::from_bits(bits) as f64
        })
        .collect();
    dst.write_row(i, &values)
}

/// SHA-256 of a file, hex-encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Per-series optimal-embedding report (CSV): one line per series with the
/// winning E, its skill, and the whole rho(E) curve.
pub fn write_opt_e_csv(path: &Path, opt: &[OptimalEmbedding], ts: &TimeSeriesSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let as_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let e_max = opt.iter().map(|o| o.rho_by_e.len()).max().unwrap_or(0);
    let mut header = vec!["series".to_string(), "name".into(), "best_e".into(), "rho".into()];
    header.extend((1..=e_max).map(|e| format!("rho_e{e}")));
    w.write_record(&header).map_err(as_err)?;
    for o in opt {
        let mut rec = vec![
            o.series_id.to_string(),
            ts.name_of(o.series_id),
            o.best_e.to_string(),
            o.rho.to_string(),
        ];
        for e in 0..e_max {
            rec.push(
                o.rho_by_e
                    .get(e)
                    .copied()
                    .unwrap_or(f64::NAN)
                    .to_string(),
            );
        }
        w.write_record(&rec).map_err(as_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: String,
    pub sha256: String,
    pub time_steps: u32,
    pub n_series: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsInfo {
    pub e_max: u32,
    pub tau: u32,
    pub exclude_self: bool,
    /// Horizon of the embedding-dimension search (always 1).
    pub tp_simplex: u32,
    /// Horizon of the cross-map lookup (always 0).
    pub tp_ccm: u32,
    pub output_dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingsInfo {
    pub phase1_secs: f64,
    pub phase2_secs: f64,
    pub merge_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowInfo {
    pub row: u32,
    pub worker: String,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentinelInfo {
    pub row: u32,
    pub col: u32,
    pub cause: String,
}

/// Human-readable run record written next to every causal map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: DatasetInfo,
    pub params: ParamsInfo,
    pub opt_e_path: String,
    pub timings: TimingsInfo,
    #[serde(default)]
    pub phase1_metrics: Option<MetricsSnapshot>,
    #[serde(default)]
    pub phase2_metrics: Option<MetricsSnapshot>,
    pub rows: Vec<RowInfo>,
    pub sentinels: Vec<SentinelInfo>,
}

impl RunManifest {
    pub fn sentinel_info(records: &[SentinelRecord]) -> Vec<SentinelInfo> {
        records
            .iter()
            .map(|s| SentinelInfo {
                row: s.row as u32,
                col: s.col as u32,
                cause: format!("{:?}", s.cause),
            })
            .collect()
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text = toml::to_string_pretty(manifest).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: format!("manifest serialization failed: {e}"),
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: format!("manifest parse failed: {e}"),
    })
}
