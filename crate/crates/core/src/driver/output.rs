use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One output-time row of a solver's metric series.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub t: f64,
    /// `𝓔(t)` against the full-order ensemble when one is available.
    pub total_error: Option<f64>,
    /// Singular values, descending.
    pub sigma: Vec<f64>,
    pub p: Option<usize>,
    pub eps: Option<f64>,
    pub wall_ns: u64,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

pub const METRIC_HEADER: [&str; 8] = ["t", "total_error", "sigma", "p", "eps", "wall_ns", "rows", "cols"];

/// Round-trip exact float text (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// CSV writer that maps failures to errors carrying `path`.
pub struct CsvFile {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvFile {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Self {
            inner: csv::Writer::from_writer(BufWriter::new(file)),
            path,
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    pub fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<()> {
        let path = &self.path;
        self.inner
            .write_record(fields.into_iter().collect::<Vec<_>>())
            .map_err(|e| csv_error(path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `records` as CSV; vector fields are space-separated inside one cell.
pub fn emit_metrics(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = CsvFile::create(path, &METRIC_HEADER)?;
    for r in records {
        out.row([
            fmt_f64(r.t),
            r.total_error.map(fmt_f64).unwrap_or_default(),
            r.sigma.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" "),
            fmt_opt(r.p),
            r.eps.map(fmt_f64).unwrap_or_default(),
            r.wall_ns.to_string(),
            join(&r.rows),
            join(&r.cols),
        ])?;
    }
    out.finish()
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into()))
}

/// Reads a file written by [`emit_metrics`].
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let bad = |what: &str, s: &str| parse_err(path, format!("bad {what}: {s:?}"));
    let f = |s: &str| s.parse::<f64>().map_err(|_| bad("float", s));
    let list = |s: &str| -> Result<Vec<usize>> {
        s.split_whitespace()
            .map(|x| x.parse().map_err(|_| bad("index", x)))
            .collect()
    };
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != METRIC_HEADER.len() {
            return Err(parse_err(
                path,
                format!("expected {} fields, got {}", METRIC_HEADER.len(), rec.len()),
            ));
        }
        out.push(MetricRecord {
            t: f(&rec[0])?,
            total_error: if rec[1].is_empty() { None } else { Some(f(&rec[1])?) },
            sigma: rec[2].split_whitespace().map(f).collect::<Result<_>>()?,
            p: if rec[3].is_empty() {
                None
            } else {
                Some(rec[3].parse().map_err(|_| bad("p", &rec[3]))?)
            },
            eps: if rec[4].is_empty() { None } else { Some(f(&rec[4])?) },
            wall_ns: rec[5].parse().map_err(|_| bad("wall_ns", &rec[5]))?,
            rows: list(&rec[6])?,
            cols: list(&rec[7])?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub rows: usize,
    pub cols: usize,
    pub t: f64,
    pub dtype: String,
    pub order: String,
}

/// Raw little-endian f64 dump (column-major) plus a JSON sidecar `<path>.json`.
pub fn write_snapshot(v: &Matrix, t: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for col in v.columns() {
        for &x in col {
            w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = SnapshotMeta {
        rows: v.nrows(),
        cols: v.ncols(),
        t,
        dtype: "f64le".into(),
        order: "column-major".into(),
    };
    let side = sidecar(path);
    let text = serde_json::to_string_pretty(&meta).expect("snapshot meta serializes");
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<(Matrix, SnapshotMeta)> {
    let path = path.as_ref();
    let side = sidecar(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: SnapshotMeta = serde_json::from_str(&text).map_err(|e| parse_err(&side, e.to_string()))?;
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * meta.rows * meta.cols {
        return Err(parse_err(
            path,
            format!("expected {} bytes, found {}", 8 * meta.rows * meta.cols, bytes.len()),
        ));
    }
    let mut v = Matrix::zeros((meta.rows, meta.cols));
    for (k, chunk) in bytes.chunks_exact(8).enumerate() {
        v[[k % meta.rows, k / meta.rows]] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    Ok((v, meta))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// FNV-1a over the bit patterns of `v` in row-major order.
pub fn checksum(v: &Matrix) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &x in v.iter() {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
