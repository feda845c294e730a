//! Raw flow series and their on-disk formats.
//!
//! CSV: `T` rows of `N` comma-separated decimals, no header, literal `nan`
//! (or an empty cell) marks a missing reading.
//!
//! BIN: the 8-byte magic `ESGCNDS1`, a `u32` little-endian byte length
//! followed by a UTF-8 JSON header `{"T":..,"N":..,"interval_minutes":..,"has_mask":..}`,
//! then `T·N` little-endian `f32` values row-major, then (if `has_mask`)
//! `T·N` mask bytes where 1 means missing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BIN_MAGIC: &[u8; 8] = b"ESGCNDS1";
pub const DEFAULT_INTERVAL_MINUTES: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Bin,
}

impl DataFormat {
    /// `.bin` → Bin, anything else → Csv.
    pub fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("bin") => DataFormat::Bin,
            _ => DataFormat::Csv,
        }
    }
}

/// A `T × N` matrix of flow readings (row = time step, column = region)
/// with a per-cell missing mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub interval_minutes: u32,
    steps: usize,
    nodes: usize,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl SeriesDataset {
    /// Cells whose value is NaN are marked missing in addition to `missing`.
    pub fn new(name: impl Into<String>, steps: usize, nodes: usize, values: Vec<f64>, missing: Option<Vec<bool>>) -> Result<Self> {
        if steps == 0 || nodes == 0 {
            return Err(Error::Data("dataset has no rows or no columns".into()));
        }
        if values.len() != steps * nodes {
            return Err(Error::Data(format!(
                "{steps}×{nodes} dataset needs {} values, got {}",
                steps * nodes,
                values.len()
            )));
        }
        let mut mask = missing.unwrap_or_else(|| vec![false; values.len()]);
        if mask.len() != values.len() {
            return Err(Error::Data("missing mask does not match value count".into()));
        }
        for (m, v) in mask.iter_mut().zip(&values) {
            *m |= !v.is_finite();
        }
        Ok(Self {
            name: name.into(),
            interval_minutes: DEFAULT_INTERVAL_MINUTES,
            steps,
            nodes,
            values,
            missing: mask,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Row-major `T × N` values; missing cells hold whatever the source had.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn value(&self, t: usize, node: usize) -> f64 {
        self.values[t * self.nodes + node]
    }

    pub fn is_missing(&self, t: usize, node: usize) -> bool {
        self.missing[t * self.nodes + node]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn missing_ratio(&self) -> f64 {
        self.missing_count() as f64 / self.missing.len() as f64
    }

    /// Marks exact zeros as missing (PEMS exports encode gaps as 0).
    pub fn mark_zeros_missing(&mut self) {
        for (m, &v) in self.missing.iter_mut().zip(&self.values) {
            *m |= v == 0.0;
        }
    }

    pub(crate) fn with_values(&self, values: Vec<f64>, missing: Vec<bool>) -> Self {
        Self {
            values,
            missing,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    pub zeros_as_missing: bool,
}

pub fn load(path: &Path, format: DataFormat, opts: LoadOptions) -> Result<SeriesDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reader = BufReader::new(file);
    let mut ds = match format {
        DataFormat::Csv => read_csv(reader, name),
        DataFormat::Bin => read_bin(reader, name),
    }
    .map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if opts.zeros_as_missing {
        ds.mark_zeros_missing();
    }
    Ok(ds)
}

pub fn read_csv<R: Read>(reader: R, name: impl Into<String>) -> Result<SeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut nodes = None;
    let mut steps = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {}: {e}", row + 1)))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match nodes {
            None => nodes = Some(record.len()),
            Some(n) if n != record.len() => {
                return Err(Error::Data(format!(
                    "row {} has {} values, expected {n}",
                    row + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for (col, field) in record.iter().enumerate() {
            let v = if field.is_empty() || field.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Data(format!("row {} column {}: cannot parse {field:?}", row + 1, col + 1)))?;
                if v.is_infinite() {
                    return Err(Error::Data(format!("row {} column {}: infinite value", row + 1, col + 1)));
                }
                v
            };
            values.push(v);
        }
        steps += 1;
    }
    let nodes = nodes.ok_or_else(|| Error::Data("empty file".into()))?;
    SeriesDataset::new(name, steps, nodes, values, None)
}

pub fn write_csv<W: Write>(ds: &SeriesDataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<csv>", e);
    for t in 0..ds.steps {
        for n in 0..ds.nodes {
            if n > 0 {
                w.write_all(b",").map_err(io)?;
            }
            if ds.is_missing(t, n) {
                w.write_all(b"nan").map_err(io)?;
            } else {
                write!(w, "{}", ds.value(t, n)).map_err(io)?;
            }
        }
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Serialize, Deserialize)]
struct BinHeader {
    #[serde(rename = "T")]
    steps: usize,
    #[serde(rename = "N")]
    nodes: usize,
    interval_minutes: u32,
    has_mask: bool,
}

/// Reads exactly `len` bytes; the buffer grows with the data actually
/// present, so a corrupt length cannot force a huge allocation.
fn read_exactly<R: Read>(reader: &mut R, len: u64) -> Option<Vec<u8>> {
    let mut buf = Vec::new();
    reader.take(len).read_to_end(&mut buf).ok()?;
    (buf.len() as u64 == len).then_some(buf)
}

pub fn read_bin<R: Read>(mut reader: R, name: impl Into<String>) -> Result<SeriesDataset> {
    let short = |what: &str| Error::Data(format!("truncated file while reading {what}"));
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(|_| Error::Data("empty file".into()))?;
    if &magic != BIN_MAGIC {
        return Err(Error::Data(format!("bad magic {:?}, expected ESGCNDS1", String::from_utf8_lossy(&magic))));
    }
    let mut len = [0u8; 4];
    reader.read_exact(&mut len).map_err(|_| short("header length"))?;
    let header = read_exactly(&mut reader, u32::from_le_bytes(len) as u64).ok_or_else(|| short("header"))?;
    let header: BinHeader =
        serde_json::from_slice(&header).map_err(|e| Error::Data(format!("malformed header: {e}")))?;
    let cells = header
        .steps
        .checked_mul(header.nodes)
        .ok_or_else(|| Error::Data("malformed header: T·N overflows".into()))?;
    let raw = read_exactly(&mut reader, cells as u64 * 4).ok_or_else(|| short("values"))?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mask = if header.has_mask {
        let m = read_exactly(&mut reader, cells as u64).ok_or_else(|| short("mask"))?;
        Some(m.into_iter().map(|b| b != 0).collect())
    } else {
        None
    };
    let mut ds = SeriesDataset::new(name, header.steps, header.nodes, values, mask)?;
    ds.interval_minutes = header.interval_minutes;
    Ok(ds)
}

pub fn write_bin<W: Write>(ds: &SeriesDataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<bin>", e);
    let has_mask = ds.missing.iter().any(|&m| m);
    let header = serde_json::to_vec(&BinHeader {
        steps: ds.steps,
        nodes: ds.nodes,
        interval_minutes: ds.interval_minutes,
        has_mask,
    })
    .expect("header serializes");
    w.write_all(BIN_MAGIC).map_err(io)?;
    w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for &v in &ds.values {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    if has_mask {
        let mask: Vec<u8> = ds.missing.iter().map(|&m| m as u8).collect();
        w.write_all(&mask).map_err(io)?;
    }
    w.flush().map_err(io)
}
