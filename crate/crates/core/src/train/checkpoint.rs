//! Binary checkpoint: magic `ESGCNCP1`, a length-prefixed JSON header, then
//! named parameter tensors as little-endian `f32`. All length prefixes are
//! little-endian `u32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{Esgcn, ModelConfig, ParamStore};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ESGCNCP1";

const MAX_NAME: usize = 1 << 12;
const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub epoch: usize,
    pub val_mae: f64,
    pub nodes: usize,
    pub norm: NormStats,
    pub param_count: usize,
    pub model: ModelConfig,
    /// Echo of the run configuration that produced the checkpoint.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Esgcn<f32>,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("length exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

pub fn write<W: Write>(mut w: W, header: &CheckpointHeader, params: &ParamStore<f32>) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let json = serde_json::to_vec(header)?;
    put_u32(&mut w, json.len())?;
    w.write_all(&json)?;
    put_u32(&mut w, params.len())?;
    for (name, t) in params.iter() {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut w, d)?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn corrupt(&self, msg: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => self.corrupt(format!("truncated while reading {what}")),
            _ => Error::io(self.path, e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub type NamedTensors = Vec<(String, Tensor<f32>)>;

/// Parses a checkpoint stream; `path` is only used in error messages.
pub fn read<R: Read>(inner: R, path: &Path) -> Result<(CheckpointHeader, NamedTensors)> {
    let mut r = Reader { inner, path };
    let magic = r.bytes(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(r.corrupt("bad magic, not an ESGCN checkpoint"));
    }
    let len = r.u32("header length")?;
    let json = r.bytes(len, "header")?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| r.corrupt(format!("invalid header: {e}")))?;
    let count = r.u32("parameter count")?;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32("name length")?;
        if name_len > MAX_NAME {
            return Err(r.corrupt(format!("parameter name length {name_len} is implausible")));
        }
        let name = String::from_utf8(r.bytes(name_len, "name")?).map_err(|_| r.corrupt("parameter name is not UTF-8"))?;
        let rank = r.u32("rank")?;
        if rank > 4 {
            return Err(r.corrupt(format!("parameter `{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        let elements = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| r.corrupt(format!("parameter `{name}` is implausibly large")))?;
        let raw = r.bytes(elements * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| r.corrupt(e.to_string()))?;
        params.push((name, tensor));
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(r.corrupt("trailing bytes after parameters"));
    }
    Ok((header, params))
}

pub fn save(path: &Path, header: &CheckpointHeader, params: &ParamStore<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write(BufWriter::new(file), header, params).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (header, params) = read(BufReader::new(file), path)?;
    let corrupt = |msg: String| Error::Corrupt {
        path: path.to_path_buf(),
        msg,
    };
    let model = Esgcn::from_named(header.model.clone(), params).map_err(|e| corrupt(e.to_string()))?;
    if model.parameter_count() != header.param_count {
        return Err(corrupt(format!(
            "header declares {} parameters, file holds {}",
            header.param_count,
            model.parameter_count()
        )));
    }
    Ok(Checkpoint { header, model })
}
