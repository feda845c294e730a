//! File and stdout writers for command results.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// Writes `name` inside `dir`, or prints to stdout when no directory is given.
pub fn emit(dir: Option<&Path>, name: &str, bytes: &[u8]) -> Result<Option<PathBuf>> {
    match dir {
        Some(dir) => {
            ensure_dir(dir)?;
            let path = dir.join(name);
            write_file(&path, bytes)?;
            Ok(Some(path))
        }
        None => {
            io::stdout().write_all(bytes).context("cannot write to stdout")?;
            Ok(None)
        }
    }
}

/// Header-less CSV of a numeric matrix.
pub fn matrix_csv<T: std::fmt::Display>(rows: impl IntoIterator<Item = Vec<T>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// CSV writer that flushes after every record so partial runs leave a
/// readable log.
pub struct CsvLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvLog {
    pub fn create(path: PathBuf) -> Result<Self> {
        let writer = csv::Writer::from_path(&path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(Self { path, writer })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> io::Result<()> {
        self.writer.serialize(record).map_err(io::Error::other)?;
        self.writer.flush()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
