use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Append-only CSV with a header row, flushed after every row so an
/// interrupted run leaves a readable file.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
    columns: usize,
}

impl MetricsLog {
    /// Start a fresh file, replacing any previous one.
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        out.flush()?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            out,
            columns: header.len(),
        })
    }

    /// Continue an existing file, keeping only the rows whose first field
    /// passes `keep` (rows written after the checkpoint being resumed are
    /// dropped). A missing file starts fresh.
    pub fn resume(path: &Path, header: &[&str], keep: impl Fn(u64) -> bool) -> Result<Self> {
        let Ok(text) = fs::read_to_string(path) else {
            return Self::create(path, header);
        };
        let mut lines = text.lines();
        let expected = header.join(",");
        if lines.next() != Some(expected.as_str()) {
            return Err(Error::Checkpoint(format!("{} has an unexpected header", path.display())));
        }
        let kept: Vec<&str> = lines
            .filter(|l| {
                l.split(',')
                    .next()
                    .and_then(|f| f.parse::<u64>().ok())
                    .is_some_and(&keep)
            })
            .collect();
        let mut log = Self::create(path, header)?;
        for l in kept {
            writeln!(log.out, "{l}")?;
        }
        log.out.flush()?;
        Ok(log)
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.columns {
            return Err(Error::Config(format!(
                "{}: row has {} fields, header has {}",
                self.path.display(),
                fields.len(),
                self.columns
            )));
        }
        writeln!(self.out, "{}", fields.join(","))?;
        self.out.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// An optional value as a CSV field; `None` is empty.
pub fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}
