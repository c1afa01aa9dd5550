use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Append-only comma-separated log with a fixed header.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
    columns: usize,
}

impl MetricsLog {
    /// Starts a fresh log, or appends to an existing one when `append` is set
    /// and its header matches.
    pub fn open(path: &Path, header: &[&str], append: bool) -> Result<Self> {
        let head = header.join(",");
        let existing = append && path.exists();
        if existing {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            if text.lines().next() != Some(head.as_str()) {
                return Err(Error::Data(format!("{}: header differs from {head:?}", path.display())));
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(existing)
            .truncate(!existing)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            columns: header.len(),
        };
        if !existing {
            writeln!(log.out, "{head}").map_err(|e| Error::io(&log.path, e))?;
        }
        Ok(log)
    }

    pub fn row(&mut self, values: &[String]) -> Result<()> {
        assert_eq!(values.len(), self.columns, "metrics row width");
        writeln!(self.out, "{}", values.join(",")).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a log back as a header and numeric rows.
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty metrics log", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Data(format!("{}:{}: non-numeric metrics row", path.display(), i + 2)))
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
