//! Line-delimited JSON records and the per-run summary CSV.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::CliError;

/// Bumped whenever a record gains, loses or renames a field.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, R> {
    schema_version: u32,
    record: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_ms: Option<u64>,
    #[serde(flatten)]
    body: &'a R,
}

pub struct RecordSink<W: Write> {
    out: W,
    timestamps: bool,
    written: usize,
}

impl<W: Write> RecordSink<W> {
    pub fn new(out: W, timestamps: bool) -> Self {
        Self {
            out,
            timestamps,
            written: 0,
        }
    }

    /// Writes one record of the given kind as a single JSON line.
    pub fn emit<R: Serialize>(&mut self, kind: &str, body: &R) -> Result<(), CliError> {
        let timestamp_ms = self.timestamps.then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0)
        });
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            record: kind,
            timestamp_ms,
            body,
        };
        serde_json::to_writer(&mut self.out, &env)?;
        self.out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    pub fn records_written(&self) -> usize {
        self.written
    }

    pub fn into_inner(mut self) -> Result<W, CliError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// `--out PATH` or standard output.
pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write + Send>, CliError> {
    Ok(match path {
        Some(p) => {
            let f = File::create(p)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// `runs/a.jsonl` becomes `runs/a.summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    out.with_file_name(format!("{stem}.summary.csv"))
}

pub fn write_summary_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
