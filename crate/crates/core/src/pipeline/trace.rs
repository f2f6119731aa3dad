use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::FinalRecord;

/// Bumped whenever a field of [`FinalRecord`] changes meaning or shape.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path} line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
}

/// One JSON object per line, in the order given.
pub fn write_traces(path: &Path, records: &[FinalRecord]) -> Result<(), TraceError> {
    let io = |e: std::io::Error| TraceError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_traces(path: &Path) -> Result<Vec<FinalRecord>, TraceError> {
    let text = fs::read_to_string(path).map_err(|e| TraceError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TraceError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
