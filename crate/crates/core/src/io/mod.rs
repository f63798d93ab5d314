//! File formats: binary IQ frames, CSV results, JSON run configs and gnuplot
//! scripts.

pub mod config;
pub mod iq;
pub mod plot;
pub mod results;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ExperimentKind, OutputPaths, RunConfig};
pub use iq::{read_iq, write_iq, IqFile, IqHeader};
pub use plot::{emit_plot_script, FigureKind};
pub use results::{parse_rows, render_rows, CsvRow, CSV_COLUMNS};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"PNCE\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported IQ version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("truncated file at byte offset {offset} (expected {expected} bytes)")]
    TruncatedFile { offset: u64, expected: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("CSV schema mismatch at line {line}: {message}")]
    SchemaMismatch { line: u64, message: String },
    #[error("{path}: invalid config: {message}")]
    Config { path: PathBuf, message: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}
