//! JSON run configuration: an experiment config plus output locations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, FigureKind, FormatError};
use crate::experiments::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SnrSweep,
    TapSweep,
    Latency,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Aggregated CSV; standard output when absent.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    /// One CSV row per iteration (sweeps only).
    #[serde(default)]
    pub per_iteration_csv: Option<PathBuf>,
    /// Full JSON dump of the results.
    #[serde(default)]
    pub json: Option<PathBuf>,
    /// Gnuplot script emitted from the CSV.
    #[serde(default)]
    pub plot: Option<PathBuf>,
    #[serde(default)]
    pub figure: Option<FigureKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    #[serde(default)]
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, FormatError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| FormatError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.config.validate().map_err(|e| FormatError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text, path)
    }

    /// Figure drawn by default for this experiment.
    pub fn default_figure(&self) -> FigureKind {
        match self.experiment {
            ExperimentKind::SnrSweep => FigureKind::Fig3,
            ExperimentKind::TapSweep => FigureKind::Fig4,
            ExperimentKind::Latency => FigureKind::Fig5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "experiment": "snr_sweep",
        "config": {
            "scales": [{"nt": 16, "nr": 16}],
            "pn_lengths": [511, 2047],
            "l": 64,
            "l_nz": [64],
            "n_batch": [1, 2, 4],
            "iterations": 50,
            "seed": 7,
            "backend": {"kind": "reference64"}
        },
        "output": {"csv": "out.csv", "figure": "fig3"}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_json(DOC, Path::new("run.json")).unwrap();
        assert_eq!(c.experiment, ExperimentKind::SnrSweep);
        assert_eq!(c.config.snr_db.len(), 9);
        assert_eq!(c.config.cp(), 64);
        assert_eq!(c.output.figure, Some(FigureKind::Fig3));
        assert_eq!(c.output.csv.as_deref(), Some(Path::new("out.csv")));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let extra = DOC.replace(r#""seed": 7,"#, r#""seed": 7, "bogus": 1,"#);
        let e = RunConfig::from_json(&extra, Path::new("run.json")).unwrap_err();
        assert!(e.to_string().contains("run.json") && e.to_string().contains("bogus"));
        let extra_out = DOC.replace(r#""csv": "out.csv""#, r#""csv": "out.csv", "png": "x""#);
        assert!(RunConfig::from_json(&extra_out, Path::new("r")).is_err());
        let bad = DOC.replace("[511, 2047]", "[500]");
        assert!(RunConfig::from_json(&bad, Path::new("r")).is_err());
        let e = RunConfig::load(Path::new("/nonexistent/missing.json")).unwrap_err();
        assert!(e.to_string().contains("missing.json"));
    }
}
