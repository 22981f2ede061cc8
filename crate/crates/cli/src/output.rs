//! Atomic file output and the JSON run summary.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kpo_core::{DimConvergence, KpoError, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

/// Output directory whose files appear only once fully written.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    #[cfg(test)]
    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Writes `name` through a temporary file in the same directory, then renames it into place.
    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let mut tmp = tempfile::Builder::new().prefix(".kpo-").tempfile_in(&self.root)?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            fill(&mut w)?;
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(self.root.join(name)).map_err(|e| KpoError::Io(e.to_string()))?;
        if !self.written.iter().any(|n| n == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| KpoError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, |w| w.write_all(&bytes))
    }

    /// Deletes `name` if a previous run left it behind.
    pub fn remove_stale(&self, name: &str) -> Result<()> {
        match std::fs::remove_file(self.root.join(name)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

/// Everything a subcommand reports besides its data files.
#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a RunConfig,
    pub convergence: ConvergenceReport,
    pub results: Value,
    pub files: Vec<String>,
    pub wall_clock_seconds: f64,
}

/// [`DimConvergence`] labelled with the observable it compares.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub observable: String,
    #[serde(flatten)]
    pub check: DimConvergence,
}

/// Machine-readable failure record.
#[derive(Debug, Serialize)]
pub struct ErrorReport<'a> {
    pub command: &'a str,
    pub exit_code: i32,
    pub kind: &'a str,
    pub message: String,
}

pub fn error_kind(e: &KpoError) -> &'static str {
    match e {
        KpoError::InvalidSpace { .. } => "invalid_space",
        KpoError::InvalidParams(_) => "invalid_params",
        KpoError::InvalidConfig(_) => "invalid_config",
        KpoError::AmbiguousSteadyState { .. } => "ambiguous_steady_state",
        KpoError::NumericalFailure(_) => "numerical_failure",
        KpoError::IntegratorFailure { .. } => "integrator_failure",
        KpoError::TraceDrift { .. } => "trace_drift",
        KpoError::StepSize { .. } => "step_size",
        KpoError::NoSwitch { .. } => "no_switch",
        KpoError::FitFailed { .. } => "fit_failed",
        KpoError::CalibrationFailed { .. } => "calibration_failed",
        KpoError::Extrapolation { .. } => "extrapolation",
        KpoError::ProtocolDegraded { .. } => "protocol_degraded",
        KpoError::UnnormalizedGrid { .. } => "unnormalized_grid",
        KpoError::NotPure { .. } => "not_pure",
        KpoError::FormulaMismatch { .. } => "formula_mismatch",
        KpoError::Io(_) => "io",
    }
}

pub fn exit_code(e: &KpoError) -> i32 {
    if e.is_config_error() {
        2
    } else {
        3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(&dir.path().join("nested")).unwrap();
        out.write("a.csv", |w| writeln!(w, "x")).unwrap();
        out.write("a.csv", |w| writeln!(w, "y")).unwrap();
        let names: Vec<_> = std::fs::read_dir(out.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec!["a.csv"]);
        assert_eq!(std::fs::read_to_string(out.path().join("a.csv")).unwrap(), "y\n");
        assert_eq!(out.written(), ["a.csv"]);
    }

    #[test]
    fn failed_writer_keeps_previous_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.csv", |w| writeln!(w, "old")).unwrap();
        let r = out.write("a.csv", |w| {
            writeln!(w, "partial")?;
            Err(std::io::Error::other("boom"))
        });
        assert!(r.is_err());
        assert_eq!(std::fs::read_to_string(dir.path().join("a.csv")).unwrap(), "old\n");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&KpoError::InvalidConfig("x".into())), 2);
        assert_eq!(exit_code(&KpoError::NumericalFailure("x".into())), 3);
        assert_eq!(error_kind(&KpoError::NotPure { purity: 0.5 }), "not_pure");
    }
}
