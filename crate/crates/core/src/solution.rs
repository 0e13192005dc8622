//! Self-describing solution files and atomic file output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::{ActionBreakdown, DiscretePath};
use crate::error::{Error, Result};
use crate::integrator::IntegratorOptions;
use crate::minimizer::{MinimizerResult, OptimizerOptions, RestartReport};
use crate::model::{Permutation, SystemSpec};

pub const FORMAT_VERSION: u32 = 1;

/// The problem definition as written to disk; `sigma` is one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub n: usize,
    pub masses: Vec<f64>,
    #[serde(rename = "T")]
    pub half_period: f64,
    pub sigma: Vec<usize>,
    pub symmetric: bool,
}

impl SpecRecord {
    pub fn from_spec(spec: &SystemSpec) -> Self {
        Self {
            n: spec.n(),
            masses: spec.masses.clone(),
            half_period: spec.half_period,
            sigma: spec.sigma.to_one_based(),
            symmetric: spec.symmetric_mode,
        }
    }

    pub fn to_spec(&self) -> Result<SystemSpec> {
        if self.n != self.masses.len() {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: self.masses.len(),
            });
        }
        SystemSpec {
            masses: self.masses.clone(),
            half_period: self.half_period,
            sigma: Permutation::from_one_based(&self.sigma)?,
            symmetric_mode: self.symmetric,
        }
        .validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub gradient_norm: f64,
    /// Quasi-Newton iterations per mesh stage of the winning start.
    pub iterations: Vec<usize>,
    pub best_restart: usize,
    pub restarts: Vec<RestartReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format_version: u32,
    pub spec: SpecRecord,
    pub optimizer: OptimizerOptions,
    pub integrator: IntegratorOptions,
    pub cells: usize,
    pub times: Vec<f64>,
    /// Node positions by rank (sorted frame), one row per node.
    pub positions: Vec<Vec<f64>>,
    pub action: ActionBreakdown,
    pub convergence: Convergence,
}

impl SolutionFile {
    pub fn new(
        spec: &SystemSpec,
        optimizer: &OptimizerOptions,
        integrator: &IntegratorOptions,
        result: &MinimizerResult,
    ) -> Self {
        let path = &result.path;
        Self {
            format_version: FORMAT_VERSION,
            spec: SpecRecord::from_spec(spec),
            optimizer: optimizer.clone(),
            integrator: *integrator,
            cells: path.cells(),
            times: path.times().to_vec(),
            positions: (0..=path.cells()).map(|k| path.node(k).to_vec()).collect(),
            action: result.action,
            convergence: Convergence {
                converged: result.converged,
                gradient_norm: result.gradient_norm,
                iterations: result.iterations.clone(),
                best_restart: result.best_restart,
                restarts: result.restarts.clone(),
            },
        }
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        self.spec.to_spec()
    }

    /// The sorted-frame path.
    pub fn path(&self) -> Result<DiscretePath> {
        if self.times.len() != self.cells + 1 || self.positions.len() != self.cells + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.cells + 1,
                got: self.times.len().min(self.positions.len()),
            });
        }
        let n = self.spec.n;
        if let Some(row) = self.positions.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row.len(),
            });
        }
        DiscretePath::new(self.times.clone(), n, self.positions.concat())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("solution serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_json(&text).map_err(|message| Error::Format {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(format!("format version {v} is not supported (expected {FORMAT_VERSION})")),
            None => return Err("missing format_version".into()),
        }
        serde_json::from_value(value).map_err(|e| e.to_string())
    }
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minimizer::minimize;

    fn small_solution() -> SolutionFile {
        let spec = SystemSpec::new(vec![1.0, 2.0, 1.5], 0.7).unwrap();
        let opts = OptimizerOptions {
            mesh_schedule: vec![16],
            restarts: 1,
            ..Default::default()
        };
        let result = minimize(&spec, &opts).unwrap();
        SolutionFile::new(&spec, &opts, &IntegratorOptions::default(), &result)
    }

    #[test]
    fn json_round_trip_is_exact() {
        let sol = small_solution();
        let back = SolutionFile::from_json(&sol.to_json()).unwrap();
        assert_eq!(back, sol);
        assert_eq!(back.path().unwrap().positions(), sol.path().unwrap().positions());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let sol = small_solution();
        let text = sol.to_json().replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(SolutionFile::from_json(&text).unwrap_err().contains("99"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
