//! Run configuration: a flat key-value file with `[system]`, `[optimizer]`,
//! `[integrator]` and `[output]` sections.
//!
//! ```text
//! [system]
//! n = 3
//! masses = 1, 1, 1
//! T = 1
//! # one-based images: rank i carries body sigma(i)
//! sigma = 1, 2, 3
//! symmetric = true
//!
//! [optimizer]
//! mesh_schedule = 32, 64, 128, 256
//! tolerances = 1e-8
//! seed = 42
//!
//! [integrator]
//! tolerances = 1e-12, 1e-14
//! mode = regularized
//!
//! [output]
//! solution = schubart.json
//! ```
//!
//! With `sigma = 2, 3, 1` the leftmost body on the line is body 2, then
//! body 3, then body 1. Relative output paths resolve against the directory
//! of the config file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::IntegratorOptions;
use crate::minimizer::OptimizerOptions;
use crate::model::{Permutation, SystemSpec};

/// Overrides the configured seed.
pub const SEED_ENV: &str = "NBODY_SEED";

const SYSTEM_KEYS: &[&str] = &["n", "masses", "T", "sigma", "symmetric"];
const OPTIMIZER_KEYS: &[&str] = &[
    "mesh_schedule",
    "tolerances",
    "seed",
    "max_iterations",
    "history_size",
    "restarts",
    "sufficient_decrease",
    "shrink",
];
const INTEGRATOR_KEYS: &[&str] = &["tolerances", "mode", "switch_radius", "bounce_radius", "max_step"];
const OUTPUT_KEYS: &[&str] = &["solution", "summary", "report"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub solution: PathBuf,
    pub summary: PathBuf,
    pub report: PathBuf,
}

impl OutputPaths {
    /// Default summary and report paths next to the solution file.
    pub fn beside(solution: PathBuf) -> Self {
        Self {
            summary: solution.with_extension("summary.txt"),
            report: solution.with_extension("report.json"),
            solution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: SystemSpec,
    pub optimizer: OptimizerOptions,
    pub integrator: IntegratorOptions,
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// Parses config text; relative output paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (section, props) in ini.iter() {
            let known = match section {
                Some("system") => SYSTEM_KEYS,
                Some("optimizer") => OPTIMIZER_KEYS,
                Some("integrator") => INTEGRATOR_KEYS,
                Some("output") => OUTPUT_KEYS,
                None if props.is_empty() => &[][..],
                None => return Err(Error::Config("keys must sit inside a section".into())),
                Some(other) => return Err(Error::Config(format!("unknown section [{other}]"))),
            };
            for (key, _) in props.iter() {
                if !known.contains(&key) {
                    return Err(Error::Config(format!(
                        "unknown key `{key}` in [{}]",
                        section.unwrap_or_default()
                    )));
                }
            }
        }
        let get = |section: &str, key: &str| ini.section(Some(section)).and_then(|p| p.get(key));

        let masses: Vec<f64> = list(required(get("system", "masses"), "system", "masses")?, "masses")?;
        if let Some(n) = get("system", "n") {
            let n: usize = scalar(n, "n")?;
            if n != masses.len() {
                return Err(Error::Config(format!("n = {n} but {} masses given", masses.len())));
            }
        }
        let half_period: f64 = scalar(required(get("system", "T"), "system", "T")?, "T")?;
        let sigma = match get("system", "sigma") {
            Some(s) => Permutation::from_one_based(&list::<usize>(s, "sigma")?)?,
            None => Permutation::identity(masses.len()),
        };
        if sigma.len() != masses.len() {
            return Err(Error::Config(format!(
                "sigma has {} entries for {} masses",
                sigma.len(),
                masses.len()
            )));
        }
        let symmetric = match get("system", "symmetric") {
            Some(s) => boolean(s, "symmetric")?,
            None => false,
        };
        let spec = SystemSpec {
            masses,
            half_period,
            sigma,
            symmetric_mode: symmetric,
        }
        .validate()?;

        let mut optimizer = OptimizerOptions::default();
        if let Some(s) = get("optimizer", "mesh_schedule") {
            optimizer.mesh_schedule = list(s, "mesh_schedule")?;
        }
        if let Some(s) = get("optimizer", "tolerances") {
            optimizer.gradient_tolerance = scalar(s, "tolerances")?;
        }
        if let Some(s) = get("optimizer", "seed") {
            optimizer.seed = scalar(s, "seed")?;
        }
        if let Some(s) = get("optimizer", "max_iterations") {
            optimizer.max_iterations = scalar(s, "max_iterations")?;
        }
        if let Some(s) = get("optimizer", "history_size") {
            optimizer.history_size = scalar(s, "history_size")?;
        }
        if let Some(s) = get("optimizer", "restarts") {
            optimizer.restarts = scalar(s, "restarts")?;
        }
        if let Some(s) = get("optimizer", "sufficient_decrease") {
            optimizer.sufficient_decrease = scalar(s, "sufficient_decrease")?;
        }
        if let Some(s) = get("optimizer", "shrink") {
            optimizer.shrink = scalar(s, "shrink")?;
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            optimizer.seed = scalar(&s, SEED_ENV)?;
        }
        optimizer.validate()?;

        let mut integrator = IntegratorOptions::default();
        if let Some(s) = get("integrator", "tolerances") {
            let tol: Vec<f64> = list(s, "tolerances")?;
            match tol[..] {
                [rel] => integrator.rel_tol = rel,
                [rel, abs] => {
                    integrator.rel_tol = rel;
                    integrator.abs_tol = abs;
                }
                _ => return Err(Error::Config("integrator tolerances takes `rel` or `rel, abs`".into())),
            }
        }
        if let Some(s) = get("integrator", "mode") {
            integrator.collision_mode = s.parse()?;
        }
        if let Some(s) = get("integrator", "switch_radius") {
            integrator.switch_radius = scalar(s, "switch_radius")?;
        }
        if let Some(s) = get("integrator", "bounce_radius") {
            integrator.bounce_radius = scalar(s, "bounce_radius")?;
        }
        if let Some(s) = get("integrator", "max_step") {
            integrator.max_step = scalar(s, "max_step")?;
        }
        integrator.validate()?;

        let solution = base.join(get("output", "solution").unwrap_or("solution.json"));
        let mut output = OutputPaths::beside(solution);
        if let Some(s) = get("output", "summary") {
            output.summary = base.join(s);
        }
        if let Some(s) = get("output", "report") {
            output.report = base.join(s);
        }

        Ok(Self {
            spec,
            optimizer,
            integrator,
            output,
        })
    }
}

fn required<'a>(value: Option<&'a str>, section: &str, key: &str) -> Result<&'a str> {
    value.ok_or_else(|| Error::Config(format!("missing `{key}` in [{section}]")))
}

fn scalar<T: FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{key}` from `{}`", s.trim())))
}

fn list<T: FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    s.split(',').map(|item| scalar(item, key)).collect()
}

fn boolean(s: &str, key: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("`{key}` must be true or false, got `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHUBART: &str = "[system]\nn = 3\nmasses = 1, 1, 1\nT = 1\nsigma = 1,2,3\nsymmetric = true\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse(SCHUBART, Path::new("/tmp/run")).unwrap();
        assert_eq!(cfg.spec.masses, vec![1.0; 3]);
        assert!(cfg.spec.symmetric_mode);
        assert_eq!(cfg.optimizer.mesh_schedule, vec![32, 64, 128, 256]);
        assert_eq!(cfg.output.solution, PathBuf::from("/tmp/run/solution.json"));
        assert_eq!(cfg.output.report, PathBuf::from("/tmp/run/solution.report.json"));
    }

    #[test]
    fn sections_override_defaults() {
        let text = format!(
            "{SCHUBART}[optimizer]\nmesh_schedule = 16, 32\ntolerances = 1e-9\nseed = 7\n\
             [integrator]\ntolerances = 1e-11, 1e-13\nmode = bounce\n[output]\nsolution = out/s.json\n"
        );
        let cfg = RunConfig::parse(&text, Path::new("base")).unwrap();
        assert_eq!(cfg.optimizer.mesh_schedule, vec![16, 32]);
        assert_eq!(cfg.optimizer.gradient_tolerance, 1e-9);
        assert_eq!((cfg.integrator.rel_tol, cfg.integrator.abs_tol), (1e-11, 1e-13));
        assert_eq!(cfg.integrator.collision_mode, crate::integrator::CollisionMode::Bounce);
        assert_eq!(cfg.output.solution, PathBuf::from("base/out/s.json"));
    }

    #[test]
    fn sigma_is_one_based() {
        let text = "[system]\nmasses = 1, 2, 3\nT = 1\nsigma = 2, 3, 1\n";
        let cfg = RunConfig::parse(text, Path::new("")).unwrap();
        assert_eq!(cfg.spec.sorted_masses(), vec![2.0, 3.0, 1.0]);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let zero = "[system]\nmasses = 1, 0, 1\nT = 1\n";
        assert!(matches!(
            RunConfig::parse(zero, Path::new("")),
            Err(Error::NonPositiveMass { index: 1, .. })
        ));
        let typo = format!("{SCHUBART}[optimizer]\nsed = 3\n");
        assert!(matches!(RunConfig::parse(&typo, Path::new("")), Err(Error::Config(_))));
        let count = "[system]\nn = 4\nmasses = 1, 1, 1\nT = 1\n";
        assert!(matches!(RunConfig::parse(count, Path::new("")), Err(Error::Config(_))));
        let sigma = "[system]\nmasses = 1, 1, 1\nT = 1\nsigma = 1, 1, 2\n";
        assert!(matches!(
            RunConfig::parse(sigma, Path::new("")),
            Err(Error::BadPermutation(_))
        ));
    }
}
