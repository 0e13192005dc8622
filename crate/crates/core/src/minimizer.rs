//! Minimization of the discrete action over the admissible variables, with
//! mesh continuation and seeded restarts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{action_evaluate, action_hessian, action_with_gradient, graded_mesh, ActionBreakdown, DiscretePath};
use crate::error::{Error, Result};
use crate::gamma::{boundary_pattern, AdmissibleSpace, Endpoint};
use crate::lbfgs::{self, LbfgsSettings, Termination};
use crate::model::SystemSpec;
use crate::numerics::Pchip;

/// Intermediate mesh stages stop at this gradient level (or the final
/// tolerance, if looser); only the last stage decides convergence.
const STAGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub sufficient_decrease: f64,
    pub shrink: f64,
    pub history_size: usize,
    pub mesh_schedule: Vec<usize>,
    /// Number of starts; start 0 is unperturbed, start `r` is perturbed
    /// with seed `seed + r`.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            sufficient_decrease: 1e-4,
            shrink: 0.5,
            history_size: 10,
            mesh_schedule: vec![32, 64, 128, 256],
            restarts: 3,
            seed: 42,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidOption(what.to_string()));
        if !(self.gradient_tolerance > 0.0) {
            return bad("gradient_tolerance must be positive");
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return bad("sufficient_decrease must lie in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if self.history_size == 0 || self.max_iterations == 0 || self.restarts == 0 {
            return bad("history_size, max_iterations and restarts must be positive");
        }
        if self.mesh_schedule.is_empty() || self.mesh_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return bad("mesh_schedule must be nonempty and increasing");
        }
        for &m in &self.mesh_schedule {
            if m < crate::action::MIN_CELLS || m % 2 != 0 {
                return Err(Error::BadMeshSize(m));
            }
        }
        Ok(())
    }

    fn settings(&self, tolerance: f64) -> LbfgsSettings {
        LbfgsSettings {
            max_iterations: self.max_iterations,
            gradient_tolerance: tolerance,
            history_size: self.history_size,
            sufficient_decrease: self.sufficient_decrease,
            shrink: self.shrink,
            ..LbfgsSettings::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub cells: usize,
    /// Quasi-Newton iterations.
    pub iterations: usize,
    /// Exact-Hessian iterations after the quasi-Newton phase stalled.
    pub newton_iterations: usize,
    pub action: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub index: usize,
    /// `None` for the unperturbed start.
    pub seed: Option<u64>,
    pub initial_action: f64,
    pub action: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub stages: Vec<StageReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerResult {
    /// Best path, in the sorted frame.
    pub path: DiscretePath,
    pub action: ActionBreakdown,
    pub gradient_norm: f64,
    pub iterations: Vec<usize>,
    pub converged: bool,
    /// Index into `restarts` of the winning start.
    pub best_restart: usize,
    pub restarts: Vec<RestartReport>,
}

fn stage_objective(space: &AdmissibleSpace) -> impl FnMut(&[f64], &mut [f64]) -> Result<f64> + '_ {
    move |vars: &[f64], grad: &mut [f64]| space.action_with_gradient(vars, grad)
}

struct StageOutcome {
    vars: Vec<f64>,
    report: StageReport,
}

/// L-BFGS stops when the action stops moving over this many iterations and
/// the exact-Hessian phase takes over.
const STALL_WINDOW: usize = 50;
const NEWTON_MAX_ITERATIONS: usize = 200;

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct NewtonState {
    value: f64,
    grad: Vec<f64>,
    gnorm: f64,
}

fn newton_eval(space: &AdmissibleSpace, vars: &[f64]) -> Result<NewtonState> {
    let mut grad = vec![0.0; space.dim()];
    let value = space.action_with_gradient(vars, &mut grad)?;
    let gnorm = sup_norm(&grad);
    Ok(NewtonState { value, grad, gnorm })
}

/// Damped Newton iterations with a shifted Cholesky factorization of the
/// exact Hessian. Returns the final variables, state and iteration count.
fn newton_phase(
    space: &AdmissibleSpace,
    mut vars: Vec<f64>,
    settings: &LbfgsSettings,
) -> Result<(Vec<f64>, NewtonState, usize, bool)> {
    let mut path_grad = vec![0.0; space.mesh().len() * space.n()];
    let mut state = newton_eval(space, &vars)?;
    let mut iterations = 0;
    while state.gnorm > settings.gradient_tolerance && iterations < NEWTON_MAX_ITERATIONS {
        let path = space.decode(&vars)?;
        action_with_gradient(&path, space.masses(), &mut path_grad)?;
        let node_hessian = action_hessian(&path, space.masses())?;
        let h = space.hessian(&vars, &node_hessian, &path_grad);
        let scale = h.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let mut shift = 0.0;
        let factor = loop {
            if let Some(f) = h.cholesky(shift) {
                break f;
            }
            shift = if shift == 0.0 { 1e-12 * scale } else { shift * 10.0 };
            if !(shift < 1e3 * scale) {
                return Ok((vars, state, iterations, false));
            }
        };
        let mut dir: Vec<f64> = state.grad.iter().map(|g| -g).collect();
        factor.solve(&mut dir);
        let slope: f64 = dir.iter().zip(&state.grad).map(|(d, g)| d * g).sum();
        let mut alpha = 1.0;
        let mut next: Option<(Vec<f64>, NewtonState)> = None;
        let mut fallback: Option<(Vec<f64>, NewtonState)> = None;
        for _ in 0..settings.max_backtracks {
            let trial: Vec<f64> = vars.iter().zip(&dir).map(|(v, d)| v + alpha * d).collect();
            if let Ok(t) = newton_eval(space, &trial) {
                if t.value.is_finite() {
                    if t.value <= state.value + settings.sufficient_decrease * alpha * slope {
                        next = Some((trial, t));
                        break;
                    }
                    if t.value <= state.value
                        && t.gnorm < state.gnorm
                        && fallback.as_ref().is_none_or(|f| t.gnorm < f.1.gnorm)
                    {
                        fallback = Some((trial, t));
                    }
                }
            }
            alpha *= settings.shrink;
        }
        let Some((trial, t)) = next.or(fallback) else {
            break;
        };
        vars = trial;
        state = t;
        iterations += 1;
    }
    let converged = state.gnorm <= settings.gradient_tolerance;
    Ok((vars, state, iterations, converged))
}

fn run_stage(space: &AdmissibleSpace, start: Vec<f64>, settings: &LbfgsSettings) -> Result<StageOutcome> {
    let precond = space.kinetic_diagonal(&start);
    let quasi = LbfgsSettings {
        stall_window: Some(STALL_WINDOW),
        ..*settings
    };
    let out = lbfgs::minimize(stage_objective(space), start, &precond, &quasi)
        .map_err(|_| Error::DegeneratePath)?;
    if out.termination == Termination::Converged {
        return Ok(StageOutcome {
            report: StageReport {
                cells: space.cells(),
                iterations: out.iterations,
                newton_iterations: 0,
                action: out.value,
                gradient_norm: out.gradient_norm,
                converged: true,
            },
            vars: out.x,
        });
    }
    let (vars, state, newton_iterations, converged) = newton_phase(space, out.x, settings)?;
    Ok(StageOutcome {
        report: StageReport {
            cells: space.cells(),
            iterations: out.iterations,
            newton_iterations,
            action: state.value,
            gradient_norm: state.gnorm,
            converged,
        },
        vars,
    })
}

fn run_restart(spec: &SystemSpec, opts: &OptimizerOptions, index: usize) -> Result<(RestartReport, Vec<f64>, AdmissibleSpace)> {
    let masses = spec.sorted_masses();
    let seed = (index > 0).then(|| opts.seed.wrapping_add(index as u64));
    let mut space: Option<AdmissibleSpace> = None;
    let mut vars: Vec<f64> = Vec::new();
    let mut stages = Vec::with_capacity(opts.mesh_schedule.len());
    let mut initial_action = f64::NAN;
    for (stage, &cells) in opts.mesh_schedule.iter().enumerate() {
        let mesh = graded_mesh(cells, spec.half_period)?;
        let next = AdmissibleSpace::from_sorted(masses.clone(), mesh, spec.symmetric_mode)?;
        let start = match &space {
            None => {
                let v = next.initial_guess(seed).0;
                initial_action = action_evaluate(&next.decode(&v)?, &masses)?.total;
                v
            }
            Some(prev) => {
                let path = refine(&prev.decode(&vars)?, cells, spec.half_period)?;
                next.encode(&path)?.0
            }
        };
        let last = stage + 1 == opts.mesh_schedule.len();
        let tol = if last {
            opts.gradient_tolerance
        } else {
            opts.gradient_tolerance.max(STAGE_TOLERANCE)
        };
        let out = run_stage(&next, start, &opts.settings(tol))?;
        vars = out.vars;
        stages.push(out.report);
        space = Some(next);
    }
    let final_stage = stages.last().expect("nonempty schedule").clone();
    let report = RestartReport {
        index,
        seed,
        initial_action,
        action: final_stage.action,
        gradient_norm: final_stage.gradient_norm,
        converged: final_stage.converged,
        stages,
    };
    Ok((report, vars, space.expect("nonempty schedule")))
}

/// Minimizes the discrete action for `spec`, honoring `spec.symmetric_mode`.
///
/// Non-convergence is reported through [`MinimizerResult::converged`]; the
/// best iterate is still returned.
pub fn minimize(spec: &SystemSpec, opts: &OptimizerOptions) -> Result<MinimizerResult> {
    crate::model::validate_spec(spec)?;
    opts.validate()?;
    let runs: Vec<Result<(RestartReport, Vec<f64>, AdmissibleSpace)>> = (0..opts.restarts)
        .into_par_iter()
        .map(|index| run_restart(spec, opts, index))
        .collect();
    let mut ok = Vec::with_capacity(runs.len());
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(r) => ok.push(r),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(first_err.unwrap_or(Error::DegeneratePath));
    }
    let best = ok
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.0.action.total_cmp(&b.0.action).then(a.0.index.cmp(&b.0.index)))
        .map(|(i, _)| i)
        .expect("nonempty");
    let masses = spec.sorted_masses();
    let (report, vars, space) = &ok[best];
    let path = space.decode(vars)?;
    let action = action_evaluate(&path, &masses)?;
    Ok(MinimizerResult {
        path,
        action,
        gradient_norm: report.gradient_norm,
        iterations: report.stages.iter().map(|s| s.iterations).collect(),
        converged: report.converged,
        best_restart: best,
        restarts: ok.into_iter().map(|r| r.0).collect(),
    })
}

/// Minimizes over the mirror-symmetric subclass. Requires `symmetric_mode`.
pub fn solve_symmetric(spec: &SystemSpec, opts: &OptimizerOptions) -> Result<MinimizerResult> {
    if !spec.symmetric_mode {
        return Err(Error::InvalidOption("solve_symmetric requires symmetric_mode".into()));
    }
    crate::model::check_mirror_masses(&spec.sorted_masses())?;
    minimize(spec, opts)
}

/// Continues a path from a warm start on a fresh schedule-final mesh.
///
/// Used by parameter sweeps: `start` is resampled onto the last mesh of the
/// schedule and optimized there only.
pub fn minimize_from(spec: &SystemSpec, opts: &OptimizerOptions, start: &DiscretePath) -> Result<MinimizerResult> {
    crate::model::validate_spec(spec)?;
    opts.validate()?;
    let masses = spec.sorted_masses();
    let cells = *opts.mesh_schedule.last().expect("validated");
    let mesh = graded_mesh(cells, spec.half_period)?;
    let space = AdmissibleSpace::from_sorted(masses.clone(), mesh, spec.symmetric_mode)?;
    let resampled = refine(start, cells, spec.half_period)?;
    let v0 = space.encode(&resampled)?.0;
    let initial_action = action_evaluate(&space.decode(&v0)?, &masses)?.total;
    let out = run_stage(&space, v0, &opts.settings(opts.gradient_tolerance))?;
    let path = space.decode(&out.vars)?;
    let action = action_evaluate(&path, &masses)?;
    let report = RestartReport {
        index: 0,
        seed: None,
        initial_action,
        action: out.report.action,
        gradient_norm: out.report.gradient_norm,
        converged: out.report.converged,
        stages: vec![out.report],
    };
    Ok(MinimizerResult {
        path,
        action,
        gradient_norm: report.gradient_norm,
        iterations: vec![report.stages[0].iterations],
        converged: report.converged,
        best_restart: 0,
        restarts: vec![report],
    })
}

/// Resamples `path` onto `graded_mesh(cells, T)`.
///
/// Each body is interpolated monotonically in the mesh parameter `k/M`,
/// where endpoint collisions are smooth. Gaps are then clamped at zero,
/// the boundary pattern is restored exactly and the center of mass is
/// kept near its interpolated value. The old time span is rescaled to `T`
/// if it differs.
pub fn refine(path: &DiscretePath, cells: usize, half_period: f64) -> Result<DiscretePath> {
    let mesh = graded_mesh(cells, half_period)?;
    let n = path.n();
    let old_cells = path.cells();
    let s_old: Vec<f64> = (0..=old_cells).map(|k| k as f64 / old_cells as f64).collect();
    let interps: Vec<Pchip> = (0..n).map(|i| Pchip::new(&s_old, &path.series(i))).collect();
    let start = boundary_pattern(n, Endpoint::Start)?;
    let end = boundary_pattern(n, Endpoint::End)?;
    // Only gaps matter downstream; encode/decode re-pins the center of mass.
    let mut positions = Vec::with_capacity((cells + 1) * n);
    let mut row = vec![0.0; n];
    for k in 0..=cells {
        let s = k as f64 / cells as f64;
        let raw: Vec<f64> = interps.iter().map(|p| p.eval(s)).collect();
        row[0] = raw[0];
        for j in 0..n - 1 {
            let zero = (k == 0 && start.is_collision_gap(j)) || (k == cells && end.is_collision_gap(j));
            let gap = if zero { 0.0 } else { (raw[j + 1] - raw[j]).max(0.0) };
            row[j + 1] = row[j] + gap;
        }
        let shift = (raw.iter().sum::<f64>() - row.iter().sum::<f64>()) / n as f64;
        positions.extend(row.iter().map(|x| x + shift));
    }
    DiscretePath::new(mesh, n, positions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn options_validation() {
        assert!(OptimizerOptions::default().validate().is_ok());
        let bad = OptimizerOptions {
            mesh_schedule: vec![64, 32],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let odd = OptimizerOptions {
            mesh_schedule: vec![33],
            ..Default::default()
        };
        assert_eq!(odd.validate().unwrap_err(), Error::BadMeshSize(33));
    }

    #[test]
    fn refine_reproduces_old_nodes() {
        let spec = SystemSpec::new(vec![1.0, 1.0, 1.0], 1.0).unwrap();
        let space = AdmissibleSpace::new(&spec, &graded_mesh(16, 1.0).unwrap()).unwrap();
        let path = space.decode(&space.initial_guess(Some(3)).0).unwrap();
        let fine = refine(&path, 32, 1.0).unwrap();
        for k in 0..=16 {
            for i in 0..3 {
                assert!((fine.position(2 * k, i) - path.position(k, i)).abs() < 1e-12);
            }
        }
        let fine_space = AdmissibleSpace::new(&spec, fine.times()).unwrap();
        assert!(fine_space.encode(&fine).is_ok());
    }

    #[test]
    fn symmetric_solve_requires_flag() {
        let spec = SystemSpec::new(vec![1.0, 1.0, 1.0], 1.0).unwrap();
        assert!(solve_symmetric(&spec, &OptimizerOptions::default()).is_err());
    }
}
