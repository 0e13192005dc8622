//! Limited-memory BFGS with a diagonal preconditioner and backtracking.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsSettings {
    pub max_iterations: usize,
    /// Stop when the sup-norm of the gradient drops below this.
    pub gradient_tolerance: f64,
    pub history_size: usize,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    /// Backtracking factor.
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Stop as stalled when the objective improves by less than `1e-14`
    /// relative over this many iterations.
    pub stall_window: Option<usize>,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            history_size: 10,
            sufficient_decrease: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            stall_window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step along the search direction decreased the objective, and the
    /// gradient is still above tolerance.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value after every accepted step (first entry: start point).
    pub trace: Vec<f64>,
}

impl LbfgsOutcome {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which writes the gradient into its second argument.
///
/// `precond` approximates the diagonal of the Hessian and must be positive;
/// pass all ones for the unpreconditioned method. Trial points where `f`
/// returns an error are treated as infinitely bad.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, precond: &[f64], settings: &LbfgsSettings) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let dim = x0.len();
    let inv_diag: Vec<f64> = precond.iter().map(|d| 1.0 / d).collect();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut value = f(&x, &mut g)?;
    let mut gnorm = sup_norm(&g);
    let mut trace = vec![value];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.history_size);
    let mut iterations = 0;

    let mut trial = vec![0.0; dim];
    let mut trial_grad = vec![0.0; dim];
    let mut direction = vec![0.0; dim];
    let mut alpha_buf = vec![0.0; settings.history_size];
    let mut fresh_restart = false;

    let termination = loop {
        if gnorm <= settings.gradient_tolerance {
            break Termination::Converged;
        }
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }
        if let Some(w) = settings.stall_window {
            if trace.len() > w && trace[trace.len() - 1 - w] - value <= 1e-14 * value.abs() {
                break Termination::Stalled;
            }
        }

        // two-loop recursion with diagonal initial inverse Hessian
        direction.copy_from_slice(&g);
        for (idx, (s, y, rho)) in memory.iter().enumerate().rev() {
            let a = rho * dot(s, &direction);
            alpha_buf[idx] = a;
            direction.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
        }
        let gamma = match memory.back() {
            Some((s, y, _)) => {
                let yhy: f64 = y.iter().zip(&inv_diag).map(|(yi, h)| yi * yi * h).sum();
                dot(s, y) / yhy
            }
            None => 1.0,
        };
        direction.iter_mut().zip(&inv_diag).for_each(|(d, h)| *d *= gamma * h);
        for (idx, (s, y, rho)) in memory.iter().enumerate() {
            let b = rho * dot(y, &direction);
            let a = alpha_buf[idx];
            direction.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        direction.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            memory.clear();
            direction
                .iter_mut()
                .zip(g.iter().zip(&inv_diag))
                .for_each(|(d, (gi, h))| *d = -gi * h);
            slope = dot(&g, &direction);
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        // best non-increasing trial, used when Armijo fails at roundoff level
        let mut fallback: Option<(f64, f64, Vec<f64>, Vec<f64>)> = None;
        for _ in 0..settings.max_backtracks {
            trial
                .iter_mut()
                .zip(x.iter().zip(&direction))
                .for_each(|(t, (xi, di))| *t = xi + alpha * di);
            if let Ok(v) = f(&trial, &mut trial_grad) {
                if v.is_finite() {
                    if v <= value + settings.sufficient_decrease * alpha * slope {
                        accepted = true;
                        break;
                    }
                    if v <= value {
                        let tn = sup_norm(&trial_grad);
                        if tn < gnorm && fallback.as_ref().is_none_or(|fb| tn < fb.1) {
                            fallback = Some((v, tn, trial.clone(), trial_grad.clone()));
                        }
                    }
                }
            }
            alpha *= settings.shrink;
        }
        let new_value = if accepted {
            f(&trial, &mut trial_grad)?
        } else if let Some((v, _, t, tg)) = fallback {
            trial = t;
            trial_grad = tg;
            v
        } else if !memory.is_empty() && !fresh_restart {
            memory.clear();
            fresh_restart = true;
            continue;
        } else {
            break Termination::Stalled;
        };
        fresh_restart = false;

        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == settings.history_size {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut trial_grad);
        value = new_value;
        gnorm = sup_norm(&g);
        trace.push(value);
        iterations += 1;
    };

    Ok(LbfgsOutcome {
        x,
        value,
        gradient: g,
        gradient_norm: gnorm,
        iterations,
        termination,
        trace,
    })
}
