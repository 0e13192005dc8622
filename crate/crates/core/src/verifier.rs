//! Checks of the orbit properties on a candidate sorted-frame path.
//!
//! Every check yields a [`CheckRecord`] whose margin is compared against a
//! tolerance. Length scales are the path extent `ℓ`; velocity scales are
//! `ℓ/T`.

use serde::{Deserialize, Serialize};

use crate::action::{el_residual_norm, DiscretePath};
use crate::error::{Error, Result};
use crate::gamma::{boundary_pattern, Endpoint, MirrorMap};
use crate::integrator::{periodicity_check, IntegratorOptions};
use crate::model::{check_mirror_masses, SystemSpec};
use crate::numerics::lagrange_eval;

/// Endpoint limits are extrapolated from this many cells.
const EXTRAPOLATION_CELLS: usize = 3;
/// Smallest mesh on which endpoint limits are extrapolated.
pub const MIN_EXTRAPOLATION_CELLS: usize = 64;

/// How a margin is compared with its tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Pass iff `margin <= tolerance`.
    AtMost,
    /// Pass iff `margin >= tolerance`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
    pub tolerance: f64,
    pub bound: Bound,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckRecord {
    pub fn new(name: &str, margin: f64, tolerance: f64, bound: Bound) -> Self {
        let pass = match bound {
            Bound::AtMost => margin <= tolerance,
            Bound::AtLeast => margin >= tolerance,
        };
        Self {
            name: name.to_string(),
            pass,
            margin: finite_or_max(margin),
            tolerance,
            bound,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    /// A failed record for a check that could not be evaluated.
    pub fn failed(name: &str, tolerance: f64, bound: Bound, error: &Error) -> Self {
        let margin = match bound {
            Bound::AtMost => f64::MAX,
            Bound::AtLeast => -f64::MAX,
        };
        Self {
            name: name.to_string(),
            pass: false,
            margin,
            tolerance,
            bound,
            detail: Some(error.to_string()),
        }
    }
}

// JSON has no infinities
fn finite_or_max(v: f64) -> f64 {
    if v.is_nan() || v == f64::INFINITY {
        f64::MAX
    } else if v == f64::NEG_INFINITY {
        -f64::MAX
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierOptions {
    /// Smallest accepted signed cell velocity, in units of `ℓ/T`.
    pub monotonicity_margin: f64,
    /// Largest accepted pattern gap (absolute).
    pub eps_col: f64,
    /// Smallest accepted non-pattern endpoint gap, in units of `ℓ`.
    pub delta_sep: f64,
    /// Largest accepted endpoint velocity limit, in units of `ℓ/T`.
    pub velocity_limit: f64,
    /// Largest accepted center-of-mass velocity, in units of `ℓ/T`.
    pub momentum: f64,
    /// Largest accepted weighted force-balance defect.
    pub el_residual: f64,
    /// Largest accepted energy drift (absolute), including jumps across
    /// collisions.
    pub energy: f64,
    /// Largest accepted periodicity defect.
    pub periodicity: f64,
    /// Largest accepted mirror defect, in units of `ℓ`.
    pub symmetry: f64,
    /// Largest accepted deviation from the Euler configuration at `T/2`.
    pub euler: f64,
    /// Run the integrator-based checks.
    pub integrate: bool,
    pub integrator: IntegratorOptions,
}

impl Default for VerifierOptions {
    fn default() -> Self {
        Self {
            monotonicity_margin: 1e-10,
            eps_col: 1e-10,
            delta_sep: 1e-3,
            velocity_limit: 1e-3,
            momentum: 1e-8,
            el_residual: 1e-4,
            energy: 1e-9,
            periodicity: 1e-4,
            symmetry: 1e-10,
            euler: 1e-6,
            integrate: true,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// Integrator quantities behind the energy and periodicity checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicitySummary {
    pub defect: f64,
    pub position_defect: f64,
    pub velocity_defect: f64,
    pub extension_deviation: f64,
    pub energy_drift: f64,
    pub event_energy_jump: f64,
    pub alpha_mismatch: f64,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodicity: Option<PeriodicitySummary>,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

fn velocity_scale(path: &DiscretePath) -> f64 {
    path.extent() / path.half_period()
}

/// Odd one-based ranks (even zero-based) move right, the others left.
fn direction(rank: usize) -> f64 {
    if rank % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Smallest signed cell velocity; the margin is in units of `ℓ/T`.
pub fn verify_monotonicity(path: &DiscretePath, min_margin: f64) -> CheckRecord {
    let scale = velocity_scale(path);
    let mut worst = f64::INFINITY;
    let mut at = (0, 0);
    for k in 0..path.cells() {
        for (i, v) in path.cell_velocity(k).iter().enumerate() {
            let signed = direction(i) * v;
            if signed < worst {
                worst = signed;
                at = (k, i);
            }
        }
    }
    let margin = if scale > 0.0 { worst / scale } else { 0.0 };
    let record = CheckRecord::new("monotonicity", margin, min_margin, Bound::AtLeast);
    if record.pass {
        record
    } else {
        record.with_detail(format!("rank {} on cell {}", at.1 + 1, at.0))
    }
}

/// Largest pattern gap at either endpoint, absolute.
pub fn verify_boundary_pattern(path: &DiscretePath, eps_col: f64) -> Result<CheckRecord> {
    let mut worst: f64 = 0.0;
    let mut pairs = Vec::new();
    for (endpoint, k) in [(Endpoint::Start, 0), (Endpoint::End, path.cells())] {
        let pattern = boundary_pattern(path.n(), endpoint)?;
        let row = path.node(k);
        for &(a, b) in &pattern.colliding_pairs {
            worst = worst.max((row[b] - row[a]).abs());
        }
        pairs.push(pattern.colliding_pairs.len());
    }
    Ok(CheckRecord::new("boundary_pattern", worst, eps_col, Bound::AtMost)
        .with_detail(format!("{} pairs at t = 0, {} pairs at t = T", pairs[0], pairs[1])))
}

/// Smallest non-pattern gap at either endpoint, in units of `ℓ`.
pub fn verify_boundary_separation(path: &DiscretePath, delta_sep: f64) -> Result<CheckRecord> {
    let scale = path.extent();
    let mut worst = f64::INFINITY;
    for (endpoint, k) in [(Endpoint::Start, 0), (Endpoint::End, path.cells())] {
        let pattern = boundary_pattern(path.n(), endpoint)?;
        let row = path.node(k);
        for gap in 0..path.n() - 1 {
            if !pattern.is_collision_gap(gap) {
                worst = worst.min((row[gap + 1] - row[gap]) / scale);
            }
        }
    }
    Ok(CheckRecord::new("boundary_separation", worst, delta_sep, Bound::AtLeast))
}

/// Both boundary records: pattern gaps vanish, other gaps stay open.
pub fn verify_boundary(path: &DiscretePath, eps_col: f64, delta_sep: f64) -> Result<Vec<CheckRecord>> {
    Ok(vec![
        verify_boundary_pattern(path, eps_col)?,
        verify_boundary_separation(path, delta_sep)?,
    ])
}

/// Endpoint limit of a quantity sampled per cell, extrapolated in `τ^{1/3}`
/// where `τ` is the distance of the cell midpoint to the endpoint.
fn endpoint_limit(path: &DiscretePath, endpoint: Endpoint, quantity: impl Fn(&[f64]) -> f64) -> f64 {
    let m = path.cells();
    let t = path.times();
    let mut zs = Vec::with_capacity(EXTRAPOLATION_CELLS);
    let mut ys = Vec::with_capacity(EXTRAPOLATION_CELLS);
    for c in 0..EXTRAPOLATION_CELLS {
        let k = match endpoint {
            Endpoint::Start => c,
            Endpoint::End => m - 1 - c,
        };
        let mid = 0.5 * (t[k] + t[k + 1]);
        let tau = match endpoint {
            Endpoint::Start => mid,
            Endpoint::End => path.half_period() - mid,
        };
        zs.push(tau.cbrt());
        ys.push(quantity(&path.cell_velocity(k)));
    }
    lagrange_eval(&zs, &ys, 0.0)
}

/// Endpoint velocity limits of every free rank and of the center of mass
/// of every colliding pair, all of which vanish on a periodic orbit. The
/// margin is the largest limit in units of `ℓ/T`.
pub fn verify_velocity_limits(path: &DiscretePath, spec: &SystemSpec, tolerance: f64) -> Result<CheckRecord> {
    if path.cells() < MIN_EXTRAPOLATION_CELLS {
        return Err(Error::MeshTooCoarse {
            got: path.cells(),
            required: MIN_EXTRAPOLATION_CELLS,
        });
    }
    let masses = spec.sorted_masses();
    if masses.len() != path.n() {
        return Err(Error::DimensionMismatch {
            expected: path.n(),
            got: masses.len(),
        });
    }
    let scale = velocity_scale(path);
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    for endpoint in [Endpoint::Start, Endpoint::End] {
        let pattern = boundary_pattern(path.n(), endpoint)?;
        let label = match endpoint {
            Endpoint::Start => "t = 0",
            Endpoint::End => "t = T",
        };
        for &i in &pattern.free_ranks {
            let v = endpoint_limit(path, endpoint, |v| v[i]).abs() / scale;
            if v > worst || at.is_empty() {
                worst = worst.max(v);
                at = format!("rank {} at {label}", i + 1);
            }
        }
        for &(a, b) in &pattern.colliding_pairs {
            let (ma, mb) = (masses[a], masses[b]);
            let v = endpoint_limit(path, endpoint, |v| (ma * v[a] + mb * v[b]) / (ma + mb)).abs() / scale;
            if v > worst || at.is_empty() {
                worst = worst.max(v);
                at = format!("pair ({}, {}) at {label}", a + 1, b + 1);
            }
        }
    }
    Ok(CheckRecord::new("endpoint_velocities", worst, tolerance, Bound::AtMost).with_detail(format!("largest: {at}")))
}

/// Largest center-of-mass velocity over all cells, in units of `ℓ/T`.
pub fn verify_momentum(path: &DiscretePath, masses: &[f64], tolerance: f64) -> Result<CheckRecord> {
    if masses.len() != path.n() {
        return Err(Error::DimensionMismatch {
            expected: path.n(),
            got: masses.len(),
        });
    }
    let total: f64 = masses.iter().sum();
    let scale = velocity_scale(path);
    let worst = (0..path.cells())
        .map(|k| {
            let p: f64 = path.cell_velocity(k).iter().zip(masses).map(|(v, m)| m * v).sum();
            (p / total).abs()
        })
        .fold(0.0, f64::max);
    let margin = if scale > 0.0 { worst / scale } else { worst };
    Ok(CheckRecord::new("zero_momentum", margin, tolerance, Bound::AtMost))
}

pub fn verify_el_residual(path: &DiscretePath, masses: &[f64], tolerance: f64) -> CheckRecord {
    match el_residual_norm(path, masses) {
        Ok(r) => CheckRecord::new("el_residual_supnorm", r, tolerance, Bound::AtMost),
        Err(e) => CheckRecord::failed("el_residual_supnorm", tolerance, Bound::AtMost, &e),
    }
}

/// Sup-norm of the mirror identity over all nodes, absolute. For odd `n`
/// the identity is `x_i(t) = −x_{n+1−i}(T − t)`, for even `n` it is
/// `x_i(t) = −x_{n+1−i}(t)`.
pub fn symmetry_defect(path: &DiscretePath) -> f64 {
    let map = MirrorMap::new(path.n(), path.cells());
    let mut worst: f64 = 0.0;
    for k in 0..=path.cells() {
        let own = path.node(k);
        let img = path.node(map.node(k));
        for (i, x) in own.iter().enumerate() {
            worst = worst.max((x + img[map.rank(i)]).abs());
        }
    }
    worst
}

/// Mirror identity in units of `ℓ`; requires mirror masses.
pub fn verify_symmetry(path: &DiscretePath, spec: &SystemSpec, tolerance: f64) -> Result<CheckRecord> {
    check_mirror_masses(&spec.sorted_masses())?;
    let scale = path.extent();
    Ok(CheckRecord::new(
        "symmetry_g",
        symmetry_defect(path) / scale,
        tolerance,
        Bound::AtMost,
    ))
}

/// `max(|x₁ + x₃|, |x₂|)` at the middle node of a three-body path.
pub fn euler_defect(path: &DiscretePath) -> f64 {
    let row = path.node(path.cells() / 2);
    (row[0] + row[2]).abs().max(row[1].abs())
}

pub fn verify_euler_quarter(path: &DiscretePath, tolerance: f64) -> Result<CheckRecord> {
    if path.n() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: path.n(),
        });
    }
    Ok(CheckRecord::new("euler_config_quarter", euler_defect(path), tolerance, Bound::AtMost))
}

fn push_or_fail(checks: &mut Vec<CheckRecord>, name: &str, tolerance: f64, bound: Bound, r: Result<CheckRecord>) {
    checks.push(r.unwrap_or_else(|e| CheckRecord::failed(name, tolerance, bound, &e)));
}

/// Runs every check on a sorted-frame path. Checks that cannot be evaluated
/// are recorded as failures with the reason in `detail`.
pub fn full_report(path: &DiscretePath, spec: &SystemSpec, opts: &VerifierOptions) -> VerificationReport {
    let masses = spec.sorted_masses();
    let mut checks = Vec::new();
    checks.push(verify_monotonicity(path, opts.monotonicity_margin));
    push_or_fail(
        &mut checks,
        "boundary_pattern",
        opts.eps_col,
        Bound::AtMost,
        verify_boundary_pattern(path, opts.eps_col),
    );
    push_or_fail(
        &mut checks,
        "boundary_separation",
        opts.delta_sep,
        Bound::AtLeast,
        verify_boundary_separation(path, opts.delta_sep),
    );
    push_or_fail(
        &mut checks,
        "endpoint_velocities",
        opts.velocity_limit,
        Bound::AtMost,
        verify_velocity_limits(path, spec, opts.velocity_limit),
    );
    push_or_fail(
        &mut checks,
        "zero_momentum",
        opts.momentum,
        Bound::AtMost,
        verify_momentum(path, &masses, opts.momentum),
    );
    checks.push(verify_el_residual(path, &masses, opts.el_residual));

    let mut periodicity = None;
    if opts.integrate {
        match periodicity_check(path, &masses, &opts.integrator) {
            Ok(rep) => {
                let energy = rep.energy_drift.max(rep.event_energy_jump);
                checks.push(
                    CheckRecord::new("energy_constancy", energy, opts.energy, Bound::AtMost)
                        .with_detail(format!("{} collisions", rep.events)),
                );
                checks.push(CheckRecord::new(
                    "periodicity_defect",
                    rep.defect,
                    opts.periodicity,
                    Bound::AtMost,
                ));
                periodicity = Some(PeriodicitySummary {
                    defect: rep.defect,
                    position_defect: rep.position_defect,
                    velocity_defect: rep.velocity_defect,
                    extension_deviation: rep.extension_deviation,
                    energy_drift: rep.energy_drift,
                    event_energy_jump: rep.event_energy_jump,
                    alpha_mismatch: rep.alpha_mismatch,
                    events: rep.events,
                });
            }
            Err(e) => {
                checks.push(CheckRecord::failed("energy_constancy", opts.energy, Bound::AtMost, &e));
                checks.push(CheckRecord::failed(
                    "periodicity_defect",
                    opts.periodicity,
                    Bound::AtMost,
                    &e,
                ));
            }
        }
    }

    if spec.symmetric_mode {
        push_or_fail(
            &mut checks,
            "symmetry_g",
            opts.symmetry,
            Bound::AtMost,
            verify_symmetry(path, spec, opts.symmetry),
        );
        if spec.n() == 3 {
            push_or_fail(
                &mut checks,
                "euler_config_quarter",
                opts.euler,
                Bound::AtMost,
                verify_euler_quarter(path, opts.euler),
            );
        }
    }

    let pass = checks.iter().all(|c| c.pass);
    VerificationReport {
        checks,
        pass,
        periodicity,
    }
}
