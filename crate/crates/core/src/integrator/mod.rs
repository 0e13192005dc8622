//! Adaptive integration of the collinear equations of motion through binary
//! collisions.
//!
//! Away from collisions the state `(x, v)` is advanced with an embedded
//! eighth-order Runge–Kutta pair. When an adjacent gap drops below the
//! switch radius, either the pair enters a regularizing chart
//! ([`CollisionMode::Regularized`]) or it is carried through the collision
//! as an elastic two-body bounce ([`CollisionMode::Bounce`]).

pub mod bounce;
pub mod chart;
pub mod dop853;

use serde::{Deserialize, Serialize};

use crate::action::DiscretePath;
use crate::error::{Error, Result};
use crate::model::{energy, PhaseState};
use crate::numerics::{fd_weights, lagrange_eval};

use bounce::RadialKepler;
use chart::Chart;
use dop853::Driver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionMode {
    Regularized,
    Bounce,
}

impl std::str::FromStr for CollisionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regularized" => Ok(Self::Regularized),
            "bounce" => Ok(Self::Bounce),
            other => Err(Error::InvalidOption(format!("unknown collision mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for CollisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Regularized => "regularized",
            Self::Bounce => "bounce",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Chart threshold as a fraction of the mean adjacent gap of the
    /// initial state.
    pub switch_radius: f64,
    /// Capture threshold of bounce mode, same units. The bounce carries a
    /// pair through its collision as an isolated two-body fall, so it needs a
    /// much smaller radius than the chart.
    pub bounce_radius: f64,
    /// Unbounded when infinite (written as `null`).
    #[serde(with = "unbounded")]
    pub max_step: f64,
    pub collision_mode: CollisionMode,
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            switch_radius: 5e-2,
            bounce_radius: 1e-3,
            max_step: f64::INFINITY,
            collision_mode: CollisionMode::Regularized,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && !v.is_nan();
        if !positive(self.rel_tol) || !positive(self.abs_tol) {
            return Err(Error::InvalidOption("integrator tolerances must be positive".into()));
        }
        if !positive(self.switch_radius) || !self.switch_radius.is_finite() {
            return Err(Error::InvalidOption("switch_radius must be positive".into()));
        }
        if !positive(self.bounce_radius) || !self.bounce_radius.is_finite() {
            return Err(Error::InvalidOption("bounce_radius must be positive".into()));
        }
        if !positive(self.max_step) {
            return Err(Error::InvalidOption("max_step must be positive".into()));
        }
        Ok(())
    }
}

/// State of one adjacent pair. `alpha` is the standard intrinsic energy
/// `½μξ̇² − m_a m_b/|ξ|`; `alpha_literal` scales the potential term by `√μ`
/// and has no finite limit at collision unless `μ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairData {
    pub pair: (usize, usize),
    pub xi: f64,
    pub s: f64,
    pub alpha: f64,
    pub alpha_literal: f64,
}

impl PairData {
    fn from_relative(pair: (usize, usize), ma: f64, mb: f64, xi: f64, xidot: f64) -> Self {
        let mu = ma * mb / (ma + mb);
        let kinetic = 0.5 * mu * xidot * xidot;
        Self {
            pair,
            xi,
            s: xi.signum(),
            alpha: kinetic - ma * mb / xi.abs(),
            alpha_literal: kinetic - mu.sqrt() * ma * mb / xi.abs(),
        }
    }
}

/// One binary collision with one-sided limits of the pair data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    /// Body indices as given in the initial state, left body first.
    pub pair: (usize, usize),
    pub before: PairData,
    pub after: PairData,
    /// Another pair of the chart was within the switch radius at the
    /// collision. The individual `α` limits of nearly simultaneous
    /// collisions are poorly conditioned; their sum is not.
    pub simultaneous: bool,
    /// Total energy when the pair was taken out of the plain integration.
    pub energy_before: f64,
    /// Total energy when plain integration resumed.
    pub energy_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<PhaseState>,
    pub events: Vec<CollisionEvent>,
    /// Absolute chart or capture threshold used for this run.
    pub switch_radius: f64,
    pub mode: CollisionMode,
}

impl Trajectory {
    pub fn final_state(&self) -> &PhaseState {
        self.samples.last().expect("trajectory has at least one sample")
    }

    /// Largest `|E − E₀|` over samples whose gaps all exceed the switch
    /// radius (closer samples lose digits to cancellation).
    pub fn energy_drift(&self, masses: &[f64]) -> f64 {
        let mut reference = None;
        let mut drift: f64 = 0.0;
        for s in &self.samples {
            if min_gap_unsorted(&s.positions) < self.switch_radius {
                continue;
            }
            let e = energy(s, masses);
            let e0 = *reference.get_or_insert(e);
            drift = drift.max((e - e0).abs());
        }
        drift
    }
}

fn min_gap_unsorted(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    min_gap(&v)
}

fn min_gap(x: &[f64]) -> f64 {
    x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Collinear accelerations `Σ_{j≠i} mⱼ(xⱼ−xᵢ)/|xⱼ−xᵢ|³`.
fn accelerations(x: &[f64], masses: &[f64], acc: &mut [f64]) -> Result<()> {
    let n = x.len();
    acc.iter_mut().for_each(|a| *a = 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = x[j] - x[i];
            if d == 0.0 || !d.is_finite() {
                return Err(Error::CollisionConfiguration {
                    node: 0,
                    first: i,
                    second: j,
                });
            }
            let f = d.signum() / (d * d);
            acc[i] += masses[j] * f;
            acc[j] -= masses[i] * f;
        }
    }
    Ok(())
}

/// Time derivative of a phase state: `(ẋ, v̇) = (v, M⁻¹∇U)`.
pub fn derivative_field(state: &PhaseState, masses: &[f64]) -> Result<PhaseState> {
    let n = state.n();
    if masses.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: masses.len(),
        });
    }
    let mut acc = vec![0.0; n];
    accelerations(&state.positions, masses, &mut acc)?;
    Ok(PhaseState::new(state.time, state.velocities.clone(), acc))
}

/// Integrates from `state0` to `t_end >= state0.time`.
pub fn integrate(state0: &PhaseState, t_end: f64, masses: &[f64], opts: &IntegratorOptions) -> Result<Trajectory> {
    integrate_with_outputs(state0, t_end, masses, opts, &[]).map(|(traj, _)| traj)
}

/// As [`integrate`], also returning the states at the requested times
/// (sorted, within `[state0.time, t_end]`).
pub fn integrate_with_outputs(
    state0: &PhaseState,
    t_end: f64,
    masses: &[f64],
    opts: &IntegratorOptions,
    output_times: &[f64],
) -> Result<(Trajectory, Vec<PhaseState>)> {
    opts.validate()?;
    let n = state0.n();
    if n < 2 || masses.len() != n || state0.velocities.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n.max(2),
            got: masses.len(),
        });
    }
    if !state0.is_finite() || !t_end.is_finite() || t_end < state0.time {
        return Err(Error::InvalidOption("integration needs a finite state and t_end >= start".into()));
    }
    if output_times.windows(2).any(|w| w[1] < w[0])
        || output_times.iter().any(|&t| t < state0.time || t > t_end)
    {
        return Err(Error::InvalidOption("output times must be sorted and inside the span".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| state0.positions[a].total_cmp(&state0.positions[b]));
    let x0: Vec<f64> = order.iter().map(|&i| state0.positions[i]).collect();
    let v0: Vec<f64> = order.iter().map(|&i| state0.velocities[i]).collect();
    let sorted_masses: Vec<f64> = order.iter().map(|&i| masses[i]).collect();
    if let Some(k) = (0..n - 1).find(|&k| !(x0[k + 1] > x0[k])) {
        return Err(Error::CollisionConfiguration {
            node: 0,
            first: order[k],
            second: order[k + 1],
        });
    }
    let mean_gap = (x0[n - 1] - x0[0]) / (n - 1) as f64;
    let mut run = Run {
        masses: sorted_masses,
        order,
        opts: *opts,
        switch_radius: mean_gap
            * match opts.collision_mode {
                CollisionMode::Regularized => opts.switch_radius,
                CollisionMode::Bounce => opts.bounce_radius,
            },
        targets: output_times.to_vec(),
        next_target: 0,
        outputs: Vec::with_capacity(output_times.len()),
        samples: Vec::new(),
        events: Vec::new(),
    };
    run.sample(state0.time, &x0, &v0);
    while run.next_target < run.targets.len() && run.targets[run.next_target] == state0.time {
        run.output(state0.time, &x0, &v0);
    }
    match opts.collision_mode {
        CollisionMode::Regularized => run.regularized(state0.time, x0, v0, t_end)?,
        CollisionMode::Bounce => run.bounce(state0.time, x0, v0, t_end)?,
    }
    let traj = Trajectory {
        samples: run.samples,
        events: run.events,
        switch_radius: run.switch_radius,
        mode: opts.collision_mode,
    };
    Ok((traj, run.outputs))
}

/// Bookkeeping shared by both collision modes. Everything inside works on
/// ranks; `order[rank]` is the caller's body index.
struct Run {
    masses: Vec<f64>,
    order: Vec<usize>,
    opts: IntegratorOptions,
    switch_radius: f64,
    targets: Vec<f64>,
    next_target: usize,
    outputs: Vec<PhaseState>,
    samples: Vec<PhaseState>,
    events: Vec<CollisionEvent>,
}

/// Plain-integration state `[x₀, gaps, velocities]`. Carrying the gaps
/// keeps close approaches under relative error control.
fn pack(x: &[f64], v: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(2 * x.len());
    y.push(x[0]);
    y.extend(x.windows(2).map(|w| w[1] - w[0]));
    y.extend_from_slice(v);
    y
}

fn unpack(y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len() / 2;
    let mut x = Vec::with_capacity(n);
    x.push(y[0]);
    for i in 1..n {
        x.push(x[i - 1] + y[i]);
    }
    (x, y[n..].to_vec())
}

fn gaps_of(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

fn physical_field(masses: &[f64], y: &[f64], dy: &mut [f64]) -> Result<()> {
    let n = masses.len();
    dy[0] = y[n];
    for i in 1..n {
        dy[i] = y[n + i] - y[n + i - 1];
    }
    let acc = &mut dy[n..];
    acc.iter_mut().for_each(|a| *a = 0.0);
    for i in 0..n {
        let mut d = 0.0;
        for j in i + 1..n {
            d += y[j];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::CollisionConfiguration {
                    node: 0,
                    first: i,
                    second: j,
                });
            }
            let f = 1.0 / (d * d);
            acc[i] += masses[j] * f;
            acc[j] -= masses[i] * f;
        }
    }
    Ok(())
}

/// Illinois root search for `g(y(t + h)) = 0` with `h` in `[0, h_end]`,
/// given the sign values at both ends. Trial points are reached with
/// controlled steps: a single step across a near-simultaneous collision can
/// be accurate at its end but not in between.
fn locate<F: dop853::Field>(
    start: &Driver,
    field: &mut F,
    h_end: f64,
    g0: f64,
    g1: f64,
    g: impl Fn(&[f64]) -> f64,
    tol: f64,
) -> Result<(f64, Vec<f64>)> {
    let (mut a, mut ga) = (0.0, g0);
    let (mut b, mut gb) = (h_end, g1);
    let mut best = if ga.abs() < gb.abs() {
        (a, start.y.clone(), ga)
    } else {
        (b, start.solve_to(field, start.t + b)?, gb)
    };
    let mut side = 0;
    for _ in 0..200 {
        if best.2.abs() <= tol || (b - a).abs() <= 4.0 * f64::EPSILON * h_end.abs() {
            break;
        }
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let y = start.solve_to(field, start.t + c)?;
        let gc = g(&y);
        if gc.abs() < best.2.abs() {
            best = (c, y, gc);
        }
        if gc == 0.0 {
            break;
        }
        if gc.signum() == gb.signum() {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    Ok((best.0, best.1))
}

/// Adjacent ranks whose gap is below `radius`; errors when two of them
/// share a body.
fn close_pairs(gaps: &[f64], radius: f64, time: f64, skip: &[usize], order: &[usize]) -> Result<Vec<usize>> {
    let small: Vec<usize> = (0..gaps.len())
        .filter(|&i| !skip.contains(&i) && gaps[i] < radius)
        .collect();
    let mut all: Vec<usize> = small.iter().chain(skip).copied().collect();
    all.sort_unstable();
    if let Some(w) = all.windows(2).find(|w| w[1] == w[0] + 1) {
        return Err(Error::NonRegularizableEvent {
            time,
            bodies: vec![order[w[0]], order[w[0] + 1], order[w[1] + 1]],
        });
    }
    Ok(small)
}

impl Run {
    fn unsort(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (rank, &body) in self.order.iter().enumerate() {
            out[body] = values[rank];
        }
        out
    }

    fn state(&self, t: f64, x: &[f64], v: &[f64]) -> PhaseState {
        PhaseState::new(t, self.unsort(x), self.unsort(v))
    }

    fn sample(&mut self, t: f64, x: &[f64], v: &[f64]) {
        if self.samples.last().is_some_and(|s| s.time >= t) {
            return;
        }
        if x.iter().chain(v).all(|a| a.is_finite()) {
            let s = self.state(t, x, v);
            self.samples.push(s);
        }
    }

    fn output(&mut self, t: f64, x: &[f64], v: &[f64]) {
        let s = self.state(t, x, v);
        self.outputs.push(s);
        self.next_target += 1;
    }

    fn pending_target(&self) -> Option<f64> {
        self.targets.get(self.next_target).copied()
    }

    fn next_stop(&self, t_end: f64) -> f64 {
        self.pending_target().map_or(t_end, |t| t.min(t_end))
    }

    fn pair_label(&self, a: usize) -> (usize, usize) {
        (self.order[a], self.order[a + 1])
    }

    fn flush_outputs_at(&mut self, t: f64, x: &[f64], v: &[f64]) {
        while self.pending_target() == Some(t) {
            self.output(t, x, v);
        }
    }

    fn regularized(&mut self, t0: f64, x0: Vec<f64>, v0: Vec<f64>, t_end: f64) -> Result<()> {
        let n = self.masses.len();
        let masses = self.masses.clone();
        let r_sw = self.switch_radius;
        let (rtol, atol, max_step) = (self.opts.rel_tol, self.opts.abs_tol, self.opts.max_step);
        let mut y = pack(&x0, &v0);
        let mut t = t0;
        // events waiting for the energy at chart exit
        let mut pending: Vec<usize> = Vec::new();
        loop {
            let mut field = |_t: f64, y: &[f64], dy: &mut [f64]| physical_field(&masses, y, dy);
            let valid = |y: &[f64]| y[1..n].iter().all(|&g| g > 0.25 * r_sw);
            let pairs = close_pairs(&y[1..n], r_sw, t, &[], &self.order)?;
            let pairs = if pairs.is_empty() && t < t_end {
                let mut drv = Driver::new(&mut field, t, y.clone(), 1.0, rtol, atol, max_step)?;
                loop {
                    let stop = self.next_stop(t_end);
                    drv.step(&mut field, stop, valid)?;
                    let (x, v) = unpack(&drv.y);
                    self.sample(drv.t, &x, &v);
                    self.flush_outputs_at(drv.t, &x, &v);
                    if drv.t >= t_end {
                        return Ok(());
                    }
                    let close = close_pairs(&drv.y[1..n], r_sw, drv.t, &[], &self.order)?;
                    if !close.is_empty() {
                        t = drv.t;
                        y = drv.y.clone();
                        break close;
                    }
                }
            } else if t >= t_end {
                return Ok(());
            } else {
                pairs
            };

            let (x, v) = unpack(&y);
            let mut chart = Chart::new(&masses, pairs, energy(&PhaseState::new(t, x.clone(), v.clone()), &masses));
            let mut cy = chart.encode(t, &x, &v);
            loop {
                let (next, exit) = self.chart_segment(&chart, cy, t_end, &mut pending)?;
                match exit {
                    ChartExit::End => {
                        let e = chart.energy_of(&next)?;
                        for &i in &pending {
                            self.events[i].energy_after = e;
                        }
                        return Ok(());
                    }
                    ChartExit::Membership(pairs) if pairs.is_empty() => {
                        let (x, v) = chart.decode(&next);
                        t = next[0];
                        let e = energy(&PhaseState::new(t, x.clone(), v.clone()), &masses);
                        for i in pending.drain(..) {
                            self.events[i].energy_after = e;
                        }
                        y = pack(&x, &v);
                        break;
                    }
                    ChartExit::Membership(pairs) => {
                        let updated = Chart::new(&masses, pairs, chart.energy);
                        cy = updated.transfer(&chart, &next);
                        chart = updated;
                    }
                }
            }
        }
    }

    /// Integrates in `chart` until `t_end` or a change of pair membership.
    fn chart_segment(
        &mut self,
        chart: &Chart,
        y0: Vec<f64>,
        t_end: f64,
        pending: &mut Vec<usize>,
    ) -> Result<(Vec<f64>, ChartExit)> {
        let r_sw = self.switch_radius;
        let (rtol, atol) = (self.opts.rel_tol, self.opts.abs_tol);
        let mut field = |_s: f64, y: &[f64], dy: &mut [f64]| chart.field(y, dy);
        let valid = |y: &[f64]| {
            let x = chart.positions(y);
            x.iter().all(|v| v.is_finite()) && chart.min_outer_gap(&x).0 > 0.25 * r_sw
        };
        let mut drv = Driver::new(&mut field, 0.0, y0, 1.0, rtol, atol, f64::INFINITY)?;
        let time_tol = |t: f64| 4.0 * f64::EPSILON * t.abs().max(1.0);
        loop {
            let prev = drv.clone();
            drv.step(&mut field, f64::INFINITY, valid)?;
            let h = drv.t - prev.t;
            for j in 0..chart.n_pairs() {
                let (q0, q1) = (chart.q_of(&prev.y, j), chart.q_of(&drv.y, j));
                if q0 != 0.0 && q0.signum() != q1.signum() {
                    let (_, ystar) = locate(&prev, &mut field, h, q0, q1, |y| chart.q_of(y, j), 0.0)?;
                    let idx = self.record_chart_event(chart, j, ystar)?;
                    pending.push(idx);
                }
            }
            while let Some(target) = self.pending_target() {
                let t_new = chart.time(&drv.y);
                if target > t_new || target > t_end {
                    break;
                }
                let g0 = chart.time(&prev.y) - target;
                let y = if g0 >= 0.0 {
                    prev.y.clone()
                } else {
                    locate(&prev, &mut field, h, g0, t_new - target, |y| y[0] - target, time_tol(target))?.1
                };
                let (x, v) = chart.decode(&y);
                self.output(target, &x, &v);
            }
            if chart.time(&drv.y) >= t_end {
                let g0 = chart.time(&prev.y) - t_end;
                let g1 = chart.time(&drv.y) - t_end;
                let mut y = if g1 == 0.0 {
                    drv.y.clone()
                } else {
                    locate(&prev, &mut field, h, g0, g1, |y| y[0] - t_end, time_tol(t_end))?.1
                };
                y[0] = t_end;
                let (x, v) = chart.decode(&y);
                self.sample(t_end, &x, &v);
                return Ok((y, ChartExit::End));
            }
            let (x, v) = chart.decode(&drv.y);
            let resolved = (0..chart.n_pairs()).all(|j| chart.q_of(&drv.y, j).powi(2) > 1e-6 * r_sw);
            if resolved {
                self.sample(chart.time(&drv.y), &x, &v);
            }

            let mut keep: Vec<usize> = Vec::new();
            for (j, &a) in chart.pairs.iter().enumerate() {
                let q = chart.q_of(&drv.y, j);
                let outgoing = q * chart.p_of(&drv.y, j) > 0.0;
                if !(q * q > r_sw && outgoing) {
                    keep.push(a);
                }
            }
            let added = close_pairs(&gaps_of(&x), r_sw, chart.time(&drv.y), &keep, &self.order)?;
            if keep.len() != chart.n_pairs() || !added.is_empty() {
                keep.extend(added);
                return Ok((drv.y, ChartExit::Membership(keep)));
            }
        }
    }

    /// Logs a collision of chart pair `j` located at chart state `ystar`.
    /// The one-sided limits of `α` come from short probe steps on both sides
    /// with quadratic extrapolation in `r = Q²`.
    fn record_chart_event(&mut self, chart: &Chart, j: usize, ystar: Vec<f64>) -> Result<usize> {
        let a = chart.pairs[j];
        let (ma, mb) = (self.masses[a], self.masses[a + 1]);
        let mu = chart.reduced_mass(j);
        let mut field = |_s: f64, y: &[f64], dy: &mut [f64]| chart.field(y, dy);
        let (rtol, atol) = (self.opts.rel_tol, self.opts.abs_tol);
        let mut dy = vec![0.0; ystar.len()];
        chart.field(&ystar, &mut dy)?;
        let q_step = 0.05 * self.switch_radius.sqrt();
        let h1 = q_step / dy[1 + j].abs();
        let mut sides = Vec::with_capacity(2);
        for sign in [-1.0, 1.0] {
            // adaptive steps: near a simultaneous collision the field turns
            // sharply on the scale of the other pairs' Q
            let mut d = Driver::new(&mut field, 0.0, ystar.clone(), sign, rtol, atol, h1)?;
            let mut rs = Vec::with_capacity(3);
            let mut alphas = Vec::with_capacity(3);
            let mut nearest = None;
            for k in 1..=3 {
                let target = sign * k as f64 * h1;
                while d.t != target {
                    d.step(&mut field, target, |_| true)?;
                }
                let y = &d.y;
                let q = chart.q_of(y, j);
                rs.push(q * q);
                alphas.push(chart.pair_energy(y, j)?);
                if k == 1 {
                    let rdot = chart.p_of(y, j) / (2.0 * mu * q);
                    nearest = Some(PairData::from_relative(self.pair_label(a), ma, mb, q * q, rdot));
                }
            }
            let mut data = nearest.expect("three probe samples");
            data.alpha = lagrange_eval(&rs, &alphas, 0.0);
            sides.push(data);
        }
        let simultaneous = (0..chart.n_pairs()).any(|l| l != j && chart.q_of(&ystar, l).powi(2) < self.switch_radius);
        self.events.push(CollisionEvent {
            time: chart.time(&ystar),
            pair: self.pair_label(a),
            simultaneous,
            before: sides[0],
            after: sides[1],
            energy_before: chart.energy,
            energy_after: f64::NAN,
        });
        Ok(self.events.len() - 1)
    }

    fn bounce(&mut self, t0: f64, x0: Vec<f64>, v0: Vec<f64>, t_end: f64) -> Result<()> {
        let mut units: Vec<Unit> = (0..x0.len()).map(Unit::Single).collect();
        let mut y = pack(&x0, &v0);
        let mut t = t0;
        let r_sw = self.switch_radius;
        let (rtol, atol, max_step) = (self.opts.rel_tol, self.opts.abs_tol, self.opts.max_step);
        loop {
            let m: Vec<f64> = units.iter().map(|u| u.mass(&self.masses)).collect();
            let nu = units.len();
            let mut field = |_t: f64, y: &[f64], dy: &mut [f64]| physical_field(&m, y, dy);
            let valid = |y: &[f64]| y[1..nu].iter().all(|&g| g > 0.25 * r_sw);
            let mut drv = Driver::new(&mut field, t, y.clone(), 1.0, rtol, atol, max_step)?;
            let release = units
                .iter()
                .filter_map(|u| match u {
                    Unit::Pair(c) => Some(c.release),
                    Unit::Single(_) => None,
                })
                .fold(f64::INFINITY, f64::min);
            let changed = loop {
                if drv.t >= t_end {
                    return Ok(());
                }
                let stop = self.next_stop(t_end).min(release);
                drv.step(&mut field, stop, valid)?;
                let (x, v) = self.expand(&units, drv.t, &drv.y);
                self.sample(drv.t, &x, &v);
                self.flush_outputs_at(drv.t, &x, &v);
                if drv.t == release {
                    break self.release(&mut units, &mut drv.y, drv.t, &x, &v);
                }
                if drv.t >= t_end {
                    return Ok(());
                }
                if self.capture(&mut units, &mut drv.y, drv.t, &x, &v)? {
                    break true;
                }
            };
            debug_assert!(changed);
            t = drv.t;
            y = drv.y;
        }
    }

    /// Physical positions and velocities by rank at time `t`.
    fn expand(&self, units: &[Unit], t: f64, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (ux, uv) = unpack(y);
        let m = &self.masses;
        let mut x = Vec::with_capacity(m.len());
        let mut v = Vec::with_capacity(m.len());
        for (u, unit) in units.iter().enumerate() {
            match unit {
                Unit::Single(_) => {
                    x.push(ux[u]);
                    v.push(uv[u]);
                }
                Unit::Pair(c) => {
                    let (ma, mb) = (m[c.a], m[c.a + 1]);
                    let mt = ma + mb;
                    let r = c.kepler.separation((t - c.collision).abs(), c.r_capture);
                    let rdot = (t - c.collision).signum() * c.kepler.speed(r);
                    x.push(ux[u] - mb / mt * r);
                    x.push(ux[u] + ma / mt * r);
                    v.push(uv[u] - mb / mt * rdot);
                    v.push(uv[u] + ma / mt * rdot);
                }
            }
        }
        (x, v)
    }

    fn rebuild(&self, units: &[Unit], x: &[f64], v: &[f64]) -> Vec<f64> {
        let m = &self.masses;
        let mut pos = Vec::with_capacity(units.len());
        let mut vel = Vec::with_capacity(units.len());
        for unit in units {
            match *unit {
                Unit::Single(i) => {
                    pos.push(x[i]);
                    vel.push(v[i]);
                }
                Unit::Pair(c) => {
                    let (a, b) = (c.a, c.a + 1);
                    let mt = m[a] + m[b];
                    pos.push((m[a] * x[a] + m[b] * x[b]) / mt);
                    vel.push((m[a] * v[a] + m[b] * v[b]) / mt);
                }
            }
        }
        pack(&pos, &vel)
    }

    fn release(&mut self, units: &mut Vec<Unit>, y: &mut Vec<f64>, t: f64, x: &[f64], v: &[f64]) -> bool {
        let mut split = Vec::with_capacity(self.masses.len());
        for unit in units.iter() {
            match *unit {
                Unit::Pair(c) if c.release <= t => {
                    split.push(Unit::Single(c.a));
                    split.push(Unit::Single(c.a + 1));
                    // the reflected separation and speed equal the capture values
                    let e = energy(&PhaseState::new(t, x.to_vec(), v.to_vec()), &self.masses);
                    self.events[c.event].energy_after = e;
                }
                u => split.push(u),
            }
        }
        *units = split;
        *y = self.rebuild(units, x, v);
        true
    }

    fn capture(&mut self, units: &mut Vec<Unit>, y: &mut Vec<f64>, t: f64, x: &[f64], v: &[f64]) -> Result<bool> {
        let r_sw = self.switch_radius;
        let m = self.masses.clone();
        // ranks covered by captured pairs, and each pair's neighbors
        let captured: Vec<usize> = units
            .iter()
            .filter_map(|u| match u {
                Unit::Pair(c) => Some(c.a),
                Unit::Single(_) => None,
            })
            .collect();
        for &a in &captured {
            let near_left = a > 0 && x[a] - x[a - 1] < 2.0 * r_sw;
            let near_right = a + 2 < x.len() && x[a + 2] - x[a + 1] < 2.0 * r_sw;
            if near_left || near_right {
                let third = if near_left { a - 1 } else { a + 2 };
                let mut bodies = vec![self.order[a], self.order[a + 1], self.order[third]];
                bodies.sort_unstable();
                return Err(Error::NonRegularizableEvent { time: t, bodies });
            }
        }
        let candidates = close_pairs(&gaps_of(x), r_sw, t, &captured, &self.order)?;
        let mut any = false;
        for a in candidates {
            let b = a + 1;
            let rdot = v[b] - v[a];
            if rdot >= 0.0 {
                continue;
            }
            let r = x[b] - x[a];
            let mu = m[a] * m[b] / (m[a] + m[b]);
            let kepler = RadialKepler::from_state(mu, m[a] * m[b], r, rdot);
            let fall = kepler.fall_time(r);
            let before = PairData::from_relative(self.pair_label(a), m[a], m[b], r, rdot);
            let after = PairData::from_relative(self.pair_label(a), m[a], m[b], r, -rdot);
            let e = energy(&PhaseState::new(t, x.to_vec(), v.to_vec()), &m);
            let simultaneous = units.iter().any(|u| matches!(u, Unit::Pair(_)));
            self.events.push(CollisionEvent {
                time: t + fall,
                pair: self.pair_label(a),
                simultaneous,
                before,
                after,
                energy_before: e,
                energy_after: f64::NAN,
            });
            let c = Capture {
                a,
                collision: t + fall,
                release: t + 2.0 * fall,
                r_capture: r,
                kepler,
                event: self.events.len() - 1,
            };
            let pos = units
                .iter()
                .position(|u| matches!(u, Unit::Single(i) if *i == a))
                .expect("candidate pair consists of free bodies");
            units.splice(pos..pos + 2, [Unit::Pair(c)]);
            any = true;
        }
        if any {
            *y = self.rebuild(units, x, v);
        }
        Ok(any)
    }
}

enum ChartExit {
    End,
    Membership(Vec<usize>),
}

#[derive(Debug, Clone, Copy)]
struct Capture {
    a: usize,
    collision: f64,
    release: f64,
    r_capture: f64,
    kepler: RadialKepler,
    event: usize,
}

#[derive(Debug, Clone, Copy)]
enum Unit {
    Single(usize),
    Pair(Capture),
}

impl Unit {
    fn mass(&self, masses: &[f64]) -> f64 {
        match self {
            Unit::Single(i) => masses[*i],
            Unit::Pair(c) => masses[c.a] + masses[c.a + 1],
        }
    }
}

/// Path on `[0, T]` extended to `[0, 2T]` by `x(2T − t) = x(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricExtension {
    pub n: usize,
    /// `2M + 1` node times.
    pub times: Vec<f64>,
    /// Row-major node positions.
    pub positions: Vec<f64>,
    /// Row-major velocities of the `2M` cells (the broken line's slopes).
    pub cell_velocities: Vec<f64>,
}

impl SymmetricExtension {
    pub fn node(&self, k: usize) -> &[f64] {
        &self.positions[k * self.n..(k + 1) * self.n]
    }

    pub fn cell_velocity(&self, k: usize) -> &[f64] {
        &self.cell_velocities[k * self.n..(k + 1) * self.n]
    }

    /// Positions at `t`, extended with period `2T` and linear between nodes.
    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let period = *self.times.last().expect("nonempty");
        let t = t.rem_euclid(period);
        let k = match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => return self.node(k).to_vec(),
            Err(k) => k.clamp(1, self.times.len() - 1) - 1,
        };
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.node(k)
            .iter()
            .zip(self.node(k + 1))
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

pub fn extend_by_symmetry(path: &DiscretePath) -> SymmetricExtension {
    let n = path.n();
    let m = path.cells();
    let period = 2.0 * path.half_period();
    let mut times = path.times().to_vec();
    let mut positions = path.positions().to_vec();
    for k in (0..m).rev() {
        times.push(period - path.times()[k]);
        positions.extend_from_slice(path.node(k));
    }
    let mut cell_velocities = Vec::with_capacity(2 * m * n);
    for k in 0..m {
        cell_velocities.extend(path.cell_velocity(k));
    }
    for k in (0..m).rev() {
        cell_velocities.extend(path.cell_velocity(k).iter().map(|v| -v));
    }
    SymmetricExtension {
        n,
        times,
        positions,
        cell_velocities,
    }
}

/// Velocity at interior node `k` from the five-point nonuniform stencil.
pub fn node_velocity(path: &DiscretePath, k: usize) -> Vec<f64> {
    let m = path.cells();
    let lo = k.saturating_sub(2).min(m.saturating_sub(4));
    let idx: Vec<usize> = (lo..=lo + 4).collect();
    let nodes: Vec<f64> = idx.iter().map(|&i| path.times()[i]).collect();
    let w = fd_weights(path.times()[k], &nodes, 1);
    (0..path.n())
        .map(|r| idx.iter().zip(&w).map(|(&i, c)| c * path.position(i, r)).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityReport {
    /// `max_i |Δxᵢ| + |Δvᵢ|` after one full period `2T`.
    pub defect: f64,
    pub position_defect: f64,
    pub velocity_defect: f64,
    /// Sup-norm distance between the integrated positions and the
    /// symmetric extension at the extension's nodes in `[T/2, 3T/2]`.
    pub extension_deviation: f64,
    /// Energy drift over samples outside the switch radius.
    pub energy_drift: f64,
    /// Largest `|ΔE|` across a collision.
    pub event_energy_jump: f64,
    /// Largest `|α⁻ − α⁺|` over isolated (not simultaneous) collisions.
    pub alpha_mismatch: f64,
    pub events: usize,
    pub start: PhaseState,
    pub end: PhaseState,
    pub trajectory: Trajectory,
}

/// Integrates the sorted-frame path's state at `T/2` over `2T` and compares
/// with the start.
pub fn periodicity_check(path: &DiscretePath, masses: &[f64], opts: &IntegratorOptions) -> Result<PeriodicityReport> {
    periodicity_check_over(path, masses, opts, 1)
}

/// [`periodicity_check`] over `periods` full periods; the extension is
/// compared during the first half period only.
pub fn periodicity_check_over(
    path: &DiscretePath,
    masses: &[f64],
    opts: &IntegratorOptions,
    periods: usize,
) -> Result<PeriodicityReport> {
    let m = path.cells();
    if m < 8 || m % 2 != 0 {
        return Err(Error::BadMeshSize(m));
    }
    if periods == 0 {
        return Err(Error::InvalidOption("periods must be positive".into()));
    }
    let half = path.half_period();
    let mid = m / 2;
    let t0 = path.times()[mid];
    let start = PhaseState::new(t0, path.node(mid).to_vec(), node_velocity(path, mid));
    let ext = extend_by_symmetry(path);
    let compare: Vec<f64> = ext
        .times
        .iter()
        .copied()
        .filter(|&t| t >= t0 && t <= t0 + half)
        .collect();
    let t_end = t0 + 2.0 * half * periods as f64;
    let (trajectory, outputs) = integrate_with_outputs(&start, t_end, masses, opts, &compare)?;
    let end = trajectory.final_state().clone();
    let mut position_defect: f64 = 0.0;
    let mut velocity_defect: f64 = 0.0;
    let mut defect: f64 = 0.0;
    for i in 0..path.n() {
        let dx = (end.positions[i] - start.positions[i]).abs();
        let dv = (end.velocities[i] - start.velocities[i]).abs();
        position_defect = position_defect.max(dx);
        velocity_defect = velocity_defect.max(dv);
        defect = defect.max(dx + dv);
    }
    let extension_deviation = outputs
        .iter()
        .map(|s| {
            let reference = ext.position_at(s.time);
            s.positions
                .iter()
                .zip(&reference)
                .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
        })
        .fold(0.0, f64::max);
    let energy_drift = trajectory.energy_drift(masses);
    let event_energy_jump = trajectory
        .events
        .iter()
        .map(|e| (e.energy_after - e.energy_before).abs())
        .fold(0.0, f64::max);
    let alpha_mismatch = trajectory
        .events
        .iter()
        .filter(|e| !e.simultaneous)
        .map(|e| (e.after.alpha - e.before.alpha).abs())
        .fold(0.0, f64::max);
    Ok(PeriodicityReport {
        defect,
        position_defect,
        velocity_defect,
        extension_deviation,
        energy_drift,
        event_energy_jump,
        alpha_mismatch,
        events: trajectory.events.len(),
        start,
        end,
        trajectory,
    })
}

/// Pair data of bodies `(a, b)` at every sample of the trajectory.
/// Samples where the two bodies coincide are skipped; the one-sided limits
/// at collisions are stored in the trajectory's events.
pub fn pair_series(trajectory: &Trajectory, masses: &[f64], pair: (usize, usize)) -> Vec<(f64, PairData)> {
    let (a, b) = pair;
    trajectory
        .samples
        .iter()
        .filter_map(|s| {
            let xi = s.positions[b] - s.positions[a];
            if xi == 0.0 {
                return None;
            }
            let xidot = s.velocities[b] - s.velocities[a];
            Some((s.time, PairData::from_relative(pair, masses[a], masses[b], xi, xidot)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_body() -> (PhaseState, [f64; 2]) {
        (PhaseState::new(0.0, vec![-0.5, 0.5], vec![0.0, 0.0]), [1.0, 1.0])
    }

    fn opts(mode: CollisionMode) -> IntegratorOptions {
        IntegratorOptions {
            collision_mode: mode,
            ..Default::default()
        }
    }

    #[test]
    fn field_examples() {
        let (s, m) = two_body();
        let d = derivative_field(&s, &m).unwrap();
        assert_eq!(d.velocities, vec![1.0, -1.0]);
        let s = PhaseState::new(0.0, vec![-1.0, 0.0, 1.0], vec![0.0; 3]);
        let d = derivative_field(&s, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.velocities[1], 0.0);
        let s = PhaseState::new(0.0, vec![0.0, 0.0], vec![0.0; 2]);
        assert!(derivative_field(&s, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn head_on_pair_returns_to_rest() {
        // fall time from rest at unit gap is π/4
        let (s, m) = two_body();
        let period = std::f64::consts::FRAC_PI_2;
        for mode in [CollisionMode::Regularized, CollisionMode::Bounce] {
            let traj = integrate(&s, period, &m, &opts(mode)).unwrap();
            let end = traj.final_state();
            // bounce mode runs plain steps down to a much smaller gap
            let tol = match mode {
                CollisionMode::Regularized => 1e-9,
                CollisionMode::Bounce => 1e-7,
            };
            assert_eq!(traj.events.len(), 1, "{mode}");
            let ev = &traj.events[0];
            assert!((ev.time - period / 2.0).abs() < 1e-9, "{mode}: {}", ev.time);
            assert!((end.positions[0] + 0.5).abs() < tol, "{mode}: {:?}", end);
            assert!((end.positions[1] - 0.5).abs() < tol, "{mode}: {:?}", end);
            assert!(end.velocities.iter().all(|v| v.abs() < 10.0 * tol), "{mode}: {:?}", end);
            assert!((ev.energy_after - ev.energy_before).abs() < 1e-9);
            assert!((ev.before.alpha - ev.after.alpha).abs() < 1e-8);
            assert_eq!(ev.before.s, ev.after.s);
            assert!((ev.before.alpha + 1.0).abs() < 10.0 * tol, "{mode}: {}", ev.before.alpha);
        }
    }

    #[test]
    fn modes_agree_after_collision() {
        let (s, m) = two_body();
        let t = 1.2;
        let a = integrate(&s, t, &m, &opts(CollisionMode::Regularized)).unwrap();
        let b = integrate(&s, t, &m, &opts(CollisionMode::Bounce)).unwrap();
        let (ea, eb) = (a.final_state(), b.final_state());
        for i in 0..2 {
            assert!((ea.positions[i] - eb.positions[i]).abs() < 1e-6);
            assert!((ea.velocities[i] - eb.velocities[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn alpha_is_constant_for_isolated_pair() {
        let (s, m) = two_body();
        let traj = integrate(&s, 1.0, &m, &opts(CollisionMode::Regularized)).unwrap();
        let series = pair_series(&traj, &m, (0, 1));
        assert!(series.iter().all(|(_, p)| p.s == 1.0));
        for (_, p) in series.iter().filter(|(_, p)| p.xi > traj.switch_radius) {
            assert!((p.alpha + 1.0).abs() < 1e-8, "{}", p.alpha);
        }
    }

    #[test]
    fn triple_approach_is_rejected() {
        let s = PhaseState::new(0.0, vec![-1.0, 0.0, 1.0], vec![0.0; 3]);
        for mode in [CollisionMode::Regularized, CollisionMode::Bounce] {
            let err = integrate(&s, 2.0, &[1.0, 1.0, 1.0], &opts(mode)).unwrap_err();
            assert!(matches!(err, Error::NonRegularizableEvent { .. }), "{mode}: {err}");
        }
    }

    #[test]
    fn time_reversal_through_collision() {
        let m = [1.0, 1.0, 1.0];
        let s = PhaseState::new(0.0, vec![-2.0, 0.0, 1.0], vec![0.1, 0.5, -0.5]);
        for mode in [CollisionMode::Regularized, CollisionMode::Bounce] {
            let fwd = integrate(&s, 1.0, &m, &opts(mode)).unwrap();
            assert_eq!(fwd.events.len(), 1, "{mode}");
            let mid = fwd.final_state();
            let back = PhaseState::new(0.0, mid.positions.clone(), mid.velocities.iter().map(|v| -v).collect());
            let rev = integrate(&back, 1.0, &m, &opts(mode)).unwrap();
            let end = rev.final_state();
            let tol = match mode {
                CollisionMode::Regularized => 1e-8,
                CollisionMode::Bounce => 1e-6,
            };
            for i in 0..3 {
                assert!((end.positions[i] - s.positions[i]).abs() < tol, "{mode}");
                assert!((end.velocities[i] + s.velocities[i]).abs() < tol, "{mode}");
            }
        }
    }

    #[test]
    fn extension_examples() {
        let times = crate::action::graded_mesh(8, 1.0).unwrap();
        let path = DiscretePath::from_fn(times, 2, |t| vec![-1.0 - t * t, 1.0 + t]);
        let ext = extend_by_symmetry(&path);
        let k_max = ext.times.len() - 1;
        for k in 0..=k_max {
            assert_eq!(ext.node(k), ext.node(k_max - k));
            assert!((ext.times[k] + ext.times[k_max - k] - 2.0).abs() < 1e-15);
        }
        let m = path.cells();
        for (a, b) in ext.cell_velocity(m - 1).iter().zip(ext.cell_velocity(m)) {
            assert_eq!(*a, -*b);
        }
        for (a, b) in ext.position_at(0.3).iter().zip(ext.position_at(2.3)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
