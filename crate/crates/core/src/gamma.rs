//! The admissible path class as an unconstrained variable space.
//!
//! Paths are parametrized by gap roots: at every node the gap between ranks
//! `j` and `j+1` is `u²`, positions are rebuilt by cumulative sums and then
//! shifted so the center of mass sits at the origin. Ordering therefore holds
//! by construction, and the collision patterns at `t = 0` and `t = T` are
//! structural zeros that are not optimization variables.
//!
//! In symmetric mode, slots related by the mirror map share one variable, so
//! decoded paths are invariant under the mirror map by construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{DiscretePath, NodeHessian, QUAD_NODES, QUAD_WEIGHTS};
use crate::error::{Error, Result};
use crate::model::{check_mirror_masses, SystemSpec};
use crate::numerics::SymBand;

/// Pattern gaps must vanish to this tolerance when encoding a path.
pub const PATTERN_GAP_TOL: f64 = 1e-10;
/// Relative magnitude of the seeded perturbation of the initial guess.
pub const SEED_PERTURBATION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Start,
    End,
}

/// Adjacent rank pairs in binary collision at one endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPattern {
    pub endpoint: Endpoint,
    /// Zero-based rank pairs `(i, i+1)`.
    pub colliding_pairs: Vec<(usize, usize)>,
    /// Zero-based ranks outside every pair.
    pub free_ranks: Vec<usize>,
}

impl BoundaryPattern {
    /// Whether the gap between ranks `gap` and `gap + 1` vanishes here.
    pub fn is_collision_gap(&self, gap: usize) -> bool {
        self.colliding_pairs.iter().any(|&(a, _)| a == gap)
    }
}

/// Collision pattern at an endpoint.
///
/// At `t = 0` the pairs are ranks (2,3), (4,5), … (one-based); at `t = T`
/// they are (1,2), (3,4), …. Zero-based, the collision gaps are the odd gap
/// indices at the start and the even ones at the end.
pub fn boundary_pattern(n: usize, endpoint: Endpoint) -> Result<BoundaryPattern> {
    if n < 3 {
        return Err(Error::TooFewBodies(n));
    }
    let parity = match endpoint {
        Endpoint::Start => 1,
        Endpoint::End => 0,
    };
    let colliding_pairs: Vec<_> = (0..n - 1)
        .filter(|gap| gap % 2 == parity)
        .map(|gap| (gap, gap + 1))
        .collect();
    let free_ranks = (0..n)
        .filter(|&r| !colliding_pairs.iter().any(|&(a, b)| a == r || b == r))
        .collect();
    Ok(BoundaryPattern {
        endpoint,
        colliding_pairs,
        free_ranks,
    })
}

/// The mirror element of the dihedral symmetry group in the sorted frame.
///
/// For odd `n` it maps `x_i(t)` to `−x_{n+1−i}(T−t)`; for even `n` to
/// `−x_{n+1−i}(t)`. The time reflection `t ↦ 2T − t` acts trivially on
/// paths over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MirrorMap {
    pub n: usize,
    pub cells: usize,
}

impl MirrorMap {
    pub fn new(n: usize, cells: usize) -> Self {
        Self { n, cells }
    }

    pub fn reverses_time(&self) -> bool {
        self.n % 2 == 1
    }

    /// Image node of node `k`.
    pub fn node(&self, k: usize) -> usize {
        if self.reverses_time() {
            self.cells - k
        } else {
            k
        }
    }

    /// Image rank of rank `i`.
    pub fn rank(&self, i: usize) -> usize {
        self.n - 1 - i
    }

    /// Image slot of the gap `(node, gap)`.
    pub fn gap_slot(&self, k: usize, gap: usize) -> (usize, usize) {
        (self.node(k), self.n - 2 - gap)
    }

    /// The image path.
    pub fn apply(&self, path: &DiscretePath) -> DiscretePath {
        let mut out = path.clone();
        for k in 0..=self.cells {
            let src = path.node(self.node(k));
            let dst = out.node_mut(k);
            for i in 0..self.n {
                dst[i] = -src[self.rank(i)];
            }
        }
        out
    }
}

/// Average of a path and its mirror image; the result is exactly invariant.
pub fn symmetrize(path: &DiscretePath, spec: &SystemSpec) -> Result<DiscretePath> {
    check_mirror_masses(&spec.sorted_masses())?;
    Ok(symmetrize_unchecked(path))
}

fn symmetrize_unchecked(path: &DiscretePath) -> DiscretePath {
    let map = MirrorMap::new(path.n(), path.cells());
    let mut out = path.clone();
    for k in 0..=path.cells() {
        let img = path.node(map.node(k));
        let own = path.node(k);
        let row: Vec<f64> = (0..path.n())
            .map(|i| 0.5 * (own[i] - img[map.rank(i)]))
            .collect();
        out.node_mut(k).copy_from_slice(&row);
    }
    out
}

/// Gap-root variables of the admissible class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeVariables(pub Vec<f64>);

impl FreeVariables {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Zero,
    Var(usize),
}

/// Maps free variables to paths on a fixed mesh.
#[derive(Debug, Clone)]
pub struct AdmissibleSpace {
    masses: Vec<f64>,
    mesh: Vec<f64>,
    symmetric: bool,
    slots: Vec<Slot>,
    dim: usize,
    /// `Σ_{i>j} mᵢ / m₀`: sensitivity of the COM shift to gap `j`.
    tail_weights: Vec<f64>,
    /// Bandwidth of the Hessian in the free variables.
    band_width: usize,
}

impl AdmissibleSpace {
    /// Variable space for `spec` on `mesh` (node times over `[0, T]`).
    pub fn new(spec: &SystemSpec, mesh: &[f64]) -> Result<Self> {
        Self::from_sorted(spec.sorted_masses(), mesh.to_vec(), spec.symmetric_mode)
    }

    pub fn from_sorted(masses: Vec<f64>, mesh: Vec<f64>, symmetric: bool) -> Result<Self> {
        let n = masses.len();
        if n < 3 {
            return Err(Error::TooFewBodies(n));
        }
        let cells = mesh.len().saturating_sub(1);
        if cells < crate::action::MIN_CELLS || cells % 2 != 0 {
            return Err(Error::BadMeshSize(cells));
        }
        if symmetric {
            check_mirror_masses(&masses)?;
        }
        let start = boundary_pattern(n, Endpoint::Start)?;
        let end = boundary_pattern(n, Endpoint::End)?;
        let gaps = n - 1;
        let map = MirrorMap::new(n, cells);
        let mut slots = vec![Slot::Zero; (cells + 1) * gaps];
        let mut dim = 0;
        for k in 0..=cells {
            for j in 0..gaps {
                let zero = (k == 0 && start.is_collision_gap(j))
                    || (k == cells && end.is_collision_gap(j));
                if zero {
                    continue;
                }
                let slot = if symmetric {
                    let (ki, ji) = map.gap_slot(k, j);
                    match slots[ki * gaps + ji] {
                        Slot::Var(v) if (ki, ji) < (k, j) => Slot::Var(v),
                        _ => {
                            dim += 1;
                            Slot::Var(dim - 1)
                        }
                    }
                } else {
                    dim += 1;
                    Slot::Var(dim - 1)
                };
                slots[k * gaps + j] = slot;
            }
        }
        let m0: f64 = masses.iter().sum();
        let tail_weights = (0..gaps)
            .map(|j| masses[j + 1..].iter().sum::<f64>() / m0)
            .collect();
        let mut band_width = 0;
        for k in 0..cells {
            let vars: Vec<usize> = slots[k * gaps..(k + 2) * gaps]
                .iter()
                .filter_map(|s| match s {
                    Slot::Var(v) => Some(*v),
                    Slot::Zero => None,
                })
                .collect();
            if let (Some(lo), Some(hi)) = (vars.iter().min(), vars.iter().max()) {
                band_width = band_width.max(hi - lo);
            }
        }
        Ok(Self {
            masses,
            mesh,
            symmetric,
            slots,
            dim,
            tail_weights,
            band_width,
        })
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn cells(&self) -> usize {
        self.mesh.len() - 1
    }

    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of free variables.
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn slot(&self, k: usize, gap: usize) -> Slot {
        self.slots[k * (self.n() - 1) + gap]
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// Path with gaps `u²`, pattern zeros, and zero center of mass.
    pub fn decode(&self, vars: &[f64]) -> Result<DiscretePath> {
        self.check_dim(vars.len())?;
        let n = self.n();
        let m0: f64 = self.masses.iter().sum();
        let mut positions = Vec::with_capacity((self.cells() + 1) * n);
        let mut row = vec![0.0; n];
        for k in 0..=self.cells() {
            row[0] = 0.0;
            for j in 0..n - 1 {
                let gap = match self.slot(k, j) {
                    Slot::Zero => 0.0,
                    Slot::Var(v) => vars[v] * vars[v],
                };
                row[j + 1] = row[j] + gap;
            }
            let com = row.iter().zip(&self.masses).map(|(x, m)| m * x).sum::<f64>() / m0;
            positions.extend(row.iter().map(|x| x - com));
        }
        let path = DiscretePath::new(self.mesh.clone(), n, positions)?;
        Ok(if self.symmetric {
            symmetrize_unchecked(&path)
        } else {
            path
        })
    }

    /// Gap-root variables of a path that satisfies the admissible conditions.
    pub fn encode(&self, path: &DiscretePath) -> Result<FreeVariables> {
        if path.n() != self.n() || path.cells() != self.cells() {
            return Err(Error::DimensionMismatch {
                expected: (self.cells() + 1) * self.n(),
                got: path.positions().len(),
            });
        }
        let n = self.n();
        let scale = path.extent().max(f64::MIN_POSITIVE);
        let negative_tol = 1e-12 * scale;
        let mut sums = vec![0.0; self.dim];
        let mut counts = vec![0usize; self.dim];
        for k in 0..=self.cells() {
            let row = path.node(k);
            for j in 0..n - 1 {
                let gap = row[j + 1] - row[j];
                match self.slot(k, j) {
                    Slot::Zero => {
                        if gap.abs() > PATTERN_GAP_TOL {
                            return Err(Error::NonzeroPatternGap { node: k, gap: j, value: gap });
                        }
                    }
                    Slot::Var(v) => {
                        if gap < -negative_tol {
                            return Err(Error::NegativeGap { node: k, gap: j, value: gap });
                        }
                        sums[v] += gap.max(0.0);
                        counts[v] += 1;
                    }
                }
            }
        }
        Ok(FreeVariables(
            sums.iter()
                .zip(&counts)
                .map(|(s, &c)| (s / c as f64).sqrt())
                .collect(),
        ))
    }

    /// Pulls a gradient over node positions back to the free variables.
    pub fn pullback(&self, vars: &[f64], path_grad: &[f64], out: &mut [f64]) {
        let n = self.n();
        out.iter_mut().for_each(|g| *g = 0.0);
        let mut tail = vec![0.0; n];
        for k in 0..=self.cells() {
            let g = &path_grad[k * n..(k + 1) * n];
            let total: f64 = g.iter().sum();
            // tail[j] = Σ_{i>j} g_i
            let mut acc = 0.0;
            for j in (0..n - 1).rev() {
                acc += g[j + 1];
                tail[j] = acc;
            }
            for j in 0..n - 1 {
                if let Slot::Var(v) = self.slot(k, j) {
                    let d_gap = tail[j] - self.tail_weights[j] * total;
                    out[v] += 2.0 * vars[v] * d_gap;
                }
            }
        }
    }

    /// Discrete action of `decode(vars)` and its gradient in the free
    /// variables, computed from the gaps directly.
    ///
    /// Pair distances are sums of adjacent gaps rather than differences of
    /// positions, so tiny gaps near the collision endpoints keep full
    /// relative precision. The value agrees with
    /// [`action_evaluate`](crate::action::action_evaluate) up to roundoff.
    pub fn action_with_gradient(&self, vars: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_dim(vars.len())?;
        let n = self.n();
        let gaps = n - 1;
        let cells = self.cells();
        let m = &self.masses;
        let m0: f64 = m.iter().sum();
        let root: Vec<f64> = (0..=cells)
            .flat_map(|k| (0..gaps).map(move |j| (k, j)))
            .map(|(k, j)| match self.slot(k, j) {
                Slot::Zero => 0.0,
                Slot::Var(v) => vars[v],
            })
            .collect();
        let g: Vec<f64> = root.iter().map(|u| u * u).collect();
        let mut dg = vec![0.0; g.len()];
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        let mut v = vec![0.0; n];
        let mut point = vec![0.0; gaps];
        let mut dpoint = vec![0.0; gaps];
        for k in 0..cells {
            let dt = self.mesh[k + 1] - self.mesh[k];
            let (a, b) = (&g[k * gaps..(k + 1) * gaps], &g[(k + 1) * gaps..(k + 2) * gaps]);
            // velocities of the center-of-mass-free path
            let mut acc = 0.0;
            let mut mv = 0.0;
            v[0] = 0.0;
            for j in 0..gaps {
                // difference of squares without cancellation
                let (ua, ub) = (root[k * gaps + j].abs(), root[(k + 1) * gaps + j].abs());
                acc += (ub - ua) * (ub + ua) / dt;
                v[j + 1] = acc;
            }
            for i in 0..n {
                mv += m[i] * v[i];
            }
            let drift = mv / m0;
            let mut tail = 0.0;
            for i in (1..n).rev() {
                let vi = v[i] - drift;
                tail += m[i] * vi;
                // ∂K/∂(Δg_{i-1}/dt) = Σ_{l≥i} m_l v_l
                dg[(k + 1) * gaps + i - 1] += tail;
                dg[k * gaps + i - 1] -= tail;
            }
            for i in 0..n {
                let vi = v[i] - drift;
                kinetic += 0.5 * m[i] * vi * vi * dt;
            }

            let mut cell_potential = 0.0;
            for (&c, &w) in QUAD_NODES.iter().zip(&QUAD_WEIGHTS) {
                for j in 0..gaps {
                    point[j] = (1.0 - c) * a[j] + c * b[j];
                }
                dpoint.iter_mut().for_each(|x| *x = 0.0);
                let mut u = 0.0;
                for i in 0..n {
                    let mut d = 0.0;
                    for j in i + 1..n {
                        d += point[j - 1];
                        let mm = m[i] * m[j];
                        u += mm / d;
                        let f = mm / (d * d);
                        for l in i..j {
                            dpoint[l] -= f;
                        }
                    }
                }
                if !u.is_finite() {
                    return Err(Error::DegeneratePath);
                }
                cell_potential += w * u;
                for j in 0..gaps {
                    let f = w * dt * dpoint[j];
                    dg[k * gaps + j] += (1.0 - c) * f;
                    dg[(k + 1) * gaps + j] += c * f;
                }
            }
            potential += dt * cell_potential;
        }
        grad.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..=cells {
            for j in 0..gaps {
                if let Slot::Var(var) = self.slot(k, j) {
                    grad[var] += 2.0 * vars[var] * dg[k * gaps + j];
                }
            }
        }
        let total = kinetic + potential;
        if !total.is_finite() {
            return Err(Error::DegeneratePath);
        }
        Ok(total)
    }

    /// Hessian of `A ∘ decode` from the node Hessian and node gradient of
    /// `A` at `decode(vars)`.
    pub fn hessian(&self, vars: &[f64], node_hessian: &NodeHessian, path_grad: &[f64]) -> SymBand {
        let n = self.n();
        let gaps = n - 1;
        // d x_i / d g_j
        let jac = |i: usize, j: usize| (if i > j { 1.0 } else { 0.0 }) - self.tail_weights[j];
        let project = |block: &[f64]| -> Vec<f64> {
            let mut q = vec![0.0; gaps * gaps];
            for a in 0..gaps {
                for b in 0..gaps {
                    let mut sum = 0.0;
                    for i in 0..n {
                        let pa = jac(i, a);
                        for l in 0..n {
                            sum += pa * block[i * n + l] * jac(l, b);
                        }
                    }
                    q[a * gaps + b] = sum;
                }
            }
            q
        };
        let mut h = SymBand::zeros(self.dim, self.band_width);
        let var = |k: usize, j: usize| match self.slot(k, j) {
            Slot::Var(v) => Some(v),
            Slot::Zero => None,
        };
        for k in 0..=self.cells() {
            let q = project(&node_hessian.diag[k]);
            for a in 0..gaps {
                let Some(va) = var(k, a) else { continue };
                for b in 0..gaps {
                    let Some(vb) = var(k, b) else { continue };
                    let v = 4.0 * vars[va] * vars[vb] * q[a * gaps + b];
                    // each unordered pair is visited twice off the diagonal
                    if va == vb {
                        h.add(va, vb, v);
                    } else {
                        h.add(va, vb, 0.5 * v);
                    }
                }
                let g = &path_grad[k * n..(k + 1) * n];
                let dg: f64 = (0..n).map(|i| jac(i, a) * g[i]).sum();
                h.add(va, va, 2.0 * dg);
            }
            if k == self.cells() {
                continue;
            }
            let q = project(&node_hessian.upper[k]);
            for a in 0..gaps {
                let Some(va) = var(k, a) else { continue };
                for b in 0..gaps {
                    let Some(vb) = var(k + 1, b) else { continue };
                    let v = 4.0 * vars[va] * vars[vb] * q[a * gaps + b];
                    // the transposed block contributes the same amount
                    if va == vb {
                        h.add(va, vb, 2.0 * v);
                    } else {
                        h.add(va, vb, v);
                    }
                }
            }
        }
        h
    }

    /// Diagonal curvature estimate of the kinetic part in the free variables.
    pub fn kinetic_diagonal(&self, vars: &[f64]) -> Vec<f64> {
        let n = self.n();
        let cells = self.cells();
        let gap_weight: Vec<f64> = (0..n - 1)
            .map(|j| {
                (0..n)
                    .map(|i| {
                        let a = if i > j { 1.0 } else { 0.0 } - self.tail_weights[j];
                        self.masses[i] * a * a
                    })
                    .sum()
            })
            .collect();
        let u2_mean = vars.iter().map(|u| u * u).sum::<f64>() / vars.len().max(1) as f64;
        let floor = 1e-4 * u2_mean.max(f64::MIN_POSITIVE);
        let mut diag = vec![0.0; self.dim];
        for k in 0..=cells {
            let mut stiff = 0.0;
            if k > 0 {
                stiff += 1.0 / (self.mesh[k] - self.mesh[k - 1]);
            }
            if k < cells {
                stiff += 1.0 / (self.mesh[k + 1] - self.mesh[k]);
            }
            for j in 0..n - 1 {
                if let Slot::Var(v) = self.slot(k, j) {
                    diag[v] += 4.0 * (vars[v] * vars[v]).max(floor) * gap_weight[j] * stiff;
                }
            }
        }
        diag
    }

    /// Deterministic starting point: unit separations between the clusters
    /// of each boundary pattern, bodies moving linearly in time. With a seed,
    /// every variable is scaled by an independent factor in `1 ± 0.1`.
    pub fn initial_guess(&self, seed: Option<u64>) -> FreeVariables {
        let n = self.n();
        let start = boundary_pattern(n, Endpoint::Start).expect("n >= 3");
        let end = boundary_pattern(n, Endpoint::End).expect("n >= 3");
        let t_end = *self.mesh.last().unwrap();
        let mut vars = vec![0.0; self.dim];
        let mut counts = vec![0usize; self.dim];
        for (k, &t) in self.mesh.iter().enumerate() {
            let lambda = t / t_end;
            for j in 0..n - 1 {
                let g0 = if start.is_collision_gap(j) { 0.0 } else { 1.0 };
                let g1 = if end.is_collision_gap(j) { 0.0 } else { 1.0 };
                if let Slot::Var(v) = self.slot(k, j) {
                    vars[v] += (1.0 - lambda) * g0 + lambda * g1;
                    counts[v] += 1;
                }
            }
        }
        for (u, &c) in vars.iter_mut().zip(&counts) {
            *u = (*u / c as f64).sqrt();
        }
        if let Some(seed) = seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for u in vars.iter_mut() {
                *u *= 1.0 + SEED_PERTURBATION * rng.gen_range(-1.0..=1.0);
            }
        }
        FreeVariables(vars)
    }
}

/// Outcome of the admissibility conditions on a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `x_1(0)·x_n(0) ≤ 0`; violation is the positive part of the product.
    pub sign_condition: bool,
    pub sign_violation: f64,
    /// Ordering at every node; violation is the largest inversion.
    pub ordering: bool,
    pub ordering_violation: f64,
    /// Collision patterns at both ends; violation is the largest pattern gap.
    pub boundary_patterns: bool,
    pub pattern_violation: f64,
}

impl FeasibilityReport {
    pub fn all_pass(&self) -> bool {
        self.sign_condition && self.ordering && self.boundary_patterns
    }
}

/// Checks the admissibility conditions on a sorted-frame path.
pub fn feasibility_check(path: &DiscretePath, tol: f64) -> FeasibilityReport {
    let n = path.n();
    let cells = path.cells();
    let first = path.node(0);
    let sign_violation = (first[0] * first[n - 1]).max(0.0);
    let mut ordering_violation: f64 = 0.0;
    for k in 0..=cells {
        let row = path.node(k);
        for j in 0..n - 1 {
            ordering_violation = ordering_violation.max(row[j] - row[j + 1]);
        }
    }
    let mut pattern_violation: f64 = 0.0;
    for (endpoint, k) in [(Endpoint::Start, 0), (Endpoint::End, cells)] {
        let pattern = boundary_pattern(n, endpoint).expect("paths carry n >= 3");
        let row = path.node(k);
        for &(a, b) in &pattern.colliding_pairs {
            pattern_violation = pattern_violation.max((row[b] - row[a]).abs());
        }
    }
    FeasibilityReport {
        sign_condition: sign_violation <= tol,
        sign_violation,
        ordering: ordering_violation <= tol,
        ordering_violation,
        boundary_patterns: pattern_violation <= tol,
        pattern_violation,
    }
}
