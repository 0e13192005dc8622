//! Regularizing chart for a set of colliding adjacent pairs.
//!
//! Each pair `(a, a+1)` is described by its center of mass `X`, total
//! momentum `P_X`, and Levi-Civita coordinates `Q` with `r = Q²` and
//! `P = 2 Q p_r`. Bodies outside the pairs keep `(x, p)`. The independent
//! variable is a fictitious time `s` with
//!
//! `dt/ds = g = Π Q_j² / Σ_j Π_{k≠j} Q_k²`,
//!
//! which is `Q²` for a single pair and stays finite through simultaneous
//! collisions of several pairs. The flow is that of `Γ = g (H − E)` with `E`
//! the energy at entry.

use crate::error::{Error, Result};

/// Chart layout: pair left ranks, free ranks, and cached mass data.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub masses: Vec<f64>,
    pub pairs: Vec<usize>,
    pub free: Vec<usize>,
    pub energy: f64,
    pair_mass: Vec<f64>,
    reduced: Vec<f64>,
}

/// Quantities shared by the field and the diagnostics.
pub struct Terms {
    pub positions: Vec<f64>,
    /// `∂U_rest/∂x`, where `U_rest` omits the intra-pair terms.
    pub rest_grad: Vec<f64>,
    /// Kinetic energy of pair centers and free bodies minus `U_rest`.
    pub rest: f64,
    /// `A_j = P_j²/(8μ_j) − m_a m_b`; the pair energy is `A_j / Q_j²`.
    pub a: Vec<f64>,
}

impl Chart {
    pub fn new(masses: &[f64], mut pairs: Vec<usize>, energy: f64) -> Self {
        pairs.sort_unstable();
        let n = masses.len();
        let free = (0..n)
            .filter(|&i| !pairs.iter().any(|&a| i == a || i == a + 1))
            .collect();
        let pair_mass = pairs.iter().map(|&a| masses[a] + masses[a + 1]).collect();
        let reduced = pairs
            .iter()
            .map(|&a| masses[a] * masses[a + 1] / (masses[a] + masses[a + 1]))
            .collect();
        Self {
            masses: masses.to_vec(),
            pairs,
            free,
            energy,
            pair_mass,
            reduced,
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Length of the chart state `[t, Q, P, X, P_X, x_free, p_free]`.
    pub fn dim(&self) -> usize {
        1 + 4 * self.pairs.len() + 2 * self.free.len()
    }

    fn q(&self, j: usize) -> usize {
        1 + j
    }
    fn p(&self, j: usize) -> usize {
        1 + self.pairs.len() + j
    }
    fn x(&self, j: usize) -> usize {
        1 + 2 * self.pairs.len() + j
    }
    fn px(&self, j: usize) -> usize {
        1 + 3 * self.pairs.len() + j
    }
    fn xf(&self, f: usize) -> usize {
        1 + 4 * self.pairs.len() + f
    }
    fn pf(&self, f: usize) -> usize {
        1 + 4 * self.pairs.len() + self.free.len() + f
    }

    /// Chart state from physical positions and velocities (sorted ranks).
    pub fn encode(&self, t: f64, x: &[f64], v: &[f64]) -> Vec<f64> {
        let m = &self.masses;
        let mut y = vec![0.0; self.dim()];
        y[0] = t;
        for (j, &a) in self.pairs.iter().enumerate() {
            let b = a + 1;
            let mt = self.pair_mass[j];
            let r = x[b] - x[a];
            let q = r.max(0.0).sqrt();
            y[self.q(j)] = q;
            y[self.p(j)] = 2.0 * q * self.reduced[j] * (v[b] - v[a]);
            y[self.x(j)] = (m[a] * x[a] + m[b] * x[b]) / mt;
            y[self.px(j)] = m[a] * v[a] + m[b] * v[b];
        }
        for (f, &i) in self.free.iter().enumerate() {
            y[self.xf(f)] = x[i];
            y[self.pf(f)] = m[i] * v[i];
        }
        y
    }

    /// Chart state of `self` from a chart state of `other` (same energy),
    /// converting only the pairs whose membership changes. Pairs leaving the
    /// chart must be away from collision.
    pub fn transfer(&self, other: &Chart, y_other: &[f64]) -> Vec<f64> {
        let (x, v) = other.decode_with_pairs(y_other, &self.pairs);
        let mut y = self.encode(y_other[0], &x, &v);
        // keep the regularized coordinates of pairs present in both charts
        for (j, a) in self.pairs.iter().enumerate() {
            if let Some(jo) = other.pairs.iter().position(|b| b == a) {
                y[self.q(j)] = y_other[other.q(jo)];
                y[self.p(j)] = y_other[other.p(jo)];
                y[self.x(j)] = y_other[other.x(jo)];
                y[self.px(j)] = y_other[other.px(jo)];
            }
        }
        y
    }

    /// Physical positions and velocities; velocities of pairs listed in
    /// `skip` are left at their center-of-mass value.
    fn decode_with_pairs(&self, y: &[f64], skip: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let n = self.masses.len();
        let m = &self.masses;
        let mut x = vec![0.0; n];
        let mut v = vec![0.0; n];
        for (j, &a) in self.pairs.iter().enumerate() {
            let b = a + 1;
            let mt = self.pair_mass[j];
            let q = y[self.q(j)];
            let r = q * q;
            let xc = y[self.x(j)];
            x[a] = xc - m[b] / mt * r;
            x[b] = xc + m[a] / mt * r;
            let vc = y[self.px(j)] / mt;
            let rdot = if skip.contains(&a) {
                0.0
            } else {
                y[self.p(j)] / (2.0 * self.reduced[j] * q)
            };
            v[a] = vc - m[b] / mt * rdot;
            v[b] = vc + m[a] / mt * rdot;
        }
        for (f, &i) in self.free.iter().enumerate() {
            x[i] = y[self.xf(f)];
            v[i] = y[self.pf(f)] / m[i];
        }
        (x, v)
    }

    /// Physical positions and velocities. Velocities of a pair diverge at
    /// its collision.
    pub fn decode(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.decode_with_pairs(y, &[])
    }

    pub fn positions(&self, y: &[f64]) -> Vec<f64> {
        let n = self.masses.len();
        let m = &self.masses;
        let mut x = vec![0.0; n];
        for (j, &a) in self.pairs.iter().enumerate() {
            let mt = self.pair_mass[j];
            let r = y[self.q(j)] * y[self.q(j)];
            x[a] = y[self.x(j)] - m[a + 1] / mt * r;
            x[a + 1] = y[self.x(j)] + m[a] / mt * r;
        }
        for (f, &i) in self.free.iter().enumerate() {
            x[i] = y[self.xf(f)];
        }
        x
    }

    pub fn time(&self, y: &[f64]) -> f64 {
        y[0]
    }

    pub fn q_of(&self, y: &[f64], j: usize) -> f64 {
        y[self.q(j)]
    }

    pub fn p_of(&self, y: &[f64], j: usize) -> f64 {
        y[self.p(j)]
    }

    pub fn reduced_mass(&self, j: usize) -> f64 {
        self.reduced[j]
    }

    /// Smallest gap not belonging to a chart pair, with its left rank.
    pub fn min_outer_gap(&self, x: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for i in 0..x.len() - 1 {
            if self.pairs.contains(&i) {
                continue;
            }
            let g = x[i + 1] - x[i];
            if g < best.0 {
                best = (g, i);
            }
        }
        best
    }

    pub fn terms(&self, y: &[f64]) -> Result<Terms> {
        let n = self.masses.len();
        let m = &self.masses;
        let positions = self.positions(y);
        let mut rest_grad = vec![0.0; n];
        let mut u_rest = 0.0;
        for i in 0..n {
            for k in i + 1..n {
                if k == i + 1 && self.pairs.contains(&i) {
                    continue;
                }
                let d = positions[k] - positions[i];
                if !(d > 0.0) {
                    return Err(Error::CollisionConfiguration {
                        node: 0,
                        first: i,
                        second: k,
                    });
                }
                let mm = m[i] * m[k];
                u_rest += mm / d;
                let f = mm / (d * d);
                // ∂(mm/d)/∂x_i = +mm/d², ∂/∂x_k = −mm/d²
                rest_grad[i] += f;
                rest_grad[k] -= f;
            }
        }
        let mut rest = -u_rest;
        for (j, _) in self.pairs.iter().enumerate() {
            rest += y[self.px(j)].powi(2) / (2.0 * self.pair_mass[j]);
        }
        for (f, &i) in self.free.iter().enumerate() {
            rest += y[self.pf(f)].powi(2) / (2.0 * m[i]);
        }
        let a = self
            .pairs
            .iter()
            .enumerate()
            .map(|(j, &i)| y[self.p(j)].powi(2) / (8.0 * self.reduced[j]) - m[i] * m[i + 1])
            .collect();
        Ok(Terms {
            positions,
            rest_grad,
            rest,
            a,
        })
    }

    /// `Π_{k∉skip} Q_k²`.
    fn product(&self, y: &[f64], skip: &[usize]) -> f64 {
        (0..self.pairs.len())
            .filter(|k| !skip.contains(k))
            .map(|k| y[self.q(k)] * y[self.q(k)])
            .product()
    }

    /// `dt/ds`.
    pub fn time_rate(&self, y: &[f64]) -> f64 {
        let j = self.pairs.len();
        let f = self.product(y, &[]);
        let d: f64 = (0..j).map(|l| self.product(y, &[l])).sum();
        f / d
    }

    /// Physical energy `H` of a chart state (singular at collisions).
    pub fn energy_of(&self, y: &[f64]) -> Result<f64> {
        let t = self.terms(y)?;
        let pair: f64 = t
            .a
            .iter()
            .enumerate()
            .map(|(j, a)| a / y[self.q(j)].powi(2))
            .sum();
        Ok(pair + t.rest)
    }

    /// Energy of pair `j`, `(A_j − Γ)/Q_j²` with the `Q_j²` cancelled
    /// analytically:
    /// `[Σ_{l≠j} (A_j − A_l) Π_{k≠l,j} Q_k² − F_j (R − E)] / D`.
    /// For a lone pair this is the energy balance `E − R`, finite through
    /// the collision.
    pub fn pair_energy(&self, y: &[f64], j: usize) -> Result<f64> {
        let t = self.terms(y)?;
        let jn = self.pairs.len();
        let d: f64 = (0..jn).map(|l| self.product(y, &[l])).sum();
        let mut num = -self.product(y, &[j]) * (t.rest - self.energy);
        for l in 0..jn {
            if l != j {
                num += (t.a[j] - t.a[l]) * self.product(y, &[l, j]);
            }
        }
        Ok(num / d)
    }

    /// Vector field in fictitious time.
    pub fn field(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let m = &self.masses;
        let jn = self.pairs.len();
        let t = self.terms(y)?;
        let f = self.product(y, &[]);
        let fj: Vec<f64> = (0..jn).map(|l| self.product(y, &[l])).collect();
        let d: f64 = fj.iter().sum();
        if !(d > 0.0) {
            return Err(Error::StepFailure {
                time: y[0],
                reason: "simultaneous exact collision of every chart pair".into(),
            });
        }
        let g = f / d;
        let excess = t.rest - self.energy;
        let nn: f64 = t.a.iter().zip(&fj).map(|(a, w)| a * w).sum::<f64>() + f * excess;
        dy[0] = g;
        for (j, &a) in self.pairs.iter().enumerate() {
            let b = a + 1;
            let q = y[self.q(j)];
            let mt = self.pair_mass[j];
            dy[self.q(j)] = y[self.p(j)] * fj[j] / (4.0 * self.reduced[j] * d);
            // ∂F_l/∂Q_j for l ≠ j
            let mut dn = 0.0;
            let mut dd = 0.0;
            for l in 0..jn {
                if l == j {
                    continue;
                }
                let dfl = 2.0 * q * self.product(y, &[l, j]);
                dn += t.a[l] * dfl;
                dd += dfl;
            }
            let dr = -(t.rest_grad[a] * (-2.0 * m[b] * q / mt) + t.rest_grad[b] * (2.0 * m[a] * q / mt));
            dn += 2.0 * q * fj[j] * excess + f * dr;
            dy[self.p(j)] = -(dn * d - nn * dd) / (d * d);
            dy[self.x(j)] = g * y[self.px(j)] / mt;
            dy[self.px(j)] = g * (t.rest_grad[a] + t.rest_grad[b]);
        }
        for (k, &i) in self.free.iter().enumerate() {
            dy[self.xf(k)] = g * y[self.pf(k)] / m[i];
            dy[self.pf(k)] = g * t.rest_grad[i];
        }
        Ok(())
    }
}
