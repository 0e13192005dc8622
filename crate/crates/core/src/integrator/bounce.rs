//! Radial two-body motion used to carry a captured pair through its
//! collision in bounce mode.

use crate::numerics::gauss_legendre;

const QUADRATURE_POINTS: usize = 24;

/// Relative motion of a pair falling into collision with conserved
/// energy `alpha = ½μṙ² − k/r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialKepler {
    pub mu: f64,
    pub k: f64,
    pub alpha: f64,
}

impl RadialKepler {
    pub fn from_state(mu: f64, k: f64, r: f64, rdot: f64) -> Self {
        Self {
            mu,
            k,
            alpha: 0.5 * mu * rdot * rdot - k / r,
        }
    }

    /// `|ṙ|` at separation `r`.
    pub fn speed(&self, r: f64) -> f64 {
        (2.0 / self.mu * (self.alpha + self.k / r)).max(0.0).sqrt()
    }

    /// Time to fall from `r` to collision. With `r' = r w²` the integrand
    /// is smooth on `[0, 1]`.
    pub fn fall_time(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let (nodes, weights) = gauss_legendre(QUADRATURE_POINTS);
        nodes
            .iter()
            .zip(&weights)
            .map(|(w, c)| {
                let denom = (2.0 / self.mu * (self.alpha * w * w + self.k / r)).sqrt();
                c * 2.0 * r * w * w / denom
            })
            .sum()
    }

    /// Separation reached `tau` before (or after) collision, for
    /// `tau <= fall_time(r_max)`.
    pub fn separation(&self, tau: f64, r_max: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        let t_max = self.fall_time(r_max);
        if tau >= t_max {
            return r_max;
        }
        let mut r = r_max * (tau / t_max).powf(2.0 / 3.0);
        for _ in 0..50 {
            let step = (self.fall_time(r) - tau) * self.speed(r);
            let next = (r - step).clamp(0.5 * r, (2.0 * r).min(r_max));
            if (next - r).abs() <= 1e-15 * r {
                r = next;
                break;
            }
            r = next;
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_fall_matches_cycloid() {
        // r = (R/2)(1 − cos η), t = sqrt(μR³/(8k)) (η − sin η), R = k/(−α)
        let (mu, k, big_r) = (0.5, 1.0, 1.0);
        let kep = RadialKepler {
            mu,
            k,
            alpha: -k / big_r,
        };
        for r in [1e-3, 0.05, 0.3] {
            let eta = (1.0 - 2.0 * r / big_r).acos();
            let exact = (mu * big_r.powi(3) / (8.0 * k)).sqrt() * (eta - eta.sin());
            assert!((kep.fall_time(r) / exact - 1.0).abs() < 1e-11, "r = {r}");
        }
    }

    #[test]
    fn zero_energy_fall_is_exact() {
        // α = 0: τ = (2/3) r^{3/2} sqrt(μ/(2k))
        let kep = RadialKepler {
            mu: 2.0,
            k: 3.0,
            alpha: 0.0,
        };
        let r: f64 = 2e-3;
        let exact = 2.0 / 3.0 * r.powf(1.5) * (kep.mu / (2.0 * kep.k)).sqrt();
        assert!((kep.fall_time(r) / exact - 1.0).abs() < 1e-14);
        let tau = 0.3 * exact;
        let s = kep.separation(tau, r);
        assert!((kep.fall_time(s) / tau - 1.0).abs() < 1e-12);
    }
}
