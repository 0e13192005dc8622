//! Small interpolation and differencing kernels.

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    /// `xs` must be strictly increasing with at least two points.
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        assert!(xs.len() >= 2 && xs.len() == ys.len());
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            slopes,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let k = match self.xs.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(k) => return self.ys[k],
            Err(0) => 0,
            Err(k) if k >= n => n - 2,
            Err(k) => k - 1,
        };
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[k] + h10 * h * self.slopes[k] + h01 * self.ys[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

/// Three-point one-sided end slope, limited to preserve monotonicity.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Finite-difference weights for the `order`-th derivative at `z` from the
/// given stencil nodes (Fornberg's recursion).
pub fn fd_weights(z: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Value at `z` of the interpolating polynomial through `(xs, ys)`.
pub fn lagrange_eval(xs: &[f64], ys: &[f64], z: f64) -> f64 {
    let w = fd_weights(z, xs, 0);
    w.iter().zip(ys).map(|(w, y)| w * y).sum()
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Symmetric matrix stored as its lower band: entry `(i, i - d)` lives at
/// `band[i * (width + 1) + d]` for `d <= width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBand {
    dim: usize,
    width: usize,
    band: Vec<f64>,
}

impl SymBand {
    pub fn zeros(dim: usize, width: usize) -> Self {
        Self {
            dim,
            width,
            band: vec![0.0; dim * (width + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)` (once if `i == j`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let d = r - c;
        assert!(d <= self.width, "entry outside band");
        self.band[r * (self.width + 1) + d] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let d = r - c;
        if d > self.width {
            0.0
        } else {
            self.band[r * (self.width + 1) + d]
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.band[i * (self.width + 1)]).collect()
    }

    /// Cholesky factor of `self + shift·I`, or `None` if that is not
    /// numerically positive definite.
    pub fn cholesky(&self, shift: f64) -> Option<BandCholesky> {
        let w = self.width;
        let stride = w + 1;
        let mut l = self.band.clone();
        for i in 0..self.dim {
            l[i * stride] += shift;
        }
        for i in 0..self.dim {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                let mut sum = l[i * stride + (i - j)];
                let kmin = lo.max(j.saturating_sub(w));
                for k in kmin..j {
                    sum -= l[i * stride + (i - k)] * l[j * stride + (j - k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[i * stride] = sum.sqrt();
                } else {
                    l[i * stride + (i - j)] = sum / l[j * stride];
                }
            }
        }
        Some(BandCholesky {
            dim: self.dim,
            width: w,
            l,
        })
    }
}

/// Lower-triangular band factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    dim: usize,
    width: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let stride = self.width + 1;
        for i in 0..self.dim {
            let lo = i.saturating_sub(self.width);
            let mut sum = b[i];
            for k in lo..i {
                sum -= self.l[i * stride + (i - k)] * b[k];
            }
            b[i] = sum / self.l[i * stride];
        }
        for i in (0..self.dim).rev() {
            let hi = (i + self.width).min(self.dim - 1);
            let mut sum = b[i];
            for k in i + 1..=hi {
                sum -= self.l[k * stride + (k - i)] * b[k];
            }
            b[i] = sum / self.l[i * stride];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pchip_reproduces_nodes_and_monotone_data() {
        let xs = [0.0, 0.1, 0.4, 0.5, 1.0];
        let ys = [0.0, 0.2, 0.2, 0.7, 1.0];
        let p = Pchip::new(&xs, &ys);
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(p.eval(*x), *y);
        }
        let mut prev = p.eval(0.0);
        for i in 1..=1000 {
            let v = p.eval(i as f64 / 1000.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn pchip_is_accurate_on_smooth_data() {
        let xs: Vec<f64> = (0..=64).map(|k| k as f64 / 64.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let p = Pchip::new(&xs, &ys);
        for i in 0..200 {
            let x = 0.2 + 0.6 * i as f64 / 200.0;
            assert!((p.eval(x) - x * x).abs() < 1e-5);
        }
    }

    #[test]
    fn fd_weights_match_known_stencils() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 1);
        assert_eq!(w, vec![-0.5, 0.0, 0.5]);
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w, vec![1.0, -2.0, 1.0]);
        // exact for quartics on a nonuniform five-point stencil
        let nodes = [-0.3, -0.1, 0.0, 0.2, 0.5];
        let w = fd_weights(0.0, &nodes, 1);
        let d: f64 = w.iter().zip(&nodes).map(|(w, x)| w * (1.0 + 2.0 * x + x.powi(4))).sum();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lagrange_extrapolates_quadratics() {
        let xs = [1.0, 2.0, 3.0];
        let ys = xs.map(|x| 3.0 - x + 0.5 * x * x);
        assert!((lagrange_eval(&xs, &ys, 0.0) - 3.0).abs() < 1e-13);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(15)).sum();
        assert!((i - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn band_cholesky_solves_tridiagonal() {
        let dim = 6;
        let mut a = SymBand::zeros(dim, 2);
        for i in 0..dim {
            a.add(i, i, 4.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i > 1 {
                a.add(i, i - 2, 0.5);
            }
        }
        let x: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64).collect();
        let mut b: Vec<f64> = (0..dim)
            .map(|i| (0..dim).map(|j| a.get(i, j) * x[j]).sum())
            .collect();
        a.cholesky(0.0).unwrap().solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
        let mut neg = SymBand::zeros(2, 1);
        neg.add(0, 0, 1.0);
        neg.add(1, 1, -1.0);
        assert!(neg.cholesky(0.0).is_none());
        assert!(neg.cholesky(2.0).is_some());
    }
}
