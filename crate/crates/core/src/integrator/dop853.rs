//! Dormand–Prince 8(5,3) embedded Runge–Kutta step with step-size control.

use crate::error::{Error, Result};

const STAGES: usize = 12;

const C: [f64; STAGES] = [0.0, 0.05260015195876773, 0.0789002279381516, 0.1183503419072274, 0.2816496580927726, 0.3333333333333333, 0.25, 0.3076923076923077, 0.6512820512820513, 0.6, 0.8571428571428571, 1.0];

#[rustfmt::skip]
const A: [[f64; STAGES]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.05260015195876773, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0197250569845379, 0.0591751709536137, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.02958758547680685, 0.0, 0.08876275643042054, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2413651341592667, 0.0, -0.8845494793282861, 0.924834003261792, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.037037037037037035, 0.0, 0.0, 0.17082860872947386, 0.12546768756682242, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.037109375, 0.0, 0.0, 0.17025221101954405, 0.06021653898045596, -0.017578125, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.03709200011850479, 0.0, 0.0, 0.17038392571223998, 0.10726203044637328, -0.015319437748624402, 0.008273789163814023, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.6241109587160757, 0.0, 0.0, -3.3608926294469414, -0.868219346841726, 27.59209969944671, 20.154067550477894, -43.48988418106996, 0.0, 0.0, 0.0, 0.0],
    [0.47766253643826434, 0.0, 0.0, -2.4881146199716677, -0.590290826836843, 21.230051448181193, 15.279233632882423, -33.28821096898486, -0.020331201708508627, 0.0, 0.0, 0.0],
    [-0.9371424300859873, 0.0, 0.0, 5.186372428844064, 1.0914373489967295, -8.149787010746927, -18.52006565999696, 22.739487099350505, 2.4936055526796523, -3.0467644718982196, 0.0, 0.0],
    [2.273310147516538, 0.0, 0.0, -10.53449546673725, -2.0008720582248625, -17.9589318631188, 27.94888452941996, -2.8589982771350235, -8.87285693353063, 12.360567175794303, 0.6433927460157636, 0.0],
];

const B: [f64; STAGES] = [0.054293734116568765, 0.0, 0.0, 0.0, 0.0, 4.450312892752409, 1.8915178993145003, -5.801203960010585, 0.3111643669578199, -0.1521609496625161, 0.20136540080403034, 0.04471061572777259];

const E3: [f64; STAGES + 1] = [-0.18980075407240762, 0.0, 0.0, 0.0, 0.0, 4.450312892752409, 1.8915178993145003, -5.801203960010585, -0.4226823213237919, -0.1521609496625161, 0.20136540080403034, 0.02265179219836082, 0.0];

const E5: [f64; STAGES + 1] = [0.01312004499419488, 0.0, 0.0, 0.0, 0.0, -1.2251564463762044, -0.4957589496572502, 1.6643771824549864, -0.35032884874997366, 0.3341791187130175, 0.08192320648511571, -0.022355307863886294, 0.0];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const MAX_REJECTIONS: usize = 200;

/// Right-hand side `f(t, y, dy)`. An error marks the point as invalid and
/// makes the step shrink.
pub trait Field {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

impl<F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>> Field for F {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self(t, y, dy)
    }
}

/// Adaptive integrator state for one trajectory segment.
#[derive(Debug, Clone)]
pub struct Driver {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub t: f64,
    pub y: Vec<f64>,
    /// `f(t, y)`.
    pub dy: Vec<f64>,
    /// Signed size of the next trial step.
    pub h: f64,
    k: Vec<Vec<f64>>,
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    dynew: Vec<f64>,
}

impl Driver {
    /// Starts at `(t, y)`, stepping towards `direction` (±1).
    pub fn new<F: Field>(f: &mut F, t: f64, y: Vec<f64>, direction: f64, rtol: f64, atol: f64, max_step: f64) -> Result<Self> {
        let dim = y.len();
        let mut dy = vec![0.0; dim];
        f.eval(t, &y, &mut dy)?;
        let mut d = Self {
            rtol,
            atol,
            max_step,
            t,
            y,
            dy,
            h: 0.0,
            k: vec![vec![0.0; dim]; STAGES + 1],
            ytmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
            dynew: vec![0.0; dim],
        };
        d.h = direction.signum() * d.initial_step(f, direction)?;
        Ok(d)
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.atol + a.abs().max(b.abs()) * self.rtol
    }

    fn rms(&self, v: &[f64], reference: &[f64]) -> f64 {
        let sum: f64 = v
            .iter()
            .zip(reference)
            .map(|(x, r)| {
                let s = x / self.scale(*r, *r);
                s * s
            })
            .sum();
        (sum / v.len().max(1) as f64).sqrt()
    }

    /// Hairer's starting-step heuristic.
    fn initial_step<F: Field>(&mut self, f: &mut F, direction: f64) -> Result<f64> {
        let d0 = self.rms(&self.y, &self.y);
        let d1 = self.rms(&self.dy, &self.y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.max_step);
        let s = direction.signum();
        for i in 0..self.y.len() {
            self.ytmp[i] = self.y[i] + s * h0 * self.dy[i];
        }
        let mut f1 = vec![0.0; self.y.len()];
        let d2 = match f.eval(self.t + s * h0, &self.ytmp, &mut f1) {
            Ok(()) => {
                let diff: Vec<f64> = f1.iter().zip(&self.dy).map(|(a, b)| a - b).collect();
                self.rms(&diff, &self.y) / h0
            }
            Err(_) => return Ok(h0 * 1e-3),
        };
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        Ok((100.0 * h0).min(h1).min(self.max_step))
    }

    /// One trial step of size `h`; fills `ynew`/`dynew` and returns the
    /// error norm (accept when ≤ 1).
    fn attempt<F: Field>(&mut self, f: &mut F, h: f64) -> Result<f64> {
        let dim = self.y.len();
        self.k[0].copy_from_slice(&self.dy);
        for s in 1..STAGES {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, a) in A[s][..s].iter().enumerate() {
                    if *a != 0.0 {
                        acc += a * self.k[j][i];
                    }
                }
                self.ytmp[i] = self.y[i] + h * acc;
            }
            let (_, rest) = self.k.split_at_mut(s);
            f.eval(self.t + C[s] * h, &self.ytmp, &mut rest[0])?;
        }
        for i in 0..dim {
            let mut acc = 0.0;
            for (j, b) in B.iter().enumerate() {
                if *b != 0.0 {
                    acc += b * self.k[j][i];
                }
            }
            self.ynew[i] = self.y[i] + h * acc;
        }
        if self.ynew.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure {
                time: self.t,
                reason: "non-finite state".into(),
            });
        }
        f.eval(self.t + h, &self.ynew, &mut self.dynew)?;
        self.k[STAGES].copy_from_slice(&self.dynew);
        let mut e5 = 0.0;
        let mut e3 = 0.0;
        for i in 0..dim {
            let sc = self.scale(self.y[i], self.ynew[i]);
            let mut a5 = 0.0;
            let mut a3 = 0.0;
            for j in 0..=STAGES {
                a5 += E5[j] * self.k[j][i];
                a3 += E3[j] * self.k[j][i];
            }
            e5 += (a5 / sc).powi(2);
            e3 += (a3 / sc).powi(2);
        }
        if e5 == 0.0 && e3 == 0.0 {
            return Ok(0.0);
        }
        let denom = e5 + 0.01 * e3;
        Ok(h.abs() * e5 / (denom * dim as f64).sqrt())
    }

    /// Takes one accepted step that does not pass `t_limit`. Trial states
    /// rejected by `valid` count as failed steps.
    pub fn step<F: Field, V: Fn(&[f64]) -> bool>(&mut self, f: &mut F, t_limit: f64, valid: V) -> Result<()> {
        let direction = (t_limit - self.t).signum();
        if direction == 0.0 {
            return Ok(());
        }
        let mut h = direction * self.h.abs().min(self.max_step);
        let mut rejections = 0;
        loop {
            let remaining = t_limit - self.t;
            let clipped = h.abs() >= remaining.abs();
            if clipped {
                h = remaining;
            }
            let outcome = self.attempt(f, h);
            let err = match outcome {
                Ok(e) if valid(&self.ynew) => Some(e),
                _ => None,
            };
            match err {
                Some(e) if e <= 1.0 => {
                    let factor = if e == 0.0 {
                        MAX_FACTOR
                    } else {
                        (SAFETY * e.powf(-1.0 / 8.0)).clamp(MIN_FACTOR, MAX_FACTOR)
                    };
                    let factor = if rejections > 0 { factor.min(1.0) } else { factor };
                    self.t = if clipped { t_limit } else { self.t + h };
                    std::mem::swap(&mut self.y, &mut self.ynew);
                    std::mem::swap(&mut self.dy, &mut self.dynew);
                    if !clipped || factor < 1.0 {
                        self.h = h * factor;
                    }
                    return Ok(());
                }
                Some(e) => {
                    h *= (SAFETY * e.powf(-1.0 / 8.0)).clamp(MIN_FACTOR, 1.0);
                }
                None => h *= 0.25,
            }
            rejections += 1;
            if rejections > MAX_REJECTIONS || h.abs() <= 1e-15 * self.t.abs().max(1e-300) {
                return Err(Error::StepFailure {
                    time: self.t,
                    reason: format!("step size underflow after {rejections} rejections"),
                });
            }
        }
    }

    /// State at `target` reached with controlled steps from a copy of the
    /// current point; `self` is left untouched.
    pub fn solve_to<F: Field>(&self, f: &mut F, target: f64) -> Result<Vec<f64>> {
        let mut d = self.clone();
        while d.t != target {
            d.step(f, target, |_| true)?;
        }
        Ok(d.y)
    }

    /// State after a single uncontrolled step of size `h` from the current
    /// point. Meant for root refinement inside an accepted step.
    pub fn probe<F: Field>(&mut self, f: &mut F, h: f64) -> Result<Vec<f64>> {
        if h == 0.0 {
            return Ok(self.y.clone());
        }
        self.attempt(f, h)?;
        Ok(self.ynew.clone())
    }
}
