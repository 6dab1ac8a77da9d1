//! Dormand–Prince 5(4) stepper with FSAL and fourth-order continuous output.

use crate::hamiltonian::HamiltonianSystem;

// the system is autonomous, so the nodes c_i never enter
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// difference between the 5th and 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its continuous extension. `t_end` may lie before
/// `t0 + h` when a termination event truncated the step.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t0: f64,
    pub h: f64,
    pub t_end: f64,
    dim: usize,
    rcont: Vec<f64>,
}

impl Segment {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// State at the start of the step.
    pub fn start(&self) -> &[f64] {
        &self.rcont[..self.dim]
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let d = self.dim;
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let r = &self.rcont;
        for i in 0..d {
            out[i] = r[i]
                + th * (r[d + i]
                    + th1 * (r[2 * d + i] + th * (r[3 * d + i] + th1 * r[4 * d + i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn end(&self) -> Vec<f64> {
        self.eval(self.t_end)
    }

    pub(crate) fn truncated(&self, t_end: f64) -> Segment {
        let mut s = self.clone();
        s.t_end = t_end;
        s
    }

    /// A fresh Runge–Kutta step from the segment start to `t`: fifth-order
    /// accurate where the interpolant is only fourth order.
    pub fn restep(&self, sys: &HamiltonianSystem, t: f64) -> Vec<f64> {
        let mut w = Work::new(self.dim);
        sys.rhs(self.start(), &mut w.k[0]);
        w.stages(sys, self.start(), t - self.t0);
        w.y1
    }
}

struct Work {
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    y1: Vec<f64>,
}

impl Work {
    fn new(d: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; d]),
            ytmp: vec![0.0; d],
            y1: vec![0.0; d],
        }
    }

    /// Stages 2..7 given `k[0] = f(y)`; leaves the fifth-order solution in
    /// `y1` and `f(y1)` in `k[6]`.
    fn stages(&mut self, sys: &HamiltonianSystem, y: &[f64], h: f64) {
        let d = y.len();
        let Work { k, ytmp, y1 } = self;
        for i in 0..d {
            ytmp[i] = y[i] + h * A21 * k[0][i];
        }
        sys.rhs(ytmp, &mut k[1]);
        for i in 0..d {
            ytmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        sys.rhs(ytmp, &mut k[2]);
        for i in 0..d {
            ytmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        sys.rhs(ytmp, &mut k[3]);
        for i in 0..d {
            ytmp[i] =
                y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        sys.rhs(ytmp, &mut k[4]);
        for i in 0..d {
            ytmp[i] = y[i]
                + h * (A61 * k[0][i]
                    + A62 * k[1][i]
                    + A63 * k[2][i]
                    + A64 * k[3][i]
                    + A65 * k[4][i]);
        }
        sys.rhs(ytmp, &mut k[5]);
        for i in 0..d {
            y1[i] = y[i]
                + h * (A71 * k[0][i]
                    + A73 * k[2][i]
                    + A74 * k[3][i]
                    + A75 * k[4][i]
                    + A76 * k[5][i]);
        }
        sys.rhs(y1, &mut k[6]);
    }
}

pub(crate) enum StepOutcome {
    Accepted(Segment),
    Underflow,
}

/// Adaptive integrator state for one trajectory.
pub(crate) struct Stepper<'a> {
    sys: &'a HamiltonianSystem,
    pub t: f64,
    pub y: Vec<f64>,
    h: f64,
    dir: f64,
    rtol: f64,
    atol: f64,
    ref_radius: f64,
    work: Work,
    pub accepted: u64,
    last_rejected: bool,
}

impl<'a> Stepper<'a> {
    pub fn new(
        sys: &'a HamiltonianSystem,
        y0: &[f64],
        t0: f64,
        dir: f64,
        rtol: f64,
        atol: f64,
    ) -> Self {
        let d = y0.len();
        let n = d / 2;
        let ref_radius = crate::hamiltonian::norm(&y0[..n]).max(f64::MIN_POSITIVE);
        let mut work = Work::new(d);
        sys.rhs(y0, &mut work.k[0]);
        let mut s = Self {
            sys,
            t: t0,
            y: y0.to_vec(),
            h: 0.0,
            dir,
            rtol,
            atol,
            ref_radius,
            work,
            accepted: 0,
            last_rejected: false,
        };
        s.h = dir * s.initial_step();
        s
    }

    /// Tolerance factor shrinking with the distance to the origin.
    fn tol_factor(&self, y: &[f64]) -> f64 {
        if !self.sys.potential().is_singular() {
            return 1.0;
        }
        let n = y.len() / 2;
        (crate::hamiltonian::norm(&y[..n]) / self.ref_radius).clamp(1e-3, 1.0)
    }

    fn weighted_rms(&self, v: &[f64], y: &[f64], fac: f64) -> f64 {
        let s: f64 = v
            .iter()
            .zip(y)
            .map(|(vi, yi)| {
                let sc = fac * (self.atol + self.rtol * yi.abs());
                (vi / sc).powi(2)
            })
            .sum();
        (s / v.len() as f64).sqrt()
    }

    fn initial_step(&mut self) -> f64 {
        let d = self.y.len();
        let fac = self.tol_factor(&self.y);
        let y = self.y.clone();
        let f0 = self.work.k[0].clone();
        let d0 = self.weighted_rms(&y, &y, fac);
        let d1 = self.weighted_rms(&f0, &y, fac);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let y1: Vec<f64> = (0..d).map(|i| y[i] + self.dir * h0 * f0[i]).collect();
        let mut f1 = vec![0.0; d];
        self.sys.rhs(&y1, &mut f1);
        let diff: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
        let d2 = self.weighted_rms(&diff, &y, fac) / h0;
        let m = d1.max(d2);
        let h1 = if m <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / m).powf(0.2)
        };
        (100.0 * h0).min(h1)
    }

    /// Advances by one accepted step, never past `t_end`.
    pub fn step(&mut self, t_end: f64) -> StepOutcome {
        let d = self.y.len();
        loop {
            let remaining = t_end - self.t;
            let mut h = self.h;
            if h.abs() >= remaining.abs() {
                h = remaining;
            }
            let min_h = 16.0 * f64::EPSILON * self.t.abs().max(1.0);
            if h.abs() < min_h {
                if remaining.abs() < min_h {
                    h = remaining;
                } else {
                    return StepOutcome::Underflow;
                }
            }
            let y0 = std::mem::take(&mut self.y);
            self.work.stages(self.sys, &y0, h);
            let fac = self.tol_factor(&y0);
            let k = &self.work.k;
            let y1 = &self.work.y1;
            let mut s = 0.0;
            for i in 0..d {
                let e = h
                    * (E1 * k[0][i]
                        + E3 * k[2][i]
                        + E4 * k[3][i]
                        + E5 * k[4][i]
                        + E6 * k[5][i]
                        + E7 * k[6][i]);
                let sc = fac * (self.atol + self.rtol * y0[i].abs().max(y1[i].abs()));
                s += (e / sc).powi(2);
            }
            let err = (s / d as f64).sqrt();
            if err.is_finite() && err <= 1.0 {
                let mut rcont = vec![0.0; 5 * d];
                for i in 0..d {
                    let dy = y1[i] - y0[i];
                    let bspl = h * k[0][i] - dy;
                    rcont[i] = y0[i];
                    rcont[d + i] = dy;
                    rcont[2 * d + i] = bspl;
                    rcont[3 * d + i] = dy - h * k[6][i] - bspl;
                    rcont[4 * d + i] = h
                        * (D1 * k[0][i]
                            + D3 * k[2][i]
                            + D4 * k[3][i]
                            + D5 * k[4][i]
                            + D6 * k[5][i]
                            + D7 * k[6][i]);
                }
                let seg = Segment {
                    t0: self.t,
                    h,
                    t_end: if h == remaining { t_end } else { self.t + h },
                    dim: d,
                    rcont,
                };
                self.t = seg.t_end;
                self.y = self.work.y1.clone();
                let (first, rest) = self.work.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                let mut grow = if err == 0.0 { 10.0 } else { 0.9 * err.powf(-0.2) };
                grow = grow.clamp(0.2, 10.0);
                if self.last_rejected {
                    grow = grow.min(1.0);
                }
                self.last_rejected = false;
                // a step clipped at t_end keeps the proposed size
                let clipped = h == remaining && h.abs() < self.h.abs();
                if !clipped {
                    self.h = h * grow;
                }
                self.accepted += 1;
                return StepOutcome::Accepted(seg);
            }
            self.y = y0;
            let shrink = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.2, 1.0)
            } else {
                0.2
            };
            self.h = h * shrink;
            self.last_rejected = true;
        }
    }
}
