//! Dormand–Prince 5(4) with the standard fourth-order continuous extension.
//!
//! The integrator is driven one accepted step at a time so that callers can
//! post-process the state between steps (re-orthonormalising frames,
//! recentering charts, projecting onto an energy surface).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-10, atol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

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

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its dense-output polynomial.
#[derive(Debug, Clone)]
pub struct Step {
    pub t0: f64,
    pub t1: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    rcont: [Vec<f64>; 4],
}

impl Step {
    /// Interpolated state at t ∈ [t0, t1] (either orientation).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let h = self.t1 - self.t0;
        if h == 0.0 {
            return self.y0.clone();
        }
        let th = (t - self.t0) / h;
        let th1 = 1.0 - th;
        (0..self.y0.len())
            .map(|i| {
                self.y0[i]
                    + th * (self.rcont[0][i]
                        + th1 * (self.rcont[1][i] + th * (self.rcont[2][i] + th1 * self.rcont[3][i])))
            })
            .collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.t0 <= self.t1 { (self.t0, self.t1) } else { (self.t1, self.t0) };
        t >= lo && t <= hi
    }
}

pub type Rhs<'a> = dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a;

pub struct Integrator<'a> {
    rhs: &'a Rhs<'a>,
    t: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    h: f64,
    tol: Tolerances,
    /// Per-component absolute tolerance override.
    atol: Vec<f64>,
    pub stats: Stats,
    pub h_min: f64,
    pub h_max: f64,
}

impl<'a> Integrator<'a> {
    pub fn new(rhs: &'a Rhs<'a>, t0: f64, y0: Vec<f64>, tol: Tolerances) -> Self {
        let n = y0.len();
        let mut k1 = vec![0.0; n];
        rhs(t0, &y0, &mut k1);
        Integrator {
            rhs,
            t: t0,
            y: y0,
            k1,
            h: 0.0,
            tol,
            atol: vec![tol.atol; n],
            stats: Stats { evaluations: 1, ..Stats::default() },
            h_min: 1e-14,
            h_max: f64::INFINITY,
        }
    }

    pub fn set_component_atol(&mut self, idx: usize, atol: f64) {
        self.atol[idx] = atol;
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Replace the current state (after a projection or frame change). The
    /// step size is kept; the derivative is recomputed.
    pub fn set_state(&mut self, y: Vec<f64>) {
        self.y = y;
        (self.rhs)(self.t, &self.y, &mut self.k1);
        self.stats.evaluations += 1;
    }

    fn error_norm(&self, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
        let n = y0.len().max(1);
        let mut acc = 0.0;
        for i in 0..y0.len() {
            let sc = self.atol[i] + self.tol.rtol * y0[i].abs().max(y1[i].abs());
            acc += (err[i] / sc).powi(2);
        }
        (acc / n as f64).sqrt()
    }

    fn initial_step(&mut self, dir: f64) -> f64 {
        let n = self.y.len();
        let d0 = self.error_norm(&self.y, &self.y, &self.y);
        let d1 = self.error_norm(&self.y, &self.y, &self.k1);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let y1: Vec<f64> = (0..n).map(|i| self.y[i] + dir * h0 * self.k1[i]).collect();
        let mut f1 = vec![0.0; n];
        (self.rhs)(self.t + dir * h0, &y1, &mut f1);
        self.stats.evaluations += 1;
        let diff: Vec<f64> = (0..n).map(|i| f1[i] - self.k1[i]).collect();
        let d2 = self.error_norm(&self.y, &self.y, &diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.h_max)
    }

    /// Advance by one accepted step without passing `t_end`.
    pub fn step_towards(&mut self, t_end: f64) -> Result<Step> {
        let dir = if t_end >= self.t { 1.0 } else { -1.0 };
        let remaining = (t_end - self.t).abs();
        if remaining == 0.0 {
            return Err(Error::Integration("already at end of span".into()));
        }
        if self.h == 0.0 {
            self.h = self.initial_step(dir);
        }
        let n = self.y.len();
        let mut tmp = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut y1 = vec![0.0; n];
        loop {
            let mut h = self.h.min(self.h_max).min(remaining);
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < self.h_min * self.t.abs().max(1.0) && !last {
                return Err(Error::Integration(format!("step size underflow at t = {:.6e}", self.t)));
            }
            let hs = dir * h;
            let t = self.t;
            let y = &self.y;
            let k1 = &self.k1;
            for i in 0..n {
                tmp[i] = y[i] + hs * A21 * k1[i];
            }
            (self.rhs)(t + C2 * hs, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
            }
            (self.rhs)(t + C3 * hs, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            (self.rhs)(t + C4 * hs, &tmp, &mut k4);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            (self.rhs)(t + C5 * hs, &tmp, &mut k5);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            (self.rhs)(t + hs, &tmp, &mut k6);
            for i in 0..n {
                y1[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            (self.rhs)(t + hs, &y1, &mut k7);
            self.stats.evaluations += 6;

            let err: Vec<f64> = (0..n)
                .map(|i| hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
                .collect();
            let en = self.error_norm(y, &y1, &err);
            if !en.is_finite() || y1.iter().any(|v| !v.is_finite()) {
                self.stats.rejected += 1;
                self.h = h * 0.2;
                continue;
            }
            if en <= 1.0 {
                let ydiff: Vec<f64> = (0..n).map(|i| y1[i] - y[i]).collect();
                let bspl: Vec<f64> = (0..n).map(|i| hs * k1[i] - ydiff[i]).collect();
                let r3: Vec<f64> = (0..n).map(|i| ydiff[i] - hs * k7[i] - bspl[i]).collect();
                let r4: Vec<f64> = (0..n)
                    .map(|i| {
                        hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                    })
                    .collect();
                let t1 = if last { t_end } else { t + hs };
                let step = Step {
                    t0: t,
                    t1,
                    y0: y.clone(),
                    y1: y1.clone(),
                    rcont: [ydiff, bspl, r3, r4],
                };
                let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    self.h = h * fac;
                } else {
                    self.h = self.h.max(h * fac.min(1.0));
                }
                self.t = t1;
                self.y.copy_from_slice(&y1);
                self.k1.copy_from_slice(&k7);
                self.stats.accepted += 1;
                return Ok(step);
            }
            self.stats.rejected += 1;
            self.h = h * (0.9 * en.powf(-0.2)).clamp(0.1, 0.9);
        }
    }

    /// Integrate to `t_end`, handing every accepted step to `on_step`.
    pub fn run_to(&mut self, t_end: f64, mut on_step: impl FnMut(&Step)) -> Result<()> {
        while self.t != t_end {
            let step = self.step_towards(t_end)?;
            on_step(&step);
        }
        Ok(())
    }
}

/// Convenience: solve y' = f(t, y) from t0 to t1 and return y(t1).
pub fn solve(rhs: &Rhs<'_>, t0: f64, y0: Vec<f64>, t1: f64, tol: Tolerances) -> Result<Vec<f64>> {
    if t0 == t1 {
        return Ok(y0);
    }
    let mut integ = Integrator::new(rhs, t0, y0, tol);
    integ.run_to(t1, |_| {})?;
    Ok(integ.y().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let y = solve(&f, 0.0, vec![1.0], 5.0, Tolerances::default()).unwrap();
        assert!((y[0] - (-5.0_f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn oscillator_backwards_and_dense_output() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let mut integ = Integrator::new(&f, 0.0, vec![0.0, 1.0], Tolerances::default());
        let mut worst = 0.0_f64;
        integ
            .run_to(-7.0, |s| {
                let tm = 0.5 * (s.t0 + s.t1);
                let y = s.eval(tm);
                worst = worst.max((y[0] - tm.sin()).abs());
            })
            .unwrap();
        assert!((integ.y()[0] - (-7.0_f64).sin()).abs() < 1e-9);
        assert!(worst < 1e-8, "dense output error {worst}");
    }
}
