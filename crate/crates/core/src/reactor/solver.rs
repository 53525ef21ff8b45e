//! Stiff integration and steady-state solves for [`Reactor`].
//!
//! The integrator is TR-BDF2 (trapezoidal stage followed by a BDF2 stage,
//! L-stable, second order) with Newton inner iterations on the analytic
//! Jacobian. Local error is estimated by step doubling.

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use super::{ControlInputs, Mat5, Reactor, ReactorState, Vec5};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rtol: f64,
    /// Absolute tolerance per state (c_m, c_i, c_r, c_p, t).
    pub atol: [f64; 5],
    pub min_substep: f64,
    pub max_substeps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-7,
            atol: [1e-6, 1e-8, 1e-14, 1e-6, 1e-6],
            min_substep: 1e-10,
            max_substeps: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Last accepted substep, a good starting guess for the next call.
    pub last_substep: f64,
}

const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
const NEWTON_MAX_ITER: usize = 12;

impl Reactor {
    /// Advance the state by `dt` hours with the controls held constant.
    /// Concentrations are clamped at zero afterwards.
    pub fn integrate_step(&self, state: &ReactorState, u: ControlInputs, dt: f64) -> Result<ReactorState> {
        self.integrate_step_with_hint(state, u, dt, dt / 8.0).map(|(x, _)| x)
    }

    /// Like [`Reactor::integrate_step`] but starts from a substep guess and
    /// reports solver statistics.
    pub fn integrate_step_with_hint(
        &self,
        state: &ReactorState,
        u: ControlInputs,
        dt: f64,
        substep_hint: f64,
    ) -> Result<(ReactorState, StepStats)> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Precondition(format!("dt must be > 0, got {dt}")));
        }
        if !state.is_finite() || !(state.t > 0.0) {
            return Err(Error::Precondition(format!("invalid state {state:?}")));
        }
        let opts = self.options;
        let mut x = state.to_vec();
        let mut elapsed = 0.0;
        let mut h = if substep_hint > 0.0 && substep_hint.is_finite() { substep_hint.min(dt) } else { dt / 8.0 };
        let mut stats = StepStats::default();

        while dt - elapsed > 1e-12 * dt {
            if stats.accepted + stats.rejected > opts.max_substeps {
                return Err(self.fault(&x, elapsed, h));
            }
            let remaining = dt - elapsed;
            let last = h >= remaining;
            let h_try = h.min(remaining);

            let attempt = self.trbdf2(&x, h_try, u).and_then(|big| {
                let mid = self.trbdf2(&x, 0.5 * h_try, u)?;
                let fine = self.trbdf2(&mid, 0.5 * h_try, u)?;
                Some((big, fine))
            });

            match attempt {
                Some((big, fine)) => {
                    // Richardson estimate of the local error in `fine` (order 2)
                    let err = self.error_norm(&(fine - big), &x, &fine) / 3.0;
                    if err <= 1.0 && fine.iter().all(|v| v.is_finite()) {
                        x = fine;
                        elapsed = if last { dt } else { elapsed + h_try };
                        stats.accepted += 1;
                        stats.last_substep = h_try;
                        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0) };
                        h = h_try * factor;
                    } else {
                        stats.rejected += 1;
                        let factor = if err.is_finite() { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.1, 0.5) } else { 0.25 };
                        h = h_try * factor;
                    }
                }
                None => {
                    stats.rejected += 1;
                    h = 0.25 * h_try;
                }
            }
            if h < opts.min_substep {
                return Err(self.fault(&x, elapsed, h));
            }
        }
        let out = ReactorState::from_vec(&x);
        if !out.is_finite() {
            return Err(self.fault(&x, elapsed, h));
        }
        Ok((out.clamped(), stats))
    }

    /// `n` equal TR-BDF2 substeps with no error control; used to check the
    /// convergence order of the scheme.
    pub fn integrate_fixed(&self, state: &ReactorState, u: ControlInputs, dt: f64, n: usize) -> Result<ReactorState> {
        if !(dt > 0.0) || n == 0 {
            return Err(Error::Precondition("dt must be > 0 and n >= 1".into()));
        }
        let h = dt / n as f64;
        let mut x = state.to_vec();
        for k in 0..n {
            x = self
                .trbdf2(&x, h, u)
                .ok_or_else(|| self.fault(&x, k as f64 * h, h))?;
        }
        Ok(ReactorState::from_vec(&x))
    }

    fn fault(&self, x: &Vec5, time: f64, substep: f64) -> Error {
        Error::SimulationFault {
            time,
            substep,
            state: ReactorState::from_vec(x),
        }
    }

    fn weights(&self, a: &Vec5, b: &Vec5) -> Vec5 {
        let o = &self.options;
        Vec5::from_fn(|i, _| o.atol[i] + o.rtol * a[i].abs().max(b[i].abs()))
    }

    fn error_norm(&self, e: &Vec5, a: &Vec5, b: &Vec5) -> f64 {
        let w = self.weights(a, b);
        e.iter().zip(w.iter()).map(|(ei, wi)| (ei / wi).abs()).fold(0.0, f64::max)
    }

    /// One TR-BDF2 step. `None` if a Newton solve fails.
    fn trbdf2(&self, x0: &Vec5, h: f64, u: ControlInputs) -> Option<Vec5> {
        let f0 = self.rhs_vec(x0, u);
        let c1 = 0.5 * GAMMA * h;
        let b1 = x0 + f0 * c1;
        let guess = x0 + f0 * (GAMMA * h);
        let xg = self.newton_implicit(c1, &b1, guess, u)?;

        let denom = GAMMA * (2.0 - GAMMA);
        let c2 = (1.0 - GAMMA) / (2.0 - GAMMA) * h;
        let b2 = xg / denom - x0 * ((1.0 - GAMMA).powi(2) / denom);
        // extrapolate the stage value for the initial guess
        let guess2 = xg + (xg - x0) * ((1.0 - GAMMA) / GAMMA);
        self.newton_implicit(c2, &b2, guess2, u)
    }

    /// Solve `y - c f(y) = b`.
    fn newton_implicit(&self, c: f64, b: &Vec5, guess: Vec5, u: ControlInputs) -> Option<Vec5> {
        let mut y = guess;
        if !y.iter().all(|v| v.is_finite()) || y[4] <= 0.0 {
            y = *b;
        }
        for _ in 0..NEWTON_MAX_ITER {
            if !(y[4] > 0.0) {
                return None;
            }
            let g = y - self.rhs_vec(&y, u) * c - b;
            let jac: Mat5 = Matrix5::identity() - self.jacobian(&y, u) * c;
            let delta: Vector5<f64> = jac.lu().solve(&(-g))?;
            y += delta;
            let w = self.weights(&y, b);
            let size = delta.iter().zip(w.iter()).map(|(d, wi)| (d / wi).abs()).fold(0.0, f64::max);
            if !size.is_finite() {
                return None;
            }
            if size < 1e-3 {
                return Some(y);
            }
        }
        None
    }

    /// Steady state for fixed controls, starting from `guess`.
    ///
    /// Damped Newton on `rhs = 0`; if that stalls the state is integrated for
    /// 1000 h and Newton is retried from there.
    pub fn solve_steady_state(&self, u: ControlInputs, guess: &ReactorState) -> Result<ReactorState> {
        if !guess.is_finite() {
            return Err(Error::Precondition("steady-state guess must be finite".into()));
        }
        match self.newton_steady(u, guess.to_vec()) {
            Ok(x) => Ok(x),
            Err(_) => {
                let relaxed = self.integrate_step(guess, u, 1000.0)?;
                self.newton_steady(u, relaxed.to_vec())
            }
        }
    }

    fn newton_steady(&self, u: ControlInputs, mut x: Vec5) -> Result<ReactorState> {
        let tol = 1e-8;
        let residual = |x: &Vec5| self.rhs_vec(x, u).amax();
        let mut res = residual(&x);
        // also require a negligible Newton correction: tiny species such as
        // radicals can satisfy the absolute residual while far from equilibrium
        let mut step_small = false;
        for _ in 0..200 {
            if res <= tol && step_small {
                break;
            }
            let f = self.rhs_vec(&x, u);
            let delta = self
                .jacobian(&x, u)
                .lu()
                .solve(&(-f))
                .ok_or(Error::SteadyState { residual: res })?;
            step_small = self.error_norm(&delta, &x, &x) < 1e-2;
            let mut lambda = 1.0;
            loop {
                let trial = x + delta * lambda;
                let feasible = trial[4] > 0.0 && trial.iter().take(4).all(|v| *v >= -ReactorState::NEG_TOL);
                if feasible {
                    let r = residual(&trial);
                    if r.is_finite() && (r < res || lambda < 1e-3) {
                        x = trial;
                        res = r;
                        break;
                    }
                }
                lambda *= 0.5;
                if lambda < 1e-8 {
                    return Err(Error::SteadyState { residual: res });
                }
            }
        }
        let out = ReactorState::from_vec(&x).clamped();
        let final_res = residual(&out.to_vec());
        if final_res <= tol {
            Ok(out)
        } else {
            Err(Error::SteadyState { residual: final_res })
        }
    }

    /// Controls and equilibrium state that hold the reactor at the given
    /// polymer concentration (kg/m3) and temperature (K).
    pub fn solve_operating_point(&self, c_p: f64, t: f64) -> Result<(ReactorState, ControlInputs)> {
        let m = self.params.molar_mass;
        // initial guess from quasi-steady radicals
        let u0 = ControlInputs::new(1.0, t - 10.0);
        let (cm_in, ci_in) = self.inlet_concentrations(u0);
        let (ki, _, kt) = self.rate_constants(t);
        let c_r0 = m * (ki * ci_in / m / kt).sqrt();
        let mut z = Vec5::from([(cm_in - c_p).max(1.0), ci_in, c_r0, u0.f_i, u0.t_c]);

        let unpack = |z: &Vec5| {
            (
                ReactorState { c_m: z[0], c_i: z[1], c_r: z[2], c_p, t },
                ControlInputs::new(z[3], z[4]),
            )
        };
        let eval = |z: &Vec5| {
            let (x, u) = unpack(z);
            self.rhs(&x, u).to_vec()
        };
        let mut f = eval(&z);
        for _ in 0..200 {
            if f.amax() <= 1e-9 {
                let (x, u) = unpack(&z);
                return Ok((x, u));
            }
            let (x, u) = unpack(&z);
            let js = self.jacobian(&x.to_vec(), u);
            let mut jac = Mat5::zeros();
            for r in 0..5 {
                for c in 0..3 {
                    jac[(r, c)] = js[(r, c)];
                }
            }
            let h = 1e-6 * z[3].abs().max(1e-3);
            let mut zp = z;
            let mut zm = z;
            zp[3] += h;
            zm[3] -= h;
            let col = (eval(&zp) - eval(&zm)) / (2.0 * h);
            jac.set_column(3, &col);
            jac[(4, 4)] = self.jacket;

            let delta = jac.lu().solve(&(-f)).ok_or(Error::SteadyState { residual: f.amax() })?;
            let mut lambda = 1.0;
            loop {
                let trial = z + delta * lambda;
                if trial.iter().take(3).all(|v| *v > 0.0) && trial[3] >= 0.0 {
                    let ft = eval(&trial);
                    if ft.amax() < f.amax() || lambda < 1e-3 {
                        z = trial;
                        f = ft;
                        break;
                    }
                }
                lambda *= 0.5;
                if lambda < 1e-10 {
                    return Err(Error::SteadyState { residual: f.amax() });
                }
            }
        }
        Err(Error::SteadyState { residual: f.amax() })
    }
}
