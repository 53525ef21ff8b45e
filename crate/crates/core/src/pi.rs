//! Randomized PI behaviour policies.
//!
//! Two independent loops: polymer concentration drives the initiator feed
//! and reactor temperature drives the coolant temperature. The output is
//! written as increments around the actuator values at reset so a setpoint
//! change produces no proportional kick, and integration is conditional:
//! the integral is frozen while the actuator sits on a bound and the error
//! would push it further out.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, Observation};
use crate::reactor::ActuatorBounds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    /// Polymer loop, (kg/h) per (kg/m3).
    pub kp_cp: f64,
    /// Polymer loop, (kg/h) per (kg/m3 h).
    pub ki_cp: f64,
    /// Temperature loop, K/K.
    pub kp_t: f64,
    /// Temperature loop, 1/h.
    pub ki_t: f64,
}

impl PiGains {
    pub fn to_array(self) -> [f64; 4] {
        [self.kp_cp, self.ki_cp, self.kp_t, self.ki_t]
    }

    pub fn from_array(g: [f64; 4]) -> Self {
        Self {
            kp_cp: g[0],
            ki_cp: g[1],
            kp_t: g[2],
            ki_t: g[3],
        }
    }

    /// Each gain drawn independently and uniformly from `[g, spread * g]`.
    pub fn sample<R: Rng + ?Sized>(nominal: &PiGains, spread: f64, rng: &mut R) -> Self {
        let g = nominal.to_array().map(|g| rng.gen_range(g..=spread * g));
        Self::from_array(g)
    }

    fn loop_gains(&self, k: usize) -> (f64, f64) {
        match k {
            0 => (self.kp_cp, self.ki_cp),
            _ => (self.kp_t, self.ki_t),
        }
    }
}

/// Nominal gains and the sampling spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiSampling {
    pub nominal: PiGains,
    pub spread: f64,
}

impl Default for PiSampling {
    fn default() -> Self {
        Self {
            nominal: PiGains {
                kp_cp: 0.01,
                ki_cp: 0.001,
                kp_t: 0.2,
                ki_t: 0.02,
            },
            spread: 10.0,
        }
    }
}

/// Integrator state plus the reference values that make the output kick-free.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiMemory {
    pub integrals: [f64; 2],
    /// Errors at reset; the proportional term acts on `e - initial_errors`.
    pub initial_errors: [f64; 2],
    /// Actuator values at reset.
    pub base: [f64; 2],
}

/// One update of both loops. Returns the new (clipped) actuator targets and
/// the new integrals.
pub fn pi_step(
    gains: &PiGains,
    errors: [f64; 2],
    memory: &PiMemory,
    bounds: &ActuatorBounds,
    dt: f64,
) -> ([f64; 2], [f64; 2]) {
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let mut out = [0.0; 2];
    let mut integrals = memory.integrals;
    for k in 0..2 {
        let (kp, ki) = gains.loop_gains(k);
        let e = errors[k];
        let p_term = memory.base[k] + kp * (e - memory.initial_errors[k]);
        let candidate = memory.integrals[k] + e * dt;
        let unsat = p_term + ki * candidate;
        let winding_up = (unsat > hi[k] && e > 0.0) || (unsat < lo[k] && e < 0.0);
        if !winding_up {
            integrals[k] = candidate;
        }
        out[k] = (p_term + ki * integrals[k]).clamp(lo[k], hi[k]);
    }
    (out, integrals)
}

/// A PI behaviour policy acting through the normalized delta-action space.
#[derive(Debug, Clone)]
pub struct PiController {
    gains: PiGains,
    memory: PiMemory,
    bounds: ActuatorBounds,
    dt: f64,
}

impl PiController {
    pub fn new(gains: PiGains, env: &EnvConfig) -> Self {
        Self {
            gains,
            memory: PiMemory::default(),
            bounds: env.bounds,
            dt: env.dt,
        }
    }

    pub fn gains(&self) -> &PiGains {
        &self.gains
    }

    pub fn memory(&self) -> &PiMemory {
        &self.memory
    }

    pub fn reset(&mut self, obs: &Observation) {
        self.memory = PiMemory {
            integrals: [0.0; 2],
            initial_errors: [obs.e_cp, obs.e_t],
            base: [obs.f_i, obs.t_c],
        };
    }

    /// Actuator targets for this observation, expressed as a normalized
    /// delta action (clipped to `[-1, 1]`, i.e. rate-limited by the env).
    pub fn act(&mut self, obs: &Observation, env: &EnvConfig) -> Action {
        let (target, integrals) = pi_step(&self.gains, [obs.e_cp, obs.e_t], &self.memory, &self.bounds, self.dt);
        self.memory.integrals = integrals;
        env.delta_to_action([target[0] - obs.f_i, target[1] - obs.t_c]).clipped()
    }
}
