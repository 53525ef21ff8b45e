//! Episodic control environment around the [`Reactor`].
//!
//! Observations are nine values: noisy `C_M`, `C_P`, `T`; the two tracking
//! errors (setpoint minus measurement); their change since the previous
//! step; and the current absolute actuator values. Actions are normalized
//! deltas in `[-1, 1]^2`.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reactor::{ActuatorBounds, ControlInputs, Reactor, ReactorParams, ReactorState};
use crate::scenario::ScenarioConfig;

pub const OBS_DIM: usize = 9;
pub const ACT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseStd {
    pub c_m: f64,
    pub c_p: f64,
    pub t: f64,
}

impl Default for NoiseStd {
    fn default() -> Self {
        Self { c_m: 1.0, c_p: 0.5, t: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaLimits {
    /// Largest initiator feed change per step, kg/h.
    pub f_i: f64,
    /// Largest coolant temperature change per step, K.
    pub t_c: f64,
}

impl Default for DeltaLimits {
    fn default() -> Self {
        Self { f_i: 0.25, t_c: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Control interval, h.
    pub dt: f64,
    pub horizon: usize,
    pub noise_std: NoiseStd,
    pub delta_max: DeltaLimits,
    pub bounds: ActuatorBounds,
    pub tau_cp: f64,
    pub tau_t: f64,
    /// Runaway fires when `e_T < -runaway_error`.
    pub runaway_error: f64,
    pub runaway_penalty: f64,
    pub bonus_scale: f64,
    pub reactor: ReactorParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            horizon: 200,
            noise_std: NoiseStd::default(),
            delta_max: DeltaLimits::default(),
            bounds: ActuatorBounds::default(),
            tau_cp: 2.0,
            tau_t: 1.0,
            runaway_error: 50.0,
            runaway_penalty: 1000.0,
            bonus_scale: 10.0,
            reactor: ReactorParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.reactor.validate()?;
        let positive = [
            ("dt", self.dt),
            ("tau_cp", self.tau_cp),
            ("tau_t", self.tau_t),
            ("runaway_error", self.runaway_error),
            ("delta_max.f_i", self.delta_max.f_i),
            ("delta_max.t_c", self.delta_max.t_c),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let n = self.noise_std;
        if n.c_m < 0.0 || n.c_p < 0.0 || n.t < 0.0 {
            return Err(Error::Config("noise std must be >= 0".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        let b = self.bounds;
        if !(b.f_i_min < b.f_i_max && b.t_c_min < b.t_c_max) {
            return Err(Error::Config("actuator bounds must satisfy min < max".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, recorded in dataset metadata.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("EnvConfig serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Normalized action to physical delta.
    pub fn action_to_delta(&self, a: Action) -> [f64; 2] {
        let a = a.clipped();
        [a.d_f_i * self.delta_max.f_i, a.d_t_c * self.delta_max.t_c]
    }

    /// Physical delta to normalized action (not clipped).
    pub fn delta_to_action(&self, delta: [f64; 2]) -> Action {
        Action::new(delta[0] / self.delta_max.f_i, delta[1] / self.delta_max.t_c)
    }

    /// Apply a normalized action to the current actuators.
    pub fn apply_action(&self, current: ControlInputs, a: Action) -> ControlInputs {
        let d = self.action_to_delta(a);
        self.bounds.clip(ControlInputs::new(current.f_i + d[0], current.t_c + d[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub c_m: f64,
    pub c_p: f64,
    pub t: f64,
    pub e_cp: f64,
    pub e_t: f64,
    pub de_cp: f64,
    pub de_t: f64,
    pub f_i: f64,
    pub t_c: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [self.c_m, self.c_p, self.t, self.e_cp, self.e_t, self.de_cp, self.de_t, self.f_i, self.t_c]
    }

    pub fn from_array(v: [f64; OBS_DIM]) -> Self {
        Self {
            c_m: v[0],
            c_p: v[1],
            t: v[2],
            e_cp: v[3],
            e_t: v[4],
            de_cp: v[5],
            de_t: v[6],
            f_i: v[7],
            t_c: v[8],
        }
    }
}

/// Normalized delta action; each component maps `[-1, 1]` onto
/// `[-delta_max, delta_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub d_f_i: f64,
    pub d_t_c: f64,
}

impl Action {
    pub const ZERO: Action = Action { d_f_i: 0.0, d_t_c: 0.0 };

    pub fn new(d_f_i: f64, d_t_c: f64) -> Self {
        Self { d_f_i, d_t_c }
    }

    pub fn from_array(a: [f64; ACT_DIM]) -> Self {
        Self::new(a[0], a[1])
    }

    pub fn to_array(self) -> [f64; ACT_DIM] {
        [self.d_f_i, self.d_t_c]
    }

    /// NaN maps to 0.
    pub fn clipped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Self::new(c(self.d_f_i), c(self.d_t_c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub state: ReactorState,
    pub controls: ControlInputs,
    pub runaway: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// `|e_CP| + |e_T|`.
pub fn compute_cost(e_cp: f64, e_t: f64) -> f64 {
    e_cp.abs() + e_t.abs()
}

/// Tracking reward: error reduction plus a proximity bonus, replaced by the
/// runaway penalty when `e_T < -runaway_error`. Returns `(reward, runaway)`.
pub fn compute_reward(prev: (f64, f64), cur: (f64, f64), cfg: &EnvConfig) -> (f64, bool) {
    let (e_cp, e_t) = cur;
    if e_t < -cfg.runaway_error {
        return (-cfg.runaway_penalty, true);
    }
    let improvement = compute_cost(prev.0, prev.1) - compute_cost(e_cp, e_t);
    (improvement + proximity_bonus(e_cp, e_t, cfg), false)
}

pub fn proximity_bonus(e_cp: f64, e_t: f64, cfg: &EnvConfig) -> f64 {
    let (rc, rt) = (e_cp.abs() / cfg.tau_cp, e_t.abs() / cfg.tau_t);
    if rc < 1.0 && rt < 1.0 {
        cfg.bonus_scale * (1.0 - rc.max(rt))
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct PolyCstrEnv {
    reactor: Reactor,
    config: EnvConfig,
    scenario: ScenarioConfig,
    initial: Option<(ReactorState, ControlInputs)>,
    state: ReactorState,
    controls: ControlInputs,
    rng: ChaCha8Rng,
    step_index: usize,
    prev_errors: (f64, f64),
    last_obs: Option<Observation>,
    done: bool,
    substep_hint: f64,
}

impl PolyCstrEnv {
    pub fn new(config: EnvConfig, scenario: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        scenario.validate()?;
        let reactor = Reactor::new(config.reactor)?;
        let placeholder = reactor.no_reaction_equilibrium(350.0);
        Ok(Self {
            reactor,
            scenario,
            initial: None,
            state: placeholder,
            controls: ControlInputs::new(0.0, 350.0),
            rng: ChaCha8Rng::seed_from_u64(0),
            step_index: 0,
            prev_errors: (0.0, 0.0),
            last_obs: None,
            done: true,
            substep_hint: config.dt / 8.0,
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn reactor(&self) -> &Reactor {
        &self.reactor
    }

    pub fn state(&self) -> ReactorState {
        self.state
    }

    pub fn controls(&self) -> ControlInputs {
        self.controls
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn last_observation(&self) -> Option<Observation> {
        self.last_obs
    }

    /// Reset to the scenario's initial equilibrium. The initial equilibrium is
    /// solved once and cached.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let (x0, u0) = match self.initial {
            Some(v) => v,
            None => {
                let v = self.scenario.initial_condition(&self.reactor)?;
                self.initial = Some(v);
                v
            }
        };
        self.state = x0;
        self.controls = self.config.bounds.clip(u0);
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.step_index = 0;
        self.done = false;
        self.substep_hint = self.config.dt / 8.0;
        let (c_m, c_p, t) = self.measure();
        let errors = (self.scenario.setpoint_cp - c_p, self.scenario.setpoint_t - t);
        self.prev_errors = errors;
        let obs = self.observation(c_m, c_p, t, errors, (0.0, 0.0));
        self.last_obs = Some(obs);
        Ok(obs)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        self.controls = self.config.apply_action(self.controls, action);
        let (next, stats) =
            self.reactor
                .integrate_step_with_hint(&self.state, self.controls, self.config.dt, self.substep_hint)?;
        self.state = next;
        if stats.last_substep > 0.0 {
            self.substep_hint = stats.last_substep;
        }
        self.step_index += 1;

        let (c_m, c_p, t) = self.measure();
        let errors = (self.scenario.setpoint_cp - c_p, self.scenario.setpoint_t - t);
        let delta = (errors.0 - self.prev_errors.0, errors.1 - self.prev_errors.1);
        let (reward, runaway) = compute_reward(self.prev_errors, errors, &self.config);
        let cost = compute_cost(errors.0, errors.1);
        self.prev_errors = errors;
        self.done = runaway || self.step_index >= self.config.horizon;

        let observation = self.observation(c_m, c_p, t, errors, delta);
        self.last_obs = Some(observation);
        Ok(StepOutcome {
            observation,
            reward,
            cost,
            done: self.done,
            info: StepInfo {
                state: self.state,
                controls: self.controls,
                runaway,
            },
        })
    }

    fn measure(&mut self) -> (f64, f64, f64) {
        let n = self.config.noise_std;
        let mut noisy = |v: f64, std: f64| {
            if std > 0.0 {
                v + Normal::new(0.0, std).expect("std > 0").sample(&mut self.rng)
            } else {
                v
            }
        };
        let c_m = noisy(self.state.c_m, n.c_m);
        let c_p = noisy(self.state.c_p, n.c_p);
        let t = noisy(self.state.t, n.t);
        (c_m, c_p, t)
    }

    fn observation(&self, c_m: f64, c_p: f64, t: f64, e: (f64, f64), de: (f64, f64)) -> Observation {
        Observation {
            c_m,
            c_p,
            t,
            e_cp: e.0,
            e_t: e.1,
            de_cp: de.0,
            de_t: de.1,
            f_i: self.controls.f_i,
            t_c: self.controls.t_c,
        }
    }
}

/// One row of an exported episode trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub time_h: f64,
    pub state: ReactorState,
    pub obs: Observation,
    pub action: Action,
    pub controls: ControlInputs,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
}

pub const TRACE_HEADER: [&str; 23] = [
    "step", "time_h", "C_M", "C_I", "C_R", "C_P", "T", "obs_0", "obs_1", "obs_2", "obs_3", "obs_4", "obs_5", "obs_6",
    "obs_7", "obs_8", "act_0", "act_1", "F_I", "T_c", "reward", "cost", "done",
];

/// Write an episode trace as CSV.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        let mut rec: Vec<String> = vec![r.step.to_string(), r.time_h.to_string()];
        rec.extend(r.state.to_array().iter().map(|v| v.to_string()));
        rec.extend(r.obs.to_array().iter().map(|v| v.to_string()));
        rec.extend(r.action.to_array().iter().map(|v| v.to_string()));
        rec.extend(r.controls.to_array().iter().map(|v| v.to_string()));
        rec.push(r.reward.to_string());
        rec.push(r.cost.to_string());
        rec.push(u8::from(r.done).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

pub fn save_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(rows, std::io::BufWriter::new(f))
}
