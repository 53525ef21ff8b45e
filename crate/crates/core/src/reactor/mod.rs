//! Free-radical polymerisation CSTR.
//!
//! Five states are tracked: monomer, initiator, lumped radical and polymer
//! concentrations (kg/m3) and reactor temperature (K). Kinetic constants are
//! molar, so each species concentration is converted with a uniform molar
//! mass before rates are evaluated; `molar_mass = 1.0` gives the plain
//! mass-concentration form of the balances.
//!
//! All time derivatives are per hour. Per-second constants (pre-exponential
//! factors and `UA`) are converted once in [`Reactor::new`].

mod solver;

pub use solver::{IntegratorOptions, StepStats};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) type Vec5 = SVector<f64, 5>;
pub(crate) type Mat5 = SMatrix<f64, 5, 5>;

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Reactor, kinetic and feed parameters. Field names in config files follow
/// the usual table symbols (`R`, `rho`, `UA`, `A_init`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactorParams {
    /// Gas constant, J/mol/K.
    #[serde(rename = "R")]
    pub gas_constant: f64,
    /// Density, kg/m3.
    pub rho: f64,
    /// Heat capacity, J/kg/K.
    pub cp: f64,
    /// Lumped jacket heat transfer, J/s/K.
    #[serde(rename = "UA")]
    pub ua: f64,
    /// Heat of reaction, J/mol (negative for exothermic).
    #[serde(rename = "dH_rxn")]
    pub dh_rxn: f64,
    /// Reactor volume, m3.
    #[serde(rename = "V")]
    pub volume: f64,
    /// Solvent feed, kg/h.
    #[serde(rename = "F_S")]
    pub solvent_feed: f64,
    /// Monomer feed, kg/h.
    #[serde(rename = "F_M")]
    pub monomer_feed: f64,
    /// Feed temperature, K.
    #[serde(rename = "T_f")]
    pub feed_temperature: f64,
    #[serde(rename = "A_init")]
    pub a_init: f64,
    #[serde(rename = "E_init")]
    pub e_init: f64,
    #[serde(rename = "A_prop")]
    pub a_prop: f64,
    #[serde(rename = "E_prop")]
    pub e_prop: f64,
    #[serde(rename = "A_term")]
    pub a_term: f64,
    #[serde(rename = "E_term")]
    pub e_term: f64,
    /// Uniform species molar mass used to convert kg/m3 to mol/m3, kg/mol.
    #[serde(default = "default_molar_mass")]
    pub molar_mass: f64,
}

fn default_molar_mass() -> f64 {
    0.1
}

impl Default for ReactorParams {
    fn default() -> Self {
        Self {
            gas_constant: 8.314,
            rho: 1000.0,
            cp: 2000.0,
            ua: 500.0,
            dh_rxn: -100_000.0,
            volume: 1.0,
            solvent_feed: 80.0,
            monomer_feed: 100.0,
            feed_temperature: 350.0,
            a_init: 1e9,
            e_init: 125_000.0,
            a_prop: 4e4,
            e_prop: 25_000.0,
            a_term: 1e6,
            e_term: 15_000.0,
            molar_mass: default_molar_mass(),
        }
    }
}

impl ReactorParams {
    /// Same parameters with `molar_mass = 1`, i.e. kg/m3 read as mol/m3.
    pub fn unit_molar_mass() -> Self {
        Self {
            molar_mass: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("R", self.gas_constant),
            ("rho", self.rho),
            ("cp", self.cp),
            ("UA", self.ua),
            ("V", self.volume),
            ("A_init", self.a_init),
            ("E_init", self.e_init),
            ("A_prop", self.a_prop),
            ("E_prop", self.e_prop),
            ("A_term", self.a_term),
            ("E_term", self.e_term),
            ("molar_mass", self.molar_mass),
            ("T_f", self.feed_temperature),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.solvent_feed < 0.0 || self.monomer_feed < 0.0 || !self.dh_rxn.is_finite() {
            return Err(Error::Config("feeds must be >= 0 and dH_rxn finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactorState {
    pub c_m: f64,
    pub c_i: f64,
    pub c_r: f64,
    pub c_p: f64,
    pub t: f64,
}

impl ReactorState {
    /// Concentrations this far below zero are tolerated inside the solver.
    pub const NEG_TOL: f64 = 1e-9;

    pub fn to_array(self) -> [f64; 5] {
        [self.c_m, self.c_i, self.c_r, self.c_p, self.t]
    }

    pub fn from_array(x: [f64; 5]) -> Self {
        Self {
            c_m: x[0],
            c_i: x[1],
            c_r: x[2],
            c_p: x[3],
            t: x[4],
        }
    }

    pub(crate) fn to_vec(self) -> Vec5 {
        Vec5::from(self.to_array())
    }

    pub(crate) fn from_vec(v: &Vec5) -> Self {
        Self::from_array([v[0], v[1], v[2], v[3], v[4]])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Zero out concentrations that went (slightly) negative.
    pub fn clamped(self) -> Self {
        Self {
            c_m: self.c_m.max(0.0),
            c_i: self.c_i.max(0.0),
            c_r: self.c_r.max(0.0),
            c_p: self.c_p.max(0.0),
            t: self.t,
        }
    }
}

/// Physical actuator values: initiator feed (kg/h) and coolant temperature (K).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInputs {
    pub f_i: f64,
    pub t_c: f64,
}

impl ControlInputs {
    pub fn new(f_i: f64, t_c: f64) -> Self {
        Self { f_i, t_c }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.f_i, self.t_c]
    }
}

/// Box bounds for the two actuators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorBounds {
    pub f_i_min: f64,
    pub f_i_max: f64,
    pub t_c_min: f64,
    pub t_c_max: f64,
}

impl Default for ActuatorBounds {
    fn default() -> Self {
        Self {
            f_i_min: 0.0,
            f_i_max: 2.5,
            t_c_min: 300.0,
            t_c_max: 350.0,
        }
    }
}

impl ActuatorBounds {
    pub fn clip(&self, u: ControlInputs) -> ControlInputs {
        ControlInputs {
            f_i: u.f_i.clamp(self.f_i_min, self.f_i_max),
            t_c: u.t_c.clamp(self.t_c_min, self.t_c_max),
        }
    }

    pub fn contains(&self, u: ControlInputs) -> bool {
        (self.f_i_min..=self.f_i_max).contains(&u.f_i) && (self.t_c_min..=self.t_c_max).contains(&u.t_c)
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.f_i_min, self.t_c_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.f_i_max, self.t_c_max]
    }
}

/// Molar reaction rates in mol/m3/h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionRates {
    pub initiation: f64,
    pub propagation: f64,
    pub termination: f64,
}

/// `A * exp(-E / (R T))`.
pub fn arrhenius(a: f64, e: f64, t: f64, gas_constant: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Precondition(format!("temperature must be > 0, got {t}")));
    }
    let k = a * (-e / (gas_constant * t)).exp();
    if !k.is_finite() || (k == 0.0 && a != 0.0) {
        return Err(Error::Domain(format!("Arrhenius rate not representable at T = {t} K")));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy)]
struct Arrhenius {
    a: f64,
    e_over_r: f64,
}

impl Arrhenius {
    #[inline]
    fn k(&self, t: f64) -> f64 {
        self.a * (-self.e_over_r / t).exp()
    }
}

/// Validated parameters plus the hourly constants derived from them.
#[derive(Debug, Clone)]
pub struct Reactor {
    params: ReactorParams,
    init: Arrhenius,
    prop: Arrhenius,
    term: Arrhenius,
    /// UA / (rho cp V), 1/h.
    jacket: f64,
    /// -dH / (rho cp), K m3/mol.
    heat_gain: f64,
    options: IntegratorOptions,
}

impl Reactor {
    pub fn new(params: ReactorParams) -> Result<Self> {
        params.validate()?;
        let per_hour = |a: f64, e: f64| Arrhenius {
            a: a * SECONDS_PER_HOUR,
            e_over_r: e / params.gas_constant,
        };
        Ok(Self {
            init: per_hour(params.a_init, params.e_init),
            prop: per_hour(params.a_prop, params.e_prop),
            term: per_hour(params.a_term, params.e_term),
            jacket: params.ua * SECONDS_PER_HOUR / (params.rho * params.cp * params.volume),
            heat_gain: -params.dh_rxn / (params.rho * params.cp),
            params,
            options: IntegratorOptions::default(),
        })
    }

    pub fn with_options(mut self, options: IntegratorOptions) -> Self {
        self.options = options;
        self
    }

    pub fn params(&self) -> &ReactorParams {
        &self.params
    }

    pub fn options(&self) -> &IntegratorOptions {
        &self.options
    }

    /// Total volumetric throughput over volume, 1/h.
    pub fn dilution_rate(&self, u: ControlInputs) -> f64 {
        self.total_feed(u) / self.params.rho / self.params.volume
    }

    fn total_feed(&self, u: ControlInputs) -> f64 {
        self.params.solvent_feed + self.params.monomer_feed + u.f_i
    }

    /// Inlet (monomer, initiator) concentrations in kg/m3. Radicals and
    /// polymer are absent from the feed.
    pub fn inlet_concentrations(&self, u: ControlInputs) -> (f64, f64) {
        let q = self.total_feed(u) / self.params.rho;
        (self.params.monomer_feed / q, u.f_i / q)
    }

    pub fn rate_constants(&self, t: f64) -> (f64, f64, f64) {
        (self.init.k(t), self.prop.k(t), self.term.k(t))
    }

    pub fn reaction_rates(&self, x: &ReactorState) -> ReactionRates {
        let (ki, kp, kt) = self.rate_constants(x.t);
        let m = self.params.molar_mass;
        let (n_m, n_i, n_r) = (x.c_m / m, x.c_i / m, x.c_r / m);
        ReactionRates {
            initiation: ki * n_i,
            propagation: kp * n_m * n_r,
            termination: kt * n_r * n_r,
        }
    }

    /// Time derivative of the state (per hour) under zero-order-hold controls.
    pub fn rhs(&self, x: &ReactorState, u: ControlInputs) -> ReactorState {
        let d = self.dilution_rate(u);
        let (cm_in, ci_in) = self.inlet_concentrations(u);
        let r = self.reaction_rates(x);
        let m = self.params.molar_mass;
        ReactorState {
            c_m: d * (cm_in - x.c_m) - m * r.propagation,
            c_i: d * (ci_in - x.c_i) - m * r.initiation,
            c_r: -d * x.c_r + m * (2.0 * r.initiation - 2.0 * r.termination),
            c_p: -d * x.c_p + m * r.propagation,
            t: d * (self.params.feed_temperature - x.t) - self.jacket * (x.t - u.t_c)
                + self.heat_gain * r.propagation,
        }
    }

    pub(crate) fn rhs_vec(&self, x: &Vec5, u: ControlInputs) -> Vec5 {
        self.rhs(&ReactorState::from_vec(x), u).to_vec()
    }

    /// Analytic Jacobian of [`Reactor::rhs`] with respect to the state.
    pub(crate) fn jacobian(&self, x: &Vec5, u: ControlInputs) -> Mat5 {
        let t = x[4];
        let d = self.dilution_rate(u);
        let m = self.params.molar_mass;
        let (ki, kp, kt) = self.rate_constants(t);
        let (n_m, n_i, n_r) = (x[0] / m, x[1] / m, x[2] / m);
        // dk/dT = k E / (R T^2)
        let dki = ki * self.init.e_over_r / (t * t);
        let dkp = kp * self.prop.e_over_r / (t * t);
        let dkt = kt * self.term.e_over_r / (t * t);

        // partials of molar rates w.r.t. (c_m, c_i, c_r, t)
        let ri_ci = ki / m;
        let ri_t = dki * n_i;
        let rp_cm = kp * n_r / m;
        let rp_cr = kp * n_m / m;
        let rp_t = dkp * n_m * n_r;
        let rt_cr = 2.0 * kt * n_r / m;
        let rt_t = dkt * n_r * n_r;

        let mut j = Mat5::zeros();
        j[(0, 0)] = -d - m * rp_cm;
        j[(0, 2)] = -m * rp_cr;
        j[(0, 4)] = -m * rp_t;

        j[(1, 1)] = -d - m * ri_ci;
        j[(1, 4)] = -m * ri_t;

        j[(2, 1)] = 2.0 * m * ri_ci;
        j[(2, 2)] = -d - 2.0 * m * rt_cr;
        j[(2, 4)] = 2.0 * m * (ri_t - rt_t);

        j[(3, 0)] = m * rp_cm;
        j[(3, 2)] = m * rp_cr;
        j[(3, 3)] = -d;
        j[(3, 4)] = m * rp_t;

        j[(4, 0)] = self.heat_gain * rp_cm;
        j[(4, 2)] = self.heat_gain * rp_cr;
        j[(4, 4)] = -d - self.jacket + self.heat_gain * rp_t;
        j
    }

    /// Feed-only equilibrium: no initiator, hence no radicals or polymer.
    pub fn no_reaction_equilibrium(&self, t_c: f64) -> ReactorState {
        let u = ControlInputs::new(0.0, t_c);
        let d = self.dilution_rate(u);
        let (cm_in, _) = self.inlet_concentrations(u);
        ReactorState {
            c_m: cm_in,
            c_i: 0.0,
            c_r: 0.0,
            c_p: 0.0,
            t: (d * self.params.feed_temperature + self.jacket * t_c) / (d + self.jacket),
        }
    }
}
