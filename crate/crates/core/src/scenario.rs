//! The three operating scenarios: startup, grade change down, grade change up.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reactor::{ControlInputs, Reactor, ReactorState};

/// How the reactor is initialised at reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// Feed-only equilibrium: no initiator, coolant at `t_c`.
    NoInitiator { t_c: f64 },
    /// Equilibrium holding the given polymer concentration and temperature;
    /// the controls are solved for.
    OperatingPoint { c_p: f64, t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub initial: InitialCondition,
    /// Polymer concentration setpoint, kg/m3.
    pub setpoint_cp: f64,
    /// Temperature setpoint, K.
    pub setpoint_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Startup,
    GradeDown,
    GradeUp,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Startup, Scenario::GradeDown, Scenario::GradeUp];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Startup => "startup",
            Scenario::GradeDown => "grade_down",
            Scenario::GradeUp => "grade_up",
        }
    }

    pub fn config(self) -> ScenarioConfig {
        let (initial, setpoint_cp, setpoint_t) = match self {
            Scenario::Startup => (InitialCondition::NoInitiator { t_c: 350.0 }, 100.0, 350.0),
            Scenario::GradeDown => (InitialCondition::OperatingPoint { c_p: 100.0, t: 350.0 }, 90.0, 355.0),
            Scenario::GradeUp => (InitialCondition::OperatingPoint { c_p: 90.0, t: 355.0 }, 100.0, 350.0),
        };
        ScenarioConfig {
            name: self.name().to_string(),
            initial,
            setpoint_cp,
            setpoint_t,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "startup" => Ok(Scenario::Startup),
            "grade_down" => Ok(Scenario::GradeDown),
            "grade_up" => Ok(Scenario::GradeUp),
            _ => Err(Error::UnknownScenario(s.to_string())),
        }
    }
}

impl From<Scenario> for ScenarioConfig {
    fn from(s: Scenario) -> Self {
        s.config()
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.setpoint_cp, self.setpoint_t].iter().all(|v| v.is_finite());
        if !finite || self.setpoint_cp < 0.0 || self.setpoint_t <= 0.0 {
            return Err(Error::Config(format!("scenario `{}` has invalid setpoints", self.name)));
        }
        Ok(())
    }

    /// Equilibrium state and controls at reset.
    pub fn initial_condition(&self, reactor: &Reactor) -> Result<(ReactorState, ControlInputs)> {
        self.validate()?;
        match self.initial {
            InitialCondition::NoInitiator { t_c } => {
                let u = ControlInputs::new(0.0, t_c);
                let guess = reactor.no_reaction_equilibrium(t_c);
                Ok((reactor.solve_steady_state(u, &guess)?, u))
            }
            InitialCondition::OperatingPoint { c_p, t } => reactor.solve_operating_point(c_p, t),
        }
    }
}
