use std::fmt;
use std::str::FromStr;

use crate::plant::{PlantParams, PlantState};

use super::{equilibrium_state, SimError};

/// Names accepted by [`ScenarioSpec::named`].
pub const SCENARIO_NAMES: [&str; 3] = ["startup", "load_change", "input_change"];

/// Input voltage range the harness accepts (V).
pub const V_S_RANGE: [f64; 2] = [54.0, 66.0];
/// Load range the harness accepts (Ω).
pub const R_LOAD_RANGE: [f64; 2] = [50.0, 200.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerTag {
    Pi,
    Hdp,
    /// HDP with learning switched off.
    HdpFrozen,
}

impl ControllerTag {
    pub const ALL: [ControllerTag; 3] = [ControllerTag::Pi, ControllerTag::Hdp, ControllerTag::HdpFrozen];

    pub fn name(self) -> &'static str {
        match self {
            ControllerTag::Pi => "PI",
            ControllerTag::Hdp => "HDP",
            ControllerTag::HdpFrozen => "HDP-frozen",
        }
    }
}

impl fmt::Display for ControllerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "pi" => Ok(ControllerTag::Pi),
            "hdp" => Ok(ControllerTag::Hdp),
            "hdp-frozen" => Ok(ControllerTag::HdpFrozen),
            _ => Err(format!("unknown controller `{s}`; expected one of PI, HDP, HDP-frozen")),
        }
    }
}

/// Piecewise-constant signal: each `(t, value)` holds from `t` until the next
/// breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule(Vec<(f64, f64)>);

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self(vec![(0.0, value)])
    }

    /// `before` until `t_step`, `after` from then on.
    pub fn step(before: f64, t_step: f64, after: f64) -> Self {
        Self(vec![(0.0, before), (t_step, after)])
    }

    pub fn from_points(points: Vec<(f64, f64)>) -> Self {
        Self(points)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn at(&self, t: f64) -> f64 {
        // breakpoints sit on the control grid; the slack absorbs k * T_s rounding
        let idx = self.0.partition_point(|&(ts, _)| ts <= t + 1e-12);
        self.0[idx.saturating_sub(1)].1
    }

    pub fn final_value(&self) -> f64 {
        self.0.last().map_or(f64::NAN, |p| p.1)
    }

    fn check(&self, name: &str, range: Option<[f64; 2]>) -> Result<(), String> {
        if self.0.first().map(|p| p.0) != Some(0.0) {
            return Err(format!("{name} schedule must start at t = 0"));
        }
        if self.0.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(format!("{name} breakpoints must be strictly increasing"));
        }
        for &(_, v) in &self.0 {
            if !v.is_finite() {
                return Err(format!("{name} value {v} is not finite"));
            }
            if let Some([lo, hi]) = range {
                if !(lo..=hi).contains(&v) {
                    return Err(format!("{name} value {v} is outside [{lo}, {hi}]"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    /// Simulated time (s).
    pub duration: f64,
    /// Output voltage reference (V).
    pub v_set: Schedule,
    /// Input voltage (V).
    pub v_s: Schedule,
    /// Load resistance (Ω).
    pub r_load: Schedule,
    pub initial: PlantState,
    /// Duty assumed to have been applied before `t = 0`; controllers start
    /// bumplessly from it. `None` for a cold start.
    pub warm_duty: Option<f64>,
    pub controller: ControllerTag,
    /// Seeds the duty dither.
    pub seed: u64,
    /// Half-width of a uniform perturbation added to every applied duty;
    /// zero for evaluation runs.
    pub dither: f64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |msg: String| SimError::InvalidScenario(self.name.clone(), msg);
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(invalid(format!("duration {} must be positive", self.duration)));
        }
        self.v_set.check("v_set", None).map_err(invalid)?;
        self.v_s.check("v_s", Some(V_S_RANGE)).map_err(invalid)?;
        self.r_load.check("r_load", Some(R_LOAD_RANGE)).map_err(invalid)?;
        if !(self.dither.is_finite() && (0.0..0.5).contains(&self.dither)) {
            return Err(invalid(format!("dither {} must lie in [0, 0.5)", self.dither)));
        }
        if !(self.initial.i_l >= 0.0 && self.initial.v_o >= 0.0) {
            return Err(invalid("initial state must have i_l >= 0 and v_o >= 0".into()));
        }
        Ok(())
    }

    /// Start-up from a discharged converter at nominal load.
    pub fn startup(controller: ControllerTag, duration: f64) -> Self {
        Self {
            name: "startup".into(),
            duration,
            v_set: Schedule::constant(200.0),
            v_s: Schedule::constant(60.0),
            r_load: Schedule::constant(80.0),
            initial: PlantState::at_rest(),
            warm_duty: None,
            controller,
            seed: 0,
            dither: 0.0,
        }
    }

    /// Load step 80 Ω → 200 Ω at `t_step`, starting from the regulated
    /// nominal point.
    pub fn load_change(controller: ControllerTag, duration: f64, t_step: f64, params: &PlantParams) -> Self {
        let nominal = PlantParams { v_s: 60.0, r_load: 80.0, ..*params };
        let (initial, warm_duty) = equilibrium_state(200.0, &nominal);
        Self {
            name: "load_change".into(),
            duration,
            v_set: Schedule::constant(200.0),
            v_s: Schedule::constant(60.0),
            r_load: Schedule::step(80.0, t_step, 200.0),
            initial,
            warm_duty,
            controller,
            seed: 0,
            dither: 0.0,
        }
    }

    /// Input voltage drop 60 V → 54 V at `t_step`, starting from the regulated
    /// nominal point.
    pub fn input_change(controller: ControllerTag, duration: f64, t_step: f64, params: &PlantParams) -> Self {
        let nominal = PlantParams { v_s: 60.0, r_load: 80.0, ..*params };
        let (initial, warm_duty) = equilibrium_state(200.0, &nominal);
        Self {
            name: "input_change".into(),
            duration,
            v_set: Schedule::constant(200.0),
            v_s: Schedule::step(60.0, t_step, 54.0),
            r_load: Schedule::constant(80.0),
            initial,
            warm_duty,
            controller,
            seed: 0,
            dither: 0.0,
        }
    }

    /// One of [`SCENARIO_NAMES`].
    pub fn named(
        name: &str,
        controller: ControllerTag,
        duration: f64,
        t_step: f64,
        params: &PlantParams,
    ) -> Result<Self, String> {
        match name {
            "startup" => Ok(Self::startup(controller, duration)),
            "load_change" => Ok(Self::load_change(controller, duration, t_step, params)),
            "input_change" => Ok(Self::input_change(controller, duration, t_step, params)),
            _ => Err(format!(
                "unknown scenario `{name}`; expected one of {}",
                SCENARIO_NAMES.join(", ")
            )),
        }
    }
}
