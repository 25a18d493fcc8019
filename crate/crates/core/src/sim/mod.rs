//! Closed-loop simulation: one controller decision per PWM period.
//!
//! At the start of every switching period the harness samples the plant,
//! builds the controller measurement from the active reference and
//! disturbance schedules, asks the controller for a duty, logs a
//! [`TraceRecord`] and integrates the plant over the period.

mod metrics;
mod pretrain;
mod scenario;
mod trace;

pub use metrics::{compute_metrics, last_change_index, Metrics, OSCILLATION_DWELL, SETTLING_BAND};
pub use pretrain::{
    collect_excitation, pretrain, pretrain_critic, train_online, warm_start_action, Excitation, PretrainError,
    PretrainReport, PretrainSettings, Transition,
};
pub use scenario::{ControllerTag, Schedule, ScenarioSpec, R_LOAD_RANGE, SCENARIO_NAMES, V_S_RANGE};
pub use trace::{write_metrics_row, write_trace, METRICS_HEADER, TRACE_HEADER};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baseline::PiController;
use crate::hdp::{ControllerInput, HdpConfig, HdpController, HdpError};
use crate::plant::{self, ConductionMode, PlantError, PlantParams, PlantState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("scenario `{0}` is invalid: {1}")]
    InvalidScenario(String, String),
    #[error("controller {got} does not match scenario tag {expected}")]
    ControllerMismatch { expected: ControllerTag, got: ControllerTag },
    #[error("run diverged at t = {t:.6} s: v_o = {v_o:.1} V exceeds twice the {v_set} V setpoint")]
    Diverged { t: f64, v_o: f64, v_set: f64 },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Controller(#[from] HdpError),
}

/// One row per control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Period start (s).
    pub t: f64,
    pub v_o: f64,
    pub i_l: f64,
    /// Duty applied over this period.
    pub duty: f64,
    /// Utility of the sampled state.
    pub u: f64,
    /// Critic estimate of the cost-to-go (NaN for the PI controller).
    pub j_est: f64,
    /// Conduction mode at the end of the previous period.
    pub mode: ConductionMode,
    pub v_set: f64,
    pub v_s: f64,
    pub r_load: f64,
}

/// A controller that can close the loop.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Controller {
    Pi(PiController),
    Hdp { ctrl: HdpController, learn: bool },
}

impl Controller {
    pub fn tag(&self) -> ControllerTag {
        match self {
            Controller::Pi(_) => ControllerTag::Pi,
            Controller::Hdp { learn: true, .. } => ControllerTag::Hdp,
            Controller::Hdp { learn: false, .. } => ControllerTag::HdpFrozen,
        }
    }

    fn prepare(&mut self, warm_duty: Option<f64>) {
        match self {
            Controller::Pi(pi) => {
                pi.reset();
                if let Some(d) = warm_duty {
                    pi.preload(d);
                }
            }
            Controller::Hdp { ctrl, .. } => ctrl.reset_episode(),
        }
    }

    fn duty(&mut self, m: &ControllerInput) -> Result<(f64, f64), SimError> {
        match self {
            Controller::Pi(pi) => Ok((pi.pi_step(m.e_v), f64::NAN)),
            Controller::Hdp { ctrl, learn } => {
                let d = ctrl.control_step(m, *learn)?;
                Ok((d, ctrl.last_cost_estimate()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub metrics: Metrics,
}

/// Plant constants plus the utility definition used to fill the trace's `u`
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct Harness {
    pub params: PlantParams,
    pub utility: HdpConfig,
}

impl Harness {
    pub fn new(params: PlantParams, utility: HdpConfig) -> Self {
        Self { params, utility }
    }

    /// Runs `spec` with `controller`, returning the full trace and the metrics
    /// of its final reference segment.
    pub fn run_scenario(
        &self,
        spec: &ScenarioSpec,
        controller: &mut Controller,
    ) -> Result<RunOutput, SimError> {
        if controller.tag() != spec.controller {
            return Err(SimError::ControllerMismatch {
                expected: spec.controller,
                got: controller.tag(),
            });
        }
        let trace = self.simulate(spec, controller)?;
        let v_set_final = trace.last().map_or(spec.v_set.final_value(), |r| r.v_set);
        let metrics = compute_metrics(&trace, v_set_final);
        Ok(RunOutput { trace, metrics })
    }

    /// Closed-loop trace of `spec` without the tag check or metrics.
    pub fn simulate(
        &self,
        spec: &ScenarioSpec,
        controller: &mut Controller,
    ) -> Result<Vec<TraceRecord>, SimError> {
        spec.validate()?;
        self.params.validate()?;
        let period = self.params.period();
        let steps = (spec.duration / period).round() as usize;

        controller.prepare(spec.warm_duty);
        let mut params = self.params;
        let mut state = spec.initial;
        let mut duty_prev = spec.warm_duty.unwrap_or(0.0);
        let mut trace = Vec::with_capacity(steps);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        for k in 0..steps {
            let t = k as f64 * period;
            let v_set = spec.v_set.at(t);
            params.v_s = spec.v_s.at(t);
            params.r_load = spec.r_load.at(t);
            let (_, i_set) = plant::steady_state_hint(v_set, params.v_s, params.r_load)?;
            let m = ControllerInput::new(state.v_o, state.i_l, v_set, i_set, duty_prev);
            let (mut duty, j_est) = controller.duty(&m)?;
            if spec.dither > 0.0 {
                duty = (duty + rng.random_range(-spec.dither..=spec.dither)).clamp(0.0, 1.0);
            }
            trace.push(TraceRecord {
                t,
                v_o: state.v_o,
                i_l: state.i_l,
                duty,
                u: self.utility.utility_of(&m),
                j_est,
                mode: state.mode,
                v_set,
                v_s: params.v_s,
                r_load: params.r_load,
            });
            state = plant::step(&state, duty, &params)?;
            if state.v_o > 2.0 * v_set {
                return Err(SimError::Diverged {
                    t: t + period,
                    v_o: state.v_o,
                    v_set,
                });
            }
            duty_prev = duty;
        }
        Ok(trace)
    }
}

/// Plant state at the averaged equilibrium for `v_o`, falling back to rest
/// when the point is unreachable.
pub fn equilibrium_state(v_o: f64, params: &PlantParams) -> (PlantState, Option<f64>) {
    match plant::averaged_operating_point(v_o, params) {
        Some(op) => (PlantState::new(op.i_l, op.v_o), Some(op.duty)),
        None => (PlantState::at_rest(), None),
    }
}
