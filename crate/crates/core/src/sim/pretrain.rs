//! Offline preparation of the HDP networks.
//!
//! 1. The PI regulator drives the converter through random piecewise-constant
//!    references, loads and input voltages; every control period becomes a
//!    logged transition.
//! 2. The critic is fitted to that log with the TD recursion.
//! 3. The action network is regressed onto the PI duties so the HDP loop starts
//!    from a stabilising policy.
//! 4. Optionally, HDP runs closed-loop training episodes with online critic and
//!    action updates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{equilibrium_state, Controller, ControllerTag, Harness, ScenarioSpec, Schedule, SimError, TraceRecord};
use crate::baseline::PiController;
use crate::hdp::{self, ControllerInput, HdpConfig, HdpController, HdpError, ACTION_INPUTS, CRITIC_INPUTS};
use crate::mlp::{Mlp, MlpError};
use crate::plant::{self, PlantParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PretrainError {
    #[error("critic residual did not decrease in epoch {epoch}: {before:.6e} -> {after:.6e}")]
    NotDecreasing { epoch: usize, before: f64, after: f64 },
    #[error("excitation log is empty")]
    EmptyLog,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Hdp(#[from] HdpError),
    #[error(transparent)]
    Network(#[from] MlpError),
}

/// Random-reference excitation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Excitation {
    pub seed: u64,
    /// Episodes, each starting at the averaged equilibrium of its first draw.
    pub episodes: usize,
    pub holds_per_episode: usize,
    /// Duration of each random hold (s).
    pub hold_time: f64,
    pub v_set_range: [f64; 2],
    pub r_load_range: [f64; 2],
    pub v_s_range: [f64; 2],
}

impl Default for Excitation {
    fn default() -> Self {
        Self {
            seed: 1,
            episodes: 4,
            holds_per_episode: 10,
            hold_time: 10e-3,
            v_set_range: [150.0, 220.0],
            r_load_range: [50.0, 200.0],
            v_s_range: [54.0, 66.0],
        }
    }
}

impl Excitation {
    /// Episode specs drawn from the seeded generator.
    pub fn episodes(&self, controller: ControllerTag, params: &PlantParams) -> Vec<ScenarioSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |[lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..hi) } else { lo };
        (0..self.episodes)
            .map(|e| {
                let mut v_set = Vec::new();
                let mut v_s = Vec::new();
                let mut r_load = Vec::new();
                for h in 0..self.holds_per_episode {
                    let t = h as f64 * self.hold_time;
                    v_set.push((t, draw(self.v_set_range)));
                    r_load.push((t, draw(self.r_load_range)));
                    v_s.push((t, draw(self.v_s_range)));
                }
                let first = PlantParams {
                    v_s: v_s[0].1,
                    r_load: r_load[0].1,
                    ..*params
                };
                let (initial, warm_duty) = equilibrium_state(v_set[0].1, &first);
                ScenarioSpec {
                    name: format!("excitation-{e}"),
                    duration: self.hold_time * self.holds_per_episode as f64,
                    v_set: Schedule::from_points(v_set),
                    v_s: Schedule::from_points(v_s),
                    r_load: Schedule::from_points(r_load),
                    initial,
                    warm_duty,
                    controller,
                    seed: self.seed.wrapping_add(e as u64),
                    dither: 0.0,
                }
            })
            .collect()
    }
}

/// One logged control period: critic inputs before and after, and the
/// utility of the state reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub prev: [f64; CRITIC_INPUTS],
    pub next: [f64; CRITIC_INPUTS],
    pub utility: f64,
}

impl Transition {
    pub fn state(&self) -> [f64; ACTION_INPUTS] {
        [self.prev[0], self.prev[1], self.prev[2], self.prev[3]]
    }

    /// Duty applied over the transition, in physical units.
    pub fn duty(&self, config: &HdpConfig) -> f64 {
        self.prev[CRITIC_INPUTS - 1] * config.norm_scales[CRITIC_INPUTS - 1]
    }
}

fn measurement(r: &TraceRecord) -> Result<ControllerInput, SimError> {
    let (_, i_set) = plant::steady_state_hint(r.v_set, r.v_s, r.r_load)?;
    Ok(ControllerInput::new(r.v_o, r.i_l, r.v_set, i_set, r.duty))
}

/// Converts a closed-loop trace into TD transitions.
///
/// Periods that straddle a reference or disturbance change are skipped: the
/// jump in the errors there is exogenous and no critic can predict it.
pub fn transitions(trace: &[TraceRecord], config: &HdpConfig) -> Result<Vec<Transition>, SimError> {
    let mut out = Vec::with_capacity(trace.len().saturating_sub(1));
    for w in trace.windows(2) {
        if w[0].v_set != w[1].v_set || w[0].v_s != w[1].v_s || w[0].r_load != w[1].r_load {
            continue;
        }
        let (a, b) = (measurement(&w[0])?, measurement(&w[1])?);
        out.push(Transition {
            prev: config.critic_input(&config.action_input(&a), w[0].duty),
            next: config.critic_input(&config.action_input(&b), w[1].duty),
            utility: config.utility_of(&b),
        });
    }
    Ok(out)
}

/// Runs the excitation protocol under `pi` and logs every transition.
pub fn collect_excitation(
    harness: &Harness,
    pi: &PiController,
    excitation: &Excitation,
) -> Result<Vec<Transition>, SimError> {
    let mut log = Vec::new();
    for spec in excitation.episodes(ControllerTag::Pi, &harness.params) {
        let mut controller = Controller::Pi(pi.clone());
        let trace = harness.simulate(&spec, &mut controller)?;
        log.extend(transitions(&trace, &harness.utility)?);
    }
    Ok(log)
}

/// Knobs of the offline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSettings {
    /// Critic learning rate for the first offline sweep.
    pub critic_lr: f64,
    /// Sweep `n` uses `critic_lr / (1 + (n − 1) / critic_lr_decay)`.
    pub critic_lr_decay: f64,
    /// Upper bound on critic sweeps over the log.
    pub max_epochs: usize,
    /// Stop once an epoch improves the mean squared residual by less than this
    /// relative amount.
    pub plateau_tol: f64,
    /// Behaviour-cloning epochs for the action network.
    pub warm_start_epochs: usize,
    pub warm_start_lr: f64,
    /// Closed-loop HDP training episodes after the offline stages.
    pub online_episodes: usize,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        Self {
            critic_lr: 0.01,
            critic_lr_decay: 10.0,
            max_epochs: 200,
            plateau_tol: 1e-4,
            warm_start_epochs: 5,
            warm_start_lr: 0.05,
            online_episodes: 0,
        }
    }
}

/// Mean squared TD residual of `critic` over `log`.
pub fn mean_squared_residual(critic: &Mlp, config: &HdpConfig, log: &[Transition]) -> Result<f64, HdpError> {
    let mut sum = 0.0;
    for tr in log {
        let e = hdp::td_error(critic.eval(&tr.prev)?[0], critic.eval(&tr.next)?[0], tr.utility, config.gamma);
        sum += e * e;
    }
    Ok(sum / log.len().max(1) as f64)
}

/// Sweeps `log` in shuffled order with semi-gradient TD updates until the
/// epoch residual plateaus or `max_epochs` is reached.
///
/// Returns the mean squared residual before training followed by one entry per
/// epoch. Fails if any of the first five epochs does not improve on the one
/// before.
pub fn pretrain_critic(
    critic: &mut Mlp,
    config: &HdpConfig,
    log: &[Transition],
    settings: &PretrainSettings,
    seed: u64,
) -> Result<Vec<f64>, PretrainError> {
    if log.is_empty() {
        return Err(PretrainError::EmptyLog);
    }
    let mut sweep = HdpConfig {
        inner_epochs_critic: 1,
        ..config.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..log.len()).collect();
    let mut history = vec![mean_squared_residual(critic, config, log)?];
    for epoch in 1..=settings.max_epochs {
        sweep.alpha_c = settings.critic_lr / (1.0 + (epoch - 1) as f64 / settings.critic_lr_decay);
        order.shuffle(&mut rng);
        for &i in &order {
            hdp::train_critic_on(critic, &sweep, &log[i].prev, &log[i].next, log[i].utility)?;
        }
        let before = history[history.len() - 1];
        let after = mean_squared_residual(critic, config, log)?;
        history.push(after);
        if epoch <= 5 && !(after < before) {
            return Err(PretrainError::NotDecreasing { epoch, before, after });
        }
        if epoch > 5 && (before - after) / before < settings.plateau_tol {
            break;
        }
    }
    Ok(history)
}

/// Regresses the action network onto the logged duties (squared error on the
/// sigmoid output). Returns the mean squared error after each epoch.
pub fn warm_start_action(
    action: &mut Mlp,
    config: &HdpConfig,
    log: &[Transition],
    settings: &PretrainSettings,
    seed: u64,
) -> Result<Vec<f64>, PretrainError> {
    if log.is_empty() {
        return Err(PretrainError::EmptyLog);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..log.len()).collect();
    let mut history = Vec::with_capacity(settings.warm_start_epochs);
    for _ in 0..settings.warm_start_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let target = config.output_from_duty(log[i].duty(config));
            let (a, cache) = action.forward(&log[i].state())?;
            let grads = action.grad_weights(&cache, &[a[0] - target])?;
            action.apply_update(&grads, settings.warm_start_lr)?;
        }
        let mut sum = 0.0;
        for tr in log {
            let e = action.eval(&tr.state())?[0] - config.output_from_duty(tr.duty(config));
            sum += e * e;
        }
        history.push(sum / log.len() as f64);
    }
    Ok(history)
}

/// Closed-loop HDP episodes on the excitation protocol with online learning.
/// Returns the integrated utility of each episode.
pub fn train_online(
    ctrl: &mut HdpController,
    harness: &Harness,
    excitation: &Excitation,
    episodes: usize,
) -> Result<Vec<f64>, PretrainError> {
    let specs = excitation.episodes(ControllerTag::Hdp, &harness.params);
    let mut costs = Vec::with_capacity(episodes);
    for spec in specs.iter().cycle().take(episodes) {
        let mut controller = Controller::Hdp { ctrl: ctrl.clone(), learn: true };
        let trace = harness.simulate(spec, &mut controller)?;
        if let Controller::Hdp { ctrl: trained, .. } = controller {
            *ctrl = trained;
        }
        costs.push(trace.iter().map(|r| r.u).sum::<f64>() * harness.params.period());
    }
    Ok(costs)
}

/// Outcome of the full offline pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub controller: HdpController,
    pub critic_history: Vec<f64>,
    pub warm_start_history: Vec<f64>,
    pub online_costs: Vec<f64>,
    pub log_len: usize,
}

/// Runs the offline stages in order: excitation, critic fit, action warm
/// start and the optional online episodes. Network initialisation is seeded
/// from `seed`.
pub fn pretrain(
    harness: &Harness,
    pi: &PiController,
    excitation: &Excitation,
    settings: &PretrainSettings,
    seed: u64,
) -> Result<PretrainReport, PretrainError> {
    let config = &harness.utility;
    config.validate()?;
    let log = collect_excitation(harness, pi, excitation)?;
    let mut ctrl = HdpController::new(config.clone(), seed)?;
    let critic_history = pretrain_critic(ctrl.critic_mut(), config, &log, settings, seed)?;
    let warm_start_history = warm_start_action(ctrl.action_mut(), config, &log, settings, seed.wrapping_add(1))?;
    let online_costs = if settings.online_episodes > 0 {
        train_online(&mut ctrl, harness, excitation, settings.online_episodes)?
    } else {
        Vec::new()
    };
    Ok(PretrainReport {
        controller: ctrl,
        critic_history,
        warm_start_history,
        online_costs,
        log_len: log.len(),
    })
}
