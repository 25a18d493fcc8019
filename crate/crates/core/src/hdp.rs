//! Heuristic dynamic programming controller.
//!
//! A critic network estimates the discounted cost-to-go
//! `J(k) = U(k) + γ U(k+1) + γ² U(k+2) + …` from the normalized measurement
//! `[v_o, i_l, e_v, e_i, d]`, and an action network maps `[v_o, i_l, e_v, e_i]`
//! to the PWM duty.
//!
//! Training follows the temporal-difference recursion
//! `J(k) = U(k) + γ J(k+1)`:
//!
//! * the critic minimises `(J(k) − γ J(k+1) − U(k))²` by semi-gradient
//!   descent, treating `J(k+1)` as a fixed target;
//! * the action network descends the critic's estimate of the cost of its own
//!   output, `ΔW_a = −α_a · ∂J/∂d · ∂d/∂W_a`, with the critic frozen.
//!
//! Both updates run online, one control cycle behind the plant: the transition
//! `k−1 → k` is only complete once the measurement for cycle `k` arrives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::{Activation, Mlp, MlpError};

/// Width of the critic input `[v_o, i_l, e_v, e_i, d]`.
pub const CRITIC_INPUTS: usize = 5;
/// Width of the action input `[v_o, i_l, e_v, e_i]`.
pub const ACTION_INPUTS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HdpError {
    #[error("invalid HDP configuration: {0}")]
    Config(String),
    #[error("network has {got} inputs where {expected} are required")]
    Width { expected: usize, got: usize },
    #[error(transparent)]
    Network(#[from] MlpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdpConfig {
    /// Discount factor, strictly inside (0, 1).
    pub gamma: f64,
    /// Critic learning rate.
    pub alpha_c: f64,
    /// Action learning rate.
    pub alpha_a: f64,
    /// Weight of the squared voltage error in the utility.
    pub k_v: f64,
    /// Weight of the squared current error in the utility.
    pub k_i: f64,
    /// Divisors applied to `[v_o, i_l, e_v, e_i, d]` before they reach either
    /// network (V, A, V, A, 1). The utility is evaluated on the normalized
    /// errors.
    pub norm_scales: [f64; CRITIC_INPUTS],
    /// The action network's (0, 1) output is mapped affinely onto this range.
    pub duty_limits: [f64; 2],
    pub inner_epochs_critic: usize,
    pub inner_epochs_action: usize,
    /// Hidden layer widths of the critic.
    pub critic_hidden: Vec<usize>,
    /// Hidden layer widths of the action network.
    pub action_hidden: Vec<usize>,
}

impl Default for HdpConfig {
    /// Five-neuron hidden layers and unit voltage weight. `gamma = 0.98` and
    /// `k_i = 0.001` put the optimum of the discounted cost on a fast start-up
    /// and let the critic fit the excitation log well; see the README.
    fn default() -> Self {
        Self {
            gamma: 0.98,
            alpha_c: 0.01,
            alpha_a: 0.01,
            k_v: 1.0,
            k_i: 0.001,
            norm_scales: [200.0, 10.0, 200.0, 10.0, 1.0],
            duty_limits: [0.05, 0.95],
            inner_epochs_critic: 1,
            inner_epochs_action: 1,
            critic_hidden: vec![5, 5],
            action_hidden: vec![5, 5],
        }
    }
}

impl HdpConfig {
    pub fn validate(&self) -> Result<(), HdpError> {
        let fail = |msg: String| Err(HdpError::Config(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma = {} must lie strictly inside (0, 1)", self.gamma));
        }
        for (name, rate) in [("alpha_c", self.alpha_c), ("alpha_a", self.alpha_a)] {
            if !(rate.is_finite() && rate > 0.0) {
                return fail(format!("{name} = {rate} must be a positive learning rate"));
            }
        }
        if !(self.k_v.is_finite() && self.k_i.is_finite() && self.k_v >= 0.0 && self.k_i >= 0.0) {
            return fail("k_v and k_i must be finite and non-negative".into());
        }
        if self.k_v == 0.0 && self.k_i == 0.0 {
            return fail("k_v and k_i cannot both be zero".into());
        }
        if let Some(s) = self.norm_scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return fail(format!("normalization scale {s} must be positive"));
        }
        let [lo, hi] = self.duty_limits;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return fail(format!("duty limits [{lo}, {hi}] must satisfy 0 < d_min < d_max < 1"));
        }
        if self.inner_epochs_critic == 0 || self.inner_epochs_action == 0 {
            return fail("inner epoch counts must be at least 1".into());
        }
        if self.critic_hidden.contains(&0) || self.action_hidden.contains(&0) {
            return fail("hidden layers must have at least one neuron".into());
        }
        Ok(())
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![CRITIC_INPUTS];
        sizes.extend(&self.critic_hidden);
        sizes.push(1);
        sizes
    }

    pub fn action_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![ACTION_INPUTS];
        sizes.extend(&self.action_hidden);
        sizes.push(1);
        sizes
    }

    /// Duty for an action-network output in (0, 1).
    pub fn duty_from_output(&self, a: f64) -> f64 {
        let [lo, hi] = self.duty_limits;
        (lo + (hi - lo) * a).clamp(lo, hi)
    }

    /// Inverse of [`duty_from_output`](Self::duty_from_output), clamped into
    /// the open interval so it stays a valid sigmoid target.
    pub fn output_from_duty(&self, duty: f64) -> f64 {
        let [lo, hi] = self.duty_limits;
        ((duty - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6)
    }

    /// Normalized `[v_o, i_l, e_v, e_i]`.
    pub fn action_input(&self, m: &ControllerInput) -> [f64; ACTION_INPUTS] {
        let s = &self.norm_scales;
        [m.v_o / s[0], m.i_l / s[1], m.e_v / s[2], m.e_i / s[3]]
    }

    pub fn critic_input(&self, state: &[f64; ACTION_INPUTS], duty: f64) -> [f64; CRITIC_INPUTS] {
        [state[0], state[1], state[2], state[3], duty / self.norm_scales[4]]
    }

    /// Utility of a measurement, from its normalized errors.
    pub fn utility_of(&self, m: &ControllerInput) -> f64 {
        utility(
            m.e_v / self.norm_scales[2],
            m.e_i / self.norm_scales[3],
            self.k_v,
            self.k_i,
        )
    }
}

/// One control-cycle measurement as seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerInput {
    /// Output voltage (V).
    pub v_o: f64,
    /// Inductor current (A).
    pub i_l: f64,
    /// `v_set − v_o` (V).
    pub e_v: f64,
    /// `i_set − i_l` (A).
    pub e_i: f64,
    /// Duty actually applied over the previous PWM period.
    pub duty_prev: f64,
}

impl ControllerInput {
    pub fn new(v_o: f64, i_l: f64, v_set: f64, i_set: f64, duty_prev: f64) -> Self {
        Self {
            v_o,
            i_l,
            e_v: v_set - v_o,
            e_i: i_set - i_l,
            duty_prev,
        }
    }
}

/// Instantaneous cost `sqrt(k_v e_v² + k_i e_i²)`.
pub fn utility(e_v: f64, e_i: f64, k_v: f64, k_i: f64) -> f64 {
    (k_v * e_v * e_v + k_i * e_i * e_i).sqrt()
}

/// Bellman residual `J(k) − γ J(k+1) − U(k)`.
pub fn td_error(j_k: f64, j_k1: f64, u_k: f64, gamma: f64) -> f64 {
    j_k - gamma * j_k1 - u_k
}

/// Anything that can price a normalized critic input and report how the
/// price moves with the duty slot.
pub trait CostModel {
    /// Returns `(J, ∂J/∂d)` where `d` is the duty in physical units.
    fn cost_and_duty_slope(
        &self,
        input: &[f64; CRITIC_INPUTS],
        config: &HdpConfig,
    ) -> Result<(f64, f64), HdpError>;
}

impl CostModel for Mlp {
    fn cost_and_duty_slope(
        &self,
        input: &[f64; CRITIC_INPUTS],
        config: &HdpConfig,
    ) -> Result<(f64, f64), HdpError> {
        let (j, cache) = self.forward(input)?;
        let slope = self.grad_input(&cache, &[1.0])?;
        Ok((j[0], slope[CRITIC_INPUTS - 1] / config.norm_scales[CRITIC_INPUTS - 1]))
    }
}

/// Semi-gradient TD update of `critic` on one transition, repeated
/// `inner_epochs_critic` times. `J(k+1)` is evaluated once and held fixed.
/// Returns the residual after the last update.
pub fn train_critic_on(
    critic: &mut Mlp,
    config: &HdpConfig,
    prev: &[f64; CRITIC_INPUTS],
    next: &[f64; CRITIC_INPUTS],
    u_k: f64,
) -> Result<f64, HdpError> {
    let j_next = critic.eval(next)?[0];
    for _ in 0..config.inner_epochs_critic {
        let (j, cache) = critic.forward(prev)?;
        let e = td_error(j[0], j_next, u_k, config.gamma);
        let grads = critic.grad_weights(&cache, &[e])?;
        critic.apply_update(&grads, config.alpha_c)?;
    }
    let j = critic.eval(prev)?[0];
    Ok(td_error(j, j_next, u_k, config.gamma))
}

/// Moves `action` down the slope of `cost` at `state`, repeated
/// `inner_epochs_action` times. Returns the cost at the final duty.
pub fn train_action_on(
    action: &mut Mlp,
    cost: &impl CostModel,
    config: &HdpConfig,
    state: &[f64; ACTION_INPUTS],
) -> Result<f64, HdpError> {
    let span = config.duty_limits[1] - config.duty_limits[0];
    for _ in 0..config.inner_epochs_action {
        let (a, cache) = action.forward(state)?;
        let duty = config.duty_from_output(a[0]);
        let (_, slope) = cost.cost_and_duty_slope(&config.critic_input(state, duty), config)?;
        if slope == 0.0 {
            break;
        }
        let grads = action.grad_weights(&cache, &[slope * span])?;
        action.apply_update(&grads, config.alpha_a)?;
    }
    let duty = config.duty_from_output(action.eval(state)?[0]);
    Ok(cost.cost_and_duty_slope(&config.critic_input(state, duty), config)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HdpController {
    critic: Mlp,
    action: Mlp,
    config: HdpConfig,
    /// Normalized action input of the previous cycle.
    prev_state: Option<[f64; ACTION_INPUTS]>,
    last_cost: f64,
    last_residual: f64,
}

impl HdpController {
    /// Fresh networks; the action uses `seed + 1`.
    pub fn new(config: HdpConfig, seed: u64) -> Result<Self, HdpError> {
        config.validate()?;
        let critic = Mlp::init(&config.critic_sizes(), Activation::Linear, seed)?;
        let action = Mlp::init(&config.action_sizes(), Activation::Sigmoid, seed.wrapping_add(1))?;
        Self::from_networks(config, critic, action)
    }

    pub fn from_networks(config: HdpConfig, critic: Mlp, action: Mlp) -> Result<Self, HdpError> {
        config.validate()?;
        for (net, width) in [(&critic, CRITIC_INPUTS), (&action, ACTION_INPUTS)] {
            if net.input_len() != width || net.output_len() != 1 {
                return Err(HdpError::Width {
                    expected: width,
                    got: net.input_len(),
                });
            }
        }
        if action.output_activation() != Activation::Sigmoid {
            return Err(HdpError::Config("action network needs a sigmoid output".into()));
        }
        Ok(Self {
            critic,
            action,
            config,
            prev_state: None,
            last_cost: f64::NAN,
            last_residual: f64::NAN,
        })
    }

    pub fn config(&self) -> &HdpConfig {
        &self.config
    }

    /// Replaces the learning rates and inner epoch counts, keeping networks.
    pub fn set_config(&mut self, config: HdpConfig) -> Result<(), HdpError> {
        config.validate()?;
        if config.critic_sizes() != self.critic.layer_sizes()
            || config.action_sizes() != self.action.layer_sizes()
        {
            return Err(HdpError::Config("topology differs from the loaded networks".into()));
        }
        self.config = config;
        Ok(())
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn action(&self) -> &Mlp {
        &self.action
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn action_mut(&mut self) -> &mut Mlp {
        &mut self.action
    }

    pub fn into_networks(self) -> (Mlp, Mlp) {
        (self.critic, self.action)
    }

    /// Critic estimate for the most recently emitted duty.
    pub fn last_cost_estimate(&self) -> f64 {
        self.last_cost
    }

    /// Residual reported by the most recent critic update (NaN before one).
    pub fn last_residual(&self) -> f64 {
        self.last_residual
    }

    /// Forgets the buffered transition, e.g. between episodes.
    pub fn reset_episode(&mut self) {
        self.prev_state = None;
        self.last_cost = f64::NAN;
        self.last_residual = f64::NAN;
    }

    /// Duty the action network emits for a normalized state.
    pub fn policy_duty(&self, state: &[f64; ACTION_INPUTS]) -> Result<f64, HdpError> {
        Ok(self.config.duty_from_output(self.action.eval(state)?[0]))
    }

    /// TD update of the critic on `prev → next` with stage cost `u_k`.
    pub fn critic_update(
        &mut self,
        prev: &[f64; CRITIC_INPUTS],
        next: &[f64; CRITIC_INPUTS],
        u_k: f64,
    ) -> Result<f64, HdpError> {
        let residual = train_critic_on(&mut self.critic, &self.config, prev, next, u_k)?;
        self.last_residual = residual;
        Ok(residual)
    }

    /// Descends the frozen critic's cost of the policy's own duty at `state`.
    pub fn action_update(&mut self, state: &[f64; ACTION_INPUTS]) -> Result<f64, HdpError> {
        train_action_on(&mut self.action, &self.critic, &self.config, state)
    }

    /// One control cycle: learn from the transition that just completed (when
    /// `learn` is set), then emit the duty for the coming PWM period.
    pub fn control_step(&mut self, m: &ControllerInput, learn: bool) -> Result<f64, HdpError> {
        let state = self.config.action_input(m);
        if learn {
            if let Some(prev_state) = self.prev_state {
                let prev = self.config.critic_input(&prev_state, m.duty_prev);
                let next = self.config.critic_input(&state, self.policy_duty(&state)?);
                let u = self.config.utility_of(m);
                self.critic_update(&prev, &next, u)?;
                self.action_update(&state)?;
            }
        }
        let duty = self.policy_duty(&state)?;
        self.last_cost = self.critic.eval(&self.config.critic_input(&state, duty))?[0];
        self.prev_state = Some(state);
        Ok(duty)
    }
}
