//! Switched boost converter model.
//!
//! The converter is an inductor `L` (with series resistance `r_l`) fed from an
//! ideal source `v_s`, a controllable switch, a diode, and an output capacitor
//! `C` loaded by a resistor `R`. The state is the inductor current and the
//! capacitor voltage. Depending on the switch and the diode, one of three affine
//! vector fields is active:
//!
//! | mode                  | `di_l/dt`                         | `dv_o/dt`                  |
//! |-----------------------|-----------------------------------|----------------------------|
//! | switch on             | `(v_s - r_l i_l) / L`             | `-v_o / (R C)`             |
//! | switch off, conducting| `(v_s - r_l i_l - v_o) / L`       | `i_l / C - v_o / (R C)`    |
//! | switch off, blocked   | `0`                               | `-v_o / (R C)`             |
//!
//! One call to [`step`] advances a full PWM period with fixed-step RK4. The
//! switch is closed for the first `round(duty * n)` of the `n` sub-steps
//! (trailing-edge modulation), so the duty resolution is `dt * f_sw`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid plant parameter `{name}` = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("duty cycle {0} is outside [0, 1]")]
    InvalidDuty(f64),
    #[error("operating point rejected: {0}")]
    InvalidOperatingPoint(String),
}

/// Converter constants. Defaults are the nominal design point: 60 V in,
/// 200 V out at 500 W (80 Ω), 20 kHz switching, 860 µH / 860 µF.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Load resistance (Ω).
    pub r_load: f64,
    /// Inductance (H).
    pub l_ind: f64,
    /// Output capacitance (F).
    pub c_out: f64,
    /// Inductor series resistance (Ω).
    pub r_l: f64,
    /// Input voltage (V).
    pub v_s: f64,
    /// Switching frequency (Hz).
    pub f_sw: f64,
    /// Integration sub-step (s). Must divide the switching period.
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            r_load: 80.0,
            l_ind: 860e-6,
            c_out: 860e-6,
            r_l: 0.1,
            v_s: 60.0,
            f_sw: 20e3,
            dt: 0.5e-6,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("r_load", self.r_load),
            ("l_ind", self.l_ind),
            ("c_out", self.c_out),
            ("f_sw", self.f_sw),
            ("dt", self.dt),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(PlantError::InvalidParam {
                    name,
                    value,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        for (name, value) in [("r_l", self.r_l), ("v_s", self.v_s)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(PlantError::InvalidParam {
                    name,
                    value,
                    reason: "must be finite and non-negative",
                });
            }
        }
        let ratio = self.period() / self.dt;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(PlantError::InvalidParam {
                name: "dt",
                value: self.dt,
                reason: "must divide the switching period 1/f_sw into an integer number of sub-steps",
            });
        }
        Ok(())
    }

    /// Switching period `T_s = 1 / f_sw` (s).
    pub fn period(&self) -> f64 {
        1.0 / self.f_sw
    }

    /// Number of RK4 sub-steps per switching period.
    pub fn substeps(&self) -> usize {
        (self.period() / self.dt).round() as usize
    }

    /// Number of sub-steps the switch is closed for a given duty.
    pub fn on_substeps(&self, duty: f64) -> usize {
        let n = self.substeps();
        ((duty * n as f64).round() as usize).min(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConductionMode {
    SwitchOn,
    SwitchOffConducting,
    SwitchOffBlocked,
}

impl ConductionMode {
    pub fn tag(self) -> &'static str {
        match self {
            ConductionMode::SwitchOn => "on",
            ConductionMode::SwitchOffConducting => "off",
            ConductionMode::SwitchOffBlocked => "dcm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    /// Inductor current (A), never negative.
    pub i_l: f64,
    /// Output voltage (V).
    pub v_o: f64,
    /// Mode active over the last integrated sub-step.
    pub mode: ConductionMode,
}

impl PlantState {
    pub fn new(i_l: f64, v_o: f64) -> Self {
        let mode = if i_l > 0.0 {
            ConductionMode::SwitchOffConducting
        } else {
            ConductionMode::SwitchOffBlocked
        };
        Self { i_l, v_o, mode }
    }

    /// Discharged capacitor, no inductor current.
    pub fn at_rest() -> Self {
        Self::new(0.0, 0.0)
    }
}

/// Mode selected by the switch position and the diode.
///
/// With the switch open and no inductor current the diode only stays blocked
/// while it is reverse biased (`v_o >= v_s`); otherwise the source pushes current
/// through it and the conducting field applies.
pub fn active_mode(i_l: f64, v_o: f64, switch_on: bool, params: &PlantParams) -> ConductionMode {
    if switch_on {
        ConductionMode::SwitchOn
    } else if i_l > 0.0 || params.v_s > v_o {
        ConductionMode::SwitchOffConducting
    } else {
        ConductionMode::SwitchOffBlocked
    }
}

fn mode_rates(mode: ConductionMode, i_l: f64, v_o: f64, p: &PlantParams) -> (f64, f64) {
    let discharge = -v_o / (p.r_load * p.c_out);
    match mode {
        ConductionMode::SwitchOn => ((p.v_s - p.r_l * i_l) / p.l_ind, discharge),
        ConductionMode::SwitchOffConducting => {
            ((p.v_s - p.r_l * i_l - v_o) / p.l_ind, i_l / p.c_out + discharge)
        }
        ConductionMode::SwitchOffBlocked => (0.0, discharge),
    }
}

/// State derivative `(di_l/dt, dv_o/dt)` in A/s and V/s for the branch selected
/// by `switch_on` and the state.
pub fn derivatives(state: &PlantState, switch_on: bool, params: &PlantParams) -> (f64, f64) {
    let mode = active_mode(state.i_l, state.v_o, switch_on, params);
    mode_rates(mode, state.i_l, state.v_o, params)
}

fn rk4(mode: ConductionMode, i_l: f64, v_o: f64, h: f64, p: &PlantParams) -> (f64, f64) {
    let (k1i, k1v) = mode_rates(mode, i_l, v_o, p);
    let (k2i, k2v) = mode_rates(mode, i_l + 0.5 * h * k1i, v_o + 0.5 * h * k1v, p);
    let (k3i, k3v) = mode_rates(mode, i_l + 0.5 * h * k2i, v_o + 0.5 * h * k2v, p);
    let (k4i, k4v) = mode_rates(mode, i_l + h * k3i, v_o + h * k3v, p);
    (
        i_l + h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i),
        v_o + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    )
}

/// Sub-step averages over one switching period (trapezoidal rule).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PeriodStats {
    pub mean_i_l: f64,
    pub mean_v_o: f64,
    pub mean_v_o_sq: f64,
    pub min_v_o: f64,
    pub max_v_o: f64,
    pub min_i_l: f64,
    pub max_i_l: f64,
    /// Sub-steps spent with the diode blocked and no inductor current.
    pub blocked_substeps: usize,
}

/// Advances one PWM period at the given duty.
pub fn step(state: &PlantState, duty: f64, params: &PlantParams) -> Result<PlantState, PlantError> {
    step_with_stats(state, duty, params).map(|(next, _)| next)
}

/// Like [`step`], also returning sub-step statistics for the period.
pub fn step_with_stats(
    state: &PlantState,
    duty: f64,
    params: &PlantParams,
) -> Result<(PlantState, PeriodStats), PlantError> {
    if !(0.0..=1.0).contains(&duty) {
        return Err(PlantError::InvalidDuty(duty));
    }
    params.validate()?;

    let n = params.substeps();
    let n_on = params.on_substeps(duty);
    let h = params.dt;

    let (mut i_l, mut v_o) = (state.i_l, state.v_o);
    let mut mode = state.mode;
    let mut stats = PeriodStats {
        min_v_o: v_o,
        max_v_o: v_o,
        min_i_l: i_l,
        max_i_l: i_l,
        ..PeriodStats::default()
    };
    let (mut sum_i, mut sum_v, mut sum_v2) = (0.0, 0.0, 0.0);

    for k in 0..n {
        let (i0, v0) = (i_l, v_o);
        mode = active_mode(i_l, v_o, k < n_on, params);
        let (i1, v1) = rk4(mode, i_l, v_o, h, params);
        i_l = i1;
        v_o = v1;
        if mode == ConductionMode::SwitchOffConducting && i_l < 0.0 {
            // diode turns off inside this sub-step
            i_l = 0.0;
            mode = ConductionMode::SwitchOffBlocked;
        }
        if mode == ConductionMode::SwitchOffBlocked {
            stats.blocked_substeps += 1;
        }
        sum_i += 0.5 * (i0 + i_l);
        sum_v += 0.5 * (v0 + v_o);
        sum_v2 += 0.5 * (v0 * v0 + v_o * v_o);
        stats.min_v_o = stats.min_v_o.min(v_o);
        stats.max_v_o = stats.max_v_o.max(v_o);
        stats.min_i_l = stats.min_i_l.min(i_l);
        stats.max_i_l = stats.max_i_l.max(i_l);
    }

    let nf = n as f64;
    stats.mean_i_l = sum_i / nf;
    stats.mean_v_o = sum_v / nf;
    stats.mean_v_o_sq = sum_v2 / nf;
    Ok((PlantState { i_l, v_o, mode }, stats))
}

/// Lossless steady-state duty and average inductor current for a setpoint.
///
/// Returns `(duty, i_set)` with `duty = 1 - v_s / v_set` (volt-second balance)
/// and `i_set = v_set^2 / (r_load * v_s)` (power balance).
pub fn steady_state_hint(v_set: f64, v_s: f64, r_load: f64) -> Result<(f64, f64), PlantError> {
    if !(v_set.is_finite() && v_s.is_finite() && r_load.is_finite())
        || v_set <= 0.0
        || v_s <= 0.0
        || r_load <= 0.0
    {
        return Err(PlantError::InvalidOperatingPoint(format!(
            "v_set={v_set}, v_s={v_s}, r_load={r_load}: all must be finite and positive"
        )));
    }
    if v_s >= v_set {
        return Err(PlantError::InvalidOperatingPoint(format!(
            "a boost converter cannot regulate {v_set} V from a {v_s} V source"
        )));
    }
    Ok((1.0 - v_s / v_set, v_set * v_set / (r_load * v_s)))
}

/// Equilibrium of the averaged CCM model including `r_l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub duty: f64,
    pub i_l: f64,
    pub v_o: f64,
}

/// Solves the averaged CCM balance for the duty that holds `v_o` with the
/// configured load, source and inductor resistance:
/// `v_s - r_l i_l = (1 - d) v_o` and `(1 - d) i_l = v_o / R`.
///
/// Takes the high-efficiency root. `None` when `v_o` is out of reach.
pub fn averaged_operating_point(v_o: f64, params: &PlantParams) -> Option<OperatingPoint> {
    if !(v_o > params.v_s) {
        return None;
    }
    // v_o d'^2 - v_s d' + r_l v_o / R = 0
    let a = v_o;
    let b = -params.v_s;
    let c = params.r_l * v_o / params.r_load;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let d_off = (-b + disc.sqrt()) / (2.0 * a);
    if !(d_off > 0.0 && d_off <= 1.0) {
        return None;
    }
    Some(OperatingPoint {
        duty: 1.0 - d_off,
        i_l: v_o / (params.r_load * d_off),
        v_o,
    })
}
