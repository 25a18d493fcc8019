//! Voltage-mode PI regulator used as the comparison baseline and as the
//! data-generating controller for critic pretraining.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{averaged_operating_point, PlantParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PiError {
    #[error("invalid PI setting: {0}")]
    Config(String),
    #[error("no PI gains satisfy the requested margins")]
    Infeasible,
}

/// PI gains and limits as they appear in a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiGains {
    /// Proportional gain (duty/V).
    pub kp: f64,
    /// Integral gain (duty/(V·s)).
    pub ki: f64,
    pub duty_limits: [f64; 2],
    /// Feed-forward duty; `None` takes the lossless steady-state duty at the
    /// nominal operating point.
    pub duty_ff: Option<f64>,
}

impl Default for PiGains {
    /// Output of [`tune_pi`] on the nominal plant with [`TuningTarget::default`],
    /// rounded to three significant digits.
    fn default() -> Self {
        Self {
            kp: 4.50e-4,
            ki: 0.120,
            duty_limits: [0.05, 0.95],
            duty_ff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    /// Integrated voltage error (V·s).
    pub integ: f64,
    /// Control period (s).
    pub dt_ctrl: f64,
    pub duty_limits: [f64; 2],
    pub duty_ff: f64,
}

impl PiController {
    pub fn new(
        kp: f64,
        ki: f64,
        dt_ctrl: f64,
        duty_limits: [f64; 2],
        duty_ff: f64,
    ) -> Result<Self, PiError> {
        if !(dt_ctrl.is_finite() && dt_ctrl > 0.0) {
            return Err(PiError::Config(format!("control period {dt_ctrl} must be positive")));
        }
        if !(kp.is_finite() && ki.is_finite() && kp >= 0.0 && ki >= 0.0) {
            return Err(PiError::Config("gains must be finite and non-negative".into()));
        }
        let [lo, hi] = duty_limits;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(PiError::Config(format!("duty limits [{lo}, {hi}] are not an interval in [0, 1]")));
        }
        if !(lo..=hi).contains(&duty_ff) {
            return Err(PiError::Config(format!("feed-forward duty {duty_ff} is outside the limits")));
        }
        Ok(Self {
            kp,
            ki,
            integ: 0.0,
            dt_ctrl,
            duty_limits,
            duty_ff,
        })
    }

    /// Controller for the given gains at `params`' switching rate. The
    /// feed-forward defaults to `1 - v_s / v_set_nominal`.
    pub fn from_gains(gains: &PiGains, params: &PlantParams, v_set_nominal: f64) -> Result<Self, PiError> {
        let ff = gains
            .duty_ff
            .unwrap_or_else(|| (1.0 - params.v_s / v_set_nominal).clamp(gains.duty_limits[0], gains.duty_limits[1]));
        Self::new(gains.kp, gains.ki, params.period(), gains.duty_limits, ff)
    }

    fn raw_output(&self, e_v: f64) -> f64 {
        self.duty_ff + self.kp * e_v + self.ki * self.integ
    }

    /// Duty for the coming period. The integrator only advances while the
    /// output is inside its limits.
    pub fn pi_step(&mut self, e_v: f64) -> f64 {
        let [lo, hi] = self.duty_limits;
        let raw = self.raw_output(e_v);
        if raw > lo && raw < hi {
            self.integ += e_v * self.dt_ctrl;
        }
        raw.clamp(lo, hi)
    }

    pub fn reset(&mut self) {
        self.integ = 0.0;
    }

    /// Sets the integrator so that zero error yields `duty` (bumpless start at
    /// a known operating point).
    pub fn preload(&mut self, duty: f64) {
        if self.ki > 0.0 {
            self.integ = (duty - self.duty_ff) / self.ki;
        }
    }
}

/// Loop-shaping requirements for [`tune_pi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningTarget {
    /// Output voltage of the linearization point (V).
    pub v_o: f64,
    /// Minimum phase margin (degrees).
    pub phase_margin_deg: f64,
    /// Minimum gain margin (dB).
    pub gain_margin_db: f64,
    /// Upper bound of the crossover search (rad/s).
    pub max_crossover: f64,
    /// Loop delay in switching periods (sampling plus modulator).
    pub delay_periods: f64,
}

impl Default for TuningTarget {
    fn default() -> Self {
        Self {
            v_o: 200.0,
            phase_margin_deg: 50.0,
            gain_margin_db: 6.0,
            max_crossover: 2.0 * std::f64::consts::PI * 500.0,
            delay_periods: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiTuning {
    pub kp: f64,
    pub ki: f64,
    /// Gain crossover (rad/s).
    pub crossover: f64,
    /// PI zero `ki / kp` (rad/s).
    pub zero: f64,
    pub phase_margin_deg: f64,
    pub gain_margin_db: f64,
}

/// Control-to-output response `v̂_o / d̂` of the averaged CCM model linearized
/// at (`duty`, `i_l`, `v_o`), including inductor resistance and a pure loop
/// delay (s), evaluated at `w` rad/s.
pub fn duty_to_voltage_response(params: &PlantParams, duty: f64, i_l: f64, v_o: f64, delay: f64, w: f64) -> Complex64 {
    let (l, c, r, rl) = (params.l_ind, params.c_out, params.r_load, params.r_l);
    let d_off = 1.0 - duty;
    let a11 = -rl / l;
    let a12 = -d_off / l;
    let a21 = d_off / c;
    let a22 = -1.0 / (r * c);
    let b1 = v_o / l;
    let b2 = -i_l / c;
    let s = Complex64::new(0.0, w);
    let det = (s - a11) * (s - a22) - a12 * a21;
    let g = (a21 * b1 + (s - a11) * b2) / det;
    g * Complex64::from_polar(1.0, -w * delay)
}

/// Picks the PI with the largest integral gain whose loop on the linearized
/// averaged model meets the phase and gain margins and crosses unity gain
/// exactly once.
///
/// Candidates are parameterised by crossover `wc` and zero ratio `wc / wz`,
/// both on logarithmic grids; `kp` puts the loop gain at one at `wc` and
/// `ki = kp * wz`.
pub fn tune_pi(params: &PlantParams, target: &TuningTarget) -> Result<PiTuning, PiError> {
    params.validate().map_err(|e| PiError::Config(e.to_string()))?;
    let op = averaged_operating_point(target.v_o, params)
        .ok_or_else(|| PiError::Config(format!("{} V is unreachable", target.v_o)))?;
    let delay = target.delay_periods * params.period();
    let plant = |w: f64| duty_to_voltage_response(params, op.duty, op.i_l, op.v_o, delay, w);

    let nyquist = std::f64::consts::PI * params.f_sw;
    let grid: Vec<f64> = (0..=4000)
        .map(|k| 1e-1 * (nyquist / 1e-1).powf(k as f64 / 4000.0))
        .collect();

    let mut best: Option<PiTuning> = None;
    for k in 0..=200 {
        let wc = 1.0 * (target.max_crossover / 1.0).powf(k as f64 / 200.0);
        for j in 0..=40 {
            let ratio = 1.2 * (20.0f64 / 1.2).powf(j as f64 / 40.0);
            let wz = wc / ratio;
            let shape = |w: f64| Complex64::new(1.0, -wz / w);
            let kp = 1.0 / (plant(wc) * shape(wc)).norm();
            let ki = kp * wz;
            if best.is_some_and(|b| b.ki >= ki) {
                continue;
            }
            let open_loop = |w: f64| plant(w) * shape(w) * kp;
            if let Some((pm, gm)) = margins(&grid, wc, open_loop) {
                if pm >= target.phase_margin_deg && gm >= target.gain_margin_db {
                    best = Some(PiTuning {
                        kp,
                        ki,
                        crossover: wc,
                        zero: wz,
                        phase_margin_deg: pm,
                        gain_margin_db: gm,
                    });
                }
            }
        }
    }
    best.ok_or(PiError::Infeasible)
}

/// Phase margin (deg) and gain margin (dB) of `open_loop`, or `None` when the
/// loop gain returns above one beyond `wc`.
fn margins(grid: &[f64], wc: f64, open_loop: impl Fn(f64) -> Complex64) -> Option<(f64, f64)> {
    let mut phase = 0.0;
    let mut prev_arg: Option<f64> = None;
    let mut gm = f64::INFINITY;
    let mut prev_phase = f64::NAN;
    let mut prev_mag = f64::NAN;
    for &w in grid {
        let l = open_loop(w);
        let arg = l.arg();
        phase = match prev_arg {
            None => arg,
            Some(p) => {
                let mut d = arg - p;
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                while d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                phase + d
            }
        };
        prev_arg = Some(arg);
        let mag = l.norm();
        if w > wc * 1.001 && mag >= 1.0 {
            return None;
        }
        // every crossing of -180° (mod 360°) bounds the gain margin
        if prev_phase.is_finite() {
            let turns_prev = ((prev_phase + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)).floor();
            let turns = ((phase + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)).floor();
            if turns != turns_prev {
                gm = gm.min(-20.0 * prev_mag.max(mag).log10());
            }
        }
        prev_phase = phase;
        prev_mag = mag;
    }
    let l = open_loop(wc);
    let pm = 180.0 + l.arg().to_degrees();
    let pm = if pm > 180.0 { pm - 360.0 } else { pm };
    Some((pm, gm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pi(kp: f64, ki: f64) -> PiController {
        PiController::new(kp, ki, 50e-6, [0.05, 0.95], 0.7).unwrap()
    }

    #[test]
    fn zero_error_emits_feed_forward() {
        let mut c = pi(0.01, 10.0);
        assert_eq!(c.pi_step(0.0), 0.7);
        let mut c = pi(0.0, 0.0);
        for e in [-100.0, 0.0, 55.0] {
            assert_eq!(c.pi_step(e), 0.7);
        }
    }

    #[test]
    fn ramp_until_saturation_then_freeze() {
        let (kp, ki, e) = (1e-3, 20.0, 5.0);
        let mut c = pi(kp, ki);
        let mut last = 0.0;
        let mut n = 0usize;
        loop {
            let d = c.pi_step(e);
            if d >= 0.95 {
                break;
            }
            let expected = 0.7 + kp * e + ki * e * n as f64 * 50e-6;
            assert!((d - expected).abs() < 1e-12);
            assert!(d > last);
            last = d;
            n += 1;
        }
        let frozen = c.integ;
        for _ in 0..100 {
            assert_eq!(c.pi_step(e), 0.95);
        }
        assert_eq!(c.integ, frozen);
        // leaves saturation as soon as the error reverses
        assert!(c.pi_step(-100.0) < 0.95);
    }

    #[test]
    fn reset_behaviour() {
        let mut c = pi(1e-3, 20.0);
        c.pi_step(3.0);
        c.pi_step(3.0);
        c.reset();
        assert_eq!(c.integ, 0.0);
        c.reset();
        assert_eq!(c.integ, 0.0);
        assert_eq!((c.kp, c.ki), (1e-3, 20.0));
        assert_eq!(c.pi_step(0.0), 0.7);
    }

    #[test]
    fn preload_sets_zero_error_output() {
        let mut c = pi(1e-3, 20.0);
        c.preload(0.704);
        assert!((c.pi_step(0.0) - 0.704).abs() < 1e-12);
    }

    #[test]
    fn invalid_settings() {
        assert!(PiController::new(1.0, 1.0, 0.0, [0.05, 0.95], 0.7).is_err());
        assert!(PiController::new(-1.0, 1.0, 1e-3, [0.05, 0.95], 0.7).is_err());
        assert!(PiController::new(1.0, 1.0, 1e-3, [0.9, 0.1], 0.5).is_err());
        assert!(PiController::new(1.0, 1.0, 1e-3, [0.05, 0.95], 0.99).is_err());
    }

    #[test]
    fn linearized_dc_gain() {
        // lossless DC gain of v_o / d is V / (1 - D)
        let p = PlantParams { r_l: 0.0, ..PlantParams::default() };
        let g = duty_to_voltage_response(&p, 0.7, 500.0 / 60.0, 200.0, 0.0, 1e-3);
        assert!((g.re - 200.0 / 0.3).abs() / (200.0 / 0.3) < 1e-4);
    }
}
