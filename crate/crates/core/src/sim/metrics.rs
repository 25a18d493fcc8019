//! Step-response summaries of a closed-loop trace.

use super::TraceRecord;

/// Relative half-width of the settling band.
pub const SETTLING_BAND: f64 = 0.02;

/// Minimum continuous stay inside the band (s) that counts as having settled
/// when deciding whether the response later breaks out again.
pub const OSCILLATION_DWELL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Time from the last reference or disturbance change until `v_o` enters
    /// the ±2 % band for good (s). `None` when the trace ends outside it.
    pub settling_time: Option<f64>,
    /// Peak excursion above the final setpoint, % of the setpoint (≥ 0).
    pub overshoot: f64,
    /// Mean `v_set − v_o` over the last 5 ms of the trace (V).
    pub steady_state_error: f64,
    /// `∫|v_set − v_o| dt` from the last change to the end (V·s).
    pub iae: f64,
    /// Largest `|v_o − v_set|` after the last change (V).
    pub peak_deviation: f64,
    /// The band was held for at least [`OSCILLATION_DWELL`] and then left again.
    pub oscillating: bool,
    /// Time of the last change the metrics are measured from (s).
    pub segment_start: f64,
}

impl Metrics {
    pub fn settled(&self) -> bool {
        self.settling_time.is_some()
    }

    /// Settling time, or `duration` for runs that never settle.
    pub fn settling_or(&self, duration: f64) -> f64 {
        self.settling_time.unwrap_or(duration)
    }
}

/// Index of the first record after the last change of `v_set`, `v_s` or
/// `r_load`.
pub fn last_change_index(trace: &[TraceRecord]) -> usize {
    trace
        .windows(2)
        .rposition(|w| w[0].v_set != w[1].v_set || w[0].v_s != w[1].v_s || w[0].r_load != w[1].r_load)
        .map_or(0, |i| i + 1)
}

/// Summarises the segment of `trace` after its last reference or disturbance
/// change against `v_set_final`.
///
/// # Panics
///
/// On an empty trace.
pub fn compute_metrics(trace: &[TraceRecord], v_set_final: f64) -> Metrics {
    assert!(!trace.is_empty(), "metrics need at least one trace record");
    let start = last_change_index(trace);
    let seg = &trace[start..];
    let t0 = seg[0].t;
    let dt = if trace.len() > 1 { trace[1].t - trace[0].t } else { 0.0 };
    let band = SETTLING_BAND * v_set_final;
    let inside = |r: &TraceRecord| (r.v_o - v_set_final).abs() <= band;

    let settling_time = match seg.iter().rposition(|r| !inside(r)) {
        None => Some(0.0),
        Some(i) if i + 1 < seg.len() => Some(seg[i + 1].t - t0),
        Some(_) => None,
    };

    let v_max = seg.iter().map(|r| r.v_o).fold(f64::NEG_INFINITY, f64::max);
    let overshoot = ((v_max - v_set_final) / v_set_final * 100.0).max(0.0);
    let iae = seg.iter().map(|r| (r.v_set - r.v_o).abs() * dt).sum();
    let peak_deviation = seg
        .iter()
        .map(|r| (r.v_o - v_set_final).abs())
        .fold(0.0, f64::max);

    let t_end = trace[trace.len() - 1].t;
    let tail: Vec<&TraceRecord> = trace.iter().filter(|r| r.t >= t_end - 5e-3).collect();
    let steady_state_error = tail.iter().map(|r| r.v_set - r.v_o).sum::<f64>() / tail.len() as f64;

    let mut oscillating = false;
    let mut run_start: Option<f64> = None;
    let mut held = false;
    for r in seg {
        if inside(r) {
            let s = *run_start.get_or_insert(r.t);
            if r.t - s + dt >= OSCILLATION_DWELL - 1e-12 {
                held = true;
            }
        } else {
            if held {
                oscillating = true;
                break;
            }
            run_start = None;
        }
    }

    Metrics {
        settling_time,
        overshoot,
        steady_state_error,
        iae,
        peak_deviation,
        oscillating,
        segment_start: t0,
    }
}
