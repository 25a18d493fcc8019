use std::io::{self, Write};

use super::{ControllerTag, Metrics, TraceRecord};

pub const TRACE_HEADER: &str = "t,v_o,i_l,duty,u,j_est,mode,v_set,v_s,r_load";

pub const METRICS_HEADER: &str =
    "scenario,controller,settling_ms,overshoot_pct,iae_vs,peak_deviation_v,steady_state_error_v,oscillating";

/// Writes the trace as CSV, one row per control period.
pub fn write_trace(mut w: impl Write, trace: &[TraceRecord]) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.v_o,
            r.i_l,
            r.duty,
            r.u,
            r.j_est,
            r.mode.tag(),
            r.v_set,
            r.v_s,
            r.r_load
        )?;
    }
    Ok(())
}

/// One metrics row; `settling_ms` is empty for runs that never settle.
pub fn write_metrics_row(
    mut w: impl Write,
    scenario: &str,
    controller: ControllerTag,
    m: &Metrics,
) -> io::Result<()> {
    let settling = m.settling_time.map(|t| format!("{:.3}", t * 1e3)).unwrap_or_default();
    writeln!(
        w,
        "{scenario},{controller},{settling},{:.3},{:.6},{:.3},{:.4},{}",
        m.overshoot, m.iae, m.peak_deviation, m.steady_state_error, m.oscillating
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::ConductionMode;

    #[test]
    fn trace_rows() {
        let r = TraceRecord {
            t: 5e-5,
            v_o: 199.5,
            i_l: 8.25,
            duty: 0.7,
            u: 0.0025,
            j_est: f64::NAN,
            mode: ConductionMode::SwitchOffBlocked,
            v_set: 200.0,
            v_s: 60.0,
            r_load: 80.0,
        };
        let mut out = Vec::new();
        write_trace(&mut out, &[r]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, format!("{TRACE_HEADER}\n0.00005,199.5,8.25,0.7,0.0025,NaN,dcm,200,60,80\n"));
    }
}
