use std::time::Instant;

use boost_hdp::plant::{step, step_with_stats, ConductionMode, PlantParams, PlantState};
use proptest::prelude::*;

fn lossless() -> PlantParams {
    PlantParams { r_l: 0.0, r_load: 80.0, v_s: 60.0, ..PlantParams::default() }
}

#[test]
fn fixed_duty_settles_at_volt_second_balance() {
    let p = lossless();
    let d = 0.7;
    let target = p.v_s / (1.0 - d);
    // start at the averaged equilibrium; the LC tank rings down through R
    let mut s = PlantState::new(target * target / (p.r_load * p.v_s), target);
    let mut mean = 0.0;
    for _ in 0..4000 {
        let (next, stats) = step_with_stats(&s, d, &p).unwrap();
        s = next;
        mean = stats.mean_v_o;
    }
    assert!((mean - target).abs() < 0.02 * target, "mean v_o {mean}");
    assert!((mean - target).abs() < 1.0, "mean v_o {mean}");
}

#[test]
fn energy_is_conserved_from_rest() {
    let p = lossless();
    let t_s = p.period();
    let started = Instant::now();
    let mut s = PlantState::at_rest();
    let (mut e_in, mut e_out) = (0.0, 0.0);
    // 100 ms
    for _ in 0..2000 {
        let (next, stats) = step_with_stats(&s, 0.7, &p).unwrap();
        e_in += p.v_s * stats.mean_i_l * t_s;
        e_out += stats.mean_v_o_sq / p.r_load * t_s;
        s = next;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let stored = 0.5 * p.l_ind * s.i_l * s.i_l + 0.5 * p.c_out * s.v_o * s.v_o;
    let imbalance = (e_in - e_out - stored).abs() / e_in;
    assert!(imbalance < 0.01, "energy imbalance {imbalance:e}");
    assert!(elapsed < 1.0, "100 ms simulated in {elapsed} s");
}

/// Runs 20 periods at duty 0.7 with `n` sub-steps per period.
fn ccm_segment(n: usize) -> PlantState {
    let base = PlantParams::default();
    let p = PlantParams { dt: base.period() / n as f64, ..base };
    let mut s = PlantState::new(8.0, 190.0);
    for _ in 0..20 {
        s = step(&s, 0.7, &p).unwrap();
        assert_ne!(s.mode, ConductionMode::SwitchOffBlocked);
    }
    s
}

#[test]
fn rk4_converges_at_fourth_order() {
    // coarse sub-steps keep the truncation error well above roundoff
    let [a, b, c] = [10, 20, 40].map(ccm_segment);
    let e1 = (a.i_l - b.i_l).hypot(a.v_o - b.v_o);
    let e2 = (b.i_l - c.i_l).hypot(b.v_o - c.v_o);
    let order = (e1 / e2).log2();
    assert!(e2 > 1e-11, "differences {e1:e} {e2:e} are at roundoff");
    assert!(order >= 3.5, "observed order {order}");
}

#[test]
fn light_load_enters_dcm() {
    let p = PlantParams { r_load: 200.0, ..PlantParams::default() };
    let (s, stats) = step_with_stats(&PlantState::new(0.0, 200.0), 0.2, &p).unwrap();
    assert_eq!(s.mode, ConductionMode::SwitchOffBlocked);
    assert_eq!(s.i_l, 0.0);
    assert!(stats.blocked_substeps > 0);
    assert!(stats.max_i_l > 0.0);
    // the capacitor only discharges into the load while the diode blocks
    assert!(s.v_o < 200.0 + 1e-9);
}

proptest! {
    #[test]
    fn states_stay_non_negative(
        i_l in 0.0..30.0f64,
        v_o in 0.0..400.0f64,
        duty in 0.0..=1.0f64,
        r_load in 50.0..200.0f64,
        v_s in 54.0..66.0f64,
        periods in 1usize..20,
    ) {
        let p = PlantParams { r_load, v_s, ..PlantParams::default() };
        let mut s = PlantState::new(i_l, v_o);
        for _ in 0..periods {
            s = step(&s, duty, &p).unwrap();
            prop_assert!(s.i_l >= 0.0 && s.v_o >= 0.0, "{s:?}");
            prop_assert!(s.i_l.is_finite() && s.v_o.is_finite());
        }
    }
}
