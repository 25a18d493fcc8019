use boost_hdp::baseline::{duty_to_voltage_response, tune_pi, PiController, PiGains, TuningTarget};
use boost_hdp::hdp::HdpConfig;
use boost_hdp::plant::{averaged_operating_point, PlantParams};
use boost_hdp::sim::{Controller, ControllerTag, Harness, ScenarioSpec};
use num_complex::Complex64;

fn sig3(x: f64) -> f64 {
    let scale = 10f64.powi(2 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

#[test]
fn tuning_reproduces_the_shipped_gains() {
    let p = PlantParams::default();
    let target = TuningTarget::default();
    let t = tune_pi(&p, &target).unwrap();
    let shipped = PiGains::default();
    assert_eq!(sig3(t.kp), shipped.kp);
    assert_eq!(sig3(t.ki), shipped.ki);
    assert!(t.phase_margin_deg >= target.phase_margin_deg);
    assert!(t.gain_margin_db >= target.gain_margin_db);
    assert!((t.zero - t.ki / t.kp).abs() < 1e-9 * t.zero);
}

#[test]
fn tuned_loop_has_unit_gain_at_crossover() {
    let p = PlantParams::default();
    let target = TuningTarget::default();
    let t = tune_pi(&p, &target).unwrap();
    let op = averaged_operating_point(target.v_o, &p).unwrap();
    let g = duty_to_voltage_response(&p, op.duty, op.i_l, op.v_o, p.period(), t.crossover);
    let pi = t.kp * Complex64::new(1.0, -t.zero / t.crossover).norm();
    assert!((g.norm() * pi - 1.0).abs() < 1e-9);
}

#[test]
fn tighter_margins_lower_the_integral_gain() {
    let p = PlantParams::default();
    let loose = tune_pi(&p, &TuningTarget::default()).unwrap();
    let tight = tune_pi(&p, &TuningTarget { phase_margin_deg: 70.0, ..TuningTarget::default() }).unwrap();
    assert!(tight.ki <= loose.ki);
}

#[test]
fn shipped_pi_regulates_the_load_step() {
    let p = PlantParams::default();
    let h = Harness::new(p, HdpConfig::default());
    let spec = ScenarioSpec::load_change(ControllerTag::Pi, 0.05, 0.005, &p);
    let mut c = Controller::Pi(PiController::from_gains(&PiGains::default(), &p, 200.0).unwrap());
    let out = h.run_scenario(&spec, &mut c).unwrap();
    assert!(out.metrics.steady_state_error.abs() < 4.0, "{:?}", out.metrics);
    // r_load column switches at the step
    assert_eq!(out.trace[0].r_load, 80.0);
    assert_eq!(out.trace.last().unwrap().r_load, 200.0);
}
