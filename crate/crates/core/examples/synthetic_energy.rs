//! Sample a sine power profile and integrate it with the trapezoid rule,
//! then compare against the exact integral at a few sampling intervals.
//!
//! ```text
//! cargo run --example synthetic_energy
//! ```

use melodi::energy::{integrate_trapezoid, to_kwh, InferenceWindow};
use melodi::power::{PowerSample, PowerTrace, Scope, Waveform};

fn trace(w: &Waveform, dt: f64, end: f64) -> PowerTrace {
    let mut t = PowerTrace::new("synthetic-sine", Scope::Process, dt);
    let n = (end / dt).round() as usize;
    for k in 0..=n {
        let at = k as f64 * dt;
        t.push(PowerSample { t_wall: 0, t_mono: at, power_uw: w.value_at(at) });
    }
    t
}

fn main() {
    // 2 W mean, 1 W swing, 1 s period
    let w = Waveform::Sine { mean: 2e6, amplitude: 1e6, period: 1.0 };
    let window = InferenceWindow::new(0.0, 10.25).unwrap();
    let exact = w.integral(window.t_start_mono, window.t_end_mono);
    println!("exact: {exact:.6} uW*s = {:.6e} kWh", to_kwh(exact));
    for dt in [0.1, 0.05, 0.01, 0.001] {
        let got = integrate_trapezoid(&trace(&w, dt, 10.5), &window).unwrap();
        let rel = (got.energy_uws - exact).abs() / exact;
        println!("dt = {dt:<6} energy = {:.6} uW*s  rel.err = {rel:.3e}  samples = {}", got.energy_uws, got.samples_used);
    }
}
