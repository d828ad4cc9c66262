use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{PowerError, PowerSample, PowerSource, Scope};

/// Analytic power waveform in microwatts as a function of seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Waveform {
    Constant(f64),
    /// `a * t + b`
    Linear { a: f64, b: f64 },
    /// `mean + amplitude * sin(2 pi t / period)`
    Sine { mean: f64, amplitude: f64, period: f64 },
}

impl Waveform {
    /// Rejects parameters that go negative at `t = 0` or anywhere on a sine.
    /// A decreasing linear profile is accepted and fails at the first
    /// negative evaluation instead.
    pub fn validate(&self) -> Result<(), PowerError> {
        let finite = |v: f64| v.is_finite();
        match *self {
            Waveform::Constant(c) if finite(c) && c >= 0.0 => Ok(()),
            Waveform::Constant(c) => Err(PowerError::InvalidProfile(format!("constant {c} < 0"))),
            Waveform::Linear { a, b } if finite(a) && finite(b) && b >= 0.0 => Ok(()),
            Waveform::Linear { b, .. } => {
                Err(PowerError::InvalidProfile(format!("linear intercept {b} < 0")))
            }
            Waveform::Sine { mean, amplitude, period } => {
                if !(finite(mean) && finite(amplitude) && finite(period)) || period <= 0.0 {
                    Err(PowerError::InvalidProfile("sine needs finite values and period > 0".into()))
                } else if mean - amplitude.abs() < 0.0 {
                    Err(PowerError::InvalidProfile(format!(
                        "sine dips to {} uW",
                        mean - amplitude.abs()
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match *self {
            Waveform::Constant(c) => c,
            Waveform::Linear { a, b } => a * t + b,
            Waveform::Sine { mean, amplitude, period } => mean + amplitude * (TAU * t / period).sin(),
        }
    }

    /// Closed-form integral over `[t0, t1]` in microwatt-seconds.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        match *self {
            Waveform::Constant(c) => c * (t1 - t0),
            Waveform::Linear { a, b } => 0.5 * a * (t1 * t1 - t0 * t0) + b * (t1 - t0),
            Waveform::Sine { mean, amplitude, period } => {
                let w = TAU / period;
                mean * (t1 - t0) - amplitude / w * ((w * t1).cos() - (w * t0).cos())
            }
        }
    }
}

/// Evaluates `profile` at `t`, failing if the result is negative.
pub fn synthetic_power(profile: &Waveform, t: f64) -> Result<PowerSample, PowerError> {
    profile.validate()?;
    let power_uw = profile.value_at(t);
    if power_uw < 0.0 {
        return Err(PowerError::InvalidProfile(format!("power {power_uw} uW at t = {t} s")));
    }
    Ok(PowerSample { t_wall: super::wall_clock_ns(), t_mono: t, power_uw })
}

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    waveform: Waveform,
}

impl SyntheticSource {
    pub fn new(waveform: Waveform) -> Result<Self, PowerError> {
        waveform.validate()?;
        Ok(SyntheticSource { waveform })
    }

    pub fn waveform(&self) -> Waveform {
        self.waveform
    }
}

impl PowerSource for SyntheticSource {
    fn source_id(&self) -> String {
        match self.waveform {
            Waveform::Constant(_) => "synthetic-constant".into(),
            Waveform::Linear { .. } => "synthetic-linear".into(),
            Waveform::Sine { .. } => "synthetic-sine".into(),
        }
    }

    fn scope(&self) -> Scope {
        Scope::Process
    }

    fn sample(&mut self, t_mono: f64) -> Result<Option<f64>, PowerError> {
        synthetic_power(&self.waveform, t_mono).map(|s| Some(s.power_uw))
    }

    fn is_time_pure(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_constant() {
        for t in [0.0, 1.5, 1e4] {
            assert_eq!(synthetic_power(&Waveform::Constant(1e6), t).unwrap().power_uw, 1_000_000.0);
        }
    }

    #[test]
    fn linear_evaluates_a_t_plus_b() {
        let s = synthetic_power(&Waveform::Linear { a: 1e6, b: 1e6 }, 2.0).unwrap();
        assert_eq!(s.power_uw, 3_000_000.0);
    }

    #[test]
    fn sine_dipping_below_zero_is_invalid() {
        let w = Waveform::Sine { mean: 2e6, amplitude: 3e6, period: 1.0 };
        assert!(matches!(synthetic_power(&w, 0.0), Err(PowerError::InvalidProfile(_))));
        assert!(SyntheticSource::new(w).is_err());
    }

    #[test]
    fn decreasing_linear_fails_once_negative() {
        let w = Waveform::Linear { a: -1.0, b: 1.0 };
        assert!(synthetic_power(&w, 0.5).is_ok());
        assert!(matches!(synthetic_power(&w, 2.0), Err(PowerError::InvalidProfile(_))));
    }

    #[test]
    fn sine_integral_matches_fine_midpoint_sum() {
        let w = Waveform::Sine { mean: 2.0, amplitude: 1.0, period: 0.7 };
        let (t0, t1, n) = (0.3, 2.9, 200_000);
        let h = (t1 - t0) / n as f64;
        let midpoint: f64 = (0..n).map(|i| w.value_at(t0 + (i as f64 + 0.5) * h) * h).sum();
        assert!((midpoint - w.integral(t0, t1)).abs() < 1e-8);
    }
}
