//! Power-to-energy integration over inference windows.
//!
//! Traces are clipped to the window and integrated with the trapezoidal rule.
//! Where samples straddle a window edge the edge value is linearly
//! interpolated; otherwise the integration range shrinks to the sampled span
//! and `coverage_fraction` drops below 1. Gaps inside the window are bridged
//! linearly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::power::PowerTrace;

/// Microwatt-seconds per kilowatt-hour.
pub const UWS_PER_KWH: f64 = 3.6e12;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("need at least 2 usable samples in the window, found {0}")]
    InsufficientSamples(usize),
    #[error("negative power {power_uw} uW at t = {t_mono} s")]
    NegativePower { t_mono: f64, power_uw: f64 },
    #[error("window end {end} s is not after start {start} s")]
    InvalidWindow { start: f64, end: f64 },
}

/// The span of one request, in the sampler's monotonic frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceWindow {
    pub t_start_mono: f64,
    pub t_end_mono: f64,
}

impl InferenceWindow {
    pub fn new(t_start_mono: f64, t_end_mono: f64) -> Result<Self, EnergyError> {
        if t_end_mono > t_start_mono && t_start_mono.is_finite() && t_end_mono.is_finite() {
            Ok(InferenceWindow { t_start_mono, t_end_mono })
        } else {
            Err(EnergyError::InvalidWindow { start: t_start_mono, end: t_end_mono })
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end_mono - self.t_start_mono
    }
}

/// Result of integrating one trace over one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub energy_uws: f64,
    /// Trace samples that contributed, including neighbours used for edge
    /// interpolation.
    pub samples_used: usize,
    pub coverage_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyMetrics {
    pub energy_kwh: f64,
    /// Undefined for zero-token responses.
    pub energy_per_token_kwh: Option<f64>,
    pub samples_used: usize,
    pub coverage_fraction: f64,
}

/// Trapezoidal energy of `trace` over `window`, in microwatt-seconds.
pub fn integrate_trapezoid(trace: &PowerTrace, window: &InferenceWindow) -> Result<Integral, EnergyError> {
    let samples = &trace.samples;
    let (a, b) = (window.t_start_mono, window.t_end_mono);

    // First index with t >= a, first index with t > b.
    let lo = samples.partition_point(|s| s.t_mono < a);
    let hi = samples.partition_point(|s| s.t_mono <= b);

    let mut points: Vec<(f64, f64)> = Vec::with_capacity(hi - lo + 2);

    let interp = |i: usize, t: f64| {
        let (p, q) = (&samples[i - 1], &samples[i]);
        let frac = (t - p.t_mono) / (q.t_mono - p.t_mono);
        p.power_uw + frac * (q.power_uw - p.power_uw)
    };

    let interp_start = lo > 0 && lo < samples.len() && samples[lo].t_mono != a;
    let interp_end = hi > 0 && hi < samples.len() && samples[hi - 1].t_mono != b;
    if interp_start {
        points.push((a, interp(lo, a)));
    }
    points.extend(samples[lo..hi].iter().map(|s| (s.t_mono, s.power_uw)));
    if interp_end {
        points.push((b, interp(hi, b)));
    }
    // Contributing samples form one contiguous index range.
    let first = if interp_start { lo - 1 } else { lo };
    let last = if interp_end { hi + 1 } else { hi };
    let used = last.saturating_sub(first);

    if points.len() < 2 {
        return Err(EnergyError::InsufficientSamples(points.len()));
    }
    if let Some(&(t_mono, power_uw)) = points.iter().find(|(_, p)| *p < 0.0) {
        return Err(EnergyError::NegativePower { t_mono, power_uw });
    }

    let energy_uws = points
        .windows(2)
        .map(|w| (w[0].1 + w[1].1) / 2.0 * (w[1].0 - w[0].0))
        .sum();
    let span = points[points.len() - 1].0 - points[0].0;
    Ok(Integral {
        energy_uws,
        samples_used: used,
        coverage_fraction: span / window.duration(),
    })
}

pub fn to_kwh(energy_uws: f64) -> f64 {
    energy_uws / UWS_PER_KWH
}

pub fn compute_metrics(
    trace: &PowerTrace,
    window: &InferenceWindow,
    response_token_length: u64,
) -> Result<EnergyMetrics, EnergyError> {
    let integral = integrate_trapezoid(trace, window)?;
    let energy_kwh = to_kwh(integral.energy_uws);
    Ok(EnergyMetrics {
        energy_kwh,
        energy_per_token_kwh: per_token(energy_kwh, response_token_length),
        samples_used: integral.samples_used,
        coverage_fraction: integral.coverage_fraction,
    })
}

pub fn per_token(energy_kwh: f64, response_token_length: u64) -> Option<f64> {
    (response_token_length > 0).then(|| energy_kwh / response_token_length as f64)
}
