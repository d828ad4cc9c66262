//! Power sources and the concurrent sampler.
//!
//! Every source produces instantaneous power readings in microwatts. A
//! [`PowerTrace`] is the ordered series of readings for one source during one
//! sampling run, and is what the energy module integrates.
//!
//! Four sources are compiled in:
//!
//! - `rapl-process`: per-process power estimated from package energy counter
//!   deltas weighted by the process share of CPU time ([`rapl`]).
//! - `nvidia-gpu`: whole-device power polled through the NVIDIA management
//!   CLI ([`gpu`]).
//! - `synthetic`: analytic waveforms for hardware-free verification
//!   ([`synthetic`]).
//! - `replay`: a previously recorded trace ([`replay`]).

pub mod gpu;
pub mod rapl;
pub mod replay;
pub mod sampler;
pub mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gpu::GpuSource;
pub use rapl::{ProcessSelector, RaplProcessSource};
pub use replay::ReplaySource;
pub use sampler::{run_sampler, Sampler, SamplerHandle, SourceRun, StopSignal};
pub use synthetic::{SyntheticSource, Waveform};

/// Default sampling period in seconds.
pub const DEFAULT_INTERVAL_S: f64 = 0.1;
/// Smallest accepted sampling period in seconds.
pub const MIN_INTERVAL_S: f64 = 0.010;
/// Process-name pattern used when none is given.
pub const DEFAULT_PROCESS_PATTERN: &str = "ollama";

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("no process matches selector `{0}`")]
    NoMatchingProcess(String),
    #[error("power counter unavailable: {0}")]
    CounterUnavailable(String),
    #[error("energy counter decreased from {previous} to {current} uJ")]
    CounterWrap { previous: u64, current: u64 },
    #[error("power tool unavailable: {0}")]
    ToolUnavailable(String),
    #[error("cannot parse power reading: {0}")]
    ParseFailure(String),
    #[error("GPU index {index} out of range ({count} device(s) present)")]
    GpuIndexOutOfRange { index: u32, count: u32 },
    #[error("invalid waveform profile: {0}")]
    InvalidProfile(String),
    #[error("invalid process selector: {0}")]
    InvalidSelector(#[from] regex::Error),
    #[error("sampling interval {0} s is below the {MIN_INTERVAL_S} s floor")]
    IntervalTooShort(f64),
    #[error("no power sources configured")]
    NoSources,
    #[error("source `{0}` produced no successful samples")]
    NoSamples(String),
    #[error("invalid power source spec `{spec}`: {reason}")]
    InvalidSourceSpec { spec: String, reason: String },
    #[error("replay trace error: {0}")]
    Replay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a trace measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Power attributed to the monitored LLM process.
    Process,
    /// Power of a whole device (GPU).
    Device,
    /// Power attributed to the sampler itself.
    MonitorSelf,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Process => "process",
            Scope::Device => "device",
            Scope::MonitorSelf => "monitor-self",
        })
    }
}

/// One power reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Wall clock, nanoseconds since the Unix epoch.
    pub t_wall: u64,
    /// Seconds since sampler start.
    pub t_mono: f64,
    #[serde(rename = "power_uW")]
    pub power_uw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub source_id: String,
    pub scope: Scope,
    pub samples: Vec<PowerSample>,
    pub nominal_interval_s: f64,
}

impl PowerTrace {
    pub fn new(source_id: impl Into<String>, scope: Scope, nominal_interval_s: f64) -> Self {
        PowerTrace {
            source_id: source_id.into(),
            scope,
            samples: Vec::new(),
            nominal_interval_s,
        }
    }

    /// Appends a sample, refusing negative power and non-increasing timestamps.
    pub fn push(&mut self, sample: PowerSample) -> bool {
        let ordered = self.samples.last().is_none_or(|last| sample.t_mono > last.t_mono);
        if ordered && sample.power_uw >= 0.0 && sample.power_uw.is_finite() {
            self.samples.push(sample);
            true
        } else {
            false
        }
    }

    /// Strictly increasing timestamps and nonnegative powers.
    pub fn is_well_formed(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].t_mono > w[0].t_mono)
            && self.samples.iter().all(|s| s.power_uw >= 0.0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A pollable power source.
///
/// `sample` is called once per sampler tick. `Ok(None)` means the source has
/// nothing to report yet (a counter-based source priming its first reading)
/// and is not counted as a gap; `Err` is recorded as a gap.
pub trait PowerSource: Send {
    fn source_id(&self) -> String;
    fn scope(&self) -> Scope;
    fn sample(&mut self, t_mono: f64) -> Result<Option<f64>, PowerError>;

    /// Sources whose output depends only on `t_mono` can be evaluated on a
    /// simulated clock instead of being polled in real time.
    fn is_time_pure(&self) -> bool {
        false
    }

    /// Recorded samples to emit verbatim instead of polling. Only replay
    /// sources return `Some`.
    fn recorded(&self) -> Option<&PowerTrace> {
        None
    }

    /// A source measuring the sampler's own process with the same counters,
    /// added as a monitor-self trace whenever this source is active.
    fn monitor_companion(&self) -> Option<Result<Box<dyn PowerSource>, PowerError>> {
        None
    }

    /// Called at the start of every sampling run.
    fn reset(&mut self) {}

    /// Chooses which recorded trace to replay for the `i`-th run.
    fn select_trace(&mut self, _i: usize) {}
}

/// Compiled-in source kinds, as listed by [`list_sources`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceAvailability {
    pub source_id: String,
    pub scope: Scope,
    pub available: bool,
    pub detail: String,
}

/// Where the host exposes its power and CPU accounting files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostPaths {
    pub powercap_root: PathBuf,
    pub proc_root: PathBuf,
    pub gpu_tool: PathBuf,
}

impl Default for HostPaths {
    fn default() -> Self {
        HostPaths {
            powercap_root: PathBuf::from("/sys/class/powercap"),
            proc_root: PathBuf::from("/proc"),
            gpu_tool: PathBuf::from("nvidia-smi"),
        }
    }
}

/// Enumerates the compiled-in sources and probes whether each is usable here.
pub fn list_sources() -> Vec<SourceAvailability> {
    list_sources_on(&HostPaths::default())
}

pub fn list_sources_on(paths: &HostPaths) -> Vec<SourceAvailability> {
    let rapl = rapl::probe(&paths.powercap_root, &paths.proc_root);
    let gpu = gpu::probe(&paths.gpu_tool);
    vec![
        SourceAvailability {
            source_id: "rapl-process".into(),
            scope: Scope::Process,
            available: rapl.is_ok(),
            detail: rapl.unwrap_or_else(|e| e.to_string()),
        },
        SourceAvailability {
            source_id: "nvidia-gpu".into(),
            scope: Scope::Device,
            available: gpu.is_ok(),
            detail: gpu.unwrap_or_else(|e| e.to_string()),
        },
        SourceAvailability {
            source_id: "synthetic".into(),
            scope: Scope::Process,
            available: true,
            detail: "analytic waveforms".into(),
        },
        SourceAvailability {
            source_id: "replay".into(),
            scope: Scope::Process,
            available: true,
            detail: "recorded NDJSON traces".into(),
        },
    ]
}

/// Textual source configuration, as accepted on the command line.
///
/// ```text
/// synthetic:constant:<uW>
/// synthetic:linear:<a uW/s>:<b uW>
/// synthetic:sine:<mean uW>:<amplitude uW>:<period s>
/// replay:<path>
/// rapl[:<process regex>]
/// nvidia[:<gpu index>]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Synthetic(Waveform),
    Replay(PathBuf),
    Rapl(String),
    Nvidia(u32),
}

impl SourceSpec {
    pub fn build(&self) -> Result<Box<dyn PowerSource>, PowerError> {
        self.build_on(&HostPaths::default())
    }

    pub fn build_on(&self, paths: &HostPaths) -> Result<Box<dyn PowerSource>, PowerError> {
        Ok(match self {
            SourceSpec::Synthetic(w) => Box::new(SyntheticSource::new(*w)?),
            SourceSpec::Replay(path) => Box::new(ReplaySource::open(path)?),
            SourceSpec::Rapl(pattern) => Box::new(RaplProcessSource::new(
                ProcessSelector::new(pattern)?,
                &paths.powercap_root,
                &paths.proc_root,
            )?),
            SourceSpec::Nvidia(index) => Box::new(GpuSource::new(&paths.gpu_tool, *index)?),
        })
    }

    pub fn scope(&self) -> Scope {
        match self {
            SourceSpec::Nvidia(_) => Scope::Device,
            _ => Scope::Process,
        }
    }
}

impl FromStr for SourceSpec {
    type Err = PowerError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| PowerError::InvalidSourceSpec {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("expected a number"));
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        match kind {
            "synthetic" => {
                let parts: Vec<&str> = rest.split(':').collect();
                let waveform = match parts.as_slice() {
                    ["constant", c] => Waveform::Constant(num(c)?),
                    ["linear", a, b] => Waveform::Linear { a: num(a)?, b: num(b)? },
                    ["sine", mean, amplitude, period] => Waveform::Sine {
                        mean: num(mean)?,
                        amplitude: num(amplitude)?,
                        period: num(period)?,
                    },
                    _ => return Err(bad("expected constant:C, linear:A:B or sine:MEAN:AMP:PERIOD")),
                };
                waveform.validate()?;
                Ok(SourceSpec::Synthetic(waveform))
            }
            "replay" if !rest.is_empty() => Ok(SourceSpec::Replay(PathBuf::from(rest))),
            "replay" => Err(bad("missing trace path")),
            "rapl" | "rapl-process" => {
                let pattern = if rest.is_empty() { DEFAULT_PROCESS_PATTERN } else { rest };
                ProcessSelector::new(pattern)?;
                Ok(SourceSpec::Rapl(pattern.to_string()))
            }
            "nvidia" | "nvidia-gpu" => {
                let index = if rest.is_empty() {
                    0
                } else {
                    rest.parse().map_err(|_| bad("expected a GPU index"))?
                };
                Ok(SourceSpec::Nvidia(index))
            }
            _ => Err(bad("unknown source kind")),
        }
    }
}

pub(crate) fn wall_clock_ns() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_always_listed_available() {
        let paths = HostPaths {
            powercap_root: "/nonexistent/powercap".into(),
            proc_root: "/nonexistent/proc".into(),
            gpu_tool: "/nonexistent/nvidia-smi".into(),
        };
        let listed = list_sources_on(&paths);
        let find = |id: &str| listed.iter().find(|s| s.source_id == id).unwrap();
        assert!(find("synthetic").available);
        assert!(find("replay").available);
        assert!(!find("nvidia-gpu").available);
        assert!(!find("rapl-process").available);
    }

    #[test]
    fn parses_source_specs() {
        assert_eq!(
            "synthetic:constant:1e6".parse::<SourceSpec>().unwrap(),
            SourceSpec::Synthetic(Waveform::Constant(1e6))
        );
        assert_eq!(
            "synthetic:sine:2e6:1e6:1".parse::<SourceSpec>().unwrap(),
            SourceSpec::Synthetic(Waveform::Sine { mean: 2e6, amplitude: 1e6, period: 1.0 })
        );
        assert_eq!("rapl".parse::<SourceSpec>().unwrap(), SourceSpec::Rapl("ollama".into()));
        assert_eq!("nvidia:1".parse::<SourceSpec>().unwrap(), SourceSpec::Nvidia(1));
        assert_eq!(
            "replay:t.ndjson".parse::<SourceSpec>().unwrap(),
            SourceSpec::Replay("t.ndjson".into())
        );
        assert!("synthetic:sine:2e6:3e6:1".parse::<SourceSpec>().is_err());
        assert!("bogus".parse::<SourceSpec>().is_err());
        assert!("rapl:(".parse::<SourceSpec>().is_err());
    }

    #[test]
    fn push_rejects_disorder_and_negative_power() {
        let mut trace = PowerTrace::new("x", Scope::Process, 0.1);
        assert!(trace.push(PowerSample { t_wall: 0, t_mono: 0.0, power_uw: 1.0 }));
        assert!(!trace.push(PowerSample { t_wall: 0, t_mono: 0.0, power_uw: 1.0 }));
        assert!(!trace.push(PowerSample { t_wall: 0, t_mono: 0.1, power_uw: -1.0 }));
        assert!(trace.push(PowerSample { t_wall: 0, t_mono: 0.1, power_uw: 2.0 }));
        assert!(trace.is_well_formed());
    }
}
