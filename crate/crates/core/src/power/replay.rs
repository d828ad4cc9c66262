//! Trace record/replay format.
//!
//! A trace file holds one or more traces. Each trace is a header line
//! `{"source_id":..,"scope":..,"nominal_interval_s":..}` followed by one line
//! per sample `{"t_wall":..,"t_mono":..,"power_uW":..}`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PowerError, PowerSample, PowerSource, PowerTrace, Scope};

#[derive(Serialize, Deserialize)]
struct Header {
    source_id: String,
    scope: Scope,
    nominal_interval_s: f64,
}

pub fn write_trace<W: Write>(mut out: W, trace: &PowerTrace) -> std::io::Result<()> {
    let header = Header {
        source_id: trace.source_id.clone(),
        scope: trace.scope,
        nominal_interval_s: trace.nominal_interval_s,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for sample in &trace.samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_traces<R: BufRead>(input: R) -> Result<Vec<PowerTrace>, PowerError> {
    let mut traces: Vec<PowerTrace> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| PowerError::Replay(format!("line {}: {e}", i + 1)))?;
        if value.get("source_id").is_some() {
            let h: Header = serde_json::from_value(value)
                .map_err(|e| PowerError::Replay(format!("line {}: {e}", i + 1)))?;
            traces.push(PowerTrace::new(h.source_id, h.scope, h.nominal_interval_s));
        } else {
            let sample: PowerSample = serde_json::from_value(value)
                .map_err(|e| PowerError::Replay(format!("line {}: {e}", i + 1)))?;
            let trace = traces
                .last_mut()
                .ok_or_else(|| PowerError::Replay(format!("line {}: sample before header", i + 1)))?;
            if !trace.push(sample) {
                return Err(PowerError::Replay(format!(
                    "line {}: sample out of order or negative",
                    i + 1
                )));
            }
        }
    }
    Ok(traces)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<PowerTrace>, PowerError> {
    let file = File::open(path).map_err(|e| PowerError::Replay(format!("{}: {e}", path.display())))?;
    read_traces(BufReader::new(file))
}

/// Splits `file#index` into its path and optional trace index.
pub fn split_trace_ref(reference: &str) -> (&str, Option<usize>) {
    match reference.rsplit_once('#') {
        Some((path, idx)) => match idx.parse() {
            Ok(i) => (path, Some(i)),
            Err(_) => (reference, None),
        },
        None => (reference, None),
    }
}

/// Replays recorded traces. With several traces in the file, [`select`]
/// picks which one is active; the collector advances it once per prompt.
///
/// [`select`]: ReplaySource::select
#[derive(Debug, Clone)]
pub struct ReplaySource {
    traces: Vec<PowerTrace>,
    active: usize,
}

impl ReplaySource {
    pub fn new(traces: Vec<PowerTrace>) -> Result<Self, PowerError> {
        if traces.is_empty() {
            return Err(PowerError::Replay("no traces to replay".into()));
        }
        Ok(ReplaySource { traces, active: 0 })
    }

    /// Opens `path` or `path#k` (only trace `k`).
    pub fn open(reference: &Path) -> Result<Self, PowerError> {
        let text = reference.to_string_lossy();
        let (path, index) = split_trace_ref(&text);
        let mut traces = read_trace_file(Path::new(path))?;
        if let Some(k) = index {
            if k >= traces.len() {
                return Err(PowerError::Replay(format!("{path} has no trace #{k}")));
            }
            traces = vec![traces.swap_remove(k)];
        }
        Self::new(traces)
    }

    pub fn trace_count(&self) -> usize {
        self.traces.len()
    }

    /// Activates trace `i` modulo the number of traces.
    pub fn select(&mut self, i: usize) {
        self.active = i % self.traces.len();
    }

    pub fn active(&self) -> &PowerTrace {
        &self.traces[self.active]
    }
}

impl PowerSource for ReplaySource {
    fn source_id(&self) -> String {
        self.active().source_id.clone()
    }

    fn scope(&self) -> Scope {
        self.active().scope
    }

    /// Linear interpolation of the active trace, clamped at its ends.
    fn sample(&mut self, t_mono: f64) -> Result<Option<f64>, PowerError> {
        let samples = &self.active().samples;
        let (first, last) = match (samples.first(), samples.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(PowerError::Replay("empty trace".into())),
        };
        if t_mono <= first.t_mono {
            return Ok(Some(first.power_uw));
        }
        if t_mono >= last.t_mono {
            return Ok(Some(last.power_uw));
        }
        let i = samples.partition_point(|s| s.t_mono <= t_mono);
        let (a, b) = (&samples[i - 1], &samples[i]);
        let frac = (t_mono - a.t_mono) / (b.t_mono - a.t_mono);
        Ok(Some(a.power_uw + frac * (b.power_uw - a.power_uw)))
    }

    fn is_time_pure(&self) -> bool {
        true
    }

    fn recorded(&self) -> Option<&PowerTrace> {
        Some(self.active())
    }

    fn select_trace(&mut self, i: usize) {
        self.select(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(samples: &[(u64, f64, f64)]) -> PowerTrace {
        let mut t = PowerTrace::new("synthetic-constant", Scope::Process, 0.1);
        for &(t_wall, t_mono, power_uw) in samples {
            assert!(t.push(PowerSample { t_wall, t_mono, power_uw }));
        }
        t
    }

    #[test]
    fn wire_format_is_header_then_samples() {
        let t = trace(&[(1_700_000_000_000_000_000, 0.0, 1e6), (1_700_000_000_100_000_000, 0.1, 1.5e6)]);
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"source_id":"synthetic-constant","scope":"process","nominal_interval_s":0.1}"#
        );
        assert_eq!(lines[1], r#"{"t_wall":1700000000000000000,"t_mono":0.0,"power_uW":1000000.0}"#);
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn multiple_traces_per_file() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace(&[(0, 0.0, 1.0), (0, 1.0, 2.0)])).unwrap();
        write_trace(&mut buf, &trace(&[(0, 0.0, 3.0)])).unwrap();
        let traces = read_traces(buf.as_slice()).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[1].samples[0].power_uw, 3.0);
    }

    #[test]
    fn sample_before_header_is_rejected() {
        let text = r#"{"t_wall":0,"t_mono":0.0,"power_uW":1.0}"#;
        assert!(read_traces(text.as_bytes()).is_err());
    }

    #[test]
    fn trace_refs_split_on_hash() {
        assert_eq!(split_trace_ref("a/b.ndjson#3"), ("a/b.ndjson", Some(3)));
        assert_eq!(split_trace_ref("a/b.ndjson"), ("a/b.ndjson", None));
        assert_eq!(split_trace_ref("odd#name"), ("odd#name", None));
    }

    #[test]
    fn interpolates_between_recorded_samples() {
        let mut src = ReplaySource::new(vec![trace(&[(0, 0.0, 1.0), (0, 2.0, 3.0)])]).unwrap();
        assert_eq!(src.sample(1.0).unwrap(), Some(2.0));
        assert_eq!(src.sample(-1.0).unwrap(), Some(1.0));
        assert_eq!(src.sample(9.0).unwrap(), Some(3.0));
    }

    proptest! {
        #[test]
        fn replay_round_trip_is_bit_exact(
            steps in prop::collection::vec((1e-6f64..10.0, 0.0f64..1e9, any::<u64>()), 1..60)
        ) {
            let mut t = PowerTrace::new("replay", Scope::Device, 0.05);
            let mut now = 0.0;
            for (dt, p, wall) in steps {
                now += dt;
                t.push(PowerSample { t_wall: wall, t_mono: now, power_uw: p });
            }
            let mut first = Vec::new();
            write_trace(&mut first, &t).unwrap();
            let back = read_traces(first.as_slice()).unwrap();
            prop_assert_eq!(&back[0], &t);
            let mut second = Vec::new();
            write_trace(&mut second, &back[0]).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
