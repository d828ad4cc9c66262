//! Fixed-interval polling of power sources.
//!
//! All sources share one clock: each tick polls every source at the same
//! `t_mono`. A failed poll is a gap in that source's trace. Replay sources are
//! not polled; their recorded samples are emitted verbatim up to the stop time.

use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::{wall_clock_ns, PowerError, PowerSample, PowerSource, PowerTrace, MIN_INTERVAL_S};

/// One source's output from a sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRun {
    pub trace: PowerTrace,
    /// Polls that failed and were recorded as missing.
    pub gaps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StopRequest {
    Running,
    /// Stop after the first tick at or beyond this time.
    After(f64),
    Now,
}

/// Shared stop flag for a sampling run.
#[derive(Debug, Clone)]
pub struct StopSignal {
    inner: Arc<(Mutex<StopRequest>, Condvar)>,
}

impl Default for StopSignal {
    fn default() -> Self {
        StopSignal { inner: Arc::new((Mutex::new(StopRequest::Running), Condvar::new())) }
    }
}

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stops before the next tick.
    pub fn stop(&self) {
        self.set(StopRequest::Now);
    }

    /// Keeps sampling until a tick at `t_mono >= t`, then stops.
    pub fn stop_after(&self, t: f64) {
        self.set(StopRequest::After(t));
    }

    fn set(&self, request: StopRequest) {
        let (lock, cvar) = &*self.inner;
        *lock.lock().unwrap_or_else(|e| e.into_inner()) = request;
        cvar.notify_all();
    }

    fn get(&self) -> StopRequest {
        *self.inner.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Waits until `deadline` or until an immediate stop is requested.
    /// Returns `true` if stopped.
    fn wait_until(&self, deadline: Instant) -> bool {
        let (lock, cvar) = &*self.inner;
        let mut state = lock.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if *state == StopRequest::Now {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            state = cvar
                .wait_timeout(state, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

/// A configured set of sources ready to run.
pub struct Sampler {
    sources: Vec<Box<dyn PowerSource>>,
    interval_s: f64,
}

impl Sampler {
    /// Validates the interval and appends one monitor-self source if any
    /// source asks for it.
    pub fn new(mut sources: Vec<Box<dyn PowerSource>>, interval_s: f64) -> Result<Self, PowerError> {
        if sources.is_empty() {
            return Err(PowerError::NoSources);
        }
        if interval_s.is_nan() || interval_s < MIN_INTERVAL_S {
            return Err(PowerError::IntervalTooShort(interval_s));
        }
        if let Some(companion) = sources.iter().find_map(|s| s.monitor_companion()) {
            sources.push(companion?);
        }
        Ok(Sampler { sources, interval_s })
    }

    pub fn interval_s(&self) -> f64 {
        self.interval_s
    }

    pub fn all_time_pure(&self) -> bool {
        self.sources.iter().all(|s| s.is_time_pure())
    }

    /// Starts polling on a background thread.
    pub fn start(self) -> SamplerHandle {
        let stop = StopSignal::new();
        let started = Instant::now();
        let signal = stop.clone();
        let join = thread::Builder::new()
            .name("power-sampler".into())
            .spawn(move || {
                let mut sampler = self;
                let runs = sampler.run(started, &signal);
                (sampler, runs)
            })
            .expect("spawn sampler thread");
        SamplerHandle { stop, started, join }
    }

    /// Polls on the calling thread until `stop` fires.
    pub fn run_blocking(&mut self, stop: &StopSignal) -> Result<Vec<SourceRun>, PowerError> {
        self.run(Instant::now(), stop)
    }

    fn run(&mut self, started: Instant, stop: &StopSignal) -> Result<Vec<SourceRun>, PowerError> {
        self.sources.iter_mut().for_each(|s| s.reset());
        let interval = Duration::from_secs_f64(self.interval_s);
        let mut traces: Vec<PowerTrace> = self
            .sources
            .iter()
            .map(|s| PowerTrace::new(s.source_id(), s.scope(), self.interval_s))
            .collect();
        let mut gaps = vec![0usize; self.sources.len()];
        let mut failures = vec![0usize; self.sources.len()];
        let mut tick: u32 = 0;
        let mut last_t = 0.0;

        loop {
            let t_mono = started.elapsed().as_secs_f64();
            let t_wall = wall_clock_ns();
            last_t = t_mono.max(last_t);
            for (i, source) in self.sources.iter_mut().enumerate() {
                if source.recorded().is_some() {
                    continue;
                }
                match source.sample(t_mono) {
                    Ok(Some(power_uw)) => {
                        if !traces[i].push(PowerSample { t_wall, t_mono, power_uw }) {
                            gaps[i] += 1;
                        }
                    }
                    Ok(None) => {}
                    Err(e) => {
                        if failures[i] == 0 {
                            warn!("{}: {e}", traces[i].source_id);
                        } else {
                            debug!("{}: {e}", traces[i].source_id);
                        }
                        failures[i] += 1;
                        gaps[i] += 1;
                    }
                }
            }
            match stop.get() {
                StopRequest::Now => break,
                StopRequest::After(t) if t_mono >= t => break,
                _ => {}
            }
            // Skip ticks that were missed because polling overran the interval.
            let elapsed = started.elapsed();
            tick += 1;
            while interval * tick <= elapsed {
                tick += 1;
            }
            if stop.wait_until(started + interval * tick) {
                break;
            }
        }

        let end = started.elapsed().as_secs_f64().max(last_t);
        for (i, source) in self.sources.iter().enumerate() {
            if let Some(recorded) = source.recorded() {
                let mut trace = recorded.clone();
                trace.samples.retain(|s| s.t_mono <= end);
                traces[i] = trace;
            }
        }
        finish(traces, gaps)
    }

    /// Evaluates time-pure sources on the nominal grid `k * interval` from 0
    /// through the first grid point at or beyond `until`, without waiting.
    /// Replay sources emit their recorded trace unchanged. Wall timestamps
    /// are zero.
    pub fn simulate(&mut self, until: f64) -> Result<Vec<SourceRun>, PowerError> {
        if let Some(s) = self.sources.iter().find(|s| !s.is_time_pure()) {
            return Err(PowerError::CounterUnavailable(format!(
                "{} needs real-time polling and cannot run on a simulated clock",
                s.source_id()
            )));
        }
        let mut ticks = (until / self.interval_s).ceil().max(0.0) as u64;
        if (ticks as f64) * self.interval_s < until {
            ticks += 1;
        }
        let mut traces = Vec::with_capacity(self.sources.len());
        let mut gaps = Vec::with_capacity(self.sources.len());
        for source in self.sources.iter_mut() {
            source.reset();
            if let Some(recorded) = source.recorded() {
                traces.push(recorded.clone());
                gaps.push(0);
                continue;
            }
            let mut trace = PowerTrace::new(source.source_id(), source.scope(), self.interval_s);
            let mut missing = 0;
            for k in 0..=ticks {
                let t_mono = k as f64 * self.interval_s;
                match source.sample(t_mono) {
                    Ok(Some(power_uw)) => {
                        trace.push(PowerSample { t_wall: 0, t_mono, power_uw });
                    }
                    Ok(None) => {}
                    Err(_) => missing += 1,
                }
            }
            traces.push(trace);
            gaps.push(missing);
        }
        finish(traces, gaps)
    }

    /// Mutable access to the configured sources, e.g. to select replay traces.
    pub fn sources_mut(&mut self) -> &mut [Box<dyn PowerSource>] {
        &mut self.sources
    }
}

fn finish(traces: Vec<PowerTrace>, gaps: Vec<usize>) -> Result<Vec<SourceRun>, PowerError> {
    if let Some(empty) = traces.iter().find(|t| t.is_empty()) {
        return Err(PowerError::NoSamples(empty.source_id.clone()));
    }
    Ok(traces
        .into_iter()
        .zip(gaps)
        .map(|(trace, gaps)| SourceRun { trace, gaps })
        .collect())
}

/// A sampler running on its own thread.
pub struct SamplerHandle {
    stop: StopSignal,
    started: Instant,
    join: JoinHandle<(Sampler, Result<Vec<SourceRun>, PowerError>)>,
}

impl SamplerHandle {
    /// Seconds since the sampler's `t_mono = 0`.
    pub fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn signal(&self) -> StopSignal {
        self.stop.clone()
    }

    /// Stops before the next tick and returns the traces.
    pub fn stop(self) -> Result<Vec<SourceRun>, PowerError> {
        self.stop.stop();
        self.join().1
    }

    /// Keeps sampling until a tick at or beyond `t_mono`, so the trace
    /// brackets that instant, then stops.
    pub fn stop_after(self, t_mono: f64) -> Result<Vec<SourceRun>, PowerError> {
        self.stop.stop_after(t_mono);
        self.join().1
    }

    /// Like [`stop_after`](Self::stop_after) but also hands the sampler back
    /// for the next run.
    pub fn finish_after(self, t_mono: f64) -> (Sampler, Result<Vec<SourceRun>, PowerError>) {
        self.stop.stop_after(t_mono);
        self.join()
    }

    fn join(self) -> (Sampler, Result<Vec<SourceRun>, PowerError>) {
        match self.join.join() {
            Ok(out) => out,
            Err(panic) => std::panic::resume_unwind(panic),
        }
    }
}

/// Polls `sources` every `interval_s` on the calling thread until `stop`
/// fires, returning one run per source plus a monitor-self run when a
/// counter-based process source is active.
pub fn run_sampler(
    sources: Vec<Box<dyn PowerSource>>,
    interval_s: f64,
    stop: &StopSignal,
) -> Result<Vec<SourceRun>, PowerError> {
    Sampler::new(sources, interval_s)?.run_blocking(stop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::rapl::fake::FakeHost;
    use crate::power::{ProcessSelector, RaplProcessSource, ReplaySource, Scope, SyntheticSource, Waveform};

    fn constant(c: f64) -> Box<dyn PowerSource> {
        Box::new(SyntheticSource::new(Waveform::Constant(c)).unwrap())
    }

    #[test]
    fn interval_floor_and_empty_sources() {
        assert!(matches!(Sampler::new(vec![constant(1.0)], 0.005), Err(PowerError::IntervalTooShort(_))));
        assert!(matches!(Sampler::new(vec![], 0.1), Err(PowerError::NoSources)));
    }

    #[test]
    fn constant_source_sample_count() {
        let handle = Sampler::new(vec![constant(1e6)], 0.1).unwrap().start();
        thread::sleep(Duration::from_millis(1050));
        let runs = handle.stop().unwrap();
        let trace = &runs[0].trace;
        assert!((10..=11).contains(&trace.len()), "{} samples", trace.len());
        assert!(trace.samples.iter().all(|s| s.power_uw == 1_000_000.0));
        assert!(trace.is_well_formed());
        assert_eq!(runs[0].gaps, 0);
    }

    #[test]
    fn two_sources_share_the_clock() {
        let sine = Box::new(
            SyntheticSource::new(Waveform::Sine { mean: 2e6, amplitude: 1e6, period: 1.0 }).unwrap(),
        );
        let handle = Sampler::new(vec![constant(5.0), sine], 0.02).unwrap().start();
        thread::sleep(Duration::from_millis(300));
        let runs = handle.stop().unwrap();
        assert_eq!(runs.len(), 2);
        assert!(runs[0].trace.len().abs_diff(runs[1].trace.len()) <= 1);
        for s in &runs[1].trace.samples {
            let exact = Waveform::Sine { mean: 2e6, amplitude: 1e6, period: 1.0 }.value_at(s.t_mono);
            assert!((s.power_uw - exact).abs() <= 1e-12 * exact.abs());
        }
    }

    #[test]
    fn stop_after_brackets_the_instant() {
        let handle = Sampler::new(vec![constant(1.0)], 0.05).unwrap().start();
        let runs = handle.stop_after(0.12).unwrap();
        let last = runs[0].trace.samples.last().unwrap().t_mono;
        assert!(last >= 0.12);
    }

    #[test]
    fn replay_reproduces_recorded_trace() {
        let recorded = Sampler::new(vec![constant(7.0)], 0.02)
            .unwrap()
            .start()
            .stop_after(0.1)
            .unwrap()
            .remove(0)
            .trace;
        let replay = Box::new(ReplaySource::new(vec![recorded.clone()]).unwrap());
        let handle = Sampler::new(vec![replay], 0.02).unwrap().start();
        let runs = handle.stop_after(recorded.samples.last().unwrap().t_mono + 0.05).unwrap();
        assert_eq!(runs[0].trace, recorded);
    }

    #[test]
    fn failing_source_fails_the_run() {
        let host = FakeHost::new();
        let src = RaplProcessSource::new(
            ProcessSelector::new("no_such_process_xyz").unwrap(),
            &host.powercap(),
            &host.proc_root(),
        )
        .unwrap();
        let handle = Sampler::new(vec![Box::new(src)], 0.02).unwrap().start();
        assert!(matches!(handle.stop_after(0.05), Err(PowerError::NoSamples(_))));
    }

    #[test]
    fn rapl_source_adds_monitor_self_trace() {
        let host = FakeHost::new();
        host.set_process(42, "ollama", 0);
        host.set_process(std::process::id(), "melodi", 0);
        let src =
            RaplProcessSource::new(ProcessSelector::default(), &host.powercap(), &host.proc_root()).unwrap();
        let sampler = Sampler::new(vec![Box::new(src)], 0.02).unwrap();
        let handle = sampler.start();
        let runs = handle.stop_after(0.1).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1].trace.scope, Scope::MonitorSelf);
        assert!(!runs[1].trace.is_empty());
    }

    #[test]
    fn simulated_clock_covers_until() {
        let mut sampler = Sampler::new(vec![constant(3.0)], 0.1).unwrap();
        let runs = sampler.simulate(2.05).unwrap();
        let samples = &runs[0].trace.samples;
        assert_eq!(samples.len(), 22);
        assert!(samples.last().unwrap().t_mono >= 2.05);
        assert!(samples.iter().all(|s| s.t_wall == 0));
    }

    #[test]
    fn blocking_run_with_external_stop() {
        let stop = StopSignal::new();
        let remote = stop.clone();
        let t = thread::spawn(move || {
            thread::sleep(Duration::from_millis(100));
            remote.stop();
        });
        let runs = run_sampler(vec![constant(1.0)], 0.02, &stop).unwrap();
        t.join().unwrap();
        assert!(runs[0].trace.len() >= 3);
    }
}
