//! The collection loop: one request at a time, each bracketed by a sampling
//! run, each producing one record.
//!
//! Two clocks are supported. With a live clock the sampler polls in real time
//! while the request is in flight and the attribution window is the local
//! send/receive span. When output must be stable and every source is a pure
//! function of time, the run uses a simulated clock instead: sources are
//! evaluated on the nominal grid over `[0, total_duration]` as reported by the
//! service, which makes the whole file reproducible byte for byte.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};
use sha2::{Digest, Sha256};

use super::{
    io_err, load_prompts, DatasetError, InferenceRecord, PromptDataset, PromptFormat, RecordWriter, RunManifest,
    FORMAT_TAG,
};
use crate::energy::{compute_metrics, integrate_trapezoid, per_token, to_kwh, InferenceWindow};
use crate::llm::{ApiFlavor, DurationSource, LlmClient, LlmError, LlmRequest, LlmResponse, DEFAULT_TIMEOUT};
use crate::power::replay::{read_trace_file, split_trace_ref, write_trace};
use crate::power::{wall_clock_ns, HostPaths, PowerError, Sampler, Scope, SourceRun, SourceSpec};

/// Requests looked at by the abort heuristic.
const ABORT_WINDOW: usize = 10;

#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub endpoint: String,
    pub api_flavor: ApiFlavor,
    pub model_name: String,
    pub hardware_label: String,
    pub prompts_path: PathBuf,
    pub prompt_format: PromptFormat,
    pub limit: Option<usize>,
    /// Source specs as accepted by [`SourceSpec`]'s `FromStr`.
    pub power_sources: Vec<String>,
    pub interval_s: f64,
    pub seed: u64,
    pub out_path: PathBuf,
    /// Defaults to `<out_path>.traces/`.
    pub traces_dir: Option<PathBuf>,
    pub stable_output: bool,
    pub cooldown: Duration,
    pub timeout: Duration,
    pub bearer_token: Option<String>,
    pub max_tokens: Option<u32>,
    pub host: HostPaths,
}

impl CollectConfig {
    pub fn new(endpoint: &str, model_name: &str, prompts_path: &Path, out_path: &Path) -> Self {
        CollectConfig {
            endpoint: endpoint.to_string(),
            api_flavor: ApiFlavor::Ollama,
            model_name: model_name.to_string(),
            hardware_label: "unknown".to_string(),
            prompts_path: prompts_path.to_path_buf(),
            prompt_format: PromptFormat::Alpaca,
            limit: None,
            power_sources: vec!["rapl".to_string()],
            interval_s: crate::power::DEFAULT_INTERVAL_S,
            seed: 0,
            out_path: out_path.to_path_buf(),
            traces_dir: None,
            stable_output: false,
            cooldown: Duration::from_secs(1),
            timeout: DEFAULT_TIMEOUT,
            bearer_token: None,
            max_tokens: None,
            host: HostPaths::default(),
        }
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.traces_dir.clone().unwrap_or_else(|| {
            let mut name = self.out_path.file_name().unwrap_or_default().to_os_string();
            name.push(".traces");
            self.out_path.with_file_name(name)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectSummary {
    pub path: PathBuf,
    pub manifest: RunManifest,
    pub records: usize,
    pub skipped: usize,
    pub mean_energy_kwh: Option<f64>,
    pub mean_energy_per_token_kwh: Option<f64>,
}

pub fn collect(config: &CollectConfig) -> Result<CollectSummary, DatasetError> {
    collect_with(config, |_| {})
}

/// Runs a collection, calling `on_record` after each record is written.
pub fn collect_with<F: FnMut(&InferenceRecord)>(
    config: &CollectConfig,
    mut on_record: F,
) -> Result<CollectSummary, DatasetError> {
    if config.power_sources.is_empty() {
        return Err(DatasetError::InvalidConfig("at least one power source is required".into()));
    }
    let prompts = load_prompts(&config.prompts_path, config.prompt_format, config.limit)?;
    let specs = config
        .power_sources
        .iter()
        .map(|s| s.parse::<SourceSpec>())
        .collect::<Result<Vec<_>, _>>()?;
    let sources = specs.iter().map(|s| s.build_on(&config.host)).collect::<Result<Vec<_>, _>>()?;
    let mut sampler = Some(Sampler::new(sources, config.interval_s)?);
    let simulated = config.stable_output && sampler.as_ref().is_some_and(Sampler::all_time_pure);
    if config.stable_output && !simulated {
        warn!("--stable-output with live power sources: timestamps are zeroed but energies will vary between runs");
    }

    let mut manifest = RunManifest {
        format: FORMAT_TAG.to_string(),
        run_id: String::new(),
        endpoint: config.endpoint.clone(),
        api_flavor: config.api_flavor,
        model_name: config.model_name.clone(),
        hardware_label: config.hardware_label.clone(),
        prompt_dataset: PromptDataset {
            path: config.prompts_path.display().to_string(),
            format: config.prompt_format,
        },
        multi_turn_policy: "first-user-turn".to_string(),
        power_sources: config.power_sources.clone(),
        interval_s: config.interval_s,
        clock: if simulated { "simulated" } else { "live" }.to_string(),
        cooldown_s: config.cooldown.as_secs_f64(),
        seed: config.seed,
        limit: config.limit,
        started_wall_ns: if config.stable_output { 0 } else { wall_clock_ns() },
        finished_wall_ns: None,
        harness_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    manifest.run_id = run_id(&manifest);

    let traces_dir = config.traces_dir();
    fs::create_dir_all(&traces_dir).map_err(io_err(&traces_dir))?;
    let base_dir = config.out_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut sidecars = Sidecars::new(traces_dir, base_dir);
    let mut writer = RecordWriter::create(&config.out_path, &manifest)?;
    let client = LlmClient::with_options(&config.endpoint, config.api_flavor, config.timeout, config.bearer_token.clone());

    let mut attempted = 0usize;
    let mut early_failures = 0usize;
    let mut last_error: Option<LlmError> = None;
    let mut skipped = 0usize;
    let mut energies = Vec::new();
    let mut per_token_energies = Vec::new();
    let probe_count = prompts.len().min(ABORT_WINDOW);

    for (i, prompt) in prompts.iter().enumerate() {
        if i > 0 && !config.cooldown.is_zero() {
            thread::sleep(config.cooldown);
        }
        let request = LlmRequest::new(&config.model_name, &prompt.prompt_text)?.with_max_tokens(config.max_tokens);
        let mut s = sampler.take().expect("sampler is returned after every run");
        for source in s.sources_mut() {
            source.select_trace(i);
        }
        let (s, outcome) = if simulated { run_simulated(s, &client, &request) } else { run_live(s, &client, &request) };
        sampler = Some(s);
        attempted += 1;

        if let Err(RunError::Request(e)) = &outcome {
            warn!("prompt {}: request failed: {e}", prompt.id);
            if attempted <= ABORT_WINDOW {
                early_failures += 1;
            }
        }
        let outcome = match outcome {
            Err(RunError::Request(e)) => {
                last_error = Some(e);
                None
            }
            other => Some(other),
        };
        if attempted <= ABORT_WINDOW && abort_due(early_failures, attempted, probe_count) {
            let last = last_error.take().expect("abort implies a failure");
            return Err(DatasetError::Aborted { failed: early_failures, attempted, last });
        }
        let Some(outcome) = outcome else {
            skipped += 1;
            continue;
        };
        let measured = match outcome {
            Ok(m) => m,
            Err(RunError::Request(_)) => unreachable!("handled above"),
            Err(RunError::Power(e)) => {
                warn!("prompt {}: power sampling failed: {e}", prompt.id);
                skipped += 1;
                continue;
            }
        };
        let Measured { response, window, mut runs } = measured;
        let energy = match attribute(&runs, &window, response.response_token_length) {
            Ok(e) => e,
            Err(reason) => {
                warn!("prompt {}: {reason}; record skipped", prompt.id);
                skipped += 1;
                continue;
            }
        };
        if config.stable_output {
            for run in runs.iter_mut() {
                run.trace.samples.iter_mut().for_each(|s| s.t_wall = 0);
            }
        }
        let trace_refs = sidecars.store(&runs)?;
        let record = InferenceRecord {
            record_id: energies.len() as u64,
            prompt_id: prompt.id,
            source_dataset: prompt.source_dataset,
            model_name: config.model_name.clone(),
            hardware_label: config.hardware_label.clone(),
            prompt_text: prompt.prompt_text.clone(),
            response_text: response.response_text,
            prompt_token_length: response.prompt_token_length,
            response_token_length: response.response_token_length,
            t_request_wall: if config.stable_output { 0 } else { response.t_request_wall },
            response_duration_s: response.response_duration_s,
            total_duration_s: response.total_duration_s,
            duration_source: response.duration_source,
            window_start_s: window.t_start_mono,
            window_end_s: window.t_end_mono,
            energy_llm_kwh: energy.llm_kwh,
            energy_per_token_kwh: per_token(energy.llm_kwh, response.response_token_length),
            energy_gpu_kwh: energy.gpu_kwh,
            energy_monitor_kwh: energy.monitor_kwh,
            coverage_fraction: energy.coverage,
            trace_refs,
        };
        writer.append(&record)?;
        energies.push(record.energy_llm_kwh);
        per_token_energies.extend(record.energy_per_token_kwh);
        on_record(&record);
    }

    let finished = if config.stable_output { 0 } else { wall_clock_ns() };
    let path = writer.finish(finished)?;
    manifest.finished_wall_ns = Some(finished);
    info!("wrote {} records to {} ({} skipped)", energies.len(), path.display(), skipped);
    Ok(CollectSummary {
        path,
        manifest,
        records: energies.len(),
        skipped,
        mean_energy_kwh: mean(&energies),
        mean_energy_per_token_kwh: mean(&per_token_energies),
    })
}

/// More than half of the first requests failed. With fewer than ten prompts
/// the decision waits until all of them have been tried.
fn abort_due(failures: usize, attempted: usize, probe_count: usize) -> bool {
    2 * failures > ABORT_WINDOW || (attempted == probe_count && 2 * failures > probe_count)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn run_id(manifest: &RunManifest) -> String {
    let bytes = serde_json::to_vec(manifest).expect("manifest serializes");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

struct Measured {
    response: LlmResponse,
    window: InferenceWindow,
    runs: Vec<SourceRun>,
}

enum RunError {
    Request(LlmError),
    Power(String),
}

fn run_live(sampler: Sampler, client: &LlmClient, request: &LlmRequest) -> (Sampler, Result<Measured, RunError>) {
    let lead = 1.5 * sampler.interval_s();
    let handle = sampler.start();
    // Let every source record at least one sample before the window opens.
    let wait = lead - handle.elapsed();
    if wait > 0.0 {
        thread::sleep(Duration::from_secs_f64(wait));
    }
    let t_start = handle.elapsed();
    let sent = Instant::now();
    let result = client.generate(request);
    let t_end = (t_start + sent.elapsed().as_secs_f64()).max(handle.elapsed());
    let (sampler, runs) = handle.finish_after(t_end);
    let outcome = result.map_err(RunError::Request).and_then(|response| {
        let runs = runs.map_err(|e| RunError::Power(e.to_string()))?;
        let window = InferenceWindow::new(t_start, t_end).map_err(|e| RunError::Power(e.to_string()))?;
        Ok(Measured { response, window, runs })
    });
    (sampler, outcome)
}

fn run_simulated(mut sampler: Sampler, client: &LlmClient, request: &LlmRequest) -> (Sampler, Result<Measured, RunError>) {
    let sent = Instant::now();
    let outcome = client.generate(request).map_err(RunError::Request).and_then(|response| {
        let span = match response.duration_source {
            DurationSource::Service => response.total_duration_s,
            DurationSource::LocalWall => sent.elapsed().as_secs_f64(),
        };
        // A zero-length span still gets one sampling interval to integrate over.
        let span = if span > 0.0 { span } else { sampler.interval_s() };
        let window = InferenceWindow::new(0.0, span).map_err(|e| RunError::Power(e.to_string()))?;
        let runs = sampler.simulate(span).map_err(|e| RunError::Power(e.to_string()))?;
        Ok(Measured { response, window, runs })
    });
    (sampler, outcome)
}

struct Attributed {
    llm_kwh: f64,
    gpu_kwh: Option<f64>,
    monitor_kwh: Option<f64>,
    coverage: f64,
}

/// Sums process- and device-scope energy into the LLM figure. The monitor's
/// own consumption is reported separately and never subtracted.
fn attribute(runs: &[SourceRun], window: &InferenceWindow, tokens: u64) -> Result<Attributed, String> {
    let mut llm = 0.0;
    let mut gpu: Option<f64> = None;
    let mut monitor: Option<f64> = None;
    let mut coverage = f64::INFINITY;
    for run in runs {
        let id = &run.trace.source_id;
        match run.trace.scope {
            Scope::MonitorSelf => match compute_metrics(&run.trace, window, tokens) {
                Ok(m) => monitor = Some(monitor.unwrap_or(0.0) + m.energy_kwh),
                Err(e) => warn!("{id}: monitor energy unavailable: {e}"),
            },
            scope => {
                let m = compute_metrics(&run.trace, window, tokens).map_err(|e| format!("{id}: {e}"))?;
                llm += m.energy_kwh;
                coverage = coverage.min(m.coverage_fraction);
                if scope == Scope::Device {
                    gpu = Some(gpu.unwrap_or(0.0) + m.energy_kwh);
                }
            }
        }
    }
    if !coverage.is_finite() {
        return Err("no process or device power source".into());
    }
    Ok(Attributed { llm_kwh: llm, gpu_kwh: gpu, monitor_kwh: monitor, coverage })
}

/// One trace file per source, one trace block per record.
struct Sidecars {
    dir: PathBuf,
    base: PathBuf,
    files: Vec<Option<(BufWriter<File>, PathBuf, usize)>>,
    used_names: HashSet<String>,
}

impl Sidecars {
    fn new(dir: PathBuf, base: PathBuf) -> Self {
        Sidecars { dir, base, files: Vec::new(), used_names: HashSet::new() }
    }

    fn store(&mut self, runs: &[SourceRun]) -> Result<Vec<String>, DatasetError> {
        if self.files.len() < runs.len() {
            self.files.resize_with(runs.len(), || None);
        }
        let mut refs = Vec::with_capacity(runs.len());
        for (i, run) in runs.iter().enumerate() {
            if self.files[i].is_none() {
                let name = self.file_name(&run.trace.source_id, i);
                let path = self.dir.join(name);
                let file = File::create(&path).map_err(io_err(&path))?;
                self.files[i] = Some((BufWriter::new(file), path, 0));
            }
            let (out, path, count) = self.files[i].as_mut().expect("opened above");
            write_trace(&mut *out, &run.trace).and_then(|_| out.flush()).map_err(io_err(path))?;
            let shown = path.strip_prefix(&self.base).unwrap_or(path);
            refs.push(format!("{}#{}", shown.display(), count));
            *count += 1;
        }
        Ok(refs)
    }

    fn file_name(&mut self, source_id: &str, index: usize) -> String {
        let clean: String = source_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
            .collect();
        let mut name = format!("{clean}.ndjson");
        if !self.used_names.insert(name.clone()) {
            name = format!("{clean}-{index}.ndjson");
            self.used_names.insert(name.clone());
        }
        name
    }
}

/// Recomputes a record's `energy_llm_kwh` from its stored traces.
/// `record_file` is the file the record was read from.
pub fn recompute_llm_energy(record_file: &Path, record: &InferenceRecord) -> Result<f64, DatasetError> {
    let base = record_file.parent().unwrap_or(Path::new(""));
    let window = InferenceWindow::new(record.window_start_s, record.window_end_s)
        .map_err(|e| DatasetError::InvalidConfig(e.to_string()))?;
    let mut total = 0.0;
    for reference in &record.trace_refs {
        let (file, index) = split_trace_ref(reference);
        let path = base.join(file);
        let traces = read_trace_file(&path)?;
        let trace = traces
            .get(index.unwrap_or(0))
            .ok_or_else(|| PowerError::Replay(format!("{reference}: no such trace")))?;
        if trace.scope == Scope::MonitorSelf {
            continue;
        }
        let integral = integrate_trapezoid(trace, &window).map_err(|e| DatasetError::InvalidConfig(e.to_string()))?;
        total += to_kwh(integral.energy_uws);
    }
    Ok(total)
}
