//! Prompt ingestion and the NDJSON record file.
//!
//! A record file starts with one [`RunManifest`] line followed by one
//! [`InferenceRecord`] per line. Records are appended and flushed one at a
//! time, so a crash can only damage the line being written; the reader drops
//! a malformed final line with a warning.

pub mod collect;
pub mod synth;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{ApiFlavor, DurationSource};

pub use collect::{collect, collect_with, CollectConfig, CollectSummary};

pub const FORMAT_TAG: &str = "melodi-records/1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: parse failure at line {line}: {reason}")]
    ParseFailure { path: String, line: usize, reason: String },
    #[error("{0}: no prompts")]
    EmptyDataset(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error(transparent)]
    Power(#[from] crate::power::PowerError),
    #[error("collection aborted: {failed} of the first {attempted} requests failed; last error: {last}")]
    Aborted {
        failed: usize,
        attempted: usize,
        last: crate::llm::LlmError,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptFormat {
    Alpaca,
    Codefeedback,
    Plain,
}

impl fmt::Display for PromptFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptFormat::Alpaca => "alpaca",
            PromptFormat::Codefeedback => "codefeedback",
            PromptFormat::Plain => "plain",
        })
    }
}

impl FromStr for PromptFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpaca" => Ok(PromptFormat::Alpaca),
            "codefeedback" | "code-feedback" => Ok(PromptFormat::Codefeedback),
            "plain" => Ok(PromptFormat::Plain),
            other => Err(format!("unknown prompt format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    /// Position of the entry in the source file.
    pub id: usize,
    pub prompt_text: String,
    pub source_dataset: PromptFormat,
}

/// One inference with its measured energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub record_id: u64,
    pub prompt_id: usize,
    pub source_dataset: PromptFormat,
    pub model_name: String,
    pub hardware_label: String,
    pub prompt_text: String,
    pub response_text: String,
    pub prompt_token_length: u64,
    pub response_token_length: u64,
    /// Unix nanoseconds when the request was sent.
    pub t_request_wall: u64,
    pub response_duration_s: f64,
    pub total_duration_s: f64,
    pub duration_source: DurationSource,
    /// Attribution window on the sampler clock.
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub energy_llm_kwh: f64,
    pub energy_per_token_kwh: Option<f64>,
    pub energy_gpu_kwh: Option<f64>,
    pub energy_monitor_kwh: Option<f64>,
    pub coverage_fraction: f64,
    /// `file#k`: trace `k` of a sidecar trace file, relative to the record file.
    pub trace_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDataset {
    pub path: String,
    pub format: PromptFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub run_id: String,
    pub endpoint: String,
    pub api_flavor: ApiFlavor,
    pub model_name: String,
    pub hardware_label: String,
    pub prompt_dataset: PromptDataset,
    /// Codefeedback entries contribute their first user turn only.
    pub multi_turn_policy: String,
    pub power_sources: Vec<String>,
    pub interval_s: f64,
    /// `live` or `simulated`.
    pub clock: String,
    pub cooldown_s: f64,
    pub seed: u64,
    pub limit: Option<usize>,
    pub started_wall_ns: u64,
    pub finished_wall_ns: Option<u64>,
    pub harness_version: String,
}

impl RunManifest {
    /// A manifest for data that did not come from a collection run.
    pub fn detached(model_name: &str, hardware_label: &str) -> Self {
        RunManifest {
            format: FORMAT_TAG.to_string(),
            run_id: "detached".to_string(),
            endpoint: String::new(),
            api_flavor: ApiFlavor::Ollama,
            model_name: model_name.to_string(),
            hardware_label: hardware_label.to_string(),
            prompt_dataset: PromptDataset { path: String::new(), format: PromptFormat::Plain },
            multi_turn_policy: "first-user-turn".to_string(),
            power_sources: Vec::new(),
            interval_s: crate::power::DEFAULT_INTERVAL_S,
            clock: "simulated".to_string(),
            cooldown_s: 0.0,
            seed: 0,
            limit: None,
            started_wall_ns: 0,
            finished_wall_ns: Some(0),
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// prompts

pub fn load_prompts(path: &Path, format: PromptFormat, limit: Option<usize>) -> Result<Vec<PromptEntry>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut entries = parse_prompts(&text, format).map_err(|(line, reason)| DatasetError::ParseFailure {
        path: path.display().to_string(),
        line,
        reason,
    })?;
    if let Some(n) = limit {
        entries.truncate(n);
    }
    if entries.is_empty() {
        return Err(DatasetError::EmptyDataset(path.display().to_string()));
    }
    Ok(entries)
}

/// Parses prompt text. Errors carry a 1-based line number (0 when the whole
/// document is at fault).
pub fn parse_prompts(text: &str, format: PromptFormat) -> Result<Vec<PromptEntry>, (usize, String)> {
    let texts: Vec<Option<String>> = match format {
        PromptFormat::Plain => text
            .lines()
            .map(|l| {
                let l = l.trim_end_matches('\r');
                (!l.trim().is_empty()).then(|| l.to_string())
            })
            .collect(),
        PromptFormat::Alpaca => {
            let items: Vec<Value> = serde_json::from_str(text).map_err(|e| (e.line(), e.to_string()))?;
            items
                .iter()
                .enumerate()
                .map(|(i, item)| alpaca_prompt(item).map_err(|e| (0, format!("entry {i}: {e}"))))
                .collect::<Result<_, _>>()?
        }
        PromptFormat::Codefeedback => json_or_jsonl(text)?.iter().map(first_user_turn).collect(),
    };
    let mut entries = Vec::new();
    for (id, t) in texts.into_iter().enumerate() {
        match t {
            Some(prompt_text) if !prompt_text.trim().is_empty() => {
                entries.push(PromptEntry { id, prompt_text, source_dataset: format })
            }
            _ => warn!("skipping {format} entry {id}: empty prompt"),
        }
    }
    Ok(entries)
}

fn alpaca_prompt(item: &Value) -> Result<Option<String>, String> {
    let instruction = item
        .get("instruction")
        .and_then(Value::as_str)
        .ok_or("missing string field `instruction`")?;
    let input = match item.get("input") {
        None | Some(Value::Null) => "",
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err("`input` must be a string".into()),
    };
    Ok(Some(if input.is_empty() {
        instruction.to_string()
    } else {
        format!("{instruction}\n\n{input}")
    }))
}

fn json_or_jsonl(text: &str) -> Result<Vec<Value>, (usize, String)> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| (e.line(), e.to_string()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}

fn first_user_turn(item: &Value) -> Option<String> {
    item.get("messages")?
        .as_array()?
        .iter()
        .find(|m| m.get("role").and_then(Value::as_str) == Some("user"))?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

// ---------------------------------------------------------------------------
// record file

/// Appends records to a new record file.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
    manifest: RunManifest,
}

impl RecordWriter {
    /// Creates (truncating) `path` and writes the manifest line.
    pub fn create(path: &Path, manifest: &RunManifest) -> Result<Self, DatasetError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut writer = RecordWriter { path: path.to_path_buf(), out: BufWriter::new(file), manifest: manifest.clone() };
        writer.write_line(manifest)?;
        Ok(writer)
    }

    pub fn append(&mut self, record: &InferenceRecord) -> Result<(), DatasetError> {
        self.write_line(record)
    }

    fn write_line<T: Serialize>(&mut self, value: &T) -> Result<(), DatasetError> {
        let mut line = serde_json::to_vec(value).expect("records serialize");
        line.push(b'\n');
        self.out.write_all(&line).map_err(io_err(&self.path))?;
        self.out.flush().map_err(io_err(&self.path))
    }

    /// Rewrites the manifest line with `finished_wall_ns` set. The file is
    /// replaced atomically so readers see either the old or the new header.
    pub fn finish(mut self, finished_wall_ns: u64) -> Result<PathBuf, DatasetError> {
        self.out.flush().map_err(io_err(&self.path))?;
        drop(self.out);
        self.manifest.finished_wall_ns = Some(finished_wall_ns);
        let text = fs::read_to_string(&self.path).map_err(io_err(&self.path))?;
        let body = text.split_once('\n').map(|(_, rest)| rest).unwrap_or("");
        let mut tmp_name = self.path.file_name().unwrap_or_default().to_os_string();
        tmp_name.push(".tmp");
        let tmp = self.path.with_file_name(tmp_name);
        let mut header = serde_json::to_string(&self.manifest).expect("manifest serializes");
        header.push('\n');
        fs::write(&tmp, header + body).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
        Ok(self.path)
    }
}

/// Writes a complete record file in one go.
pub fn write_records(path: &Path, manifest: &RunManifest, records: &[InferenceRecord]) -> Result<(), DatasetError> {
    let mut w = RecordWriter::create(path, manifest)?;
    for r in records {
        w.append(r)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(RunManifest, Vec<InferenceRecord>), DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    parse_dataset(BufReader::new(file), &path.display().to_string())
}

pub fn read_records(path: &Path) -> Result<Vec<InferenceRecord>, DatasetError> {
    read_dataset(path).map(|(_, records)| records)
}

/// Reads a record file from any reader; `name` is used in errors.
pub fn parse_dataset<R: BufRead>(input: R, name: &str) -> Result<(RunManifest, Vec<InferenceRecord>), DatasetError> {
    let fail = |line: usize, reason: String| DatasetError::ParseFailure { path: name.to_string(), line, reason };
    let mut lines = Vec::new();
    for line in input.lines() {
        lines.push(line.map_err(|e| DatasetError::Io { path: name.to_string(), source: e })?);
    }
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let header = lines.first().ok_or_else(|| fail(1, "missing manifest".into()))?;
    let manifest: RunManifest = serde_json::from_str(header).map_err(|e| fail(1, format!("manifest: {e}")))?;
    let mut records = Vec::with_capacity(lines.len().saturating_sub(1));
    let last = lines.len() - 1;
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<InferenceRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) if i == last => {
                warn!("{name}: dropping truncated final line {}: {e}", i + 1);
            }
            Err(e) => return Err(fail(i + 1, e.to_string())),
        }
    }
    Ok((manifest, records))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn record(i: u64) -> InferenceRecord {
        InferenceRecord {
            record_id: i,
            prompt_id: i as usize,
            source_dataset: PromptFormat::Alpaca,
            model_name: "mock".into(),
            hardware_label: "desk".into(),
            prompt_text: format!("Explain item {i}.\n\nWith \"quotes\" and é."),
            response_text: "the answer".into(),
            prompt_token_length: 3 + i,
            response_token_length: i,
            t_request_wall: 1_700_000_000_000_000_000 + i,
            response_duration_s: 0.01 * i as f64,
            total_duration_s: 0.01 * i as f64 + 0.05,
            duration_source: DurationSource::Service,
            window_start_s: 0.0,
            window_end_s: 0.01 * i as f64 + 0.05,
            energy_llm_kwh: 1e6 * (0.01 * i as f64 + 0.05) / 3.6e12,
            energy_per_token_kwh: (i > 0).then(|| 1e-12 / i as f64),
            energy_gpu_kwh: None,
            energy_monitor_kwh: Some(1e-15),
            coverage_fraction: 1.0,
            trace_refs: vec![format!("run.traces/synthetic-constant.ndjson#{i}")],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::record;
    use super::*;

    fn prompts(text: &str, format: PromptFormat) -> Vec<String> {
        parse_prompts(text, format).unwrap().into_iter().map(|e| e.prompt_text).collect()
    }

    #[test]
    fn alpaca_assembly() {
        let text = r#"[{"instruction":"Summarize.","input":"Some text."},{"instruction":"Say hi.","input":""},{"instruction":"x"}]"#;
        assert_eq!(prompts(text, PromptFormat::Alpaca), ["Summarize.\n\nSome text.", "Say hi.", "x"]);
    }

    #[test]
    fn alpaca_missing_instruction_is_parse_failure() {
        assert!(parse_prompts(r#"[{"input":"a"}]"#, PromptFormat::Alpaca).is_err());
        assert!(parse_prompts("not json", PromptFormat::Alpaca).is_err());
    }

    #[test]
    fn codefeedback_takes_first_user_turn() {
        let jsonl = concat!(
            r#"{"messages":[{"role":"system","content":"sys"},{"role":"user","content":"first"},{"role":"user","content":"second"}]}"#,
            "\n",
            r#"{"messages":[{"role":"assistant","content":"only"}]}"#,
            "\n",
            r#"{"messages":[{"role":"user","content":"third"}]}"#,
        );
        let got = parse_prompts(jsonl, PromptFormat::Codefeedback).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!((got[0].id, got[0].prompt_text.as_str()), (0, "first"));
        assert_eq!((got[1].id, got[1].prompt_text.as_str()), (2, "third"));
        let array = r#"[{"messages":[{"role":"user","content":"a"}]}]"#;
        assert_eq!(prompts(array, PromptFormat::Codefeedback), ["a"]);
    }

    #[test]
    fn plain_lines_and_limit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.txt");
        fs::write(&p, "one\r\n\ntwo\nthree\n").unwrap();
        let got = load_prompts(&p, PromptFormat::Plain, Some(2)).unwrap();
        assert_eq!(got.iter().map(|e| e.prompt_text.as_str()).collect::<Vec<_>>(), ["one", "two"]);
        fs::write(&p, "\n \n").unwrap();
        assert!(matches!(load_prompts(&p, PromptFormat::Plain, None), Err(DatasetError::EmptyDataset(_))));
    }

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        let manifest = RunManifest::detached("mock", "desk");
        let records: Vec<_> = (0..5).map(record).collect();
        write_records(&path, &manifest, &records).unwrap();
        let (m, back) = read_dataset(&path).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(back, records);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert_eq!(read_records(&path).unwrap(), records[..4]);
    }

    #[test]
    fn empty_file_with_manifest_has_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        write_records(&path, &RunManifest::detached("m", "h"), &[]).unwrap();
        assert!(read_records(&path).unwrap().is_empty());
    }

    #[test]
    fn garbage_mid_stream_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        write_records(&path, &RunManifest::detached("m", "h"), &[record(0)]).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("garbage\n");
        text.push_str(&serde_json::to_string(&record(1)).unwrap());
        text.push('\n');
        fs::write(&path, text).unwrap();
        match read_records(&path) {
            Err(DatasetError::ParseFailure { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse failure, got {other:?}"),
        }
    }

    #[test]
    fn finish_rewrites_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        let mut manifest = RunManifest::detached("m", "h");
        manifest.finished_wall_ns = None;
        let mut w = RecordWriter::create(&path, &manifest).unwrap();
        w.append(&record(1)).unwrap();
        w.finish(42).unwrap();
        let (m, records) = read_dataset(&path).unwrap();
        assert_eq!(m.finished_wall_ns, Some(42));
        assert_eq!(records, vec![record(1)]);
        assert!(!dir.path().join("run.ndjson.tmp").exists());
    }

    #[test]
    fn optional_energies_serialize_as_null() {
        let line = serde_json::to_string(&record(0)).unwrap();
        assert!(line.contains(r#""energy_per_token_kwh":null"#));
        assert!(line.contains(r#""energy_gpu_kwh":null"#));
    }
}
