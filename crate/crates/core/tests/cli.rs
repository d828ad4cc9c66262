use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use melodi::dataset::synth::{linear_energy_records, SynthSpec};
use melodi::dataset::{read_dataset, write_records, RunManifest};
use melodi::llm::{MockConfig, MockServer};

fn melodi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_melodi"))
        .args(args)
        .env_clear()
        .output()
        .expect("run melodi")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth_file(dir: &Path, name: &str, n: usize, model: &str) -> String {
    let mut records = linear_energy_records(&SynthSpec { n, seed: n as u64, ..SynthSpec::default() });
    for r in &mut records {
        r.model_name = model.into();
    }
    let path = dir.join(name);
    write_records(&path, &RunManifest::detached(model, "none"), &records).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn collect_against_mock() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::bind("127.0.0.1:0", MockConfig { seed: 7, ..MockConfig::default() }).unwrap().spawn();
    let prompts = dir.path().join("p.txt");
    fs::write(&prompts, "one\ntwo\n\nthree\n").unwrap();
    let out = dir.path().join("r.ndjson");
    let o = melodi(&[
        "collect",
        "--prompts", prompts.to_str().unwrap(),
        "--format", "plain",
        "--endpoint", server.endpoint(),
        "--model", "mock",
        "--power-source", "synthetic:constant:1e7",
        "--power-source", "synthetic:linear:1000:5e6",
        "--stable-output",
        "--cooldown-ms", "0",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (manifest, records) = read_dataset(&out).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(manifest.clock, "simulated");
    assert_eq!(manifest.power_sources.len(), 2);
    for r in &records {
        assert_eq!(r.trace_refs.len(), 2);
        assert!(r.energy_llm_kwh > 0.0);
    }
    assert!(out.with_extension("ndjson.traces").join("synthetic-constant.ndjson").exists());
}

#[test]
fn unreachable_endpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = dir.path().join("p.txt");
    fs::write(&prompts, "a\nb\n").unwrap();
    let out = dir.path().join("r.ndjson");
    let o = melodi(&[
        "collect", "--prompts", prompts.to_str().unwrap(), "--format", "plain",
        "--endpoint", "http://127.0.0.1:9", "--model", "m",
        "--power-source", "synthetic:constant:1", "--cooldown-ms", "0",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn analysis_commands_on_generated_records() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth_file(dir.path(), "s.ndjson", 300, "synthetic");

    let o = melodi(&["analyze", "--input", &input]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("feature_name,"));
    assert!(lines.next().unwrap().starts_with("response_token_length,"));

    let o = melodi(&["features", "--input", &input]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 301);
    assert!(text.lines().next().unwrap().ends_with("energy_llm_kwh"));

    let model = dir.path().join("forest.json");
    let o = melodi(&[
        "predict", "--input", &input, "--features", "response-only", "--trees", "20",
        "--model-out", model.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r2: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("R2: "))
        .expect("R2 line")
        .trim()
        .parse()
        .unwrap();
    assert!(r2 > 0.9, "R2 {r2}");
    assert!(fs::read_to_string(&model).unwrap().contains("melodi-forest/1"));
}

#[test]
fn report_groups_by_model() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_file(dir.path(), "a.ndjson", 40, "small");
    let b = synth_file(dir.path(), "b.ndjson", 60, "large");
    let csv = dir.path().join("box.csv");
    let svg = dir.path().join("box.svg");
    let o = melodi(&[
        "report", "--input", &a, &b, "--group-by", "model",
        "--out", csv.to_str().unwrap(), "--svg", svg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(csv).unwrap();
    let per_response: Vec<&str> = text.lines().filter(|l| l.contains(",energy_kwh,")).collect();
    assert_eq!(per_response.len(), 2);
    assert!(per_response[0].starts_with("large,energy_kwh,60,"));
    assert!(per_response[1].starts_with("small,energy_kwh,40,"));
    assert!(fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn usage_and_input_errors() {
    assert_eq!(melodi(&[]).status.code(), Some(2));
    assert_eq!(melodi(&["collect", "--prompts", "x"]).status.code(), Some(2));
    assert_eq!(melodi(&["predict", "--input", "x", "--split", "1.5"]).status.code(), Some(2));
    assert_eq!(melodi(&["analyze", "--input", "/nonexistent/records.ndjson"]).status.code(), Some(1));

    let o = melodi(&["sources"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for id in ["rapl-process", "nvidia-gpu", "synthetic", "replay"] {
        assert!(text.contains(id), "{text}");
    }
}
