use std::fs;

use melodi::dataset::synth::{linear_energy_records, SynthSpec};
use melodi::dataset::{load_prompts, read_dataset, write_records, DatasetError, PromptFormat, RunManifest};

#[test]
fn round_trip_and_damage() {
    let dir = tempfile::tempdir().unwrap();
    let records = linear_energy_records(&SynthSpec { n: 25, ..SynthSpec::default() });
    let path = dir.path().join("r.ndjson");
    write_records(&path, &RunManifest::detached("m", "h"), &records).unwrap();
    let (manifest, back) = read_dataset(&path).unwrap();
    assert_eq!(back, records);
    assert_eq!(manifest.model_name, "m");

    // a broken line in the middle is an error naming that line
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "{\"record_id\": ";
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    match read_dataset(&path) {
        Err(DatasetError::ParseFailure { line, .. }) => assert_eq!(line, 6),
        other => panic!("expected a parse failure, got {other:?}"),
    }

    // trailing blank lines are harmless
    let path = dir.path().join("blank.ndjson");
    fs::write(&path, text.clone() + "\n\n").unwrap();
    assert_eq!(read_dataset(&path).unwrap().1.len(), 25);
}

#[test]
fn prompt_formats() {
    let dir = tempfile::tempdir().unwrap();
    let alpaca = dir.path().join("a.json");
    fs::write(&alpaca, r#"[{"instruction":"Add","input":"1 and 2","output":"3"},{"instruction":"Name a color"}]"#).unwrap();
    let got = load_prompts(&alpaca, PromptFormat::Alpaca, None).unwrap();
    assert_eq!(got.len(), 2);
    assert!(got[0].prompt_text.contains("Add") && got[0].prompt_text.contains("1 and 2"));

    let cf = dir.path().join("c.jsonl");
    fs::write(
        &cf,
        concat!(
            r#"{"messages":[{"role":"user","content":"Fix my loop"},{"role":"assistant","content":"ok"},{"role":"user","content":"again"}]}"#,
            "\n",
            r#"{"messages":[{"role":"assistant","content":"no user turn"}]}"#,
            "\n",
        ),
    )
    .unwrap();
    let got = load_prompts(&cf, PromptFormat::Codefeedback, None).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].prompt_text, "Fix my loop");

    let plain = dir.path().join("p.txt");
    fs::write(&plain, "a\nb\nc\n").unwrap();
    assert_eq!(load_prompts(&plain, PromptFormat::Plain, Some(2)).unwrap().len(), 2);
    fs::write(&plain, "\n\n").unwrap();
    assert!(matches!(load_prompts(&plain, PromptFormat::Plain, None), Err(DatasetError::EmptyDataset(_))));
}
