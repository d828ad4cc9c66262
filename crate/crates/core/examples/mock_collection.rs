//! End to end against the built-in mock LLM: serve it, run a short
//! collection with a constant synthetic power source, read the records back.
//!
//! ```text
//! cargo run --example mock_collection
//! ```

use std::time::Duration;

use melodi::dataset::{collect_with, read_dataset, CollectConfig};
use melodi::llm::{MockConfig, MockServer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = MockServer::bind("127.0.0.1:0", MockConfig { seed: 7, ..MockConfig::default() })?.spawn();

    let dir = std::env::temp_dir().join(format!("melodi-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let prompts = dir.join("prompts.txt");
    std::fs::write(&prompts, "What is RAPL?\nName three prime numbers.\nWrite a haiku about fans.\n")?;
    let out = dir.join("run.ndjson");

    let mut config = CollectConfig::new(server.endpoint(), "mock", &prompts, &out);
    config.prompt_format = "plain".parse()?;
    config.power_sources = vec!["synthetic:constant:25e6".into()];
    config.cooldown = Duration::ZERO;
    config.stable_output = true;

    let summary = collect_with(&config, |r| {
        println!("#{} {} tokens, {:.3e} kWh", r.record_id, r.response_token_length, r.energy_llm_kwh)
    })?;
    println!("mean per response: {:.3e} kWh", summary.mean_energy_kwh.unwrap_or(0.0));

    let (manifest, records) = read_dataset(&out)?;
    println!("run {} ({} clock): {} records", manifest.run_id, manifest.clock, records.len());
    for r in &records {
        println!("  traces: {}", r.trace_refs.join(", "));
    }
    std::fs::remove_dir_all(dir)?;
    Ok(())
}
