//! Poll a synthetic source in real time, save the trace, and replay it.
//!
//! ```text
//! cargo run --example sample_and_replay
//! ```

use std::thread;
use std::time::Duration;

use melodi::energy::{integrate_trapezoid, InferenceWindow};
use melodi::power::replay::{read_trace_file, write_trace};
use melodi::power::{PowerSource, ReplaySource, Sampler, SyntheticSource, Waveform};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let source = SyntheticSource::new(Waveform::Linear { a: 1e6, b: 2e5 })?;
    let sampler = Sampler::new(vec![Box::new(source)], 0.02)?;
    let handle = sampler.start();
    thread::sleep(Duration::from_millis(500));
    let runs = handle.stop_after(0.5)?;
    let trace = &runs[0].trace;
    println!("recorded {} samples, {} gaps", trace.len(), runs[0].gaps);

    let path = std::env::temp_dir().join("melodi-example-trace.ndjson");
    write_trace(std::fs::File::create(&path)?, trace)?;
    let back = read_trace_file(&path)?;
    assert_eq!(&back[0], trace);

    let window = InferenceWindow::new(0.1, 0.4)?;
    let energy = integrate_trapezoid(&back[0], &window)?;
    println!("energy over [0.1, 0.4] s: {:.1} uW*s (exact 135000.0)", energy.energy_uws);

    let mut replay = ReplaySource::open(&path)?;
    println!("replayed power at t = 0.25 s: {:.1} uW", replay.sample(0.25)?.unwrap_or(f64::NAN));
    std::fs::remove_file(path)?;
    Ok(())
}
