//! Box-plot statistics per model, written as CSV to stdout and SVG to a temp
//! file.
//!
//! ```text
//! cargo run --example box_report
//! ```

use melodi::analysis::{grouped_box_stats, render_box_svg, write_box_csv, GroupBy};
use melodi::dataset::synth::{linear_energy_records, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut records = linear_energy_records(&SynthSpec { n: 300, seed: 5, ..SynthSpec::default() });
    for (i, r) in records.iter_mut().enumerate() {
        // a bigger model: three times the energy per token
        if i % 2 == 1 {
            r.model_name = "large".into();
            r.energy_llm_kwh *= 3.0;
            r.energy_per_token_kwh = r.energy_per_token_kwh.map(|e| e * 3.0);
        } else {
            r.model_name = "small".into();
        }
    }
    let rows = grouped_box_stats(&records, GroupBy::Model)?;
    write_box_csv(std::io::stdout(), &rows)?;
    let svg = std::env::temp_dir().join("melodi-box-report.svg");
    std::fs::write(&svg, render_box_svg(&rows))?;
    eprintln!("plot written to {}", svg.display());
    Ok(())
}
