//! Correlate every feature with energy on a generated dataset where energy
//! tracks response length only.
//!
//! ```text
//! cargo run --example correlation_table
//! ```

use melodi::analysis::correlation_report;
use melodi::dataset::synth::{linear_energy_records, SynthSpec};
use melodi::textfeat::build_feature_table;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = linear_energy_records(&SynthSpec { n: 1000, seed: 1, ..SynthSpec::default() });
    let table = build_feature_table(&records)?;
    for row in correlation_report(&table)? {
        match row.r {
            Some(r) => println!("{:<22} {r:>7.3}", row.feature_name),
            None => println!("{:<22} undefined", row.feature_name),
        }
    }
    Ok(())
}
