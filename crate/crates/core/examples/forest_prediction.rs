//! Train two forests on a generated dataset: one on response length, one on
//! prompt features, and compare held-out R².
//!
//! ```text
//! cargo run --release --example forest_prediction
//! ```

use melodi::analysis::{train_and_evaluate, ForestParams};
use melodi::dataset::synth::{linear_energy_records, SynthSpec};
use melodi::textfeat::{build_feature_table, table::PROMPT_COLUMNS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = linear_energy_records(&SynthSpec { n: 1000, seed: 3, ..SynthSpec::default() });
    let table = build_feature_table(&records)?;
    let params = ForestParams { n_trees: 50, ..ForestParams::default() };

    for (label, cols) in [("response-only", vec!["response_token_length"]), ("prompt", PROMPT_COLUMNS.to_vec())] {
        let sub = table.select(&cols)?;
        let (model, eval) = train_and_evaluate(&sub, &params, 0, 0.8, 0)?;
        println!(
            "{label:<14} R2 = {:>8.4}  ({} trees, {} per split, {} train / {} test)",
            eval.r2, model.n_trees, model.features_per_split, eval.n_train, eval.n_test
        );
    }
    Ok(())
}
