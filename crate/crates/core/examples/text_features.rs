//! Text features of a string given on the command line.
//!
//! ```text
//! cargo run --example text_features -- "The cat sat on the mat."
//! ```

use melodi::textfeat::extract_features;

fn main() {
    let text = std::env::args().skip(1).collect::<Vec<_>>().join(" ");
    let text = if text.is_empty() { "Explain quantum entanglement simply, please.".to_string() } else { text };
    println!("{text:?}");
    for (name, value) in extract_features(&text).pairs() {
        println!("  {name:<16} {value}");
    }
}
