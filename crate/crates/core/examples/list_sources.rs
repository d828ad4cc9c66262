//! Print which power sources this machine can offer.
//!
//! ```text
//! cargo run --example list_sources
//! ```

use melodi::power::list_sources;

fn main() {
    for s in list_sources() {
        let mark = if s.available { "yes" } else { "no" };
        println!("{:<16} {:<10} {:<4} {}", s.source_id, s.scope, mark, s.detail);
    }
}
