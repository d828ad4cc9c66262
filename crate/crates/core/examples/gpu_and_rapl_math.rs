//! The arithmetic behind the two hardware sources, without the hardware:
//! parsing `nvidia-smi` power output and attributing package energy to a
//! process by CPU-time share.
//!
//! ```text
//! cargo run --example gpu_and_rapl_math
//! ```

use melodi::power::gpu::parse_power_draw;
use melodi::power::rapl::{attribute_power, cpu_shares};

fn main() {
    for line in ["87.45\n", "  250.00", "[N/A]"] {
        match parse_power_draw(line) {
            Ok(uw) => println!("nvidia-smi {line:?} -> {uw} uW"),
            Err(e) => println!("nvidia-smi {line:?} -> {e}"),
        }
    }

    // 2 J over one second, and the process had half the CPU ticks
    let p = attribute_power(2e6, 1.0, 50.0, 100.0);
    println!("process power: {p} uW");

    let shares = cpu_shares(&[30, 50, 5], 100);
    println!("shares: {shares:?} (sum {})", shares.iter().sum::<f64>());
}
