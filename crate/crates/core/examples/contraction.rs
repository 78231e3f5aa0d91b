//! Posterior L1 error against a known truth as the sample size grows.
//!
//!     cargo run --release --example contraction -- [replications]

use mixscale::lab::{canonical_truth, contraction_experiment, ContractionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let replications: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let cfg = ContractionConfig {
        replications,
        ..ContractionConfig::default()
    };
    let report = contraction_experiment(&canonical_truth(), &cfg)?;
    print!("{}", report.to_text());
    for ((n, m), s) in report.n_grid.iter().zip(report.means()).zip(report.spreads()) {
        println!("n = {n:>5}: mean L1 {m:.4} (sd {s:.4}), reference {:.4}", report.reference(*n));
    }
    Ok(())
}
