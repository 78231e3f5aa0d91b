//! Simulating mixed-scale data by drawing latent vectors and rounding them,
//! then comparing frequencies with the evaluated marginals.
//!
//!     cargo run --example pushforward -- 100000

use std::collections::BTreeMap;

use mixscale::lab::canonical_truth;
use mixscale::rng::substream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100_000);
    let f = canonical_truth();
    let sample = f.pushforward_sample(n, &mut substream(7, &[]));

    let mut counts: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for y in &sample {
        *counts.entry(y.y2.clone()).or_default() += 1;
    }
    println!("{:>8} {:>10} {:>10} {:>7}", "(b, n)", "empirical", "model", "z");
    for y2 in f.discrete_support_enumeration(1e-6)? {
        let p = f.discrete_marginal(&y2)?;
        if p < 1e-3 {
            continue;
        }
        let freq = counts.get(&y2).copied().unwrap_or(0) as f64 / n as f64;
        let z = (freq - p) / (p * (1.0 - p) / n as f64).sqrt();
        println!("{:>8} {freq:>10.5} {p:>10.5} {z:>7.2}", format!("{y2:?}"));
    }
    let mean_x = sample.iter().map(|y| y.y1[0]).sum::<f64>() / n as f64;
    println!("mean of x: {mean_x:.4}");
    Ok(())
}
