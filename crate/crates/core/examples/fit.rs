//! Fitting the Dirichlet-process rounding model to the bundled data set and
//! summarizing the posterior predictive density.
//!
//!     cargo run --release --example fit -- [iterations]

use std::path::PathBuf;

use mixscale::cli::ingest;
use mixscale::sampler::{predictive_density, run, DpConfig, NiwParams};
use mixscale::schema::{MixedPoint, MixedSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let schema = MixedSchema::from_toml_str(&std::fs::read_to_string(dir.join("tiny.schema.toml"))?)?;
    let data = ingest(&dir.join("tiny.csv"), &schema)?;
    println!("{} rows, sha256 {}", data.len(), &data.digest[..16]);

    let niw = NiwParams::from_data(&data.rows, &schema)?;
    let cfg = DpConfig {
        iterations,
        burn_in: iterations / 2,
        thin: 5,
        seed: 42,
        ..DpConfig::default()
    };
    let draws = run(&data.rows, &schema, &niw, &cfg)?;
    let occupied: Vec<usize> = draws.diagnostics.iter().map(|d| d.occupied).collect();
    println!(
        "{} draws in {:.2}s, occupied clusters in the last sweep: {}",
        draws.draws.len(),
        draws.elapsed_seconds,
        occupied.last().copied().unwrap_or(0)
    );

    let f = predictive_density(&draws)?;
    let ones = data.rows.iter().filter(|y| y.y2[0] == 1).count() as f64 / data.len() as f64;
    println!("P(b = 1): data {ones:.3}, predictive {:.3}", f.discrete_marginal(&[1])?);
    for x in [-1.0, 0.0, 1.0, 2.0, 3.0] {
        let d0 = f.log_density(&MixedPoint::new(vec![x], vec![0]))?.exp();
        let d1 = f.log_density(&MixedPoint::new(vec![x], vec![1]))?.exp();
        println!("x = {x:+.1}: f(x, 0) = {d0:.4}, f(x, 1) = {d1:.4}");
    }
    Ok(())
}
