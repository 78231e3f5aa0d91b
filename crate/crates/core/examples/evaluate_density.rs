//! Evaluating a mixed-scale density: pointwise log densities, discrete
//! marginals and a CSV grid for plotting.
//!
//!     cargo run --example evaluate_density

use mixscale::gaussian::GaussianComponent;
use mixscale::mixture::LatentMixture;
use mixscale::rounding::MixedDensity;
use mixscale::schema::{ContinuousColumn, DiscreteColumn, MixedPoint, MixedSchema, MonotoneMap};
use nalgebra::dmatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = MixedSchema::new(
        vec![ContinuousColumn {
            name: "x".into(),
            map: MonotoneMap::Identity,
        }],
        vec![DiscreteColumn::binary("b", 0.0), DiscreteColumn::count("n")],
    )?;
    let latent = LatentMixture::new(
        vec![0.6, 0.4],
        vec![
            GaussianComponent::new(vec![0.0, 0.3, 1.5], dmatrix![1.0, 0.4, 0.3; 0.4, 1.0, 0.2; 0.3, 0.2, 1.0])?,
            GaussianComponent::new(vec![2.0, -0.5, 3.0], dmatrix![0.5, 0.0, 0.1; 0.0, 1.0, 0.0; 0.1, 0.0, 0.8])?,
        ],
    )?;
    let f = MixedDensity::new(schema, latent)?;

    for (x, b, n) in [(0.0, 1, 1), (2.0, 0, 3), (-1.0, 1, 0)] {
        let y = MixedPoint::new(vec![x], vec![b, n]);
        let e = f.evaluate(&y)?;
        println!("f({x}, {b}, {n}) = {:.6e}  (relative error {:.0e})", e.ln_density.exp(), e.rel_error);
    }

    println!("discrete marginals with mass above 1%:");
    for y2 in f.discrete_support_enumeration(1e-6)? {
        let p = f.discrete_marginal(&y2)?;
        if p > 0.01 {
            println!("  P(b = {}, n = {}) = {p:.5}", y2[0], y2[1]);
        }
    }

    let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![-2.0 + i as f64]).collect();
    let outcomes = vec![vec![0, 1], vec![1, 1]];
    f.write_density_grid(&xs, &outcomes, std::io::stdout())?;

    println!("\ndensity file:\n{}", f.to_toml_string());
    Ok(())
}
