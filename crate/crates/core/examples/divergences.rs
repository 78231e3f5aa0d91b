//! KL divergence and L1 distance between mixed-scale densities, next to the
//! same quantities for their latent densities.
//!
//!     cargo run --release --example divergences

use mixscale::divergence::{kl_latent, kl_mixed, l1_latent, l1_mixed, DivergenceConfig};
use mixscale::gaussian::GaussianComponent;
use mixscale::mixture::LatentMixture;
use mixscale::rounding::MixedDensity;
use mixscale::schema::{ContinuousColumn, DiscreteColumn, MixedSchema, MonotoneMap};
use nalgebra::dmatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = MixedSchema::new(
        vec![ContinuousColumn {
            name: "x".into(),
            map: MonotoneMap::LogExp,
        }],
        vec![DiscreteColumn::categorical("grade", vec![-0.5, 0.5])],
    )?;
    let g0 = LatentMixture::single(GaussianComponent::new(vec![0.0, 0.0], dmatrix![1.0, 0.5; 0.5, 1.0])?);
    let g = LatentMixture::new(
        vec![0.7, 0.3],
        vec![
            GaussianComponent::new(vec![0.2, 0.3], dmatrix![1.2, 0.4; 0.4, 1.0])?,
            GaussianComponent::new(vec![-1.0, -0.5], dmatrix![0.5, 0.0; 0.0, 0.7])?,
        ],
    )?;
    let f0 = MixedDensity::new(schema.clone(), g0.clone())?;
    let f = MixedDensity::new(schema, g.clone())?;

    let cfg = DivergenceConfig::default();
    for (name, latent, mixed) in [
        ("KL", kl_latent(&g0, &g, &cfg)?, kl_mixed(&f0, &f, &cfg)?),
        ("L1", l1_latent(&g0, &g, &cfg)?, l1_mixed(&f0, &f, &cfg)?),
    ] {
        println!(
            "{name}: latent {:.8} (+- {:.1e}), mixed {:.8} (+- {:.1e}) via {}",
            latent.value,
            latent.tolerance(),
            mixed.value,
            mixed.tolerance(),
            mixed.method
        );
    }

    let mc = DivergenceConfig {
        deterministic_max_p1: 0,
        mc_samples: 50_000,
        ..cfg
    };
    let est = kl_mixed(&f0, &f, &mc)?;
    println!("KL by Monte Carlo: {:.5} +- {:.5}", est.value, est.std_error);
    Ok(())
}
