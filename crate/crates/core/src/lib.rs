//! Density estimation for data mixing continuous, binary, categorical and
//! count columns.
//!
//! Every observation is modeled as a rounded latent Gaussian-mixture vector:
//! continuous columns are monotone transforms of their latent coordinates,
//! discrete columns record which cell of a fixed partition the latent
//! coordinate fell in. The induced density factors into the latent marginal of
//! the continuous block times a conditional box probability.
//!
//! ```
//! use mixscale::gaussian::GaussianComponent;
//! use mixscale::mixture::LatentMixture;
//! use mixscale::rounding::MixedDensity;
//! use mixscale::schema::{DiscreteColumn, MixedPoint, MixedSchema};
//!
//! let schema = MixedSchema::new(vec![], vec![DiscreteColumn::binary("b", 0.0)]).unwrap();
//! let f = MixedDensity::new(schema, LatentMixture::single(GaussianComponent::standard(1))).unwrap();
//! let p = f.log_density(&MixedPoint::discrete(vec![1])).unwrap().exp();
//! assert!((p - 0.5).abs() < 1e-15);
//! ```
//!
//! Modules, roughly bottom-up: [`normal`], [`quadrature`], [`rng`],
//! [`gaussian`] (box probabilities), [`schema`], [`mixture`], [`rounding`]
//! (the mixed density), [`divergence`], [`sampler`] (blocked Gibbs fit),
//! [`lab`] (non-expansion checks, contraction runs) and [`cli`].

pub mod error;
pub mod gaussian;
pub mod normal;
pub mod quadrature;
pub mod rng;
pub mod schema;
pub mod mixture;
pub mod rounding;
pub mod divergence;
pub mod sampler;
pub mod lab;
pub mod cli;
