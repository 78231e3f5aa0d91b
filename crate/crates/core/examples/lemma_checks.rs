//! Checking that rounding does not increase KL divergence or L1 distance,
//! on a worked binary case and a randomized suite.
//!
//!     cargo run --release --example lemma_checks -- [instances]

use mixscale::divergence::DivergenceConfig;
use mixscale::gaussian::GaussianComponent;
use mixscale::lab::{check_lemma1, check_lemma2_l1, lemma_report_text, random_lemma_suite, Lemma};
use mixscale::mixture::LatentMixture;
use mixscale::schema::{DiscreteColumn, MixedSchema};
use nalgebra::dmatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let count: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let cfg = DivergenceConfig::default();

    let schema = MixedSchema::new(vec![], vec![DiscreteColumn::binary("b", 0.0)])?;
    let g0 = LatentMixture::single(GaussianComponent::standard(1));
    let g = LatentMixture::single(GaussianComponent::new(vec![0.5], dmatrix![1.0])?);
    println!("{}", check_lemma1(&g0, &g, &schema, &cfg)?.record());
    println!("{}", check_lemma2_l1(&g0, &g, &schema, &cfg)?.record());

    for lemma in [Lemma::Kl, Lemma::L1] {
        let results = random_lemma_suite(lemma, count, 0, 3, &cfg);
        print!("{}", lemma_report_text(lemma, &results));
    }
    Ok(())
}
