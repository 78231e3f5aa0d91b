//! Gaussian rectangle probabilities in one to five dimensions and
//! truncated sampling.
//!
//!     cargo run --example box_probabilities

use mixscale::gaussian::{BoxSettings, GaussianComponent};
use mixscale::rng::substream;
use mixscale::schema::Cell;
use nalgebra::DMatrix;

fn equicorrelated(p: usize, rho: f64) -> GaussianComponent {
    let cov = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
    GaussianComponent::new(vec![0.0; p], cov).expect("SPD for rho > -1/(p-1)")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = substream(1, &[]);
    let inf = f64::INFINITY;

    for rho in [-0.9, -0.5, 0.0, 0.5, 0.9] {
        let comp = equicorrelated(2, rho);
        let orthant = Cell::new(vec![0.0, 0.0], vec![inf, inf]);
        let p = comp.box_probability(&orthant, 1e-8, &mut rng)?;
        let exact = 0.25 + f64::asin(rho) / (2.0 * std::f64::consts::PI);
        println!("rho {rho:+.1}: P(X > 0) = {:.12}  closed form {exact:.12}", p.probability);
    }

    // orthant of an equicorrelated normal with rho = 1/2 has mass 1/(p+1)
    let settings = BoxSettings {
        accuracy: 1e-5,
        ..BoxSettings::default()
    };
    for p in 3..=5 {
        let comp = equicorrelated(p, 0.5);
        let cell = Cell::new(vec![0.0; p], vec![inf; p]);
        let est = comp.box_probability_with(&cell, &settings, &mut rng)?;
        println!(
            "p = {p}: {:.6} +- {:.1e}  (exact {:.6})",
            est.probability,
            est.std_error,
            1.0 / (p as f64 + 1.0)
        );
    }

    let comp = equicorrelated(2, 0.6);
    let cell = Cell::new(vec![0.0, -inf], vec![inf, 0.0]);
    let mut x = vec![0.5, -0.5];
    let mut sum = [0.0; 2];
    let n = 20_000;
    for _ in 0..n {
        x = comp.sample_truncated(&cell, &x, 1, &mut rng)?;
        sum[0] += x[0];
        sum[1] += x[1];
    }
    println!("truncated to x1 > 0 > x2: mean ({:.4}, {:.4})", sum[0] / n as f64, sum[1] / n as f64);
    Ok(())
}
