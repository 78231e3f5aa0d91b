//! Finite Gaussian mixtures on the latent space.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianComponent;
use crate::normal::log_sum_exp;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentMixture {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl LatentMixture {
    /// Weights must be nonnegative and sum to one to 1e-9. They are
    /// rescaled only when the sum is off by more than rounding error, so
    /// written weights parse back bit for bit.
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::Precondition(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let p = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != p) {
            return Err(Error::Dimension {
                expected: p,
                got: c.dim(),
            });
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Precondition("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let rounding = 4.0 * f64::EPSILON * weights.len() as f64;
        let weights = if (total - 1.0).abs() > rounding {
            weights.into_iter().map(|w| w / total).collect()
        } else {
            weights
        };
        Ok(LatentMixture {
            weights,
            components,
        })
    }

    pub fn single(component: GaussianComponent) -> Self {
        LatentMixture {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    /// Uniform average of several mixtures of the same dimension.
    pub fn average(mixtures: &[LatentMixture]) -> Result<Self> {
        let Some(first) = mixtures.first() else {
            return Err(Error::Precondition("nothing to average".into()));
        };
        let m = mixtures.len() as f64;
        let mut weights = Vec::new();
        let mut components = Vec::new();
        for mix in mixtures {
            if mix.dim() != first.dim() {
                return Err(Error::Dimension {
                    expected: first.dim(),
                    got: mix.dim(),
                });
            }
            weights.extend(mix.weights.iter().map(|w| w / m));
            components.extend(mix.components.iter().cloned());
        }
        Self::new(weights, components)
    }

    /// Drops components with weight below `min_weight` and renormalizes.
    pub fn compact(&self, min_weight: f64) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&k| self.weights[k] >= min_weight)
            .collect();
        if keep.is_empty() {
            return self.clone();
        }
        let total: f64 = keep.iter().map(|&k| self.weights[k]).sum();
        LatentMixture {
            weights: keep.iter().map(|&k| self.weights[k] / total).collect(),
            components: keep.iter().map(|&k| self.components[k].clone()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// `log sum_k w_k N(x; mu_k, Sigma_k)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(&w, c)| {
                if w > 0.0 {
                    w.ln() + c.log_density_unchecked(x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Index drawn from the categorical law on the weights.
    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        // rounding left u above the running total: last positive weight
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.sample_component(rng);
        self.components[k].sample(rng)
    }

    /// `n` ancestral draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// One-line text form: `K p` then per component the weight, mean and
    /// row-major covariance, all with 17 significant digits.
    pub fn to_line(&self) -> String {
        let p = self.dim();
        let mut out = format!("{} {}", self.len(), p);
        for (w, c) in self.weights.iter().zip(&self.components) {
            out.push_str(&format!(" {w:.16e}"));
            for v in c.mean().iter() {
                out.push_str(&format!(" {v:.16e}"));
            }
            for i in 0..p {
                for j in 0..p {
                    out.push_str(&format!(" {:.16e}", c.cov()[(i, j)]));
                }
            }
        }
        out
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let mut tokens = line.split_whitespace();
        let mut next_usize = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what}")))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("{what}: {e}")))
        };
        let k = next_usize("component count")?;
        let p = next_usize("dimension")?;
        let values: Vec<f64> = line
            .split_whitespace()
            .skip(2)
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("'{t}': {e}")))
            })
            .collect::<Result<_>>()?;
        let per = 1 + p + p * p;
        if values.len() != k * per {
            return Err(Error::Parse(format!(
                "expected {} numbers for K={k}, p={p}, found {}",
                k * per,
                values.len()
            )));
        }
        let mut weights = Vec::with_capacity(k);
        let mut components = Vec::with_capacity(k);
        for chunk in values.chunks(per) {
            weights.push(chunk[0]);
            let mean = chunk[1..=p].to_vec();
            let cov = DMatrix::from_row_slice(p, p, &chunk[1 + p..]);
            components.push(GaussianComponent::new(mean, cov)?);
        }
        Self::new(weights, components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;
    use crate::quadrature::{integrate, integrate_2d, QuadOptions};
    use crate::rng::substream;
    use nalgebra::dmatrix;
    use rand::Rng;

    fn unit(mean: f64) -> GaussianComponent {
        GaussianComponent::new(vec![mean], dmatrix![1.0]).unwrap()
    }

    #[test]
    fn single_component_reduces() {
        let c = GaussianComponent::new(vec![0.3, -1.0], dmatrix![1.0, 0.2; 0.2, 0.5]).unwrap();
        let m = LatentMixture::single(c.clone());
        let x = [0.1, 0.7];
        assert_eq!(m.log_density(&x).unwrap(), c.log_density(&x).unwrap());
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let m = LatentMixture::new(vec![0.5, 0.5], vec![unit(-1.5), unit(1.5)]).unwrap();
        let expected = unit(1.5).log_density(&[0.0]).unwrap();
        assert!((m.log_density(&[0.0]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn unequal_weights_hand_value() {
        let m = LatentMixture::new(vec![0.3, 0.7], vec![unit(0.0), unit(1.0)]).unwrap();
        let v = m.log_density(&[0.5]).unwrap();
        assert!((v - normal::ln_pdf(0.5)).abs() < 1e-15);
        assert!((v + 1.0439).abs() < 1e-4);
    }

    #[test]
    fn tiny_weights_stay_finite() {
        let m = LatentMixture::new(vec![1e-300, 1.0 - 1e-300], vec![unit(0.0), unit(50.0)]).unwrap();
        let v = m.log_density(&[0.0]).unwrap();
        assert!((v - (1e-300f64.ln() + normal::ln_pdf(0.0))).abs() < 1e-9, "{v}");
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(LatentMixture::new(vec![0.5, 0.6], vec![unit(0.0), unit(1.0)]).is_err());
        assert!(LatentMixture::new(vec![-0.1, 1.1], vec![unit(0.0), unit(1.0)]).is_err());
        assert!(LatentMixture::new(vec![1.0], vec![unit(0.0), unit(1.0)]).is_err());
    }

    #[test]
    fn sampling_examples() {
        let mut rng = substream(11, &[]);
        let m = LatentMixture::new(vec![1.0, 0.0], vec![unit(0.0), unit(100.0)]).unwrap();
        assert!(m.sample(10_000, &mut rng).iter().all(|x| x[0] < 50.0));

        let m = LatentMixture::new(vec![0.5, 0.5], vec![unit(0.0), unit(10.0)]).unwrap();
        let n = 100_000;
        let above = m
            .sample(n, &mut rng)
            .iter()
            .filter(|x| x[0] > 5.0)
            .count() as f64
            / n as f64;
        assert!((above - 0.5).abs() < 0.005);

        let a = m.sample(20, &mut substream(3, &[4]));
        let b = m.sample(20, &mut substream(3, &[4]));
        assert_eq!(a, b);
    }

    #[test]
    fn mass_is_one_by_quadrature() {
        let m = LatentMixture::new(
            vec![0.2, 0.8],
            vec![
                GaussianComponent::new(vec![-1.0, 0.5], dmatrix![0.5, 0.1; 0.1, 0.3]).unwrap(),
                GaussianComponent::new(vec![1.0, -0.5], dmatrix![1.2, -0.4; -0.4, 0.9]).unwrap(),
            ],
        )
        .unwrap();
        // 8 sd of every component
        let r = integrate_2d(
            |x, y| m.log_density(&[x, y]).unwrap().exp(),
            (-1.0 - 8.0 * 1.2f64.sqrt(), 1.0 + 8.0 * 1.2f64.sqrt()),
            (-0.5 - 8.0, 0.5 + 8.0),
            &[-1.0, 1.0],
            &[-0.5, 0.5],
            QuadOptions {
                abs_tol: 1e-8,
                rel_tol: 1e-8,
                max_intervals: 500,
            },
        );
        assert!((r.value - 1.0).abs() < 1e-4, "{r:?}");
        let m1 = LatentMixture::new(vec![0.4, 0.6], vec![unit(-2.0), unit(3.0)]).unwrap();
        let r = integrate(
            |x| m1.log_density(&[x]).unwrap().exp(),
            -10.0,
            11.0,
            &[-2.0, 3.0],
            QuadOptions::default(),
        );
        assert!((r.value - 1.0).abs() < 1e-4);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = LatentMixture::new(
            vec![0.1, 0.9],
            vec![
                GaussianComponent::new(vec![1.0 / 3.0, -2e-9], dmatrix![0.7, 0.1; 0.1, 2.5]).unwrap(),
                GaussianComponent::standard(2),
            ],
        )
        .unwrap();
        let line = m.to_line();
        assert!(line.starts_with("2 2 "));
        let back = LatentMixture::from_line(&line).unwrap();
        assert_eq!(back, m);
        assert!(LatentMixture::from_line("2 2 0.5 1").is_err());
    }

    fn mixture_cdf(m: &LatentMixture, x: f64) -> f64 {
        m.weights()
            .iter()
            .zip(m.components())
            .map(|(w, c)| w * normal::cdf((x - c.mean()[0]) / c.cov()[(0, 0)].sqrt()))
            .sum()
    }

    #[test]
    fn empirical_law_matches_density() {
        let mut gen = substream(12, &[]);
        let n = 10_000;
        for case in 0..20u64 {
            let k = gen.random_range(1..4);
            let raw: Vec<f64> = (0..k).map(|_| gen.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let comps = (0..k)
                .map(|_| {
                    let s: f64 = gen.random_range(0.3..2.0);
                    GaussianComponent::new(vec![gen.random_range(-3.0..3.0)], dmatrix![s * s])
                        .unwrap()
                })
                .collect();
            let m = LatentMixture::new(raw.iter().map(|w| w / total).collect(), comps).unwrap();
            let mut xs: Vec<f64> = m
                .sample(n, &mut substream(13, &[case]))
                .into_iter()
                .map(|x| x[0])
                .collect();
            xs.sort_by(f64::total_cmp);
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = mixture_cdf(&m, v);
                    (c - i as f64 / n as f64)
                        .abs()
                        .max(((i + 1) as f64 / n as f64 - c).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 1.63 / (n as f64).sqrt(), "case {case}: ks={ks}");
        }
    }
}
