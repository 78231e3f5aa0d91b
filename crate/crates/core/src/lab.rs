//! Numerical checks that the rounding map does not expand KL or L1 balls,
//! and a small posterior contraction experiment.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::divergence::{kl_latent, kl_mixed, l1_latent, l1_mixed, DivergenceConfig, DivergenceEstimate};
use crate::error::{Error, Result};
use crate::gaussian::GaussianComponent;
use crate::mixture::LatentMixture;
use crate::rng::{mix, substream};
use crate::rounding::MixedDensity;
use crate::sampler::{predictive_from, run, DpConfig, NiwParams};
use crate::schema::{ContinuousColumn, DiscreteColumn, MixedSchema, MonotoneMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lemma {
    /// KL non-expansion
    Kl,
    /// L1 non-expansion
    L1,
}

impl Lemma {
    pub fn name(self) -> &'static str {
        match self {
            Lemma::Kl => "lemma1",
            Lemma::L1 => "lemma2",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LemmaCheckReport {
    pub lemma: Lemma,
    pub instance: String,
    pub latent: DivergenceEstimate,
    pub mixed: DivergenceEstimate,
}

impl LemmaCheckReport {
    pub fn slack(&self) -> f64 {
        self.latent.value - self.mixed.value
    }

    pub fn combined_tolerance(&self) -> f64 {
        self.latent.tolerance() + self.mixed.tolerance()
    }

    pub fn holds(&self) -> bool {
        self.slack() >= -self.combined_tolerance()
    }

    /// One `key=value` record.
    pub fn record(&self) -> String {
        format!(
            "check={} instance={} latent={:.9e} latent_err={:.3e} mixed={:.9e} mixed_err={:.3e} slack={:.9e} tolerance={:.3e} latent_method={} mixed_method={} holds={}",
            self.lemma.name(),
            self.instance,
            self.latent.value,
            self.latent.tolerance(),
            self.mixed.value,
            self.mixed.tolerance(),
            self.slack(),
            self.combined_tolerance(),
            self.latent.method,
            self.mixed.method,
            self.holds()
        )
    }
}

fn check(
    lemma: Lemma,
    f0: &LatentMixture,
    f: &LatentMixture,
    schema: &MixedSchema,
    cfg: &DivergenceConfig,
    instance: String,
) -> Result<LemmaCheckReport> {
    if f0.dim() != schema.p() || f.dim() != schema.p() {
        return Err(Error::Dimension {
            expected: schema.p(),
            got: if f0.dim() != schema.p() { f0.dim() } else { f.dim() },
        });
    }
    let g0 = MixedDensity::new(schema.clone(), f0.clone())?;
    let g = MixedDensity::new(schema.clone(), f.clone())?;
    let (latent, mixed) = match lemma {
        Lemma::Kl => (kl_latent(f0, f, cfg)?, kl_mixed(&g0, &g, cfg)?),
        Lemma::L1 => (l1_latent(f0, f, cfg)?, l1_mixed(&g0, &g, cfg)?),
    };
    Ok(LemmaCheckReport {
        lemma,
        instance,
        latent,
        mixed,
    })
}

/// Compares `d_KL(f0*, f*)` with `d_KL(g(f0*), g(f*))`.
pub fn check_lemma1(
    f0: &LatentMixture,
    f: &LatentMixture,
    schema: &MixedSchema,
    cfg: &DivergenceConfig,
) -> Result<LemmaCheckReport> {
    check(Lemma::Kl, f0, f, schema, cfg, describe(schema, f0, f))
}

/// Compares `||f0* - f*||` with `||g(f0*) - g(f*)||`.
pub fn check_lemma2_l1(
    f0: &LatentMixture,
    f: &LatentMixture,
    schema: &MixedSchema,
    cfg: &DivergenceConfig,
) -> Result<LemmaCheckReport> {
    check(Lemma::L1, f0, f, schema, cfg, describe(schema, f0, f))
}

fn describe(schema: &MixedSchema, f0: &LatentMixture, f: &LatentMixture) -> String {
    let kinds: Vec<String> = schema
        .continuous()
        .iter()
        .map(|c| match c.map {
            MonotoneMap::Identity => "cont".to_string(),
            MonotoneMap::Affine { .. } => "affine".to_string(),
            MonotoneMap::LogExp => "log".to_string(),
        })
        .chain(schema.discrete().iter().map(|d| format!("{:?}", d.kind).to_lowercase()))
        .collect();
    format!("{}/K{}-K{}", kinds.join("+"), f0.len(), f.len())
}

/// A random schema with `p` coordinates, at least one discrete.
pub fn random_schema<R: Rng + ?Sized>(p: usize, rng: &mut R) -> MixedSchema {
    let p1 = rng.random_range(0..p);
    let continuous = (0..p1)
        .map(|j| ContinuousColumn {
            name: format!("x{j}"),
            map: match rng.random_range(0..3) {
                0 => MonotoneMap::Identity,
                1 => MonotoneMap::Affine {
                    scale: rng.random_range(0.5..3.0),
                    shift: rng.random_range(-1.0..1.0),
                },
                _ => MonotoneMap::LogExp,
            },
        })
        .collect();
    let discrete = (0..p - p1)
        .map(|j| {
            let name = format!("d{j}");
            match rng.random_range(0..3) {
                0 => DiscreteColumn::binary(name, rng.random_range(-1.0..1.0)),
                1 => {
                    let a: f64 = rng.random_range(-1.5..0.5);
                    DiscreteColumn::categorical(name, vec![a, a + rng.random_range(0.3..2.0)])
                }
                _ => DiscreteColumn::count(name),
            }
        })
        .collect();
    MixedSchema::new(continuous, discrete).expect("random schema is valid")
}

fn random_component<R: Rng + ?Sized>(p: usize, rng: &mut R) -> GaussianComponent {
    let mean: Vec<f64> = (0..p).map(|_| 1.2 * rng.sample::<f64, _>(StandardNormal)).collect();
    let a = DMatrix::from_fn(p, p, |_, _| 0.6 * rng.sample::<f64, _>(StandardNormal));
    let cov = &a * a.transpose() + DMatrix::identity(p, p) * 0.3;
    GaussianComponent::new(mean, cov).expect("construction is SPD")
}

/// A random mixture with 1 to `k_max` components.
pub fn random_mixture<R: Rng + ?Sized>(p: usize, k_max: usize, rng: &mut R) -> LatentMixture {
    let k = rng.random_range(1..=k_max);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let comps = (0..k).map(|_| random_component(p, rng)).collect();
    LatentMixture::new(raw.iter().map(|w| w / total).collect(), comps).expect("weights sum to one")
}

/// `f*` close to `f0*`: every mean shifted and covariance rescaled slightly.
fn perturb<R: Rng + ?Sized>(f0: &LatentMixture, rng: &mut R) -> LatentMixture {
    let comps = f0
        .components()
        .iter()
        .map(|c| {
            let p = c.dim();
            let mean: Vec<f64> = c
                .mean()
                .iter()
                .map(|m| m + 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let s = rng.random_range(0.7..1.4);
            GaussianComponent::new(mean, c.cov() * s + DMatrix::identity(p, p) * 0.05).expect("SPD")
        })
        .collect();
    LatentMixture::new(f0.weights().to_vec(), comps).expect("same weights")
}

/// Random `(f0*, f*, schema)` with `p <= p_max`; even indices give nearby
/// pairs, odd indices unrelated ones.
pub fn random_instance(seed: u64, index: u64, p_max: usize) -> (LatentMixture, LatentMixture, MixedSchema) {
    let mut rng = substream(seed, &[0x6c61_62, index]);
    let p = rng.random_range(1..=p_max);
    let schema = random_schema(p, &mut rng);
    let f0 = random_mixture(p, 3, &mut rng);
    let f = if index % 2 == 0 {
        perturb(&f0, &mut rng)
    } else {
        random_mixture(p, 3, &mut rng)
    };
    (f0, f, schema)
}

/// Runs the lemma check on `count` random instances; instance `i` is
/// reproducible from `(seed, i)` alone.
pub fn random_lemma_suite(
    lemma: Lemma,
    count: usize,
    seed: u64,
    p_max: usize,
    cfg: &DivergenceConfig,
) -> Vec<Result<LemmaCheckReport>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let (f0, f, schema) = random_instance(seed, i, p_max);
            let local = DivergenceConfig {
                seed: mix(cfg.seed, &[i]),
                ..*cfg
            };
            let instance = format!("{i}:{}", describe(&schema, &f0, &f));
            check(lemma, &f0, &f, &schema, &local, instance)
        })
        .collect()
}

/// Text report, one record per check (errors become `holds=error` records).
pub fn lemma_report_text(lemma: Lemma, results: &[Result<LemmaCheckReport>]) -> String {
    let mut out = String::new();
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(r) => {
                out.push_str(&r.record());
            }
            Err(e) => {
                let _ = write!(out, "check={} instance={i} holds=error error=\"{e}\"", lemma.name());
            }
        }
        out.push('\n');
    }
    let held = results.iter().filter(|r| r.as_ref().is_ok_and(|r| r.holds())).count();
    let min_slack = results
        .iter()
        .flatten()
        .map(|r| r.slack())
        .fold(f64::INFINITY, f64::min);
    let _ = writeln!(
        out,
        "summary={} instances={} held={held} min_slack={min_slack:.9e}",
        lemma.name(),
        results.len()
    );
    out
}

pub fn lemma_report_csv(results: &[Result<LemmaCheckReport>]) -> String {
    let mut out = String::from("check,instance,latent,latent_tolerance,mixed,mixed_tolerance,slack,holds\n");
    for r in results.iter().flatten() {
        let _ = writeln!(
            out,
            "{},{},{:.9e},{:.3e},{:.9e},{:.3e},{:.9e},{}",
            r.lemma.name(),
            r.instance,
            r.latent.value,
            r.latent.tolerance(),
            r.mixed.value,
            r.mixed.tolerance(),
            r.slack(),
            r.holds()
        );
    }
    out
}

/// Canonical contraction truth: one continuous, one binary and one count
/// coordinate from a single correlated Gaussian.
pub fn canonical_truth() -> MixedDensity {
    let schema = MixedSchema::new(
        vec![ContinuousColumn {
            name: "x".into(),
            map: MonotoneMap::Identity,
        }],
        vec![DiscreteColumn::binary("b", 0.0), DiscreteColumn::count("n")],
    )
    .expect("valid schema");
    let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.3, 0.4, 1.0, 0.2, 0.3, 0.2, 1.0]);
    let latent = LatentMixture::single(GaussianComponent::new(vec![0.0, 0.3, 1.5], cov).expect("SPD"));
    MixedDensity::new(schema, latent).expect("dimensions agree")
}

#[derive(Debug, Clone)]
pub struct ContractionConfig {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub dp: DpConfig,
    pub divergence: DivergenceConfig,
    pub seed: u64,
    /// predictive components lighter than this are dropped before the
    /// divergence is computed
    pub compact_min_weight: f64,
    /// exponent `t` of the reference curve `n^{-1/2} (log n)^t`
    pub reference_log_power: f64,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            n_grid: vec![100, 400, 1600],
            replications: 5,
            dp: DpConfig {
                iterations: 400,
                burn_in: 200,
                thin: 10,
                ..DpConfig::default()
            },
            divergence: DivergenceConfig {
                quad_rel_tol: 1e-6,
                quad_abs_tol: 1e-8,
                tail_mass_tol: 1e-5,
                ..DivergenceConfig::default()
            },
            seed: 0,
            compact_min_weight: 1e-4,
            reference_log_power: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub n: usize,
    pub replication: usize,
    pub l1: std::result::Result<f64, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub n_grid: Vec<usize>,
    pub replications: Vec<Replication>,
    pub reference_log_power: f64,
}

impl ContractionReport {
    fn errors_at(&self, n: usize) -> Vec<f64> {
        self.replications
            .iter()
            .filter(|r| r.n == n)
            .filter_map(|r| r.l1.as_ref().ok().copied())
            .collect()
    }

    /// Mean L1 error per grid point (NaN when every replication failed).
    pub fn means(&self) -> Vec<f64> {
        self.n_grid
            .iter()
            .map(|&n| {
                let e = self.errors_at(n);
                e.iter().sum::<f64>() / e.len() as f64
            })
            .collect()
    }

    /// Sample standard deviation per grid point.
    pub fn spreads(&self) -> Vec<f64> {
        self.n_grid
            .iter()
            .map(|&n| {
                let e = self.errors_at(n);
                let m = e.iter().sum::<f64>() / e.len() as f64;
                (e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (e.len() as f64 - 1.0)).sqrt()
            })
            .collect()
    }

    /// Least-squares slope of log mean error against log n.
    pub fn slope(&self) -> f64 {
        let xs: Vec<f64> = self.n_grid.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = self.means().iter().map(|m| m.ln()).collect();
        let k = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / k;
        let my = ys.iter().sum::<f64>() / k;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    }

    /// Number of grid steps where the mean error goes up.
    pub fn inversions(&self) -> usize {
        self.means().windows(2).filter(|w| !(w[1] <= w[0])).count()
    }

    pub fn failures(&self) -> usize {
        self.replications.iter().filter(|r| r.l1.is_err()).count()
    }

    pub fn reference(&self, n: usize) -> f64 {
        let n = n as f64;
        n.powf(-0.5) * n.ln().powf(self.reference_log_power)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.replications {
            match &r.l1 {
                Ok(v) => {
                    let _ = writeln!(
                        out,
                        "record=replication n={} replication={} l1={v:.9e} seconds={:.2} status=ok",
                        r.n, r.replication, r.seconds
                    );
                }
                Err(e) => {
                    let _ = writeln!(
                        out,
                        "record=replication n={} replication={} seconds={:.2} status=failed error=\"{e}\"",
                        r.n, r.replication, r.seconds
                    );
                }
            }
        }
        for ((n, m), s) in self.n_grid.iter().zip(self.means()).zip(self.spreads()) {
            let _ = writeln!(
                out,
                "record=summary n={n} mean_l1={m:.9e} sd_l1={s:.3e} reference={:.6e}",
                self.reference(*n)
            );
        }
        let _ = writeln!(
            out,
            "record=trend slope={:.4} inversions={} failures={}",
            self.slope(),
            self.inversions(),
            self.failures()
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,replication,l1,status,reference\n");
        for r in &self.replications {
            let (v, status) = match &r.l1 {
                Ok(v) => (format!("{v:.9e}"), "ok"),
                Err(_) => (String::new(), "failed"),
            };
            let _ = writeln!(out, "{},{},{v},{status},{:.6e}", r.n, r.replication, self.reference(r.n));
        }
        out
    }
}

/// For each `n` and replication: sample from `truth`, fit, and measure the
/// L1 distance from the predictive density to `truth`. Failed replications
/// are recorded, not propagated.
pub fn contraction_experiment(truth: &MixedDensity, cfg: &ContractionConfig) -> Result<ContractionReport> {
    if cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("sample-size grid must be strictly increasing".into()));
    }
    if cfg.replications < 3 {
        return Err(Error::Precondition("at least three replications are needed".into()));
    }
    cfg.dp.validate()?;
    if cfg.dp.kept_draws() == 0 {
        return Err(Error::Precondition("the sampler configuration keeps no draws".into()));
    }
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |r| (n, r)))
        .collect();
    let replications = jobs
        .par_iter()
        .map(|&(n, rep)| {
            let start = std::time::Instant::now();
            let l1 = replicate(truth, cfg, n, rep).map_err(|e| e.to_string());
            Replication {
                n,
                replication: rep,
                l1,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    Ok(ContractionReport {
        n_grid: cfg.n_grid.clone(),
        replications,
        reference_log_power: cfg.reference_log_power,
    })
}

fn replicate(truth: &MixedDensity, cfg: &ContractionConfig, n: usize, rep: usize) -> Result<f64> {
    let mut rng = substream(cfg.seed, &[0x636f_6e74, n as u64, rep as u64]);
    let data = truth.pushforward_sample(n, &mut rng);
    let niw = NiwParams::from_data(&data, truth.schema())?;
    let dp = DpConfig {
        seed: mix(cfg.seed, &[n as u64, rep as u64]),
        ..cfg.dp.clone()
    };
    let draws = run(&data, truth.schema(), &niw, &dp)?;
    let predictive = predictive_from(&draws.draws, truth.schema())?;
    let compact = MixedDensity::new(
        truth.schema().clone(),
        predictive.latent().compact(cfg.compact_min_weight),
    )?;
    Ok(l1_mixed(&compact, truth, &cfg.divergence)?.value)
}
