//! KL divergence and L1 distance between mixed-scale densities, taken with
//! respect to Lebesgue measure on the continuous block times counting measure
//! on the discrete block.
//!
//! With at most two continuous coordinates (configurable) every discrete
//! outcome gets its own adaptive quadrature in latent coordinates, where the
//! Jacobian cancels from both integrands. Otherwise a Monte Carlo average is
//! used.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mixture::LatentMixture;
use crate::quadrature::{integrate, integrate_2d, QuadOptions, QuadResult};
use crate::rng::substream;
use crate::rounding::{enumerate_outcomes, latent_box, MixedDensity};
use crate::schema::{MixedPoint, MixedSchema};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceConfig {
    /// omitted discrete mass allowed per density
    pub tail_mass_tol: f64,
    pub quad_rel_tol: f64,
    pub quad_abs_tol: f64,
    pub mc_samples: usize,
    pub seed: u64,
    /// largest `p1` handled by quadrature
    pub deterministic_max_p1: usize,
    /// half-width of the integration box in component standard deviations
    pub box_sds: f64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig {
            tail_mass_tol: 1e-6,
            quad_rel_tol: 1e-8,
            quad_abs_tol: 1e-10,
            mc_samples: 20_000,
            seed: 0,
            deterministic_max_p1: 2,
            box_sds: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Quadrature,
    MonteCarlo,
    Empirical,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Quadrature => "exact-sum+quadrature",
            Method::MonteCarlo => "monte-carlo",
            Method::Empirical => "empirical-discrete-marginal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceEstimate {
    pub value: f64,
    /// Monte Carlo standard error, 0 on the quadrature path
    pub std_error: f64,
    /// quadrature error estimate plus omitted tail mass
    pub quad_error: f64,
    pub method: Method,
    pub tail_mass_tol: f64,
    pub diagnostics: Vec<String>,
}

impl DivergenceEstimate {
    /// Deterministic error plus three standard errors.
    pub fn tolerance(&self) -> f64 {
        self.quad_error + 3.0 * self.std_error
    }

    pub fn is_support_violation(&self) -> bool {
        self.value == f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Kl,
    L1,
}

/// Integrand value at one point given both log-densities.
fn pointwise(kind: Kind, l0: f64, l: f64) -> f64 {
    match kind {
        Kind::Kl => {
            if l0 == f64::NEG_INFINITY {
                0.0
            } else if l == f64::NEG_INFINITY {
                f64::INFINITY
            } else {
                l0.exp() * (l0 - l)
            }
        }
        Kind::L1 => (l0.exp() - l.exp()).abs(),
    }
}

/// Both densities must live on the same observable space: same columns,
/// kinds, levels and continuous maps. Discrete cut points may differ.
fn check_pair(f0: &MixedDensity, f: &MixedDensity) -> Result<()> {
    let (a, b) = (f0.schema(), f.schema());
    let same = a.continuous() == b.continuous()
        && a.discrete().len() == b.discrete().len()
        && a
            .discrete()
            .iter()
            .zip(b.discrete())
            .all(|(x, y)| x.name == y.name && x.kind == y.kind && x.levels == y.levels);
    if !same {
        return Err(Error::Precondition("densities have different schemas".into()));
    }
    Ok(())
}

/// `d_KL(f0, f) = sum_{y2} ∫ f0 log(f0 / f) dy1`.
pub fn kl_mixed(f0: &MixedDensity, f: &MixedDensity, cfg: &DivergenceConfig) -> Result<DivergenceEstimate> {
    divergence(f0, f, cfg, Kind::Kl)
}

/// `||f0 - f|| = sum_{y2} ∫ |f0 - f| dy1`.
pub fn l1_mixed(f0: &MixedDensity, f: &MixedDensity, cfg: &DivergenceConfig) -> Result<DivergenceEstimate> {
    divergence(f0, f, cfg, Kind::L1)
}

/// KL divergence between the latent mixtures themselves.
pub fn kl_latent(g0: &LatentMixture, g: &LatentMixture, cfg: &DivergenceConfig) -> Result<DivergenceEstimate> {
    let (f0, f) = latent_pair(g0, g)?;
    kl_mixed(&f0, &f, cfg)
}

/// L1 distance between the latent mixtures themselves.
pub fn l1_latent(g0: &LatentMixture, g: &LatentMixture, cfg: &DivergenceConfig) -> Result<DivergenceEstimate> {
    let (f0, f) = latent_pair(g0, g)?;
    l1_mixed(&f0, &f, cfg)
}

fn latent_pair(g0: &LatentMixture, g: &LatentMixture) -> Result<(MixedDensity, MixedDensity)> {
    let schema = MixedSchema::all_continuous(g0.dim());
    Ok((
        MixedDensity::new(schema.clone(), g0.clone())?,
        MixedDensity::new(schema, g.clone())?,
    ))
}

fn divergence(f0: &MixedDensity, f: &MixedDensity, cfg: &DivergenceConfig, kind: Kind) -> Result<DivergenceEstimate> {
    check_pair(f0, f)?;
    if f0.schema().p1() <= cfg.deterministic_max_p1.min(2) {
        quadrature_path(f0, f, cfg, kind)
    } else {
        monte_carlo_path(f0, f, cfg, kind)
    }
}

/// Discrete outcomes kept by both densities and the mass each leaves out.
fn shared_support(f0: &MixedDensity, f: &MixedDensity, tol: f64) -> Result<(Vec<Vec<u64>>, f64)> {
    if !(tol > 0.0 && tol <= 0.01) {
        return Err(Error::Precondition(
            "tail mass tolerance must lie in (0, 0.01]".into(),
        ));
    }
    let b0 = f0.support_bounds(tol);
    let b = f.support_bounds(tol);
    let bounds: Vec<u64> = b0.iter().zip(&b).map(|(x, y)| *x.max(y)).collect();
    let all = enumerate_outcomes(&bounds);
    let mut mass = Vec::with_capacity(all.len());
    for y in &all {
        mass.push((f0.discrete_marginal(y)?, f.discrete_marginal(y)?));
    }
    // drop the lightest outcomes while their combined mass stays within `tol`
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| (mass[a].0 + mass[a].1).total_cmp(&(mass[b].0 + mass[b].1)));
    let mut dropped = vec![false; all.len()];
    let mut budget = tol;
    for &i in &order {
        let m = mass[i].0 + mass[i].1;
        if m > budget {
            break;
        }
        budget -= m;
        dropped[i] = true;
    }
    let kept0: f64 = mass.iter().zip(&dropped).filter(|(_, d)| !**d).map(|(m, _)| m.0).sum();
    let kept: f64 = mass.iter().zip(&dropped).filter(|(_, d)| !**d).map(|(m, _)| m.1).sum();
    let omitted = (1.0 - kept0).max(0.0) + (1.0 - kept).max(0.0);
    let omitted = if omitted < 1e-12 { 0.0 } else { omitted };
    let outcomes = all
        .into_iter()
        .zip(dropped)
        .filter(|(_, d)| !d)
        .map(|(y, _)| y)
        .collect();
    Ok((outcomes, omitted))
}

struct Region {
    ranges: Vec<(f64, f64, Vec<f64>)>,
}

impl Region {
    fn union(f0: &MixedDensity, f: &MixedDensity, cfg: &DivergenceConfig) -> Region {
        let p1 = f0.schema().p1();
        let a = latent_box(f0.latent(), p1, cfg.box_sds, 1e-10);
        let b = latent_box(f.latent(), p1, cfg.box_sds, 1e-10);
        let ranges = a
            .into_iter()
            .zip(b)
            .map(|((lo0, hi0, mut br0), (lo, hi, br))| {
                br0.extend(br);
                (lo0.min(lo), hi0.max(hi), br0)
            })
            .collect();
        Region { ranges }
    }

    fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut g: F, opts: QuadOptions) -> QuadResult {
        match self.ranges.len() {
            0 => QuadResult {
                value: g(&[]),
                error: 0.0,
                evaluations: 1,
                converged: true,
            },
            1 => {
                let (lo, hi, br) = &self.ranges[0];
                integrate(|x| g(&[x]), *lo, *hi, br, opts)
            }
            2 => {
                let (lx, hx, bx) = &self.ranges[0];
                let (ly, hy, by) = &self.ranges[1];
                integrate_2d(|x, y| g(&[x, y]), (*lx, *hx), (*ly, *hy), bx, by, opts)
            }
            _ => unreachable!("quadrature path handles at most two continuous coordinates"),
        }
    }
}

/// Accumulates evaluation failures inside quadrature closures.
#[derive(Default)]
struct Tracker {
    error: Option<Error>,
    violation: bool,
    max_rel_error: f64,
}

impl Tracker {
    fn eval(&mut self, fd: &MixedDensity, x: &[f64], y2: &[u64]) -> f64 {
        match fd.evaluate_latent(x, y2) {
            Ok(e) => {
                if !e.ln_density.is_nan() {
                    self.max_rel_error = self.max_rel_error.max(e.rel_error);
                    return e.ln_density;
                }
                self.error
                    .get_or_insert(Error::Numerical(format!("non-finite density at {x:?}, {y2:?}")));
                f64::NEG_INFINITY
            }
            Err(err) => {
                self.error.get_or_insert(err);
                f64::NEG_INFINITY
            }
        }
    }
}

struct OutcomeResult {
    value: f64,
    error: f64,
    rel_error: f64,
    violation: bool,
    converged: bool,
}

fn outcome_integral(
    f0: &MixedDensity,
    f: &MixedDensity,
    region: &Region,
    y2: &[u64],
    kind: Kind,
    opts: QuadOptions,
) -> Result<OutcomeResult> {
    let mut t = Tracker::default();
    let r = region.integrate(
        |x| {
            let l0 = t.eval(f0, x, y2);
            let l = t.eval(f, x, y2);
            let v = pointwise(kind, l0, l);
            if v.is_infinite() {
                t.violation = true;
                0.0
            } else {
                v
            }
        },
        opts,
    );
    if let Some(e) = t.error {
        return Err(e);
    }
    Ok(OutcomeResult {
        value: r.value,
        error: r.error,
        rel_error: t.max_rel_error,
        violation: t.violation,
        converged: r.converged,
    })
}

fn quadrature_path(f0: &MixedDensity, f: &MixedDensity, cfg: &DivergenceConfig, kind: Kind) -> Result<DivergenceEstimate> {
    let (outcomes, omitted) = shared_support(f0, f, cfg.tail_mass_tol)?;
    let region = Region::union(f0, f, cfg);
    let opts = QuadOptions {
        abs_tol: cfg.quad_abs_tol,
        rel_tol: cfg.quad_rel_tol,
        max_intervals: 2000,
    };
    let results: Vec<Result<OutcomeResult>> = outcomes
        .par_iter()
        .map(|y2| outcome_integral(f0, f, &region, y2, kind, opts))
        .collect();

    let mut value = 0.0;
    let mut error = omitted;
    let mut rel = 0.0f64;
    let mut diagnostics = Vec::new();
    for (y2, r) in outcomes.iter().zip(results) {
        let r = r?;
        if r.violation {
            diagnostics.push(format!("support violation: f vanishes where f0 > 0 at outcome {y2:?}"));
        }
        if !r.converged {
            diagnostics.push(format!("quadrature did not converge at outcome {y2:?}"));
        }
        value += r.value;
        error += r.error;
        rel = rel.max(r.rel_error);
    }
    // box-probability error enters each log-density ratio at most `2 rel`
    error += 2.0 * rel;
    if kind == Kind::Kl && diagnostics.iter().any(|d| d.starts_with("support")) {
        value = f64::INFINITY;
    }
    if omitted > 0.0 {
        diagnostics.push(format!("omitted discrete tail mass {omitted:.3e}"));
    }
    Ok(DivergenceEstimate {
        value,
        std_error: 0.0,
        quad_error: error,
        method: Method::Quadrature,
        tail_mass_tol: cfg.tail_mass_tol,
        diagnostics,
    })
}

const MC_CHUNK: usize = 1024;

fn monte_carlo_path(f0: &MixedDensity, f: &MixedDensity, cfg: &DivergenceConfig, kind: Kind) -> Result<DivergenceEstimate> {
    let n = cfg.mc_samples.max(2);
    let chunks = n.div_ceil(MC_CHUNK);
    let partial: Vec<Result<(Vec<f64>, bool, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(cfg.seed, &[0x6d63, kind as u64, c as u64]);
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut vals = Vec::with_capacity(len);
            let mut violation = false;
            let mut rel = 0.0f64;
            for _ in 0..len {
                let source = match kind {
                    Kind::Kl => f0,
                    Kind::L1 => {
                        if rng.random::<bool>() {
                            f0
                        } else {
                            f
                        }
                    }
                };
                let y: MixedPoint = source.pushforward_sample(1, &mut rng).pop().expect("one draw");
                let e0 = f0.evaluate(&y)?;
                let e = f.evaluate(&y)?;
                rel = rel.max(e0.rel_error).max(e.rel_error);
                let (l0, l) = (e0.ln_density, e.ln_density);
                if l0.is_nan() || l.is_nan() {
                    return Err(Error::Numerical("non-finite density in Monte Carlo estimate".into()));
                }
                let v = match kind {
                    Kind::Kl => {
                        if l == f64::NEG_INFINITY {
                            violation = true;
                            0.0
                        } else {
                            l0 - l
                        }
                    }
                    Kind::L1 => {
                        let m = l0.max(l);
                        let (a, b) = ((l0 - m).exp(), (l - m).exp());
                        2.0 * (a - b).abs() / (a + b)
                    }
                };
                vals.push(v);
            }
            Ok((vals, violation, rel))
        })
        .collect();

    let mut all = Vec::with_capacity(n);
    let mut violation = false;
    let mut rel = 0.0f64;
    for p in partial {
        let (v, viol, r) = p?;
        all.extend(v);
        violation |= viol;
        rel = rel.max(r);
    }
    let len = all.len() as f64;
    let mean = all.iter().sum::<f64>() / len;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1.0);
    let mut diagnostics = Vec::new();
    let value = if violation {
        diagnostics.push("support violation: f vanishes at a draw from f0".into());
        f64::INFINITY
    } else {
        mean
    };
    Ok(DivergenceEstimate {
        value,
        std_error: (var / len).sqrt(),
        quad_error: 2.0 * rel,
        method: Method::MonteCarlo,
        tail_mass_tol: cfg.tail_mass_tol,
        diagnostics,
    })
}

/// Same quadrature as [`l1_mixed`] / [`kl_mixed`] with the sum over discrete
/// outcomes moved inside the integral over the continuous block.
pub fn divergence_sum_inside(
    f0: &MixedDensity,
    f: &MixedDensity,
    cfg: &DivergenceConfig,
    kl: bool,
) -> Result<f64> {
    check_pair(f0, f)?;
    if f0.schema().p1() > 2 {
        return Err(Error::Precondition("at most two continuous coordinates".into()));
    }
    let kind = if kl { Kind::Kl } else { Kind::L1 };
    let (outcomes, _) = shared_support(f0, f, cfg.tail_mass_tol)?;
    let region = Region::union(f0, f, cfg);
    let opts = QuadOptions {
        abs_tol: cfg.quad_abs_tol,
        rel_tol: cfg.quad_rel_tol,
        max_intervals: 4000,
    };
    let mut t = Tracker::default();
    let r = region.integrate(
        |x| {
            outcomes
                .iter()
                .map(|y2| {
                    let l0 = t.eval(f0, x, y2);
                    let l = t.eval(f, x, y2);
                    pointwise(kind, l0, l)
                })
                .sum()
        },
        opts,
    );
    if let Some(e) = t.error {
        return Err(e);
    }
    Ok(r.value)
}

/// L1 distance between the empirical frequencies of the discrete block and
/// the discrete marginal of `f`.
///
/// This is a cheap goodness-of-fit proxy: it ignores the continuous block
/// entirely and is not the mixed-measure distance of [`l1_mixed`].
pub fn empirical_l1(data: &[MixedPoint], f: &MixedDensity, cfg: &DivergenceConfig) -> Result<DivergenceEstimate> {
    if data.is_empty() {
        return Err(Error::Precondition("no data".into()));
    }
    let mut freq: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    let w = 1.0 / data.len() as f64;
    for y in data {
        f.schema().check_point(y)?;
        *freq.entry(y.y2.clone()).or_default() += w;
    }
    let support = f.discrete_support_enumeration(cfg.tail_mass_tol)?;
    let mut value = 0.0;
    let mut kept = 0.0;
    for y2 in &support {
        let p = f.discrete_marginal(y2)?;
        kept += p;
        value += (freq.remove(y2).unwrap_or(0.0) - p).abs();
    }
    // outcomes seen in the data but outside the enumerated support
    for (y2, q) in freq {
        let p = f.discrete_marginal(&y2)?;
        kept += p;
        value += (q - p).abs();
    }
    let omitted = (1.0 - kept).max(0.0);
    Ok(DivergenceEstimate {
        value,
        std_error: 0.0,
        quad_error: omitted,
        method: Method::Empirical,
        tail_mass_tol: cfg.tail_mass_tol,
        diagnostics: vec!["discrete-marginal proxy; continuous block ignored".into()],
    })
}
