//! Blocked Gibbs sampler for a truncated Dirichlet-process mixture of
//! Gaussians on the latent space, with data augmentation for the discrete
//! block.
//!
//! Each sweep
//! (a) redraws every row's discrete-block latents from its cluster's Gaussian
//!     restricted to the row's cell, continuous-block latents held fixed;
//! (b) redraws allocations;
//! (c) redraws stick-breaking weights;
//! (d) redraws cluster means and covariances from their Normal-Inverse-Wishart
//!     conditionals.
//!
//! Every random draw uses a substream keyed by (seed, chain, iteration, ...)
//! and rows are visited in key order, so results do not depend on thread
//! count, and permuting rows together with their keys changes nothing.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaussian::{truncated_normal, GaussianComponent};
use crate::mixture::LatentMixture;
use crate::normal::log_sum_exp;
use crate::rng::substream;
use crate::rounding::MixedDensity;
use crate::schema::{cell_of, latent_of_continuous, Cell, MixedPoint, MixedSchema};

const TAG_INIT: u64 = 0x696e_6974;
const TAG_AUGMENT: u64 = 1;
const TAG_ALLOC: u64 = 2;
const TAG_STICK: u64 = 3;
const TAG_NIW: u64 = 4;

/// Pseudo-bound replacing infinite cell sides when initializing latents.
const INIT_CAP: f64 = 6.0;

/// Normal-Inverse-Wishart base measure: `Σ ~ IW(ν0, Ψ0)`, `μ | Σ ~ N(m0, Σ/κ0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwParams {
    pub m0: Vec<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    /// row-major `p x p`
    pub psi0: Vec<f64>,
}

impl NiwParams {
    pub fn new(m0: Vec<f64>, kappa0: f64, nu0: f64, psi0: DMatrix<f64>) -> Result<Self> {
        let p = m0.len();
        if psi0.nrows() != p || psi0.ncols() != p {
            return Err(Error::Dimension {
                expected: p,
                got: psi0.nrows(),
            });
        }
        if !(kappa0 > 0.0) {
            return Err(Error::Precondition("kappa0 must be positive".into()));
        }
        if !(nu0 > p as f64 - 1.0) {
            return Err(Error::Precondition(format!("nu0 must exceed p - 1 = {}", p as f64 - 1.0)));
        }
        if Cholesky::new(psi0.clone()).is_none() || (&psi0 - psi0.transpose()).amax() > 1e-12 * psi0.amax() {
            return Err(Error::Precondition("psi0 must be symmetric positive definite".into()));
        }
        Ok(NiwParams {
            m0,
            kappa0,
            nu0,
            psi0: psi0.transpose().as_slice().to_vec(),
        })
    }

    /// Weakly informative defaults scaled to the initial latents: `m0` their
    /// mean, `κ0 = 0.01`, `ν0 = p + 2`, `Ψ0` the diagonal of their covariance.
    pub fn from_latents(latents: &[Vec<f64>], p: usize) -> Result<Self> {
        let n = latents.len();
        if n == 0 {
            return Err(Error::Precondition("default base measure needs data".into()));
        }
        let mut mean = vec![0.0; p];
        for x in latents {
            for j in 0..p {
                mean[j] += x[j] / n as f64;
            }
        }
        let mut diag = vec![0.0; p];
        for x in latents {
            for j in 0..p {
                diag[j] += (x[j] - mean[j]).powi(2);
            }
        }
        for d in &mut diag {
            *d = if n > 1 { *d / (n - 1) as f64 } else { 1.0 };
            if !(*d > 1e-8) {
                *d = 1.0;
            }
        }
        Self::new(mean, 0.01, p as f64 + 2.0, DMatrix::from_diagonal(&DVector::from_vec(diag)))
    }

    pub fn from_data(data: &[MixedPoint], schema: &MixedSchema) -> Result<Self> {
        let latents = data
            .iter()
            .map(|y| initial_latent(schema, y))
            .collect::<Result<Vec<_>>>()?;
        Self::from_latents(&latents, schema.p())
    }

    pub fn dim(&self) -> usize {
        self.m0.len()
    }

    pub fn psi(&self) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_row_slice(p, p, &self.psi0)
    }

    /// Conjugate posterior given observations, in the order supplied.
    pub fn posterior(&self, xs: &[&[f64]]) -> NiwParams {
        let p = self.dim();
        let n = xs.len();
        if n == 0 {
            return self.clone();
        }
        let mut mean = DVector::zeros(p);
        for x in xs {
            mean += DVector::from_column_slice(x);
        }
        mean /= n as f64;
        let mut scatter = DMatrix::zeros(p, p);
        for x in xs {
            let d = DVector::from_column_slice(x) - &mean;
            scatter += &d * d.transpose();
        }
        let m0 = DVector::from_column_slice(&self.m0);
        let nf = n as f64;
        let kappa = self.kappa0 + nf;
        let m = (&m0 * self.kappa0 + &mean * nf) / kappa;
        let dm = &mean - &m0;
        let psi = self.psi() + scatter + (&dm * dm.transpose()) * (self.kappa0 * nf / kappa);
        NiwParams {
            m0: m.as_slice().to_vec(),
            kappa0: kappa,
            nu0: self.nu0 + nf,
            psi0: symmetrize(psi).transpose().as_slice().to_vec(),
        }
    }

    /// Posterior after one more observation (rank-one form).
    pub fn update_one(&self, x: &[f64]) -> NiwParams {
        let m = DVector::from_column_slice(&self.m0);
        let xv = DVector::from_column_slice(x);
        let d = &xv - &m;
        let kappa = self.kappa0 + 1.0;
        let new_m = (&m * self.kappa0 + &xv) / kappa;
        let psi = self.psi() + (&d * d.transpose()) * (self.kappa0 / kappa);
        NiwParams {
            m0: new_m.as_slice().to_vec(),
            kappa0: kappa,
            nu0: self.nu0 + 1.0,
            psi0: psi.transpose().as_slice().to_vec(),
        }
    }

    /// Draws `(μ, Σ)`; `Σ` via the Bartlett decomposition of its inverse.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GaussianComponent> {
        let p = self.dim();
        let psi_inv = Cholesky::new(self.psi())
            .ok_or_else(|| Error::Numerical("scale matrix lost positive definiteness".into()))?
            .inverse();
        let l = Cholesky::new(symmetrize(psi_inv))
            .ok_or_else(|| Error::Numerical("inverse scale matrix not positive definite".into()))?
            .l();
        let mut a = DMatrix::zeros(p, p);
        for i in 0..p {
            let chi = ChiSquared::new(self.nu0 - i as f64)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            a[(i, i)] = chi.sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let t = l * a;
        let t_inv = t
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::Numerical("singular Wishart factor".into()))?;
        let sigma = symmetrize(t_inv.transpose() * t_inv);
        let scaled = GaussianComponent::with_repair(vec![0.0; p], &sigma / self.kappa0)?;
        let z = scaled.sample(rng);
        let mean: Vec<f64> = self.m0.iter().zip(z).map(|(m, z)| m + z).collect();
        GaussianComponent::with_repair(mean, sigma)
    }

    /// Log density of `(μ, Σ)` under this NIW.
    pub fn log_density(&self, comp: &GaussianComponent) -> f64 {
        let p = self.dim() as f64;
        let sigma_scaled = GaussianComponent::new(self.m0.clone(), comp.cov() / self.kappa0);
        let ln_mean = match sigma_scaled {
            Ok(g) => g.log_density_unchecked(comp.mean().as_slice()),
            Err(_) => return f64::NEG_INFINITY,
        };
        let psi = self.psi();
        let ln_det_psi = match Cholesky::new(psi.clone()) {
            Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => return f64::NEG_INFINITY,
        };
        let trace = (psi * comp.precision()).trace();
        let nu = self.nu0;
        let ln_iw = 0.5 * nu * ln_det_psi
            - 0.5 * nu * p * std::f64::consts::LN_2
            - ln_multigamma(0.5 * nu, self.dim())
            - 0.5 * (nu + p + 1.0) * comp.log_det()
            - 0.5 * trace;
        ln_mean + ln_iw
    }
}

fn ln_multigamma(a: f64, p: usize) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..p).map(|j| libm::lgamma(a - j as f64 / 2.0)).sum::<f64>()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub alpha: f64,
    pub k_max: usize,
    /// coordinate sweeps of the truncated-normal update per Gibbs sweep
    pub truncation_sweeps: usize,
    /// total sweeps, burn-in included
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chain: u64,
    /// clusters seeded at initialization (capped by `k_max` and n)
    pub init_clusters: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            alpha: 1.0,
            k_max: 30,
            truncation_sweeps: 1,
            iterations: 2000,
            burn_in: 1000,
            thin: 10,
            seed: 0,
            chain: 0,
            init_clusters: 10,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0) {
            problems.push("alpha must be positive".to_string());
        }
        if self.k_max == 0 {
            problems.push("k_max must be at least 1".into());
        }
        if self.burn_in > self.iterations {
            problems.push("burn-in exceeds iterations".into());
        }
        if self.thin == 0 {
            problems.push("thin must be at least 1".into());
        }
        if self.truncation_sweeps == 0 {
            problems.push("truncation sweeps must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Precondition(problems.join("; ")))
        }
    }

    /// Number of draws `run` keeps.
    pub fn kept_draws(&self) -> usize {
        (self.iterations - self.burn_in.min(self.iterations)) / self.thin.max(1)
    }
}

/// One row of data in latent form.
#[derive(Debug, Clone, PartialEq)]
struct Row {
    key: u64,
    cell: Option<Cell>,
}

#[derive(Debug, Clone)]
pub struct SamplerState {
    /// latent vectors, rows sorted by key
    pub latents: Vec<Vec<f64>>,
    pub allocations: Vec<usize>,
    /// stick-breaking fractions; the last is always 1
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    pub components: Vec<GaussianComponent>,
    pub iteration: u64,
    rows: Vec<Row>,
    p1: usize,
}

impl SamplerState {
    pub fn n(&self) -> usize {
        self.latents.len()
    }

    pub fn keys(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.key).collect()
    }

    pub fn occupied(&self) -> usize {
        let mut seen = vec![false; self.components.len()];
        for &z in &self.allocations {
            seen[z] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    /// The current mixture, components with zero weight dropped.
    pub fn mixture(&self) -> Result<LatentMixture> {
        let (w, c): (Vec<f64>, Vec<GaussianComponent>) = self
            .weights
            .iter()
            .zip(&self.components)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| (*w, c.clone()))
            .unzip();
        LatentMixture::new(w, c)
    }

    /// Rows whose discrete-block latents left their cell.
    pub fn cell_violations(&self) -> Vec<usize> {
        self.rows
            .iter()
            .zip(&self.latents)
            .enumerate()
            .filter(|(_, (row, x))| row.cell.as_ref().is_some_and(|c| !c.contains(&x[self.p1..])))
            .map(|(i, _)| i)
            .collect()
    }

    /// Conjugate posterior of every cluster given the current latents and
    /// allocations.
    pub fn cluster_posteriors(&self, niw: &NiwParams) -> Vec<NiwParams> {
        let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); self.components.len()];
        for (x, &z) in self.latents.iter().zip(&self.allocations) {
            members[z].push(x);
        }
        members.iter().map(|m| niw.posterior(m)).collect()
    }

    /// `log p(latents, allocations, sticks, clusters)` up to the constant
    /// from the truncation of the cells.
    pub fn log_joint(&self, niw: &NiwParams, alpha: f64) -> f64 {
        let mut total = 0.0;
        for (x, &z) in self.latents.iter().zip(&self.allocations) {
            total += self.weights[z].ln() + self.components[z].log_density_unchecked(x);
        }
        for c in &self.components {
            total += niw.log_density(c);
        }
        let ln_beta_norm = libm::lgamma(1.0 + alpha) - libm::lgamma(alpha);
        for &v in &self.sticks[..self.sticks.len() - 1] {
            total += ln_beta_norm + (alpha - 1.0) * (1.0 - v).ln();
        }
        total
    }
}

/// Latent starting point: continuous block exact, discrete block at the
/// midpoint of its cell with infinite sides replaced by ±6.
pub fn initial_latent(schema: &MixedSchema, y: &MixedPoint) -> Result<Vec<f64>> {
    schema.check_point(y)?;
    let (mut x, _) = latent_of_continuous(schema, &y.y1)?;
    if schema.p2() > 0 {
        let cell = cell_of(schema, &y.y2)?;
        for (lo, hi) in cell.lower.iter().zip(&cell.upper) {
            let a = if lo.is_finite() { *lo } else { (-INIT_CAP).min(hi - 1.0) };
            let b = if hi.is_finite() { *hi } else { INIT_CAP.max(lo + 1.0) };
            x.push(0.5 * (a + b));
        }
    }
    Ok(x)
}

fn weights_from_sticks(sticks: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    sticks
        .iter()
        .map(|&v| {
            let w = rest * v;
            rest *= 1.0 - v;
            w
        })
        .collect()
}

fn prior_sticks<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    let beta = Beta::new(1.0, alpha).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut v: Vec<f64> = (0..k).map(|_| beta.sample(rng)).collect();
    v[k - 1] = 1.0;
    Ok(v)
}

/// Sorts rows by key; returns the permutation.
fn key_order(keys: &[u64]) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    if order.windows(2).any(|w| keys[w[0]] == keys[w[1]]) {
        return Err(Error::Precondition("row keys must be distinct".into()));
    }
    Ok(order)
}

/// Builds the starting state. `keys` identify rows for the random
/// substreams and fix the order of every reduction.
pub fn init_state(
    data: &[MixedPoint],
    keys: &[u64],
    schema: &MixedSchema,
    niw: &NiwParams,
    cfg: &DpConfig,
) -> Result<SamplerState> {
    cfg.validate()?;
    if keys.len() != data.len() {
        return Err(Error::Dimension {
            expected: data.len(),
            got: keys.len(),
        });
    }
    if niw.dim() != schema.p() {
        return Err(Error::Dimension {
            expected: schema.p(),
            got: niw.dim(),
        });
    }
    let mut bad = Vec::new();
    let order = key_order(keys)?;
    let mut latents = Vec::with_capacity(data.len());
    let mut rows = Vec::with_capacity(data.len());
    for &i in &order {
        match initial_latent(schema, &data[i]) {
            Ok(x) => {
                latents.push(x);
                rows.push(Row {
                    key: keys[i],
                    cell: if schema.p2() > 0 {
                        Some(cell_of(schema, &data[i].y2)?)
                    } else {
                        None
                    },
                });
            }
            Err(e) => bad.push(format!("row {i}: {e}")),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Data(bad.join("; ")));
    }

    let k = cfg.k_max;
    let mut rng = substream(cfg.seed, &[TAG_INIT, cfg.chain]);
    let allocations = kmeans_seed(&latents, niw, cfg.init_clusters.min(k).max(1), &mut rng);
    let sticks = prior_sticks(k, cfg.alpha, &mut rng)?;
    let mut state = SamplerState {
        latents,
        allocations,
        weights: weights_from_sticks(&sticks),
        sticks,
        components: Vec::new(),
        iteration: 0,
        rows,
        p1: schema.p1(),
    };
    let posts = {
        let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
        for (x, &z) in state.latents.iter().zip(&state.allocations) {
            members[z].push(x);
        }
        members.iter().map(|m| niw.posterior(m)).collect::<Vec<_>>()
    };
    state.components = posts
        .iter()
        .enumerate()
        .map(|(j, post)| post.sample(&mut substream(cfg.seed, &[TAG_INIT, cfg.chain, 1, j as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(state)
}

/// k-means++ seeding with distances scaled by the prior scale diagonal,
/// followed by nearest-center assignment.
fn kmeans_seed<R: Rng + ?Sized>(latents: &[Vec<f64>], niw: &NiwParams, k: usize, rng: &mut R) -> Vec<usize> {
    let n = latents.len();
    if n == 0 {
        return Vec::new();
    }
    let p = niw.dim();
    let scale: Vec<f64> = (0..p).map(|j| niw.psi0[j * p + j].max(1e-12).recip()).collect();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(&scale)
            .map(|((x, y), s)| (x - y).powi(2) * s)
            .sum()
    };
    let mut centers = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = latents.iter().map(|x| dist(x, &latents[centers[0]])).collect();
    while centers.len() < k.min(n) {
        let total: f64 = best.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in best.iter().enumerate() {
            if u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        centers.push(pick);
        for (b, x) in best.iter_mut().zip(latents) {
            *b = b.min(dist(x, &latents[pick]));
        }
    }
    latents
        .iter()
        .map(|x| {
            centers
                .iter()
                .enumerate()
                .map(|(c, &i)| (c, dist(x, &latents[i])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c)
                .unwrap_or(0)
        })
        .collect()
}

/// One full sweep (a)-(d).
pub fn gibbs_sweep(state: &mut SamplerState, niw: &NiwParams, cfg: &DpConfig) -> Result<()> {
    let iter = state.iteration + 1;
    let k = state.components.len();
    let p1 = state.p1;
    let precisions: Vec<DMatrix<f64>> = state.components.iter().map(|c| c.precision()).collect();

    // (a) truncated augmentation
    if state.rows.first().is_some_and(|r| r.cell.is_some()) {
        let comps = &state.components;
        state
            .latents
            .par_iter_mut()
            .zip(&state.rows)
            .zip(&state.allocations)
            .for_each(|((x, row), &z)| {
                let mut rng = substream(cfg.seed, &[cfg.chain, iter, row.key, TAG_AUGMENT]);
                let cell = row.cell.as_ref().expect("discrete block present");
                augment(x, comps[z].mean().as_slice(), &precisions[z], p1, cell, cfg.truncation_sweeps, &mut rng);
            });
    }

    // (b) allocations
    let ln_w: Vec<f64> = state.weights.iter().map(|w| w.ln()).collect();
    let comps = &state.components;
    state.allocations = state
        .latents
        .par_iter()
        .zip(&state.rows)
        .map(|(x, row)| {
            let mut rng = substream(cfg.seed, &[cfg.chain, iter, row.key, TAG_ALLOC]);
            let logits: Vec<f64> = (0..k)
                .map(|j| {
                    if ln_w[j] == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        ln_w[j] + comps[j].log_density_unchecked(x)
                    }
                })
                .collect();
            categorical_from_logits(&logits, &mut rng)
        })
        .collect();

    // (c) sticks
    let mut counts = vec![0usize; k];
    for &z in &state.allocations {
        counts[z] += 1;
    }
    let mut rng = substream(cfg.seed, &[cfg.chain, iter, TAG_STICK]);
    let mut above: usize = counts.iter().sum();
    for j in 0..k {
        above -= counts[j];
        state.sticks[j] = if j + 1 == k {
            1.0
        } else {
            let beta = Beta::new(1.0 + counts[j] as f64, cfg.alpha + above as f64)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            // keep every weight strictly positive in floating point
            beta.sample(&mut rng).clamp(1e-300, 1.0 - 1e-16)
        };
    }
    state.weights = weights_from_sticks(&state.sticks);

    // (d) cluster parameters
    let posts = state.cluster_posteriors(niw);
    state.components = posts
        .par_iter()
        .enumerate()
        .map(|(j, post)| {
            let mut rng = substream(cfg.seed, &[cfg.chain, iter, TAG_NIW, j as u64]);
            post.sample(&mut rng).map_err(|e| {
                Error::Numerical(format!(
                    "cluster {j} (n = {}, kappa = {:.3e}, nu = {:.3e}): {e}",
                    counts[j], post.kappa0, post.nu0
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    state.iteration = iter;

    let violations = state.cell_violations();
    if !violations.is_empty() {
        return Err(Error::Numerical(format!(
            "latents left their cells at rows {:?}",
            &violations[..violations.len().min(10)]
        )));
    }
    Ok(())
}

/// Coordinate Gibbs over the discrete block of `x` under `N(mean, precision^{-1})`.
fn augment<R: Rng + ?Sized>(
    x: &mut [f64],
    mean: &[f64],
    precision: &DMatrix<f64>,
    p1: usize,
    cell: &Cell,
    sweeps: usize,
    rng: &mut R,
) {
    let p = mean.len();
    for _ in 0..sweeps {
        for j in p1..p {
            let pjj = precision[(j, j)];
            let mut shift = 0.0;
            for l in 0..p {
                if l != j {
                    shift += precision[(j, l)] * (x[l] - mean[l]);
                }
            }
            let m = mean[j] - shift / pjj;
            let sd = pjj.sqrt().recip();
            x[j] = truncated_normal(m, sd, cell.lower[j - p1], cell.upper[j - p1], rng);
        }
    }
}

fn categorical_from_logits<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let lse = log_sum_exp(logits);
    let mut u: f64 = rng.random();
    for (j, l) in logits.iter().enumerate() {
        let pj = (l - lse).exp();
        if u < pj {
            return j;
        }
        u -= pj;
    }
    logits
        .iter()
        .rposition(|l| *l > f64::NEG_INFINITY)
        .unwrap_or(logits.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDiagnostics {
    pub iteration: u64,
    pub log_joint: f64,
    pub occupied: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: DpConfig,
    pub niw: NiwParams,
    pub seed: u64,
    pub n: usize,
    /// SHA-256 over the parsed data in key order
    pub data_digest: String,
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub draws: Vec<LatentMixture>,
    pub schema: MixedSchema,
    pub provenance: Provenance,
    pub diagnostics: Vec<SweepDiagnostics>,
    pub elapsed_seconds: f64,
}

impl PosteriorDraws {
    /// One latent-mixture line per draw.
    pub fn draws_text(&self) -> String {
        let mut out = String::new();
        for d in &self.draws {
            out.push_str(&d.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse_draws(text: &str) -> Result<Vec<LatentMixture>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                LatentMixture::from_line(l).map_err(|e| Error::Parse(format!("draw {}: {e}", i + 1)))
            })
            .collect()
    }

    pub fn metadata_json(&self) -> String {
        #[derive(Serialize)]
        struct Meta<'a> {
            provenance: &'a Provenance,
            draws: usize,
            elapsed_seconds: f64,
            final_log_joint: Option<f64>,
            mean_occupied: Option<f64>,
        }
        let m = Meta {
            provenance: &self.provenance,
            draws: self.draws.len(),
            elapsed_seconds: self.elapsed_seconds,
            final_log_joint: self.diagnostics.last().map(|d| d.log_joint),
            mean_occupied: if self.diagnostics.is_empty() {
                None
            } else {
                Some(
                    self.diagnostics.iter().map(|d| d.occupied as f64).sum::<f64>()
                        / self.diagnostics.len() as f64,
                )
            },
        };
        serde_json::to_string_pretty(&m).expect("metadata serializes")
    }
}

fn data_digest(data: &[MixedPoint], order: &[usize], keys: &[u64]) -> String {
    let mut h = Sha256::new();
    for &i in order {
        h.update(keys[i].to_le_bytes());
        for v in &data[i].y1 {
            h.update(v.to_bits().to_le_bytes());
        }
        for v in &data[i].y2 {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs a chain with rows keyed `0..n`.
pub fn run(data: &[MixedPoint], schema: &MixedSchema, niw: &NiwParams, cfg: &DpConfig) -> Result<PosteriorDraws> {
    let keys: Vec<u64> = (0..data.len() as u64).collect();
    run_keyed(data, &keys, schema, niw, cfg)
}

/// Runs a chain; draws are kept after burn-in at every `thin`-th sweep.
pub fn run_keyed(
    data: &[MixedPoint],
    keys: &[u64],
    schema: &MixedSchema,
    niw: &NiwParams,
    cfg: &DpConfig,
) -> Result<PosteriorDraws> {
    let start = Instant::now();
    let mut state = init_state(data, keys, schema, niw, cfg)?;
    let mut draws = Vec::with_capacity(cfg.kept_draws());
    let mut diagnostics = Vec::with_capacity(cfg.iterations);
    for t in 1..=cfg.iterations {
        gibbs_sweep(&mut state, niw, cfg)?;
        diagnostics.push(SweepDiagnostics {
            iteration: state.iteration,
            log_joint: state.log_joint(niw, cfg.alpha),
            occupied: state.occupied(),
        });
        if t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 {
            draws.push(state.mixture()?);
        }
    }
    let order = key_order(keys)?;
    Ok(PosteriorDraws {
        draws,
        schema: schema.clone(),
        provenance: Provenance {
            config: cfg.clone(),
            niw: niw.clone(),
            seed: cfg.seed,
            n: data.len(),
            data_digest: data_digest(data, &order, keys),
        },
        diagnostics,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Posterior-mean density: the equal-weight average of the draws.
pub fn predictive_density(draws: &PosteriorDraws) -> Result<MixedDensity> {
    predictive_from(&draws.draws, &draws.schema)
}

pub fn predictive_from(draws: &[LatentMixture], schema: &MixedSchema) -> Result<MixedDensity> {
    if draws.is_empty() {
        return Err(Error::Precondition("no posterior draws".into()));
    }
    MixedDensity::new(schema.clone(), LatentMixture::average(draws)?)
}
