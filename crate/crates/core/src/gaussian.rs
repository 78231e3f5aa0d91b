//! Multivariate Gaussian primitives: density, conditioning, box probabilities
//! and truncated sampling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::normal::{self, LN_SQRT_2PI, TWO_PI};
use crate::quadrature::{self, QuadOptions};
use crate::schema::Cell;

/// Default target standard error for box probabilities.
pub const DEFAULT_BOX_ACCURACY: f64 = 1e-6;
/// Default point budget for randomized QMC box probabilities.
pub const DEFAULT_BOX_BUDGET: usize = 100_000;

/// A multivariate normal with a cached lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

fn symmetric_within(cov: &DMatrix<f64>, tol: f64) -> bool {
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    let n = cov.nrows();
    (0..n).all(|i| (0..i).all(|j| (cov[(i, j)] - cov[(j, i)]).abs() <= tol * scale))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

impl GaussianComponent {
    /// Builds a component; the covariance must be symmetric positive definite.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::Dimension {
                expected: p,
                got: cov.nrows(),
            });
        }
        if p == 0 {
            return Err(Error::Precondition("zero-dimensional Gaussian".into()));
        }
        if !symmetric_within(&cov, 1e-12) {
            return Err(Error::Numerical("covariance is not symmetric".into()));
        }
        // symmetrize exactly so the cached factor is of the stored matrix
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            Error::Numerical(format!(
                "covariance is not positive definite (condition number {:.3e})",
                condition_number(&cov)
            ))
        })?;
        let l = chol.l();
        if l.diagonal().iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Numerical("degenerate Cholesky factor".into()));
        }
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(GaussianComponent {
            mean: DVector::from_vec(mean),
            cov,
            chol: l,
            log_det,
        })
    }

    /// Like [`GaussianComponent::new`], but a covariance that fails Cholesky
    /// gets `1e-8 * trace / p` added to its diagonal, up to three times.
    pub fn with_repair(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let first = match Self::new(mean.clone(), cov.clone()) {
            Ok(c) => return Ok(c),
            Err(e) => e,
        };
        let p = cov.nrows().max(1);
        let jitter = (1e-8 * cov.trace() / p as f64).abs().max(f64::MIN_POSITIVE);
        let mut repaired = (&cov + cov.transpose()) * 0.5;
        for _ in 0..3 {
            for i in 0..repaired.nrows() {
                repaired[(i, i)] += jitter;
            }
            if let Ok(c) = Self::new(mean.clone(), repaired.clone()) {
                return Ok(c);
            }
        }
        Err(first)
    }

    pub fn standard(p: usize) -> Self {
        Self::new(vec![0.0; p], DMatrix::identity(p, p)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular `L` with `L L^T = cov`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// Solves `L z = x - mean` and returns `z`.
    fn whiten(&self, x: &[f64]) -> DVector<f64> {
        let mut z = DVector::from_column_slice(x) - &self.mean;
        self.chol.solve_lower_triangular_mut(&mut z);
        z
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let z = self.whiten(x);
        -0.5 * z.norm_squared() - 0.5 * self.log_det - self.dim() as f64 * LN_SQRT_2PI
    }

    /// Marginal over the coordinates in `idx`, in that order.
    pub fn marginal(&self, idx: &[usize]) -> Result<Self> {
        let mean = idx.iter().map(|&i| self.mean[i]).collect();
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        Self::new(mean, cov)
    }

    /// Exact conditional law of the remaining coordinates given
    /// `x[observed_idx] = observed_vals`.
    pub fn condition(&self, observed_idx: &[usize], observed_vals: &[f64]) -> Result<Self> {
        if observed_idx.len() != observed_vals.len() {
            return Err(Error::Dimension {
                expected: observed_idx.len(),
                got: observed_vals.len(),
            });
        }
        let c = Conditioner::new(self, observed_idx)?;
        c.conditional(observed_vals)
    }

    /// Box probability with the default point budget.
    pub fn box_probability<R: Rng + ?Sized>(
        &self,
        cell: &Cell,
        accuracy: f64,
        rng: &mut R,
    ) -> Result<BoxEstimate> {
        self.box_probability_with(
            cell,
            &BoxSettings {
                accuracy,
                ..BoxSettings::default()
            },
            rng,
        )
    }

    /// `P(X in cell)`. Closed form in one and two dimensions, adaptive
    /// quadrature of the exact bivariate conditional in three, randomized
    /// QMC over the Cholesky-separated integrand beyond that (or whenever
    /// the three-dimensional rule does not settle).
    pub fn box_probability_with<R: Rng + ?Sized>(
        &self,
        cell: &Cell,
        settings: &BoxSettings,
        rng: &mut R,
    ) -> Result<BoxEstimate> {
        self.check_dim(cell.dim())?;
        if !(settings.accuracy > 0.0) {
            return Err(Error::Precondition("box accuracy must be positive".into()));
        }
        match self.dim() {
            1 => {
                let sd = self.chol[(0, 0)];
                let a = (cell.lower[0] - self.mean[0]) / sd;
                let b = (cell.upper[0] - self.mean[0]) / sd;
                Ok(BoxEstimate::exact_ln(normal::ln_interval(a, b)))
            }
            2 => {
                let sd0 = self.cov[(0, 0)].sqrt();
                let sd1 = self.cov[(1, 1)].sqrt();
                let r = (self.cov[(0, 1)] / (sd0 * sd1)).clamp(-1.0, 1.0);
                let lo = [
                    (cell.lower[0] - self.mean[0]) / sd0,
                    (cell.lower[1] - self.mean[1]) / sd1,
                ];
                let hi = [
                    (cell.upper[0] - self.mean[0]) / sd0,
                    (cell.upper[1] - self.mean[1]) / sd1,
                ];
                Ok(BoxEstimate::exact(bivariate_rectangle(lo, hi, r)))
            }
            3 => match self.trivariate_box(cell, settings.accuracy) {
                Some(est) => Ok(est),
                None => self.box_probability_qmc(cell, settings, rng),
            },
            _ => self.box_probability_qmc(cell, settings, rng),
        }
    }

    // Integrates the exact bivariate conditional probability against the
    // first coordinate's marginal. `None` when the quadrature does not settle.
    fn trivariate_box(&self, cell: &Cell, accuracy: f64) -> Option<BoxEstimate> {
        let s = &self.cov;
        let sd0 = s[(0, 0)].sqrt();
        let z_lo = ((cell.lower[0] - self.mean[0]) / sd0).max(-40.0);
        let z_hi = ((cell.upper[0] - self.mean[0]) / sd0).min(40.0);
        if z_lo >= z_hi {
            return Some(BoxEstimate::exact(0.0));
        }
        // conditional law of coordinates 1, 2 given coordinate 0
        let beta = [s[(1, 0)] / s[(0, 0)], s[(2, 0)] / s[(0, 0)]];
        let c11 = s[(1, 1)] - beta[0] * s[(0, 1)];
        let c22 = s[(2, 2)] - beta[1] * s[(0, 2)];
        let c12 = s[(1, 2)] - beta[0] * s[(0, 2)];
        if !(c11 > 0.0 && c22 > 0.0) {
            return None;
        }
        let (sd1, sd2) = (c11.sqrt(), c22.sqrt());
        let r = (c12 / (sd1 * sd2)).clamp(-1.0, 1.0);
        let mut breaks: Vec<f64> = (-4..=4).map(|k| 1.5 * k as f64).collect();
        for (j, sdj, b) in [(1usize, sd1, beta[0]), (2, sd2, beta[1])] {
            if b != 0.0 {
                for lim in [cell.lower[j], cell.upper[j]] {
                    if lim.is_finite() {
                        let z = (lim - self.mean[j]) / (b * sd0);
                        breaks.extend([z - 2.0 * sdj / (b * sd0).abs(), z, z + 2.0 * sdj / (b * sd0).abs()]);
                    }
                }
            }
        }
        let res = quadrature::integrate(
            |z| {
                let x0 = sd0 * z;
                let m1 = self.mean[1] + beta[0] * x0;
                let m2 = self.mean[2] + beta[1] * x0;
                let lo = [(cell.lower[1] - m1) / sd1, (cell.lower[2] - m2) / sd2];
                let hi = [(cell.upper[1] - m1) / sd1, (cell.upper[2] - m2) / sd2];
                normal::pdf(z) * bivariate_rectangle(lo, hi, r)
            },
            z_lo,
            z_hi,
            &breaks,
            QuadOptions {
                abs_tol: (accuracy * 1e-3).min(1e-10),
                rel_tol: 1e-10,
                max_intervals: 400,
            },
        );
        if !res.converged || res.error > accuracy {
            return None;
        }
        Some(BoxEstimate {
            probability: res.value.clamp(0.0, 1.0),
            ln_probability: res.value.clamp(0.0, 1.0).ln(),
            std_error: res.error,
        })
    }

    /// Randomized QMC estimate for any dimension.
    pub fn box_probability_qmc<R: Rng + ?Sized>(
        &self,
        cell: &Cell,
        settings: &BoxSettings,
        rng: &mut R,
    ) -> Result<BoxEstimate> {
        self.check_dim(cell.dim())?;
        let lower: Vec<f64> = cell
            .lower
            .iter()
            .zip(self.mean.iter())
            .map(|(a, m)| a - m)
            .collect();
        let upper: Vec<f64> = cell
            .upper
            .iter()
            .zip(self.mean.iter())
            .map(|(b, m)| b - m)
            .collect();
        genz_qmc(&self.chol, &lower, &upper, settings, rng)
    }

    /// `mean + L z` with `z` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.mean + &self.chol * z).as_slice().to_vec()
    }

    /// Final state of a coordinate-wise Gibbs chain targeting this Gaussian
    /// restricted to `cell`, started from `init`.
    pub fn sample_truncated<R: Rng + ?Sized>(
        &self,
        cell: &Cell,
        init: &[f64],
        sweeps: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_dim(cell.dim())?;
        self.check_dim(init.len())?;
        if !cell.contains(init) {
            return Err(Error::Precondition(
                "initial state for truncated sampling lies outside the cell".into(),
            ));
        }
        if sweeps == 0 {
            return Err(Error::Precondition("sweeps must be at least 1".into()));
        }
        let precision = self.precision();
        let mut x = init.to_vec();
        gibbs_truncated(self.mean.as_slice(), &precision, cell, &mut x, sweeps, rng);
        Ok(x)
    }

    pub fn precision(&self) -> DMatrix<f64> {
        Cholesky::<f64, Dyn>::pack_dirty(self.chol.clone()).inverse()
    }
}

/// Precomputed block decomposition for repeated conditioning on the same
/// coordinate set.
#[derive(Debug, Clone)]
pub struct Conditioner {
    observed: Vec<usize>,
    rest: Vec<usize>,
    observed_mean: DVector<f64>,
    rest_mean: DVector<f64>,
    /// `Sigma_ro Sigma_oo^{-1}`
    coef: DMatrix<f64>,
    /// conditional law at `observed = observed_mean`
    centered: GaussianComponent,
    observed_marginal: GaussianComponent,
}

impl Conditioner {
    pub fn new(comp: &GaussianComponent, observed_idx: &[usize]) -> Result<Self> {
        let p = comp.dim();
        if observed_idx.is_empty() || observed_idx.len() >= p {
            return Err(Error::Precondition(
                "conditioning set must be a nonempty proper subset".into(),
            ));
        }
        if observed_idx.iter().any(|&i| i >= p) {
            return Err(Error::Dimension {
                expected: p,
                got: observed_idx.iter().copied().max().unwrap_or(0) + 1,
            });
        }
        let rest: Vec<usize> = (0..p).filter(|i| !observed_idx.contains(i)).collect();
        let o = observed_idx;
        let s_oo = DMatrix::from_fn(o.len(), o.len(), |r, c| comp.cov[(o[r], o[c])]);
        let s_ro = DMatrix::from_fn(rest.len(), o.len(), |r, c| comp.cov[(rest[r], o[c])]);
        let s_rr = DMatrix::from_fn(rest.len(), rest.len(), |r, c| comp.cov[(rest[r], rest[c])]);
        let chol_oo = Cholesky::new(s_oo.clone()).ok_or_else(|| Error::Singular {
            condition: condition_number(&s_oo),
        })?;
        // coef = s_ro s_oo^{-1}  <=>  s_oo coef^T = s_or
        let coef = chol_oo.solve(&s_ro.transpose()).transpose();
        let cond_cov = &s_rr - &coef * s_ro.transpose();
        let rest_mean = DVector::from_iterator(rest.len(), rest.iter().map(|&i| comp.mean[i]));
        let observed_mean = DVector::from_iterator(o.len(), o.iter().map(|&i| comp.mean[i]));
        let centered = GaussianComponent::with_repair(rest_mean.as_slice().to_vec(), cond_cov)?;
        let observed_marginal = GaussianComponent::new(observed_mean.as_slice().to_vec(), s_oo)?;
        Ok(Conditioner {
            observed: o.to_vec(),
            rest,
            observed_mean,
            rest_mean,
            coef,
            centered,
            observed_marginal,
        })
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn rest(&self) -> &[usize] {
        &self.rest
    }

    /// Marginal law of the observed block.
    pub fn observed_marginal(&self) -> &GaussianComponent {
        &self.observed_marginal
    }

    /// Conditional covariance, which does not depend on the observed values.
    pub fn conditional_cov(&self) -> &DMatrix<f64> {
        &self.centered.cov
    }

    pub fn conditional_mean(&self, observed_vals: &[f64]) -> Vec<f64> {
        let d = DVector::from_column_slice(observed_vals) - &self.observed_mean;
        (&self.rest_mean + &self.coef * d).as_slice().to_vec()
    }

    pub fn conditional(&self, observed_vals: &[f64]) -> Result<GaussianComponent> {
        if observed_vals.len() != self.observed.len() {
            return Err(Error::Dimension {
                expected: self.observed.len(),
                got: observed_vals.len(),
            });
        }
        let mut c = self.centered.clone();
        c.mean = DVector::from_vec(self.conditional_mean(observed_vals));
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSettings {
    pub accuracy: f64,
    /// Total QMC points across all random shifts before giving up.
    pub max_points: usize,
    pub shifts: usize,
}

impl Default for BoxSettings {
    fn default() -> Self {
        BoxSettings {
            accuracy: DEFAULT_BOX_ACCURACY,
            max_points: DEFAULT_BOX_BUDGET,
            shifts: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxEstimate {
    pub probability: f64,
    pub ln_probability: f64,
    pub std_error: f64,
}

impl BoxEstimate {
    fn exact(p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        BoxEstimate {
            probability: p,
            ln_probability: p.ln(),
            std_error: 0.0,
        }
    }

    fn exact_ln(lp: f64) -> Self {
        BoxEstimate {
            probability: lp.exp(),
            ln_probability: lp,
            std_error: 0.0,
        }
    }
}

// Gauss–Legendre nodes and weights, 20 points (half set).
const GL20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, -0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, -0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, -0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.076_526_521_133_497_33),
];

/// `P(X > h, Y > k)` for standard bivariate normals with correlation `r`.
pub fn bivariate_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return normal::sf(k);
    }
    if k == f64::NEG_INFINITY {
        return normal::sf(h);
    }
    if r.abs() < 1e-15 {
        return normal::sf(h) * normal::sf(k);
    }
    if r.abs() <= 0.925 {
        // Plackett's identity integrated over the correlation angle
        let hk = h * k;
        let hs = 0.5 * (h * h + k * k);
        let asr = 0.5 * r.asin();
        let mut s = 0.0;
        for &(w, x) in &GL20 {
            for sign in [-1.0, 1.0] {
                let sn = (asr * (sign * x + 1.0)).sin();
                s += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return (s * asr / TWO_PI + normal::sf(h) * normal::sf(k)).clamp(0.0, 1.0);
    }
    // near-degenerate correlation: integrate the conditional tail directly
    let s = (1.0 - r * r).sqrt();
    let lo = h.max(-40.0);
    if lo >= 40.0 {
        return 0.0;
    }
    let breaks = [0.0, k / r, k / r - 4.0 * s / r.abs(), k / r + 4.0 * s / r.abs()];
    let res = quadrature::integrate(
        |x| normal::pdf(x) * normal::sf((k - r * x) / s),
        lo,
        40.0,
        &breaks,
        QuadOptions {
            abs_tol: 1e-16,
            rel_tol: 1e-13,
            max_intervals: 4000,
        },
    );
    res.value.clamp(0.0, 1.0)
}

/// `P(lo <= (X, Y) < hi)` for standard bivariate normals with correlation `r`.
pub fn bivariate_rectangle(mut lo: [f64; 2], mut hi: [f64; 2], mut r: f64) -> f64 {
    if lo[0] >= hi[0] || lo[1] >= hi[1] {
        return 0.0;
    }
    // reflect coordinates whose interval sits below zero so the four corner
    // terms stay small and the inclusion-exclusion does not cancel
    for j in 0..2 {
        if lo[j] + hi[j] < 0.0 {
            let (a, b) = (-hi[j], -lo[j]);
            lo[j] = a;
            hi[j] = b;
            r = -r;
        }
    }
    let p = bivariate_upper(lo[0], lo[1], r) - bivariate_upper(hi[0], lo[1], r)
        - bivariate_upper(lo[0], hi[1], r)
        + bivariate_upper(hi[0], hi[1], r);
    p.clamp(0.0, 1.0)
}

const SQRT_PRIMES: [f64; 24] = [
    std::f64::consts::SQRT_2,
    1.732_050_807_568_877_2,
    2.236_067_977_499_79,
    2.645_751_311_064_590_7,
    3.316_624_790_355_4,
    3.605_551_275_463_989,
    4.123_105_625_617_661,
    4.358_898_943_540_674,
    4.795_831_523_312_719,
    5.385_164_807_134_504,
    5.567_764_362_830_022,
    6.082_762_530_298_219,
    6.403_124_237_432_849,
    6.557_438_524_302,
    6.855_654_600_401_044,
    7.280_109_889_280_518,
    7.681_145_747_868_608,
    7.810_249_675_906_654,
    8.185_352_771_872_45,
    8.426_149_773_176_359,
    8.544_003_745_317_532,
    8.888_194_417_315_589,
    9.110_433_579_144_3,
    9.433_981_132_056_603,
];

/// Inverse CDF of the standard normal restricted to `[lo, hi)` at `u`.
pub(crate) fn truncated_quantile(lo: f64, hi: f64, u: f64) -> f64 {
    let x = if lo >= 0.0 {
        let (slo, shi) = (normal::sf(lo), normal::sf(hi));
        if slo <= 0.0 {
            // beyond representable tail mass: exponential tail approximation
            lo - (1.0 - u).ln() / lo
        } else {
            -normal::quantile(slo - u * (slo - shi))
        }
    } else if hi <= 0.0 {
        let (clo, chi) = (normal::cdf(lo), normal::cdf(hi));
        if chi <= 0.0 {
            hi + (1.0 - u).ln() / -hi
        } else {
            normal::quantile(clo + u * (chi - clo))
        }
    } else {
        let clo = normal::cdf(lo);
        let chi = normal::cdf(hi);
        normal::quantile(clo + u * (chi - clo))
    };
    clamp_half_open(x, lo, hi)
}

fn clamp_half_open(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x >= hi {
        // largest double below hi
        let below = if hi > 0.0 {
            f64::from_bits(hi.to_bits() - 1)
        } else if hi < 0.0 {
            f64::from_bits(hi.to_bits() + 1)
        } else {
            -f64::MIN_POSITIVE
        };
        below.max(lo)
    } else {
        x
    }
}

fn genz_qmc<R: Rng + ?Sized>(
    chol: &DMatrix<f64>,
    lower: &[f64],
    upper: &[f64],
    settings: &BoxSettings,
    rng: &mut R,
) -> Result<BoxEstimate> {
    let p = lower.len();
    if lower.iter().zip(upper).any(|(a, b)| a >= b) {
        return Ok(BoxEstimate::exact(0.0));
    }
    let l00 = chol[(0, 0)];
    if p == 1 {
        return Ok(BoxEstimate::exact_ln(normal::ln_interval(
            lower[0] / l00,
            upper[0] / l00,
        )));
    }
    let dims = p - 1;
    if dims > SQRT_PRIMES.len() {
        return Err(Error::Precondition(format!(
            "box probabilities support at most {} dimensions",
            SQRT_PRIMES.len() + 1
        )));
    }
    let first = (lower[0] / l00, upper[0] / l00);
    let shifts = settings.shifts.max(2);
    let deltas: Vec<Vec<f64>> = (0..shifts)
        .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut sums = vec![0.0f64; shifts];
    let mut y = vec![0.0f64; p];
    let integrand = |w: &[f64], y: &mut [f64]| -> f64 {
        let (mut a, mut b) = first;
        let mut f = normal::interval(a, b);
        for i in 1..p {
            y[i - 1] = truncated_quantile(a, b, w[i - 1]);
            let s: f64 = (0..i).map(|j| chol[(i, j)] * y[j]).sum();
            let lii = chol[(i, i)];
            a = (lower[i] - s) / lii;
            b = (upper[i] - s) / lii;
            f *= normal::interval(a, b);
            if f == 0.0 {
                break;
            }
        }
        f
    };
    let mut done = 0usize;
    let mut n = 64usize;
    let mut w = vec![0.0f64; dims];
    loop {
        for (s, delta) in sums.iter_mut().zip(&deltas) {
            for i in done..n {
                for d in 0..dims {
                    let x = ((i + 1) as f64 * SQRT_PRIMES[d] + delta[d]).fract();
                    // baker's transform periodizes the integrand
                    w[d] = 1.0 - (2.0 * x - 1.0).abs();
                }
                *s += integrand(&w, &mut y);
            }
        }
        done = n;
        let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
        let mean = means.iter().sum::<f64>() / shifts as f64;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>()
            / ((shifts - 1) * shifts) as f64;
        let se = var.sqrt();
        if se <= settings.accuracy {
            let prob = mean.clamp(0.0, 1.0);
            return Ok(BoxEstimate {
                probability: prob,
                ln_probability: prob.ln(),
                std_error: se,
            });
        }
        if 2 * n * shifts > settings.max_points {
            return Err(Error::Accuracy {
                target: settings.accuracy,
                achieved: se,
                points: n * shifts,
            });
        }
        n *= 2;
    }
}

/// Draws from the standard normal restricted to `[lo, hi)`.
pub fn truncated_standard_normal<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo < hi);
    if lo > 6.0 {
        upper_tail_draw(lo, hi, rng)
    } else if hi < -6.0 {
        clamp_half_open(-upper_tail_draw(-hi, -lo, rng), lo, hi)
    } else {
        truncated_quantile(lo, hi, rng.random::<f64>())
    }
}

// Rejection sampler for [lo, hi) with lo far in the upper tail.
fn upper_tail_draw<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    if hi - lo < 1.0 / rate {
        // uniform proposal; acceptance at least exp(-1)
        loop {
            let z = lo + (hi - lo) * rng.random::<f64>();
            if rng.random::<f64>() <= (0.5 * (lo * lo - z * z)).exp() {
                return clamp_half_open(z, lo, hi);
            }
        }
    }
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = lo + rng.sample(exp);
        if z >= hi {
            continue;
        }
        if rng.random::<f64>() <= (-0.5 * (z - rate) * (z - rate)).exp() {
            return z;
        }
    }
}

/// Draws from `N(mean, sd^2)` restricted to `[lo, hi)`.
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let z = truncated_standard_normal((lo - mean) / sd, (hi - mean) / sd, rng);
    clamp_half_open(mean + sd * z, lo, hi)
}

/// Coordinate-wise Gibbs sweeps for `N(mean, precision^{-1})` restricted to
/// `cell`, updating `x` in place.
pub(crate) fn gibbs_truncated<R: Rng + ?Sized>(
    mean: &[f64],
    precision: &DMatrix<f64>,
    cell: &Cell,
    x: &mut [f64],
    sweeps: usize,
    rng: &mut R,
) {
    let p = mean.len();
    for _ in 0..sweeps {
        for j in 0..p {
            let pjj = precision[(j, j)];
            let mut shift = 0.0;
            for k in 0..p {
                if k != j {
                    shift += precision[(j, k)] * (x[k] - mean[k]);
                }
            }
            let m = mean[j] - shift / pjj;
            let sd = pjj.sqrt().recip();
            x[j] = truncated_normal(m, sd, cell.lower[j], cell.upper[j], rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use nalgebra::dmatrix;

    fn bivariate(rho: f64) -> GaussianComponent {
        GaussianComponent::new(vec![0.0, 0.0], dmatrix![1.0, rho; rho, 1.0]).unwrap()
    }

    #[test]
    fn log_density_closed_forms() {
        let g1 = GaussianComponent::standard(1);
        assert!((g1.log_density(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-14);
        let g2 = GaussianComponent::standard(2);
        assert!((g2.log_density(&[0.0, 0.0]).unwrap() + 1.837_877_066_409_345_5).abs() < 1e-14);
        let v4 = GaussianComponent::new(vec![0.0], dmatrix![4.0]).unwrap();
        let expected = -0.5 * (8.0 * std::f64::consts::PI).ln() - 0.5;
        assert!((v4.log_density(&[2.0]).unwrap() - expected).abs() < 1e-14);
        assert!((expected + 2.1121).abs() < 1e-4);
        // the density integrates to one
        let mass = quadrature::integrate(
            |x| v4.log_density(&[x]).unwrap().exp(),
            -30.0,
            30.0,
            &[0.0],
            QuadOptions::default(),
        );
        assert!((mass.value - 1.0).abs() < 1e-10);
        assert!(matches!(g2.log_density(&[0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn precision_inverts_covariance() {
        let g = GaussianComponent::new(
            vec![0.0, 0.0],
            dmatrix![0.238_082_831_570_405_3, 0.404_852_778_565_847; 0.404_852_778_565_847, 1.730_282_612_085_779_3],
        )
        .unwrap();
        let id = g.precision() * g.cov();
        assert!((id - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn rejects_non_spd() {
        assert!(GaussianComponent::new(vec![0.0, 0.0], dmatrix![1.0, 2.0; 2.0, 1.0]).is_err());
        assert!(GaussianComponent::new(vec![0.0, 0.0], dmatrix![1.0, 0.5; 0.4, 1.0]).is_err());
        // rank-deficient but repairable
        let c = GaussianComponent::with_repair(vec![0.0, 0.0], dmatrix![1.0, 1.0; 1.0, 1.0]);
        assert!(c.is_ok());
    }

    #[test]
    fn cholesky_reproduces_covariance() {
        let cov = dmatrix![2.0, 1.0, 0.0; 1.0, 2.0, 1.0; 0.0, 1.0, 2.0];
        let g = GaussianComponent::new(vec![0.0; 3], cov.clone()).unwrap();
        let rec = g.chol() * g.chol().transpose();
        assert!((rec - &cov).norm() / cov.norm() < 1e-10);
    }

    #[test]
    fn condition_examples() {
        let g = GaussianComponent::standard(2);
        let c = g.condition(&[0], &[5.0]).unwrap();
        assert!(c.mean()[0].abs() < 1e-15);
        assert!((c.cov()[(0, 0)] - 1.0).abs() < 1e-15);

        let c = bivariate(0.5).condition(&[0], &[1.0]).unwrap();
        assert!((c.mean()[0] - 0.5).abs() < 1e-14);
        assert!((c.cov()[(0, 0)] - 0.75).abs() < 1e-14);

        let cov = dmatrix![2.0, 1.0, 0.0; 1.0, 2.0, 1.0; 0.0, 1.0, 2.0];
        let g = GaussianComponent::new(vec![0.0; 3], cov.clone()).unwrap();
        let c = g.condition(&[2], &[0.0]).unwrap();
        // brute force: Schur complement with an explicit inverse
        let s_rr = cov.view((0, 0), (2, 2)).into_owned();
        let s_ro = cov.view((0, 2), (2, 1)).into_owned();
        let s_oo_inv = cov.view((2, 2), (1, 1)).into_owned().try_inverse().unwrap();
        let oracle = &s_rr - &s_ro * s_oo_inv * s_ro.transpose();
        assert!((c.cov() - &oracle).amax() < 1e-14);
        assert!((c.cov() - dmatrix![2.0, 1.0; 1.0, 1.5]).amax() < 1e-14);
        assert!(c.mean().amax() < 1e-15);
    }

    #[test]
    fn box_examples() {
        let mut rng = substream(1, &[]);
        let g1 = GaussianComponent::standard(1);
        let b = g1
            .box_probability(&Cell::new(vec![f64::NEG_INFINITY], vec![0.0]), 1e-6, &mut rng)
            .unwrap();
        assert_eq!(b.probability, 0.5);
        assert_eq!(b.std_error, 0.0);

        let pos = Cell::new(vec![0.0, 0.0], vec![f64::INFINITY; 2]);
        let b = GaussianComponent::standard(2)
            .box_probability(&pos, 1e-6, &mut rng)
            .unwrap();
        assert!((b.probability - 0.25).abs() < 1e-15);

        let orthant = 0.25 + 0.5f64.asin() / TWO_PI;
        let b = bivariate(0.5).box_probability(&pos, 1e-6, &mut rng).unwrap();
        assert!((b.probability - orthant).abs() < 1e-14);
        assert!((orthant - 1.0 / 3.0).abs() < 1e-15);
        let q = bivariate(0.5)
            .box_probability_qmc(
                &pos,
                &BoxSettings {
                    accuracy: 1e-5,
                    ..BoxSettings::default()
                },
                &mut rng,
            )
            .unwrap();
        assert!((q.probability - orthant).abs() < 5e-5, "{q:?}");
    }

    #[test]
    fn bivariate_high_correlation_branch() {
        for &r in &[-0.99, -0.95, 0.93, 0.999] {
            let exact = 0.25 + f64::asin(r) / TWO_PI;
            assert!((bivariate_upper(0.0, 0.0, r) - exact).abs() < 1e-12, "r={r}");
        }
        // continuity across the branch switch
        let a = bivariate_upper(0.7, -0.3, 0.925);
        let b = bivariate_upper(0.7, -0.3, 0.925_000_001);
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn qmc_matches_exact_in_two_and_three_dimensions() {
        let mut rng = substream(3, &[]);
        let g = GaussianComponent::new(vec![0.2, -0.4], dmatrix![1.5, 0.6; 0.6, 0.8]).unwrap();
        let cell = Cell::new(vec![-0.5, -1.0], vec![1.0, f64::INFINITY]);
        let exact = g.box_probability(&cell, 1e-7, &mut rng).unwrap();
        let qmc = g
            .box_probability_qmc(
                &cell,
                &BoxSettings {
                    accuracy: 1e-5,
                    ..BoxSettings::default()
                },
                &mut rng,
            )
            .unwrap();
        assert!((exact.probability - qmc.probability).abs() < 4.0 * qmc.std_error + 1e-7);

        // 3-D orthant with equal correlations has the closed form 1/8 + 3 asin(r)/(4 pi)
        let r = 0.3;
        let g3 = GaussianComponent::new(
            vec![0.0; 3],
            dmatrix![1.0, r, r; r, 1.0, r; r, r, 1.0],
        )
        .unwrap();
        let cell = Cell::new(vec![0.0; 3], vec![f64::INFINITY; 3]);
        let b = g3.box_probability(&cell, 1e-6, &mut rng).unwrap();
        let exact = 0.125 + 3.0 * r.asin() / (4.0 * std::f64::consts::PI);
        assert!((b.probability - exact).abs() < 1e-9, "{b:?} vs {exact}");
        assert!(b.std_error <= 1e-6);
        let q = g3
            .box_probability_qmc(
                &cell,
                &BoxSettings {
                    accuracy: 1e-5,
                    ..BoxSettings::default()
                },
                &mut rng,
            )
            .unwrap();
        assert!((q.probability - exact).abs() < 4.0 * q.std_error + 1e-7, "{q:?}");
    }

    #[test]
    fn unreachable_accuracy_reports_achieved_error() {
        let mut rng = substream(4, &[]);
        let r = 0.3;
        let g3 = GaussianComponent::new(
            vec![0.0; 3],
            dmatrix![1.0, r, r; r, 1.0, r; r, r, 1.0],
        )
        .unwrap();
        let cell = Cell::new(vec![-0.3, 0.1, -2.0], vec![0.4, 1.0, 0.5]);
        let err = g3
            .box_probability_qmc(
                &cell,
                &BoxSettings {
                    accuracy: 1e-15,
                    max_points: 2_000,
                    shifts: 10,
                },
                &mut rng,
            )
            .unwrap_err();
        match err {
            Error::Accuracy { achieved, .. } => assert!(achieved > 1e-15),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let mut rng = substream(5, &[]);
        let g = GaussianComponent::standard(2);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let x = g.sample(&mut rng);
            sum[0] += x[0];
            sum[1] += x[1];
        }
        assert!(sum.iter().all(|s| (s / n as f64).abs() < 0.02));

        let v4 = GaussianComponent::new(vec![0.0], dmatrix![4.0]).unwrap();
        let draws: Vec<f64> = (0..n).map(|_| v4.sample(&mut rng)[0]).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((3.85..=4.15).contains(&var), "{var}");

        let a: Vec<Vec<f64>> = {
            let mut r = substream(9, &[1]);
            (0..5).map(|_| g.sample(&mut r)).collect()
        };
        let b: Vec<Vec<f64>> = {
            let mut r = substream(9, &[1]);
            (0..5).map(|_| g.sample(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_examples() {
        let mut rng = substream(6, &[]);
        let g = GaussianComponent::standard(1);
        let cell = Cell::new(vec![0.0], vec![f64::INFINITY]);
        let n = 100_000;
        let mut x = vec![1.0];
        let mut s = 0.0;
        for _ in 0..n {
            x = g.sample_truncated(&cell, &x, 1, &mut rng).unwrap();
            assert!(cell.contains(&x));
            s += x[0];
        }
        assert!((s / n as f64 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.01);

        // no-op truncation reproduces the normal law
        let full = Cell::full(1);
        let mut draws: Vec<f64> = (0..10_000)
            .map(|_| g.sample_truncated(&full, &[0.0], 1, &mut rng).unwrap()[0])
            .collect();
        draws.sort_by(f64::total_cmp);
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = normal::cdf(v);
                (c - i as f64 / 1e4).abs().max(((i + 1) as f64 / 1e4 - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "{ks}");

        let g2 = GaussianComponent::standard(2);
        let orth = Cell::new(vec![0.0, 0.0], vec![f64::INFINITY; 2]);
        let mut x = vec![0.5, 0.5];
        let mut sums = [0.0; 2];
        for _ in 0..n {
            x = g2.sample_truncated(&orth, &x, 1, &mut rng).unwrap();
            sums[0] += x[0];
            sums[1] += x[1];
        }
        for s in sums {
            assert!((s / n as f64 - 0.797_884_560_802_865_4).abs() < 0.01);
        }
        assert!(matches!(
            g2.sample_truncated(&orth, &[-1.0, 0.5], 1, &mut rng),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn far_tail_truncation_stays_inside() {
        let mut rng = substream(7, &[]);
        let mut s = 0.0;
        for _ in 0..20_000 {
            let z = truncated_standard_normal(8.0, f64::INFINITY, &mut rng);
            assert!(z >= 8.0);
            s += z;
        }
        // E[Z | Z > 8] = phi(8) / sf(8)
        let mean = normal::pdf(8.0) / normal::sf(8.0);
        assert!((s / 20_000.0 - mean).abs() < 0.01);
        for _ in 0..2_000 {
            let z = truncated_standard_normal(40.0, 40.01, &mut rng);
            assert!((40.0..40.01).contains(&z));
            let z = truncated_standard_normal(-12.0, -11.5, &mut rng);
            assert!((-12.0..-11.5).contains(&z));
            let z = truncated_standard_normal(2.0, 2.0 + 1e-9, &mut rng);
            assert!((2.0..2.0 + 1e-9).contains(&z));
        }
    }
}
