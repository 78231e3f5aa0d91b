#![allow(dead_code)]

use std::collections::HashMap;

use mixscale::lab::random_mixture;
use mixscale::quadrature::{integrate, integrate_2d, QuadOptions};
use mixscale::rng::substream;
use mixscale::rounding::MixedDensity;
use mixscale::schema::{cell_of, ContinuousColumn, DiscreteColumn, MixedPoint, MixedSchema, MonotoneMap};
use rand::Rng;

pub fn random_map<R: Rng + ?Sized>(rng: &mut R) -> MonotoneMap {
    match rng.random_range(0..3) {
        0 => MonotoneMap::Identity,
        1 => MonotoneMap::Affine {
            scale: rng.random_range(0.5..3.0),
            shift: rng.random_range(-1.0..1.0),
        },
        _ => MonotoneMap::LogExp,
    }
}

pub fn random_discrete<R: Rng + ?Sized>(name: String, rng: &mut R) -> DiscreteColumn {
    match rng.random_range(0..3) {
        0 => DiscreteColumn::binary(name, rng.random_range(-1.0..1.0)),
        1 => {
            let a: f64 = rng.random_range(-1.5..0.5);
            DiscreteColumn::categorical(name, vec![a, a + rng.random_range(0.3..2.0)])
        }
        _ => DiscreteColumn::count(name),
    }
}

pub fn random_schema_with<R: Rng + ?Sized>(p1: usize, p2: usize, rng: &mut R) -> MixedSchema {
    let continuous = (0..p1)
        .map(|j| ContinuousColumn {
            name: format!("x{j}"),
            map: random_map(rng),
        })
        .collect();
    let discrete = (0..p2).map(|j| random_discrete(format!("d{j}"), rng)).collect();
    MixedSchema::new(continuous, discrete).unwrap()
}

/// A random density with exactly `p1` continuous and `p2` discrete columns.
pub fn random_density(seed: u64, index: u64, p1: usize, p2: usize, k_max: usize) -> MixedDensity {
    let mut rng = substream(seed, &[index]);
    let schema = random_schema_with(p1, p2, &mut rng);
    let latent = random_mixture(p1 + p2, k_max, &mut rng);
    MixedDensity::new(schema, latent).unwrap()
}

/// Total mass: discrete outcomes up to a 1e-7 tail, continuous block by
/// quadrature in observed coordinates.
pub fn total_mass(fd: &MixedDensity) -> f64 {
    let schema = fd.schema();
    let maps = schema.cont_maps();
    let ranges: Vec<(f64, f64, Vec<f64>)> = fd
        .continuous_latent_box(9.0, 1e-14)
        .into_iter()
        .zip(&maps)
        .map(|((lo, hi, br), m)| {
            (
                m.forward(lo),
                m.forward(hi),
                br.iter().map(|&b| m.forward(b)).collect(),
            )
        })
        .collect();
    let opts = QuadOptions {
        abs_tol: 1e-11,
        rel_tol: 1e-9,
        max_intervals: 4000,
    };
    let f = |y1: Vec<f64>, y2: &[u64]| {
        fd.log_density(&MixedPoint::new(y1, y2.to_vec()))
            .unwrap()
            .exp()
    };
    fd.discrete_support_enumeration(1e-7)
        .unwrap()
        .iter()
        .map(|y2| match ranges.as_slice() {
            [] => f(vec![], y2),
            [(lo, hi, br)] => integrate(|x| f(vec![x], y2), *lo, *hi, br, opts).value,
            [(lx, hx, bx), (ly, hy, by)] => {
                integrate_2d(|x, y| f(vec![x, y], y2), (*lx, *hx), (*ly, *hy), bx, by, opts).value
            }
            _ => panic!("at most two continuous columns"),
        })
        .sum()
}

/// Direct factorized density for one component with `p1 <= 1` and one discrete column:
/// the bivariate (or univariate) normal density integrated over the cell by
/// 1-D quadrature, times the Jacobian of the inverse map.
pub fn density_by_quadrature(fd: &MixedDensity, y: &MixedPoint) -> f64 {
    let schema = fd.schema();
    assert_eq!(fd.latent().len(), 1);
    assert_eq!(schema.p2(), 1);
    let comp = &fd.latent().components()[0];
    let cell = cell_of(schema, &y.y2).unwrap();
    let (a, b) = (cell.lower[0], cell.upper[0]);
    let opts = QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-13,
        max_intervals: 4000,
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    match schema.p1() {
        0 => {
            let (m, s) = (comp.mean()[0], comp.cov()[(0, 0)].sqrt());
            let lo = a.max(m - 40.0 * s);
            let hi = b.min(m + 40.0 * s);
            let pdf = |z: f64| (-0.5 * ((z - m) / s).powi(2)).exp() / (s * two_pi.sqrt());
            integrate(pdf, lo, hi, &[m], opts).value
        }
        1 => {
            let (m1, m2) = (comp.mean()[0], comp.mean()[1]);
            let c = comp.cov();
            let (s11, s12, s22) = (c[(0, 0)], c[(0, 1)], c[(1, 1)]);
            let det = s11 * s22 - s12 * s12;
            let (x, jac) = match schema.continuous()[0].map {
                MonotoneMap::Identity => (y.y1[0], 1.0),
                MonotoneMap::Affine { scale, shift } => ((y.y1[0] - shift) / scale, 1.0 / scale),
                MonotoneMap::LogExp => (y.y1[0].ln(), 1.0 / y.y1[0]),
            };
            let joint = |z: f64| {
                let (dx, dz) = (x - m1, z - m2);
                let q = (s22 * dx * dx - 2.0 * s12 * dx * dz + s11 * dz * dz) / det;
                (-0.5 * q).exp() / (two_pi * det.sqrt())
            };
            let cm = m2 + s12 / s11 * (x - m1);
            let cs = (det / s11).sqrt();
            let lo = a.max(cm - 40.0 * cs);
            let hi = b.min(cm + 40.0 * cs);
            jac * integrate(joint, lo, hi, &[cm], opts).value
        }
        _ => panic!("oracle covers p1 <= 1"),
    }
}

/// Largest binomial z-score between pushforward frequencies and evaluated
/// marginals over outcomes with mass above 0.01, and the number of such
/// outcomes.
pub fn pushforward_worst_z(fd: &MixedDensity, n: usize, seed: u64) -> (f64, usize) {
    let mut rng = substream(seed, &[0x7066]);
    let mut counts: HashMap<Vec<u64>, usize> = HashMap::new();
    for y in fd.pushforward_sample(n, &mut rng) {
        *counts.entry(y.y2).or_default() += 1;
    }
    let mut worst = 0.0f64;
    let mut checked = 0;
    for y2 in fd.discrete_support_enumeration(1e-6).unwrap() {
        let p = fd.discrete_marginal(&y2).unwrap();
        if p <= 0.01 {
            continue;
        }
        let freq = counts.get(&y2).copied().unwrap_or(0) as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        worst = worst.max((freq - p).abs() / se);
        checked += 1;
    }
    (worst, checked)
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
