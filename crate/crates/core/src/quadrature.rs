//! Adaptive Gauss–Kronrod (7/15) quadrature on finite intervals, plus a
//! nested rule for rectangles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_intervals: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    let value = k * h;
    let error = ((k - g) * h).abs();
    (value, error)
}

/// Integrates `f` over `[a, b]`, starting from the subintervals induced by
/// `breakpoints` (points outside `(a, b)` are ignored).
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: QuadOptions,
) -> QuadResult {
    if !(b > a) {
        return QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
            converged: true,
        };
    }
    let mut edges: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > a && x < b && x.is_finite())
        .collect();
    edges.push(a);
    edges.push(b);
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (b - a));

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in edges.windows(2) {
        let (value, error) = kronrod(&mut f, w[0], w[1]);
        evaluations += 15;
        total += value;
        total_err += error;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }

    let mut converged = false;
    while heap.len() < opts.max_intervals {
        if total_err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            converged = true;
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval can no longer be split in floating point
            heap.push(worst);
            break;
        }
        let (v1, e1) = kronrod(&mut f, worst.a, mid);
        let (v2, e2) = kronrod(&mut f, mid, worst.b);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    if !converged && total_err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
        converged = true;
    }
    // recompute sums to shed accumulated rounding from the running updates
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    QuadResult {
        value,
        error,
        evaluations,
        converged,
    }
}

/// Integrates `f(x, y)` over `[ax, bx] x [ay, by]` with an adaptive outer
/// rule over `x` and an adaptive inner rule over `y`.
pub fn integrate_2d<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
    x_breaks: &[f64],
    y_breaks: &[f64],
    opts: QuadOptions,
) -> QuadResult {
    let inner_opts = QuadOptions {
        abs_tol: opts.abs_tol / (bx - ax).max(1.0),
        rel_tol: opts.rel_tol * 0.1,
        max_intervals: opts.max_intervals,
    };
    let mut inner_err = 0.0f64;
    let mut evaluations = 0;
    let mut all_inner_converged = true;
    let outer = integrate(
        |x| {
            let r = integrate(|y| f(x, y), ay, by, y_breaks, inner_opts);
            inner_err = inner_err.max(r.error);
            evaluations += r.evaluations;
            all_inner_converged &= r.converged;
            r.value
        },
        ax,
        bx,
        x_breaks,
        opts,
    );
    QuadResult {
        value: outer.value,
        error: outer.error + inner_err * (bx - ax),
        evaluations,
        converged: outer.converged && all_inner_converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, &[], QuadOptions::default());
        assert!((r.value - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
        assert!(r.converged);
    }

    #[test]
    fn gaussian_density_has_unit_mass() {
        let r = integrate(
            crate::normal::pdf,
            -12.0,
            12.0,
            &[-2.0, 0.0, 2.0],
            QuadOptions::default(),
        );
        assert!((r.value - 1.0).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn narrow_peak_found_with_breakpoint() {
        let peak = |x: f64| crate::normal::pdf((x - 37.3) / 1e-3) / 1e-3;
        let r = integrate(peak, -100.0, 100.0, &[37.292, 37.296, 37.298, 37.3, 37.302, 37.304, 37.308], QuadOptions::default());
        assert!((r.value - 1.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn kink_converges() {
        let r = integrate(|x: f64| (x - 0.3).abs(), -1.0, 1.0, &[], QuadOptions::default());
        assert!((r.value - (1.3f64.powi(2) + 0.7f64.powi(2)) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn rectangle_rule() {
        let r = integrate_2d(
            |x, y| crate::normal::pdf(x) * crate::normal::pdf(y),
            (-10.0, 10.0),
            (-10.0, 0.0),
            &[0.0],
            &[],
            QuadOptions::default(),
        );
        assert!((r.value - 0.5).abs() < 1e-10, "{r:?}");
    }
}
