//! Small numerical kernels shared by the modules: adaptive Gauss-Kronrod
//! quadrature, monotone bisection and compensated summation.

use crate::error::{Error, Result};

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
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
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = hl * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kron * hl, ((kron - gauss) * hl).abs())
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate is below `max(abs_tol, rel_tol * |I|)`. Running out of the
/// interval budget is an error, never a silent result. Features narrower
/// than the node spacing can go unseen, so split at known peaks first.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if parts.len() >= max_intervals {
            return Err(Error::Quadrature(format!(
                "{} subintervals on [{a}, {b}], error estimate {err:e} vs value {total:e}",
                parts.len()
            )));
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Bisection for the crossing of a nondecreasing predicate.
///
/// `below(x)` must be true at `lo` and false at `hi`; returns the final
/// bracket once its width drops under `rel_width * hi` or after `max_iter`
/// halvings.
pub fn bisect_monotone<F: FnMut(f64) -> bool>(
    mut below: F,
    mut lo: f64,
    mut hi: f64,
    rel_width: f64,
    max_iter: usize,
) -> (f64, f64) {
    for _ in 0..max_iter {
        if hi - lo <= rel_width * hi.abs() {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `m` log-spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..m)
        .map(|k| (a + (b - a) * k as f64 / (m - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_exactly() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12, 0.0, 50).unwrap();
        assert!((v - 0.0).abs() < 1e-12);
        let v = integrate(|x| x.powi(6), -1.0, 1.0, 1e-12, 0.0, 50).unwrap();
        assert!((v - 2.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn integrates_narrow_peak() {
        let w = 1e-2;
        let v = integrate(|x| (-(x / w).powi(2)).exp(), -3.0, 1.0, 1e-10, 0.0, 500).unwrap();
        let exact = w * std::f64::consts::PI.sqrt();
        assert!((v - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn peaks_between_nodes_are_invisible() {
        // Callers must place breakpoints near features narrower than the
        // node spacing; the error estimate cannot see them.
        let w = 1e-5;
        let v = integrate(|x| (-(x / w).powi(2)).exp(), -3.0, 1.0, 1e-10, 0.0, 500).unwrap();
        assert!(v < 1e-12);
    }

    #[test]
    fn interval_budget_is_an_error() {
        let r = integrate(|x| 1.0 / x.abs().sqrt(), -1.0, 1.0, 1e-14, 0.0, 4);
        assert!(matches!(r, Err(Error::Quadrature(_))));
    }

    #[test]
    fn bisection_brackets_sqrt2() {
        let (lo, hi) = bisect_monotone(|x| x * x < 2.0, 0.0, 2.0, 1e-14, 200);
        assert!(lo * lo < 2.0 && hi * hi >= 2.0);
        assert!((hi - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut s = KahanSum::new();
        s.add(1.0);
        for _ in 0..10_000 {
            s.add(1e-16);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-12).abs() < 1e-20);
    }
}
