//! Small numerical kernels shared across the crate: scaled error functions,
//! bracketed root finding, golden-section search, Gauss-Legendre quadrature
//! and binomial/multinomial weights.

use std::f64::consts::PI;

/// `exp(e) * erfc(y)` without intermediate overflow or underflow.
pub fn exp_erfc(e: f64, y: f64) -> f64 {
    if y < 0.0 {
        // erfc(y) in (1, 2]; no cancellation possible.
        return e.exp() * libm::erfc(y);
    }
    (e + ln_erfc(y)).exp()
}

/// Natural log of `erfc(y)` for `y >= 0`, valid far into the tail.
pub fn ln_erfc(y: f64) -> f64 {
    debug_assert!(y >= 0.0);
    if y < 25.0 {
        return libm::erfc(y).ln();
    }
    // Asymptotic series; relative error below 1e-12 for y >= 25.
    let inv = 1.0 / (2.0 * y * y);
    let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv * inv * inv + 105.0 * inv.powi(4);
    -y * y - (y * PI.sqrt()).ln() + series.ln()
}

/// `exp(e) * (erf(y1) - erf(y0))` for `y0 <= y1`; `y0` may be `-inf`.
pub fn scaled_erf_diff(e: f64, y0: f64, y1: f64) -> f64 {
    debug_assert!(y0 <= y1);
    if y0 >= 0.0 {
        exp_erfc(e, y0) - exp_erfc(e, y1)
    } else if y1 <= 0.0 {
        exp_erfc(e, -y1) - exp_erfc(e, -y0)
    } else {
        e.exp() * (libm::erf(y1) - libm::erf(y0))
    }
}

/// Bisection on a sign change. Returns `None` if `f(lo)` and `f(hi)` share a sign.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= rel_tol * scale || mid == lo || mid == hi {
            return Some(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Golden-section search for the maximum of a unimodal function on `[lo, hi]`.
/// Returns `(argmax, max)`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, abs_tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo).abs() > abs_tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Eight-point Gauss-Legendre rule on one panel.
pub fn gauss_legendre8<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
        acc += w * (f(mid - half * x) + f(mid + half * x));
    }
    acc * half
}

/// Composite eight-point Gauss-Legendre over `panels` equal panels.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + h * i as f64;
            gauss_legendre8(&mut f, lo, lo + h)
        })
        .sum()
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

pub fn binomial_coefficient(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Binomial pmf `C(n, k) p^k (1-p)^(n-k)`; zero when `k > n`.
pub fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    binomial_coefficient(n, k) * powi0(p, k) * powi0(1.0 - p, n - k)
}

/// `x^k` with the convention `0^0 = 1`.
pub fn powi0(x: f64, k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        x.powi(k as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_erfc_matches_direct_in_safe_range() {
        for &(e, y) in &[(0.0, 0.3), (2.0, 1.7), (-3.0, 4.0), (1.0, -0.5)] {
            let direct = f64::exp(e) * libm::erfc(y);
            assert!((exp_erfc(e, y) - direct).abs() <= 1e-14 * direct.abs().max(1e-300));
        }
    }

    #[test]
    fn ln_erfc_is_continuous_across_the_switch() {
        let below = libm::erfc(25.0 - 1e-9).ln();
        let above = ln_erfc(25.0 + 1e-9);
        assert!((below - above).abs() < 1e-6);
        let at = ln_erfc(25.0);
        assert!((at - libm::erfc(25.0).ln()).abs() < 1e-9 * at.abs());
    }

    #[test]
    fn scaled_erf_diff_handles_infinite_lower_limit() {
        let v = scaled_erf_diff(0.0, f64::NEG_INFINITY, 0.0);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bisect_finds_sqrt_two() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-12).is_none());
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx) = golden_max(|x| -(x - 0.3) * (x - 0.3) + 2.0, 0.0, 1.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_integrates_gaussian() {
        let v = integrate(|x| (-x * x).exp(), -8.0, 8.0, 16);
        assert!((v - PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        let s: f64 = (0..=7).map(|k| binomial_pmf(7, k, 0.37)).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert_eq!(binomial_pmf(3, 4, 0.5), 0.0);
        assert_eq!(binomial_pmf(0, 0, 0.0), 1.0);
    }
}
