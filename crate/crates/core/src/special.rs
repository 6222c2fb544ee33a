//! Special functions used by the detector and information kernels.
//!
//! The Poisson mass function follows Loader's saddle-point formulation, which
//! keeps full relative accuracy for counts in the millions where a direct
//! `exp(n ln λ - λ - ln n!)` loses several digits.

use libm::erfc;

use crate::scalar::Real;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Φ(z)`.
#[inline]
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// `Φ(b) - Φ(a)` for `a <= b`, evaluated on the tail that avoids cancellation.
pub fn norm_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a >= 0.0 {
        norm_sf(a) - norm_sf(b)
    } else if b <= 0.0 {
        norm_cdf(b) - norm_cdf(a)
    } else {
        1.0 - norm_cdf(a) - norm_sf(b)
    }
}

/// Stirling remainder `ln n! - ln(√(2πn) (n/e)^n)`.
fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    // ln n! - (n + 1/2) ln n + n - ln √(2π), n = 1..=15
    const TABLE: [f64; 16] = [
        0.0,
        0.081_061_466_795_327_258,
        0.041_340_695_955_409_294,
        0.027_677_925_684_998_339,
        0.020_790_672_103_765_093,
        0.016_644_691_189_821_193,
        0.013_876_128_823_070_747,
        0.011_896_709_945_891_770,
        0.010_411_265_261_972_096,
        0.009_255_462_182_712_733,
        0.008_330_563_433_362_871,
        0.007_573_675_487_951_841,
        0.006_942_840_107_209_530,
        0.006_408_994_188_004_207,
        0.005_951_370_112_758_848,
        0.005_554_733_551_962_801,
    ];
    if n < 16 {
        return TABLE[n as usize];
    }
    let nf = n as f64;
    let nn = nf * nf;
    if n > 500 {
        (S0 - S1 / nn) / nf
    } else if n > 80 {
        (S0 - (S1 - S2 / nn) / nn) / nf
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / nf
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nf
    }
}

/// Deviance term `x ln(x/m) + m - x`, accurate when `x ≈ m`.
fn bd0(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// Poisson probability mass `λ^n e^{-λ} / n!`.
pub fn poisson_pmf(n: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if n == 0 {
        return (-lambda).exp();
    }
    let x = n as f64;
    (-stirlerr(n) - bd0(x, lambda)).exp() / (std::f64::consts::TAU * x).sqrt()
}

/// Natural log of the Poisson mass; `-inf` where the mass is exactly zero.
pub fn ln_poisson_pmf(n: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if n == 0 {
        return -lambda;
    }
    let x = n as f64;
    -stirlerr(n) - bd0(x, lambda) - 0.5 * (std::f64::consts::TAU * x).ln()
}

/// Neumaier compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum<T: Real> {
    sum: T,
    comp: T,
}

impl<T: Real> KahanSum<T> {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp + ((self.sum - t) + x);
        } else {
            self.comp = self.comp + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

/// Compensated sum of a sequence.
pub fn compensated_sum<T: Real, I: IntoIterator<Item = T>>(xs: I) -> T {
    let mut acc = KahanSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Trapezoidal rule on a uniform grid over `[lo, hi]` with `n` nodes.
pub fn trapezoid<T: Real>(lo: T, hi: T, n: usize, f: impl Fn(T) -> T) -> T {
    assert!(n >= 2, "trapezoid needs at least two nodes");
    let h = (hi - lo) / T::from_usize(n - 1).unwrap();
    let mut acc = KahanSum::new();
    for i in 0..n {
        let x = lo + h * T::from_usize(i).unwrap();
        let w = if i == 0 || i == n - 1 { T::lit(0.5) } else { T::one() };
        acc.add(w * f(x));
    }
    acc.value() * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use libm::lgamma as ln_gamma;

    #[test]
    fn stirlerr_matches_high_precision_values() {
        // 40-digit reference values of ln n! - (n + 1/2) ln n + n - ln √(2π)
        let reference = [
            (1u64, 0.081_061_466_795_327_258_22),
            (16, 0.005_207_655_919_609_640_440_7),
            (20, 0.004_166_319_691_996_922_457_5),
            (24, 0.003_472_021_382_978_766_962_9),
            (30, 0.002_777_674_929_752_693_603_6),
            (36, 0.002_314_755_290_514_683_866_8),
            (40, 0.002_083_289_938_302_421_748_7),
        ];
        for (n, v) in reference {
            assert!((stirlerr(n) - v).abs() < 5e-16, "n={n} got={} want={v}", stirlerr(n));
        }
        for n in 1..=15u64 {
            let x = n as f64;
            let direct = ln_gamma(x + 1.0) - (x + 0.5) * x.ln() + x - LN_SQRT_2PI;
            assert!((stirlerr(n) - direct).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn poisson_pmf_small_values_match_closed_form() {
        let lambda = 3.7_f64;
        let mut fact = 1.0;
        for n in 0..20u64 {
            if n > 0 {
                fact *= n as f64;
            }
            let exact = lambda.powi(n as i32) * (-lambda).exp() / fact;
            let got = poisson_pmf(n, lambda);
            assert!((got - exact).abs() <= 1e-14 * exact.max(1e-300), "n={n}");
        }
    }

    #[test]
    fn poisson_pmf_large_lambda_normalizes() {
        for &lambda in &[1e3, 1e5, 2.5e6] {
            let sd = f64::sqrt(lambda);
            let lo = (lambda - 12.0 * sd).floor() as u64;
            let hi = (lambda + 12.0 * sd).ceil() as u64;
            let total = compensated_sum((lo..=hi).map(|n| poisson_pmf(n, lambda)));
            assert!((total - 1.0).abs() < 1e-12, "lambda={lambda} total={total}");
        }
    }

    #[test]
    fn norm_interval_is_accurate_in_tails() {
        let far = norm_interval(10.0, 11.0);
        let expect = norm_sf(10.0) - norm_sf(11.0);
        assert!(far > 0.0 && (far - expect).abs() < 1e-30);
        let v = norm_interval(-1.0, 1.0);
        assert!((v - 0.682_689_492_137_085_9).abs() < 1e-14, "{v:e}");
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn trapezoid_integrates_gaussian() {
        let v = trapezoid(-10.0, 10.0, 2001, norm_pdf);
        assert!((v - 1.0).abs() < 1e-12);
    }
}
