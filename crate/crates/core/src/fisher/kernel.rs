//! Outcome distribution `P(k) = Σ_N R(k|N) Poisson(N; λ)` and its λ-derivative.
//!
//! The derivative uses `d/dλ Poisson(N; λ) = Poisson(N-1; λ) - Poisson(N; λ)`,
//! which avoids dividing by λ and stays exact at λ = 0.
//!
//! For integer gain the readout kernel depends on `k - gain·N` only, so the
//! sum over `N` is a (strided) discrete convolution of the Poisson weights with
//! a single digitized Gaussian. Photoelectron counts whose whole kernel lies at
//! or above `k_s` (or at or below 0) are folded straight into the saturation
//! (or zero) bin without touching the convolution, which bounds the work by
//! the unsaturated part of the Poisson window. Large convolutions go through
//! an FFT; the value and derivative sequences share one complex transform.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::detector::{DetectorCalib, NOISE_TAIL_SIGMAS};
use crate::special::{norm_interval, poisson_pmf};

use super::FisherError;

/// Poisson terms below this fraction of the modal term are dropped.
const POISSON_REL_CUT: f64 = 1e-18;
/// Required captured Poisson mass.
const POISSON_MASS_TOL: f64 = 1e-12;
/// FFT round-off floor relative to the band maximum.
const FFT_FLOOR: f64 = 1e-14;

/// Probabilities (and optionally λ-derivatives) over a contiguous readout band.
#[derive(Clone, Debug, PartialEq)]
pub struct BandPmf {
    pub k0: u64,
    pub prob: Vec<f64>,
    /// `∂P(k)/∂λ`; empty when not requested.
    pub dprob_dlambda: Vec<f64>,
}

impl BandPmf {
    pub fn get(&self, k: u64) -> f64 {
        if k < self.k0 {
            return 0.0;
        }
        self.prob.get((k - self.k0) as usize).copied().unwrap_or(0.0)
    }

    pub fn k_max(&self) -> u64 {
        self.k0 + self.prob.len() as u64 - 1
    }
}

/// Truncated Poisson window `N ∈ [n_lo, n_lo + p.len())`.
#[derive(Clone, Debug)]
pub(crate) struct PoissonWindow {
    pub n_lo: u64,
    pub p: Vec<f64>,
}

pub(crate) fn poisson_window(lambda: f64) -> Result<PoissonWindow, FisherError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(FisherError::InvalidRate { lambda });
    }
    if lambda == 0.0 {
        return Ok(PoissonWindow { n_lo: 0, p: vec![1.0] });
    }
    let sd = lambda.sqrt();
    let cap_lo = (lambda - 12.0 * sd - 30.0).floor().max(0.0) as u64;
    let cap_hi = (lambda + 12.0 * sd + 50.0).ceil() as u64;
    let mode = (lambda.floor() as u64).clamp(cap_lo, cap_hi);
    let p_mode = poisson_pmf(mode, lambda);
    let cut = p_mode * POISSON_REL_CUT;
    const REANCHOR: u64 = 512;

    let mut up = Vec::new();
    let mut n = mode;
    let mut pn = p_mode;
    while n < cap_hi {
        n += 1;
        pn = if (n - mode).is_multiple_of(REANCHOR) { poisson_pmf(n, lambda) } else { pn * lambda / n as f64 };
        if pn < cut {
            break;
        }
        up.push(pn);
    }
    let mut down = Vec::new();
    let mut n = mode;
    let mut pn = p_mode;
    while n > cap_lo {
        pn = if (mode - n + 1).is_multiple_of(REANCHOR) { poisson_pmf(n - 1, lambda) } else { pn * n as f64 / lambda };
        n -= 1;
        if pn < cut {
            break;
        }
        down.push(pn);
    }
    let n_lo = mode - down.len() as u64;
    let mut p = Vec::with_capacity(down.len() + 1 + up.len());
    p.extend(down.iter().rev());
    p.push(p_mode);
    p.extend(up);
    let mass: f64 = p.iter().sum();
    if (1.0 - mass).abs() > POISSON_MASS_TOL {
        return Err(FisherError::TruncationFailure { lambda, captured: mass });
    }
    Ok(PoissonWindow { n_lo, p })
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Linear convolution of `x` (optionally with a second sequence `y`) with
/// kernel `r`, where `x` is placed on a lattice of stride `stride`.
fn convolve(
    x: &[f64],
    y: Option<&[f64]>,
    r: &[f64],
    stride: usize,
) -> (Vec<f64>, Vec<f64>) {
    let lx = stride * (x.len() - 1) + 1;
    let out_len = lx + r.len() - 1;
    let nnz = x.len();
    let direct_cost = (nnz * r.len()) as f64 * if y.is_some() { 2.0 } else { 1.0 };
    let n = out_len.next_power_of_two();
    let fft_cost = 12.0 * n as f64 * (n as f64).log2().max(1.0);
    if direct_cost <= fft_cost {
        let mut vx = vec![0.0; out_len];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let base = i * stride;
            for (acc, &rm) in vx[base..base + r.len()].iter_mut().zip(r) {
                *acc += xi * rm;
            }
        }
        let vy = match y {
            Some(y) => {
                let mut vy = vec![0.0; out_len];
                for (i, &yi) in y.iter().enumerate() {
                    if yi == 0.0 {
                        continue;
                    }
                    let base = i * stride;
                    for (acc, &rm) in vy[base..base + r.len()].iter_mut().zip(r) {
                        *acc += yi * rm;
                    }
                }
                vy
            }
            None => Vec::new(),
        };
        return (vx, vy);
    }

    let mut a = vec![Complex::new(0.0, 0.0); n];
    for (i, &xi) in x.iter().enumerate() {
        a[i * stride].re = xi;
    }
    if let Some(y) = y {
        for (i, &yi) in y.iter().enumerate() {
            a[i * stride].im = yi;
        }
    }
    let mut b = vec![Complex::new(0.0, 0.0); n];
    for (bm, &rm) in b.iter_mut().zip(r) {
        bm.re = rm;
    }
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    });
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= *bi;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    let mut vx: Vec<f64> = a[..out_len].iter().map(|c| c.re * scale).collect();
    let peak = vx.iter().cloned().fold(0.0, f64::max);
    let floor = peak * FFT_FLOOR;
    let mut vy = Vec::new();
    if y.is_some() {
        vy = a[..out_len].iter().map(|c| c.im * scale).collect();
    }
    for i in 0..out_len {
        if vx[i] < floor {
            vx[i] = 0.0;
            if !vy.is_empty() {
                vy[i] = 0.0;
            }
        }
    }
    (vx, vy)
}

/// Digitized Gaussian kernel `r(m)`, `m ∈ [m_lo, m_lo + len)`, for readout
/// offset `k - gain·N = m`.
fn lattice_kernel(mu: f64, s: f64) -> (i64, Vec<f64>) {
    let m_lo = (mu - NOISE_TAIL_SIGMAS * s).floor() as i64;
    let m_hi = (mu + NOISE_TAIL_SIGMAS * s).ceil() as i64;
    let r = (m_lo..=m_hi)
        .map(|m| norm_interval((m as f64 - 0.5 - mu) / s, (m as f64 + 0.5 - mu) / s))
        .collect();
    (m_lo, r)
}

struct Accumulator {
    k0: i64,
    prob: Vec<f64>,
    dprob: Vec<f64>,
    with_derivative: bool,
}

impl Accumulator {
    fn new(k_lo: i64, k_hi: i64, with_derivative: bool) -> Self {
        let len = (k_hi - k_lo + 1).max(1) as usize;
        Self {
            k0: k_lo,
            prob: vec![0.0; len],
            dprob: if with_derivative { vec![0.0; len] } else { Vec::new() },
            with_derivative,
        }
    }

    #[inline]
    fn add(&mut self, k: i64, p: f64, dp: f64) {
        let i = (k - self.k0) as usize;
        self.prob[i] += p;
        if self.with_derivative {
            self.dprob[i] += dp;
        }
    }

    fn finish(self, dlambda_scale: f64) -> BandPmf {
        // trim exact-zero edges left by the folding
        let first = self.prob.iter().position(|&v| v != 0.0).unwrap_or(0);
        let last = self.prob.iter().rposition(|&v| v != 0.0).unwrap_or(0);
        let prob = self.prob[first..=last].to_vec();
        let dprob_dlambda = if self.with_derivative {
            self.dprob[first..=last].iter().map(|v| v * dlambda_scale).collect()
        } else {
            Vec::new()
        };
        BandPmf { k0: (self.k0 + first as i64) as u64, prob, dprob_dlambda }
    }
}

/// Full outcome distribution over readouts for Poisson rate `lambda` and total
/// readout noise `noise_sigma` (ADU).
pub fn outcome_distribution(
    lambda: f64,
    noise_sigma: f64,
    calib: &DetectorCalib,
    with_derivative: bool,
) -> Result<BandPmf, FisherError> {
    if lambda > 0.0 && lambda.is_finite() {
        // every count in the admissible window reads out as k_s
        let cap_lo = (lambda - 12.0 * lambda.sqrt() - 30.0).floor().max(0.0);
        let lowest = calib.gain * cap_lo + calib.mu_d - NOISE_TAIL_SIGMAS * noise_sigma;
        if lowest >= calib.k_s as f64 - 0.5 {
            let dprob_dlambda = if with_derivative { vec![0.0] } else { Vec::new() };
            return Ok(BandPmf { k0: calib.k_s as u64, prob: vec![1.0], dprob_dlambda });
        }
    }
    let win = poisson_window(lambda)?;
    let ks = calib.k_s as i64;
    let gain = calib.gain;
    let mu = calib.mu_d;
    let s = noise_sigma;

    // x(N) = p(N) on [n_lo, n_lo + len], y(N) = p(N-1) - p(N); the extra slot holds y(n_hi + 1).
    let len = win.p.len() + 1;
    let mut x = Vec::with_capacity(len);
    let mut y = Vec::with_capacity(len);
    let mut prev = 0.0;
    for i in 0..len {
        let pi = win.p.get(i).copied().unwrap_or(0.0);
        x.push(pi);
        y.push(prev - pi);
        prev = pi;
    }
    let n_lo = win.n_lo as i64;
    let n_top = n_lo + len as i64 - 1;

    let integer_gain = (gain - gain.round()).abs() < 1e-12 && gain.round() >= 1.0;
    if s > 0.0 && integer_gain {
        let stride = gain.round() as i64;
        let (m_lo, r) = lattice_kernel(mu, s);
        let m_hi = m_lo + r.len() as i64 - 1;
        // N at or below zero_cut: whole kernel at k <= 0; at or above sat_cut: k >= k_s.
        let zero_cut = (-m_hi).div_euclid(stride);
        let sat_cut = (ks - m_lo + stride - 1).div_euclid(stride);
        let z = n_lo.max(zero_cut + 1);
        let c = n_top.min(sat_cut - 1);

        let mut lump0 = (0.0, 0.0);
        let mut lump_s = (0.0, 0.0);
        for (i, (&xi, &yi)) in x.iter().zip(&y).enumerate() {
            let n = n_lo + i as i64;
            if n < z {
                lump0.0 += xi;
                lump0.1 += yi;
            } else if n > c {
                lump_s.0 += xi;
                lump_s.1 += yi;
            }
        }
        let has_mid = z <= c;
        let (raw_lo, raw_hi) = if has_mid { (stride * z + m_lo, stride * c + m_hi) } else { (0, 0) };
        let has_zero = lump0.0 != 0.0 || lump0.1 != 0.0 || (has_mid && raw_lo <= 0);
        let has_sat = lump_s.0 != 0.0 || lump_s.1 != 0.0 || (has_mid && raw_hi >= ks);
        let band_lo = if has_zero { 0 } else if has_mid { raw_lo.max(0) } else { ks };
        let band_hi = if has_sat { ks } else if has_mid { raw_hi.min(ks) } else { 0 };
        let mut acc = Accumulator::new(band_lo, band_hi.max(band_lo), with_derivative);
        if has_zero {
            acc.add(0, lump0.0, lump0.1);
        }
        if has_sat {
            acc.add(ks, lump_s.0, lump_s.1);
        }
        if has_mid {
            let a = (z - n_lo) as usize;
            let b = (c - n_lo) as usize;
            let (vx, vy) = convolve(
                &x[a..=b],
                with_derivative.then_some(&y[a..=b]),
                &r,
                stride as usize,
            );
            for (t, &v) in vx.iter().enumerate() {
                let k = (raw_lo + t as i64).clamp(0, ks);
                let dv = if with_derivative { vy[t] } else { 0.0 };
                if v != 0.0 || dv != 0.0 {
                    acc.add(k, v, dv);
                }
            }
        }
        return Ok(acc.finish(1.0));
    }

    // Point-mass response or non-lattice gain: accumulate per photoelectron count.
    let t = NOISE_TAIL_SIGMAS * s;
    let centre = |n: i64| gain * n as f64 + mu;
    let clamp_k = |v: f64| -> i64 { (v.max(0.0) as i64).min(ks) };
    let band_lo = clamp_k((centre(n_lo) - t - 0.5).floor());
    let band_hi = clamp_k((centre(n_top) + t + 0.5).ceil());
    let mut acc = Accumulator::new(band_lo, band_hi, with_derivative);
    let ksf = ks as f64;
    for (i, (&xi, &yi)) in x.iter().zip(&y).enumerate() {
        let n = n_lo + i as i64;
        let c = centre(n);
        if s == 0.0 {
            let k = (c + 0.5).floor().clamp(0.0, ksf) as i64;
            acc.add(k, xi, yi);
            continue;
        }
        if c - t >= ksf - 0.5 {
            acc.add(ks, xi, yi);
            continue;
        }
        if c + t < 0.5 {
            acc.add(0, xi, yi);
            continue;
        }
        let k_lo = clamp_k((c - t).floor());
        let k_hi = clamp_k((c + t).ceil());
        for k in k_lo..=k_hi {
            let a = if k == 0 { f64::NEG_INFINITY } else { (k as f64 - 0.5 - c) / s };
            let b = if k == ks { f64::INFINITY } else { (k as f64 + 0.5 - c) / s };
            let w = norm_interval(a, b);
            acc.add(k, w * xi, w * yi);
        }
    }
    Ok(acc.finish(1.0))
}

/// Concurrent cache of value-only outcome distributions keyed by `(λ, σ)`.
///
/// One cache instance must only be used with a single calibration.
#[derive(Debug)]
pub struct PmfCache {
    calib_fingerprint: String,
    capacity: usize,
    map: RwLock<HashMap<(u64, u64), Arc<BandPmf>>>,
}

impl PmfCache {
    pub fn new(calib: &DetectorCalib, capacity: usize) -> Self {
        Self {
            calib_fingerprint: calib.fingerprint(),
            capacity,
            map: RwLock::new(HashMap::new()),
        }
    }

    pub fn get_or_compute(
        &self,
        lambda: f64,
        noise_sigma: f64,
        calib: &DetectorCalib,
    ) -> Result<Arc<BandPmf>, FisherError> {
        debug_assert_eq!(calib.fingerprint(), self.calib_fingerprint);
        let key = (lambda.to_bits(), noise_sigma.to_bits());
        if let Some(v) = self.map.read().get(&key) {
            return Ok(Arc::clone(v));
        }
        let v = Arc::new(outcome_distribution(lambda, noise_sigma, calib, false)?);
        let mut map = self.map.write();
        if map.len() >= self.capacity {
            map.clear();
        }
        map.insert(key, Arc::clone(&v));
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::response_pmf;

    fn brute_force(lambda: f64, nbar: f64, calib: &DetectorCalib) -> Vec<(u64, f64, f64)> {
        // direct double sum over N and k using response_pmf
        let win = poisson_window(lambda).unwrap();
        let mut m: std::collections::BTreeMap<u64, (f64, f64)> = Default::default();
        let n_hi = win.n_lo + win.p.len() as u64;
        for n in win.n_lo..=n_hi {
            let pn = if n < n_hi { win.p[(n - win.n_lo) as usize] } else { 0.0 };
            let pm = if n > win.n_lo { win.p[(n - 1 - win.n_lo) as usize] } else { 0.0 };
            let r = response_pmf(n, nbar, calib);
            for (i, &w) in r.prob.iter().enumerate() {
                let e = m.entry(r.k0 as u64 + i as u64).or_default();
                e.0 += w * pn;
                e.1 += w * (pm - pn);
            }
        }
        m.into_iter().map(|(k, (p, d))| (k, p, d)).collect()
    }

    fn check_against_brute_force(lambda: f64, nbar: f64, calib: &DetectorCalib) {
        let s = calib.noise_sigma(nbar);
        let fast = outcome_distribution(lambda, s, calib, true).unwrap();
        let slow = brute_force(lambda, nbar, calib);
        for (k, p, d) in slow {
            let i = k.checked_sub(fast.k0).map(|i| i as usize);
            let fp = i.and_then(|i| fast.prob.get(i)).copied().unwrap_or(0.0);
            let fd = i.and_then(|i| fast.dprob_dlambda.get(i)).copied().unwrap_or(0.0);
            assert!((fp - p).abs() < 1e-13, "lambda={lambda} k={k} fast={fp} slow={p}");
            assert!((fd - d).abs() < 1e-13, "lambda={lambda} k={k} dfast={fd} dslow={d}");
        }
    }

    #[test]
    fn matches_brute_force_double_sum() {
        let calib = DetectorCalib::laboratory();
        for &nbar in &[0.0, 3.0, 80.0, 4000.0] {
            check_against_brute_force(calib.eta * nbar, nbar, &calib);
        }
    }

    #[test]
    fn matches_brute_force_near_saturation() {
        let calib = DetectorCalib { k_s: 400, ..DetectorCalib::laboratory() };
        for &nbar in &[2000.0, 2400.0, 2600.0, 4000.0] {
            check_against_brute_force(calib.eta * nbar, nbar, &calib);
        }
    }

    #[test]
    fn matches_brute_force_with_integer_and_fractional_gain() {
        for gain in [3.0, 2.5] {
            let calib = DetectorCalib { gain, mu_d: 20.3, k_s: 2000, ..DetectorCalib::laboratory() };
            check_against_brute_force(calib.eta * 900.0, 900.0, &calib);
        }
    }

    #[test]
    fn fft_path_agrees_with_direct_sum() {
        // large rate and wide noise force the transform
        let calib = DetectorCalib::laboratory();
        let nbar = 3.0e5;
        let lambda = calib.eta * nbar;
        let s = calib.noise_sigma(nbar);
        let fast = outcome_distribution(lambda, s, &calib, true).unwrap();
        let win = poisson_window(lambda).unwrap();
        let (m_lo, r) = lattice_kernel(calib.mu_d, s);
        for probe in [-3.0, -1.0, 0.0, 0.5, 2.0, 4.0] {
            let k = (lambda + calib.mu_d + probe * (lambda + s * s).sqrt()).round() as i64;
            let mut p = 0.0;
            for (i, &pn) in win.p.iter().enumerate() {
                let m = k - (win.n_lo as i64 + i as i64) - m_lo;
                if m >= 0 && (m as usize) < r.len() {
                    p += pn * r[m as usize];
                }
            }
            let got = fast.get(k as u64);
            assert!((got - p).abs() < 1e-15 + 1e-11 * p, "k={k} got={got} want={p}");
        }
    }

    #[test]
    fn normalization_and_zero_derivative_sum() {
        let calib = DetectorCalib::laboratory();
        for &nbar in &[0.0, 1e-3, 1.0, 50.0, 1e4, 5.2e5, 5.3e5, 1e6, 1e8] {
            let d = outcome_distribution(calib.eta * nbar, calib.noise_sigma(nbar), &calib, true).unwrap();
            let total: f64 = d.prob.iter().sum();
            let dtotal: f64 = d.dprob_dlambda.iter().sum();
            assert!((total - 1.0).abs() < 1e-10, "nbar={nbar} total={total}");
            assert!(dtotal.abs() < 1e-10, "nbar={nbar} dtotal={dtotal}");
        }
    }

    #[test]
    fn ideal_detector_reduces_to_poisson() {
        let calib = DetectorCalib::ideal();
        let lambda = 37.25;
        let d = outcome_distribution(lambda, 0.0, &calib, true).unwrap();
        for k in 0..120u64 {
            let expect = poisson_pmf(k, lambda);
            assert!((d.get(k) - expect).abs() < 1e-15 + 1e-12 * expect);
        }
    }

    #[test]
    fn cache_returns_identical_values() {
        let calib = DetectorCalib::laboratory();
        let cache = PmfCache::new(&calib, 4);
        let a = cache.get_or_compute(120.0, 11.0, &calib).unwrap();
        let b = cache.get_or_compute(120.0, 11.0, &calib).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        for i in 0..6 {
            cache.get_or_compute(10.0 + i as f64, 11.0, &calib).unwrap();
        }
        assert!(cache.len() <= 4);
    }

    #[test]
    fn invalid_rate_is_rejected() {
        assert!(poisson_window(-1.0).is_err());
        assert!(poisson_window(f64::NAN).is_err());
    }
}
