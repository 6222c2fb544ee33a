//! Saturable pixel-array detector.
//!
//! A pixel that expects `n̄_j` photons registers `N_j ~ Poisson(η n̄_j)`
//! photoelectrons. Its readout is `gain·N_j` plus dark noise `N(μ_d, σ_d²)` plus
//! an intensity-dependent classical noise `N(0, σ_a²)` with
//! `ln σ_a² = a ln n̄_j + b`, digitized to integer ADU, clipped to `[0, k_s]`.
//! All readouts at or above `k_s` collapse onto `k_s`, all below zero onto 0.

mod container;

pub use container::{read_frames, write_frames, write_frames_csv, ContainerError, MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::qmeter::{MeasurementScheme, MeterParams, QmeterError, SchemeKind};
use crate::special::{norm_interval, norm_pdf};

/// Gaussian tail cut (in standard deviations) for digitized noise kernels.
pub(crate) const NOISE_TAIL_SIGMAS: f64 = 8.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("invalid detector calibration: {field}: {reason}")]
    InvalidCalib { field: &'static str, reason: String },
    #[error(transparent)]
    Meter(#[from] QmeterError),
}

/// Intensity-dependent classical noise `ln σ_a² = a ln n̄ + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLaw {
    pub a: f64,
    pub b: f64,
}

impl NoiseLaw {
    /// Calibrated values of the scientific CCD.
    pub const LABORATORY: NoiseLaw = NoiseLaw { a: 1.19, b: -4.39 };
}

/// Classical noise standard deviation (ADU) for a pixel expecting `nbar` photons.
///
/// Zero at `nbar = 0` (the limit of the power law for `a > 0`).
pub fn classical_noise_sigma(nbar: f64, law: &NoiseLaw) -> f64 {
    if nbar <= 0.0 {
        return 0.0;
    }
    (0.5 * (law.a * nbar.ln() + law.b)).exp()
}

/// Detector calibration and pixel geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorCalib {
    pub eta: f64,
    pub mu_d: f64,
    pub sigma_d: f64,
    /// `None` disables the intensity-dependent noise.
    pub classical_noise: Option<NoiseLaw>,
    pub k_s: u32,
    pub gain: f64,
    pub pixel_pitch: f64,
    pub n_pixels: usize,
}

impl Default for DetectorCalib {
    fn default() -> Self {
        Self::laboratory()
    }
}

impl DetectorCalib {
    /// Laboratory efficiency, noise law and pixel pitch with a 16-bit sensor's
    /// dark level, dark noise, saturation and unit gain.
    pub fn laboratory() -> Self {
        Self {
            eta: 0.125,
            mu_d: 100.0,
            sigma_d: 10.0,
            classical_noise: Some(NoiseLaw::LABORATORY),
            k_s: 65_535,
            gain: 1.0,
            pixel_pitch: 0.013,
            n_pixels: 330,
        }
    }

    /// Noise-free, non-saturating detector with the same efficiency and grid.
    pub fn ideal() -> Self {
        Self {
            mu_d: 0.0,
            sigma_d: 0.0,
            classical_noise: None,
            k_s: u32::MAX,
            gain: 1.0,
            ..Self::laboratory()
        }
    }

    /// Turns this calibration into an ideal detector, keeping efficiency and grid.
    pub fn idealized(&self) -> Self {
        Self {
            mu_d: 0.0,
            sigma_d: 0.0,
            classical_noise: None,
            k_s: u32::MAX,
            gain: 1.0,
            ..self.clone()
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.sigma_d == 0.0 && self.classical_noise.is_none() && self.k_s == u32::MAX
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |field: &'static str, reason: &str| {
            Err(DetectorError::InvalidCalib { field, reason: reason.to_string() })
        };
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta", "must lie in (0, 1]");
        }
        if !self.mu_d.is_finite() {
            return bad("mu_d", "must be finite");
        }
        if !(self.sigma_d >= 0.0 && self.sigma_d.is_finite()) {
            return bad("sigma_d", "must be finite and non-negative");
        }
        if let Some(law) = &self.classical_noise {
            if !law.a.is_finite() || !law.b.is_finite() {
                return bad("classical_noise", "a and b must be finite");
            }
        }
        if self.k_s < 1 {
            return bad("k_s", "must be at least 1");
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad("gain", "must be positive");
        }
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return bad("pixel_pitch", "must be positive");
        }
        if self.n_pixels < 2 {
            return bad("n_pixels", "need at least two pixels");
        }
        Ok(())
    }

    /// Short hash identifying every calibration value; tagged onto all outputs.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_bytes());
        hex::encode(&h.finalize()[..8])
    }

    fn canonical_bytes(&self) -> Vec<u8> {
        let (a, b) = match &self.classical_noise {
            Some(l) => (l.a, l.b),
            None => (f64::NAN, f64::NAN),
        };
        format!(
            "eta={:016x};mu_d={:016x};sigma_d={:016x};noise={}:{:016x}:{:016x};k_s={};gain={:016x};pitch={:016x};tau={}",
            self.eta.to_bits(),
            self.mu_d.to_bits(),
            self.sigma_d.to_bits(),
            self.classical_noise.is_some() as u8,
            a.to_bits(),
            b.to_bits(),
            self.k_s,
            self.gain.to_bits(),
            self.pixel_pitch.to_bits(),
            self.n_pixels
        )
        .into_bytes()
    }

    /// Classical noise σ_a for a pixel expecting `nbar` photons (0 when disabled).
    pub fn classical_sigma(&self, nbar: f64) -> f64 {
        self.classical_noise.as_ref().map_or(0.0, |law| classical_noise_sigma(nbar, law))
    }

    /// Total readout noise `sqrt(σ_d² + σ_a²(n̄))` in ADU.
    pub fn noise_sigma(&self, nbar: f64) -> f64 {
        let sa = self.classical_sigma(nbar);
        (self.sigma_d * self.sigma_d + sa * sa).sqrt()
    }

    /// Centre coordinate of pixel `j` for a grid centred on `x0`.
    pub fn pixel_center(&self, j: usize, x0: f64) -> f64 {
        x0 + (j as f64 - 0.5 * (self.n_pixels as f64 - 1.0)) * self.pixel_pitch
    }
}

/// Digitized readout distribution `R(k|N)` restricted to its support.
///
/// `prob[i]` is the probability of readout `k0 + i`; all other readouts have
/// zero probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponsePmf {
    pub k0: u32,
    pub prob: Vec<f64>,
}

impl ResponsePmf {
    pub fn get(&self, k: u32) -> f64 {
        if k < self.k0 {
            return 0.0;
        }
        self.prob.get((k - self.k0) as usize).copied().unwrap_or(0.0)
    }

    /// True when the response is a single readout (zero total noise).
    pub fn is_point_mass(&self) -> bool {
        self.prob.len() == 1
    }
}

/// Readout distribution for `n_e` photoelectrons at a pixel expecting `nbar_j` photons.
///
/// Gaussian `N(gain·N + μ_d, σ_d² + σ_a²(n̄_j))` integrated over unit bins
/// `[k-½, k+½)`; the mass below `½` goes to `k = 0`, the mass at or above
/// `k_s - ½` to `k = k_s`. Zero total noise gives a point mass at the rounded,
/// clipped mean.
pub fn response_pmf(n_e: u64, nbar_j: f64, calib: &DetectorCalib) -> ResponsePmf {
    let mean = calib.gain * n_e as f64 + calib.mu_d;
    let s = calib.noise_sigma(nbar_j);
    let ks = calib.k_s as f64;
    if s == 0.0 {
        let k = (mean + 0.5).floor().clamp(0.0, ks) as u32;
        return ResponsePmf { k0: k, prob: vec![1.0] };
    }
    let lo = (mean - NOISE_TAIL_SIGMAS * s).floor().clamp(0.0, ks) as u32;
    let hi = (mean + NOISE_TAIL_SIGMAS * s).ceil().clamp(0.0, ks) as u32;
    let mut prob = Vec::with_capacity((hi - lo + 1) as usize);
    for k in lo..=hi {
        let a = if k == 0 { f64::NEG_INFINITY } else { (k as f64 - 0.5 - mean) / s };
        let b = if k == calib.k_s { f64::INFINITY } else { (k as f64 + 0.5 - mean) / s };
        prob.push(norm_interval(a, b));
    }
    ResponsePmf { k0: lo, prob }
}

/// Expected photon number and its displacement derivative at one pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelModel {
    pub index: usize,
    /// Centre coordinate (mm).
    pub x: f64,
    pub nbar: f64,
    /// `dn̄_j/dg` (photons per mm).
    pub dnbar_dg: f64,
}

/// Mass of the Gaussian `N(centre, σ²)` in `[lo, hi]` and its derivative with
/// respect to the centre.
fn gaussian_cell(lo: f64, hi: f64, centre: f64, sigma: f64) -> (f64, f64) {
    let za = (lo - centre) / sigma;
    let zb = (hi - centre) / sigma;
    (norm_interval(za, zb), (norm_pdf(za) - norm_pdf(zb)) / sigma)
}

/// Expected photons per pixel for the τ-pixel grid centred on `X₀`.
///
/// The post-selected intensity is `|α|² G(q-g) + |β|² G(q+g) + 2Re(ᾱβ) e^{-g²/2σ²} G(q)`
/// with `G` the normalized Gaussian of width `σ` about `X₀`, so each pixel is a
/// combination of three Gaussian cell integrals. For WVA the values already
/// carry the `P_f n̄_t` factor.
pub fn expected_counts(
    scheme: &MeasurementScheme<f64>,
    g: f64,
    nbar_t: f64,
    meter: &MeterParams<f64>,
    calib: &DetectorCalib,
) -> Vec<PixelModel> {
    let amps = scheme.amplitudes();
    let wa = amps.alpha.norm_sqr();
    let wb = amps.beta.norm_sqr();
    let cross = 2.0 * amps.interference().re;
    let sigma = meter.sigma();
    let overlap = meter.branch_overlap(g);
    let d_overlap = -g / (sigma * sigma) * overlap;
    let half = 0.5 * calib.pixel_pitch;
    (0..calib.n_pixels)
        .map(|j| {
            let x = calib.pixel_center(j, meter.x0());
            let (lo, hi) = (x - half, x + half);
            let c = meter.x0();
            let (ia, da) = gaussian_cell(lo, hi, c + g, sigma);
            let (mut n, mut dn) = (wa * ia, wa * da);
            if wb != 0.0 {
                let (ib, db) = gaussian_cell(lo, hi, c - g, sigma);
                n += wb * ib;
                dn -= wb * db;
            }
            if cross != 0.0 {
                let (i0, _) = gaussian_cell(lo, hi, c, sigma);
                n += cross * overlap * i0;
                dn += cross * d_overlap * i0;
            }
            PixelModel { index: j, x, nbar: nbar_t * n.max(0.0), dnbar_dg: nbar_t * dn }
        })
        .collect()
}

/// Simulation inputs echoed into every frame container.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMeta {
    pub scheme: MeasurementScheme<f64>,
    pub g: f64,
    pub nbar_t: f64,
    pub seed: u64,
    pub meter: MeterParams<f64>,
    pub calib: DetectorCalib,
}

/// One exposure: integer readouts per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub index: u32,
    pub readouts: Vec<u32>,
}

/// A pool of exposures sharing one set of simulation inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub meta: FrameMeta,
    pub frames: Vec<Frame>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn scheme_kind(&self) -> SchemeKind {
        self.meta.scheme.kind()
    }

    pub fn refs(&self) -> Vec<&Frame> {
        self.frames.iter().collect()
    }
}

/// Deterministic generator for frame `index` of a run seeded with `seed`.
pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Per-pixel sampling distributions, prepared once per pool.
#[derive(Clone, Debug)]
pub struct FrameSampler {
    meta: FrameMeta,
    pixels: Vec<PixelSampler>,
}

#[derive(Clone, Debug)]
struct PixelSampler {
    photoelectrons: Option<Poisson<f64>>,
    noise: Option<Normal<f64>>,
}

impl FrameSampler {
    pub fn new(meta: FrameMeta) -> Result<Self, DetectorError> {
        meta.calib.validate()?;
        let pixels = expected_counts(&meta.scheme, meta.g, meta.nbar_t, &meta.meter, &meta.calib)
            .iter()
            .map(|p| {
                let lambda = meta.calib.eta * p.nbar;
                let s = meta.calib.noise_sigma(p.nbar);
                PixelSampler {
                    photoelectrons: (lambda > 0.0).then(|| Poisson::new(lambda).expect("finite rate")),
                    noise: (s > 0.0).then(|| Normal::new(0.0, s).expect("finite noise")),
                }
            })
            .collect();
        Ok(Self { meta, pixels })
    }

    pub fn meta(&self) -> &FrameMeta {
        &self.meta
    }

    /// Draws frame `index`; the same `(seed, index)` always yields the same frame.
    pub fn sample(&self, index: u32) -> Frame {
        let calib = &self.meta.calib;
        let mut rng = frame_rng(self.meta.seed, index as u64);
        let ks = calib.k_s as f64;
        let readouts = self
            .pixels
            .iter()
            .map(|px| {
                let n = px.photoelectrons.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                // dark and classical noise are independent Gaussians; drawn as one
                let noise = px.noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                let v = (calib.gain * n + calib.mu_d + noise + 0.5).floor();
                v.clamp(0.0, ks) as u32
            })
            .collect();
        Frame { index, readouts }
    }

    /// Draws frames `0..count` (in parallel, order-independent).
    pub fn sample_pool(&self, count: usize) -> FrameSet {
        let frames = (0..count as u32).into_par_iter().map(|i| self.sample(i)).collect();
        FrameSet { meta: self.meta.clone(), frames }
    }
}

/// Single frame for the given inputs; `index` selects the generator stream.
pub fn sample_frame(meta: &FrameMeta, index: u32) -> Result<Frame, DetectorError> {
    Ok(FrameSampler::new(meta.clone())?.sample(index))
}

/// Pool of `count` frames.
pub fn sample_frames(meta: &FrameMeta, count: usize) -> Result<FrameSet, DetectorError> {
    Ok(FrameSampler::new(meta.clone())?.sample_pool(count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{norm_cdf, norm_sf};

    fn lab_meta(scheme: MeasurementScheme<f64>, nbar_t: f64, seed: u64) -> FrameMeta {
        FrameMeta {
            scheme,
            g: 1e-3,
            nbar_t,
            seed,
            meter: MeterParams::laboratory(),
            calib: DetectorCalib::laboratory(),
        }
    }

    #[test]
    fn classical_noise_law_values() {
        let law = NoiseLaw::LABORATORY;
        let s1 = classical_noise_sigma(1.0, &law);
        assert!((s1 * s1 - (-4.39f64).exp()).abs() < 1e-15);
        assert!((s1 * s1 - 0.01240).abs() < 1e-5);
        let se = classical_noise_sigma(std::f64::consts::E, &law);
        assert!(((se * se).ln() + 3.20).abs() < 1e-12);
        assert!((se * se - 0.0408).abs() < 1e-4);
        assert_eq!(classical_noise_sigma(0.0, &law), 0.0);
    }

    #[test]
    fn noiseless_response_is_identity() {
        let calib = DetectorCalib { mu_d: 0.0, sigma_d: 0.0, classical_noise: None, ..DetectorCalib::laboratory() };
        let r = response_pmf(5, 40.0, &calib);
        assert!(r.is_point_mass());
        assert_eq!(r.k0, 5);
        assert_eq!(r.get(5), 1.0);
    }

    #[test]
    fn response_normalizes_across_regimes() {
        let calib = DetectorCalib::laboratory();
        for &(n, nbar) in &[(0u64, 0.0), (1, 8.0), (10, 80.0), (1000, 8000.0), (65_400, 523_000.0), (70_000, 560_000.0)] {
            let r = response_pmf(n, nbar, &calib);
            let total: f64 = r.prob.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "N={n} total={total}");
        }
    }

    #[test]
    fn response_lump_at_threshold_with_mean_on_threshold() {
        let calib = DetectorCalib {
            mu_d: 0.0,
            sigma_d: 10.0,
            classical_noise: None,
            k_s: 1000,
            ..DetectorCalib::laboratory()
        };
        let r = response_pmf(1000, 0.0, &calib);
        // oracle: mass at or above k_s - 1/2 of N(k_s, 10²)
        let expect = norm_sf(-0.5 / 10.0);
        assert!((r.get(1000) - expect).abs() < 1e-15);
        assert!((expect - (0.5 + (norm_cdf(0.05) - 0.5))).abs() < 1e-15);
    }

    #[test]
    fn cm_counts_sum_to_total_on_wide_grid() {
        let calib = DetectorCalib { pixel_pitch: 0.01, n_pixels: 2000, ..DetectorCalib::laboratory() };
        let m = MeterParams::laboratory();
        let px = expected_counts(&MeasurementScheme::conventional(), 2e-3, 1e6, &m, &calib);
        let total: f64 = px.iter().map(|p| p.nbar).sum();
        assert!((total - 1e6).abs() < 1e-6);
    }

    #[test]
    fn wva_counts_sum_to_pf_times_total() {
        let calib = DetectorCalib { pixel_pitch: 0.01, n_pixels: 2000, ..DetectorCalib::laboratory() };
        let m = MeterParams::laboratory();
        let s = MeasurementScheme::symmetric_pair_degrees(76.0).unwrap();
        let g = 0.02;
        let px = expected_counts(&s, g, 1e6, &m, &calib);
        let total: f64 = px.iter().map(|p| p.nbar).sum();
        // quadrature oracle for P_f(g)
        let amps = s.amplitudes();
        let pf = crate::special::trapezoid(-5.0, 5.0, 20_001, |q| amps.position_amplitude(g, &m, q).0.norm_sqr());
        assert!((total / 1e6 - pf).abs() < 1e-9);
    }

    #[test]
    fn count_derivative_matches_finite_difference() {
        let calib = DetectorCalib::laboratory();
        let m = MeterParams::laboratory();
        for scheme in [MeasurementScheme::conventional(), MeasurementScheme::symmetric_pair_degrees(76.0).unwrap()] {
            let g = 1e-3;
            let h = 1e-6 * m.sigma();
            let px = expected_counts(&scheme, g, 1e7, &m, &calib);
            let up = expected_counts(&scheme, g + h, 1e7, &m, &calib);
            let dn = expected_counts(&scheme, g - h, 1e7, &m, &calib);
            for j in (0..calib.n_pixels).step_by(7) {
                let fd = (up[j].nbar - dn[j].nbar) / (2.0 * h);
                let an = px[j].dnbar_dg;
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "j={j} fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn counts_translate_with_beam_centre() {
        let calib = DetectorCalib::laboratory();
        let s = MeasurementScheme::symmetric_pair_degrees(63.0).unwrap();
        let a = expected_counts(&s, 1e-3, 1e6, &MeterParams::new(0.472, 0.0).unwrap(), &calib);
        let b = expected_counts(&s, 1e-3, 1e6, &MeterParams::new(0.472, 0.25).unwrap(), &calib);
        for (p, q) in a.iter().zip(&b) {
            assert!((p.nbar - q.nbar).abs() <= 1e-12 * p.nbar.max(1.0));
            assert!((q.x - p.x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_frame() {
        let meta = lab_meta(MeasurementScheme::symmetric_pair_degrees(76.0).unwrap(), 1e7, 42);
        let a = sample_frame(&meta, 3).unwrap();
        let b = sample_frame(&meta, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_frame(&meta, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn deep_saturation_clips_centre_pixels() {
        let meta = lab_meta(MeasurementScheme::conventional(), 1e10, 7);
        let f = sample_frame(&meta, 0).unwrap();
        let tau = meta.calib.n_pixels;
        for j in tau / 2 - 10..tau / 2 + 10 {
            assert_eq!(f.readouts[j], meta.calib.k_s);
        }
        assert!(f.readouts.iter().all(|&k| k <= meta.calib.k_s));
    }

    #[test]
    fn zero_light_gives_dark_frames() {
        let meta = lab_meta(MeasurementScheme::conventional(), 0.0, 1);
        let pool = sample_frames(&meta, 200).unwrap();
        let n = (pool.len() * meta.calib.n_pixels) as f64;
        let mean: f64 = pool.frames.iter().flat_map(|f| f.readouts.iter()).map(|&k| k as f64).sum::<f64>() / n;
        assert!((mean - 100.0).abs() < 0.1);
    }

    #[test]
    fn invalid_calibration_is_reported_by_field() {
        let c = DetectorCalib { eta: 1.5, ..DetectorCalib::laboratory() };
        match c.validate() {
            Err(DetectorError::InvalidCalib { field, .. }) => assert_eq!(field, "eta"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fingerprint_tracks_every_field() {
        let a = DetectorCalib::laboratory();
        let b = DetectorCalib { sigma_d: 10.5, ..a.clone() };
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), DetectorCalib::laboratory().fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }
}
