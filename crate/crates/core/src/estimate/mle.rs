//! Maximum-likelihood estimation of `g` from raw readouts.
//!
//! The log-likelihood of a frame set is `Σ_j Σ_k c_j(k) ln P(k|g)` with
//! `c_j(k)` the number of frames reading `k` at pixel `j`, so each evaluation
//! costs one outcome distribution per pixel plus a pass over the per-pixel
//! readout histograms.
//!
//! For bootstrap resampling the per-frame log-likelihoods of the whole pool are
//! tabulated at Chebyshev nodes on a window of ±12 Cramér-Rao widths around the
//! pool estimate. A resample's log-likelihood is then a weighted sum of those
//! tables and is maximized through its barycentric interpolant. Maxima that land
//! on the window edge are redone with the direct likelihood.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::detector::{expected_counts, Frame};
use crate::fisher::{outcome_distribution, total_fisher, BandPmf};
use crate::optimize::brent_minimize;

use super::{EstimateError, Estimator, EstimatorKind, EstimatorResult, ModelContext, PreparedPool};

/// Floor for `ln P` so that a readout the model deems impossible costs a
/// large but finite penalty.
const LN_FLOOR: f64 = -700.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleSettings {
    /// Initial search interval half-width, in units of σ.
    pub bracket: f64,
    /// Widening factor applied once when the maximum sits on the interval edge.
    pub widen: f64,
    /// Absolute tolerance on `g`, in units of σ.
    pub tol: f64,
    /// Chebyshev nodes for the bootstrap surrogate.
    pub nodes: usize,
    /// Surrogate window half-width in Cramér-Rao widths for `ν` frames.
    pub window: f64,
}

impl Default for MleSettings {
    fn default() -> Self {
        Self { bracket: 0.2, widen: 4.0, tol: 1e-6, nodes: 17, window: 12.0 }
    }
}

pub struct MleEstimator {
    ctx: ModelContext,
    settings: MleSettings,
}

/// Per-pixel readout histograms `(k, count)`, sorted by `k`.
struct Histograms(Vec<Vec<(u32, u32)>>);

impl Histograms {
    fn build<'a>(n_pixels: usize, frames: impl Iterator<Item = (&'a Frame, u32)> + Clone) -> Self {
        let per_pixel = (0..n_pixels)
            .map(|j| {
                let mut ks: Vec<(u32, u32)> =
                    frames.clone().filter(|(_, c)| *c > 0).map(|(f, c)| (f.readouts[j], c)).collect();
                ks.sort_unstable_by_key(|&(k, _)| k);
                let mut out: Vec<(u32, u32)> = Vec::new();
                for (k, c) in ks {
                    match out.last_mut() {
                        Some(last) if last.0 == k => last.1 += c,
                        _ => out.push((k, c)),
                    }
                }
                out
            })
            .collect();
        Histograms(per_pixel)
    }
}

#[inline]
fn ln_prob(band: &BandPmf, k: u32) -> f64 {
    let p = band.get(k as u64);
    if p > 0.0 {
        p.ln().max(LN_FLOOR)
    } else {
        LN_FLOOR
    }
}

impl MleEstimator {
    pub fn new(ctx: ModelContext, settings: MleSettings) -> Self {
        Self { ctx, settings }
    }

    pub fn context(&self) -> &ModelContext {
        &self.ctx
    }

    /// Value-only outcome distributions of every pixel at displacement `g`.
    fn distributions(&self, g: f64) -> Result<Vec<BandPmf>, EstimateError> {
        let c = &self.ctx;
        expected_counts(&c.scheme, g, c.nbar_t, &c.meter, &c.calib)
            .par_iter()
            .map(|px| {
                outcome_distribution(c.calib.eta * px.nbar, c.calib.noise_sigma(px.nbar), &c.calib, false)
                    .map_err(EstimateError::from)
            })
            .collect()
    }

    fn log_likelihood(&self, hist: &Histograms, g: f64) -> Result<f64, EstimateError> {
        let bands = self.distributions(g)?;
        Ok(bands
            .iter()
            .zip(&hist.0)
            .map(|(band, h)| h.iter().map(|&(k, c)| c as f64 * ln_prob(band, k)).sum::<f64>())
            .sum())
    }

    /// Brent search on `[-half, half]`, widened once if the maximum is on the edge.
    fn maximize(&self, hist: &Histograms) -> Result<(f64, f64, usize, f64), EstimateError> {
        let sigma = self.ctx.meter.sigma();
        let tol = self.settings.tol * sigma;
        let mut half = self.settings.bracket * sigma;
        let mut evaluations = 0;
        for attempt in 0..2 {
            let mut failure = None;
            let m = brent_minimize(
                |g| match self.log_likelihood(hist, g) {
                    Ok(v) => -v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::INFINITY
                    }
                },
                -half,
                half,
                tol,
                200,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            evaluations += m.evaluations;
            let edge = 10.0 * tol;
            if m.x - (-half) > edge && half - m.x > edge {
                return Ok((m.x, -m.fx, evaluations, half));
            }
            if attempt == 0 {
                half *= self.settings.widen;
            }
        }
        Err(EstimateError::BracketFailure { lo: -half, hi: half })
    }
}

impl Estimator for MleEstimator {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Mle
    }

    fn estimate(&self, frames: &[&Frame]) -> Result<EstimatorResult, EstimateError> {
        self.ctx.check_frames(frames)?;
        let hist = Histograms::build(self.ctx.calib.n_pixels, frames.iter().map(|f| (*f, 1)));
        let (g_hat, ll, evaluations, _) = self.maximize(&hist)?;
        Ok(EstimatorResult {
            kind: EstimatorKind::Mle,
            g_hat,
            frames: frames.len(),
            iterations: evaluations,
            log_likelihood: Some(ll),
            variance: None,
        })
    }

    fn prepare<'a>(&'a self, pool: &'a [&'a Frame], nu: usize) -> Result<Box<dyn PreparedPool + 'a>, EstimateError> {
        Ok(Box::new(PreparedMle::new(self, pool, nu)?))
    }
}

/// Maximum-likelihood estimate from a frame set.
pub fn mle_estimate(frames: &[&Frame], ctx: &ModelContext) -> Result<EstimatorResult, EstimateError> {
    MleEstimator::new(ctx.clone(), MleSettings::default()).estimate(frames)
}

/// Bootstrap surrogate: per-frame log-likelihoods at Chebyshev nodes.
pub(crate) struct PreparedMle<'a> {
    est: &'a MleEstimator,
    pool: &'a [&'a Frame],
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `table[i][l]`: log-likelihood of pool frame `l` at node `i`.
    table: Vec<Vec<f64>>,
    fallbacks: AtomicUsize,
}

impl<'a> PreparedMle<'a> {
    fn new(est: &'a MleEstimator, pool: &'a [&'a Frame], nu: usize) -> Result<Self, EstimateError> {
        est.ctx.check_frames(pool)?;
        let c = &est.ctx;
        let hist = Histograms::build(c.calib.n_pixels, pool.iter().map(|f| (*f, 1)));
        let (g0, _, _, outer) = est.maximize(&hist)?;
        let fisher = total_fisher(&c.scheme, g0, c.nbar_t, &c.meter, &c.calib)?.total;
        let width = if fisher > 0.0 {
            est.settings.window / (nu.max(1) as f64 * fisher).sqrt()
        } else {
            outer
        };
        let lo = (g0 - width).max(-outer);
        let hi = (g0 + width).min(outer);
        let n = est.settings.nodes.max(3);
        let nodes: Vec<f64> = (0..n)
            .map(|i| {
                let t = (std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
                0.5 * (lo + hi) + 0.5 * (hi - lo) * t
            })
            .collect();
        let weights = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                if i == 0 || i == n - 1 {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        let table = nodes
            .iter()
            .map(|&g| {
                let bands = est.distributions(g)?;
                Ok(pool
                    .par_iter()
                    .map(|f| f.readouts.iter().zip(&bands).map(|(&k, band)| ln_prob(band, k)).sum())
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>, EstimateError>>()?;
        Ok(Self { est, pool, lo, hi, nodes, weights, table, fallbacks: AtomicUsize::new(0) })
    }

    fn interpolate(&self, values: &[f64], g: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&x, &w), &v) in self.nodes.iter().zip(&self.weights).zip(values) {
            let d = g - x;
            if d == 0.0 {
                return v;
            }
            let t = w / d;
            num += t * v;
            den += t;
        }
        num / den
    }

    /// Resamples whose surrogate maximum fell on the window edge.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn fallbacks(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    fn direct(&self, counts: &[u32]) -> Result<f64, EstimateError> {
        self.fallbacks.fetch_add(1, Ordering::Relaxed);
        let hist = Histograms::build(
            self.est.ctx.calib.n_pixels,
            self.pool.iter().zip(counts).map(|(f, &c)| (*f, c)),
        );
        Ok(self.est.maximize(&hist)?.0)
    }
}

impl PreparedPool for PreparedMle<'_> {
    fn estimate_multiset(&self, counts: &[u32]) -> Result<f64, EstimateError> {
        if counts.iter().all(|&c| c == 0) {
            return Err(EstimateError::NoFrames);
        }
        let mut values: Vec<f64> = self
            .table
            .iter()
            .map(|row| row.iter().zip(counts).filter(|(_, &c)| c > 0).map(|(v, &c)| c as f64 * v).sum())
            .collect();
        let shift = values[values.len() / 2];
        values.iter_mut().for_each(|v| *v -= shift);
        let tol = self.est.settings.tol * self.est.ctx.meter.sigma();
        let m = brent_minimize(|g| -self.interpolate(&values, g), self.lo, self.hi, tol, 200);
        let edge = 1e-3 * (self.hi - self.lo);
        if m.x - self.lo > edge && self.hi - m.x > edge {
            Ok(m.x)
        } else {
            self.direct(counts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{sample_frames, DetectorCalib, FrameMeta};
    use crate::estimate::bootstrap::resample_counts;
    use crate::qmeter::{MeasurementScheme, MeterParams};

    fn meta(scheme: MeasurementScheme<f64>, nbar_t: f64, g: f64, calib: DetectorCalib) -> FrameMeta {
        FrameMeta { scheme, g, nbar_t, seed: 11, meter: MeterParams::laboratory(), calib }
    }

    #[test]
    fn noiseless_expected_frame_recovers_g() {
        // readouts set to the rounded analytic means of a bright ideal detector
        let calib = DetectorCalib { n_pixels: 330, ..DetectorCalib::ideal() };
        let m = meta(MeasurementScheme::conventional(), 1e10, 2e-3, calib.clone());
        let px = expected_counts(&m.scheme, m.g, m.nbar_t, &m.meter, &calib);
        let frame = Frame { index: 0, readouts: px.iter().map(|p| (calib.eta * p.nbar).round() as u32).collect() };
        let ctx = ModelContext::from_meta(&m);
        let r = mle_estimate(&[&frame], &ctx).unwrap();
        assert!((r.g_hat - m.g).abs() < 1e-5 * 0.472, "g_hat={}", r.g_hat);
    }

    #[test]
    fn surrogate_matches_direct_likelihood() {
        let calib = DetectorCalib::laboratory();
        let m = meta(MeasurementScheme::symmetric_pair_degrees(76.0).unwrap(), 1e7, 1e-3, calib);
        let pool = sample_frames(&m, 120).unwrap();
        let refs = pool.refs();
        let est = MleEstimator::new(ModelContext::from_meta(&m), MleSettings::default());
        let prepared = PreparedMle::new(&est, &refs, 30).unwrap();
        for r in 0..4 {
            let counts = resample_counts(refs.len(), 30, 99, r);
            let fast = prepared.estimate_multiset(&counts).unwrap();
            let frames: Vec<&Frame> =
                refs.iter().zip(&counts).flat_map(|(f, &c)| std::iter::repeat_n(*f, c as usize)).collect();
            let exact = est.estimate(&frames).unwrap().g_hat;
            assert!((fast - exact).abs() < 5e-6 * 0.472, "fast={fast} exact={exact}");
        }
        assert_eq!(prepared.fallbacks(), 0);
    }

    #[test]
    fn flat_likelihood_reports_bracket_failure() {
        // no light: the likelihood does not depend on g
        let calib = DetectorCalib::laboratory();
        let m = meta(MeasurementScheme::conventional(), 0.0, 0.0, calib);
        let pool = sample_frames(&m, 3).unwrap();
        let err = mle_estimate(&pool.refs(), &ModelContext::from_meta(&m));
        assert!(matches!(err, Err(EstimateError::BracketFailure { .. })), "{err:?}");
    }
}
