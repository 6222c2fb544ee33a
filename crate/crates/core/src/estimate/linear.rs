//! Split-detection and centre-of-mass estimators.
//!
//! Both reduce a frame to a dark-subtracted, intensity-normalized statistic and
//! divide by its sensitivity to `g`. Per-frame statistics are averaged over the
//! frames. With the model slope the sensitivity is read off the forward model at
//! `g = 0` (including saturation), so a clipped beam centre lowers it instead of
//! biasing the precision comparison.

use serde::Serialize;

use crate::detector::{expected_counts, Frame};
use crate::fisher::outcome_pmf;
use crate::qmeter::SchemeKind;

use super::{EstimateError, Estimator, EstimatorKind, EstimatorResult, ModelContext, PreparedPool};

/// Sensitivity used to convert the raw statistic into a displacement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Slope {
    /// Derivative of the expected statistic at `g = 0` from the full detector model.
    Model,
    /// Unsaturated Gaussian-beam value: `√(2/π)·Re(A_w)/σ` for split detection,
    /// `Re(A_w)` for the centre of mass (`Re(A_w) = 1` for CM).
    Analytic,
    Fixed(f64),
}

/// Model sensitivities of both linear statistics at `g = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearSlopes {
    /// `dE[W₊ - W₋]/dg` (mm⁻¹).
    pub xi_sd: f64,
    /// `dE[Σ w_j (x_j - X₀)]/dg` (dimensionless).
    pub kappa_com: f64,
}

/// Side of the split for each pixel: +1 above `X₀`, -1 below, 0 on the split line.
fn sides(ctx: &ModelContext) -> Vec<(f64, f64)> {
    let x0 = ctx.meter.x0();
    let eps = 1e-9 * ctx.calib.pixel_pitch;
    (0..ctx.calib.n_pixels)
        .map(|j| {
            let dx = ctx.calib.pixel_center(j, x0) - x0;
            let side = if dx > eps {
                1.0
            } else if dx < -eps {
                -1.0
            } else {
                0.0
            };
            (dx, side)
        })
        .collect()
}

/// Sensitivities of the expected statistics, using expected readouts (with
/// clipping) and their `g`-derivatives.
pub fn model_slopes(ctx: &ModelContext) -> Result<LinearSlopes, EstimateError> {
    let pixels = expected_counts(&ctx.scheme, 0.0, ctx.nbar_t, &ctx.meter, &ctx.calib);
    let geometry = sides(ctx);
    let (mut s, mut ds, mut diff, mut ddiff, mut mom, mut dmom) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (px, &(dx, side)) in pixels.iter().zip(&geometry) {
        let pmf = outcome_pmf(px, &ctx.calib)?;
        let m = pmf.mean() - ctx.calib.mu_d;
        let dm = pmf.mean_derivative();
        s += m;
        ds += dm;
        diff += side * m;
        ddiff += side * dm;
        mom += dx * m;
        dmom += dx * dm;
    }
    if !(s > 0.0) {
        return Err(EstimateError::DegenerateSlope { slope: 0.0 });
    }
    Ok(LinearSlopes {
        xi_sd: ddiff / s - diff * ds / (s * s),
        kappa_com: dmom / s - mom * ds / (s * s),
    })
}

fn amplification(ctx: &ModelContext) -> f64 {
    match ctx.scheme.kind() {
        SchemeKind::Cm => 1.0,
        _ => ctx.scheme.weak_value().re,
    }
}

fn resolve(slope: Slope, kind: EstimatorKind, ctx: &ModelContext) -> Result<f64, EstimateError> {
    let v = match slope {
        Slope::Fixed(v) => v,
        Slope::Analytic => match kind {
            EstimatorKind::Sd => (2.0 / std::f64::consts::PI).sqrt() * amplification(ctx) / ctx.meter.sigma(),
            _ => amplification(ctx),
        },
        Slope::Model => {
            let m = model_slopes(ctx)?;
            if kind == EstimatorKind::Sd {
                m.xi_sd
            } else {
                m.kappa_com
            }
        }
    };
    if !v.is_finite() || v.abs() < 1e-12 {
        return Err(EstimateError::DegenerateSlope { slope: v });
    }
    Ok(v)
}

/// Per-frame raw statistics.
struct FrameStatistic {
    /// SD: `W₊ - W₋`; COM: `Σ w_j (x_j - X₀)`.
    value: f64,
    w_plus: f64,
    w_minus: f64,
}

fn frame_statistic(
    frame: &Frame,
    mu_d: f64,
    geometry: &[(f64, f64)],
    weights: Option<&mut [(f64, f64)]>,
) -> Result<FrameStatistic, EstimateError> {
    let mut s = 0.0;
    let mut plus = 0.0;
    let mut minus = 0.0;
    let mut mom = 0.0;
    for (&k, &(dx, side)) in frame.readouts.iter().zip(geometry) {
        let v = k as f64 - mu_d;
        s += v;
        if side > 0.0 {
            plus += v;
        } else if side < 0.0 {
            minus += v;
        }
        mom += dx * v;
    }
    if !(s > 0.0) {
        return Err(EstimateError::EmptySignal { frame: frame.index });
    }
    if let Some(acc) = weights {
        for (&k, a) in frame.readouts.iter().zip(acc.iter_mut()) {
            let w = (k as f64 - mu_d) / s;
            a.0 += w;
            a.1 += w * w;
        }
    }
    Ok(FrameStatistic { value: mom / s, w_plus: plus / s, w_minus: minus / s })
}

fn sample_variance(sum: f64, sum_sq: f64, n: usize) -> f64 {
    let nf = n as f64;
    ((sum_sq - sum * sum / nf) / (nf - 1.0)).max(0.0)
}

/// Shared implementation of the two linear estimators.
struct Linear {
    ctx: ModelContext,
    kind: EstimatorKind,
    slope: f64,
    geometry: Vec<(f64, f64)>,
}

impl Linear {
    fn new(ctx: ModelContext, kind: EstimatorKind, slope: Slope) -> Result<Self, EstimateError> {
        ctx.calib.validate()?;
        let slope = resolve(slope, kind, &ctx)?;
        let geometry = sides(&ctx);
        Ok(Self { ctx, kind, slope, geometry })
    }

    fn per_frame(&self, frame: &Frame) -> Result<f64, EstimateError> {
        let st = frame_statistic(frame, self.ctx.calib.mu_d, &self.geometry, None)?;
        Ok(match self.kind {
            EstimatorKind::Sd => st.w_plus - st.w_minus,
            _ => st.value,
        })
    }

    fn estimate(&self, frames: &[&Frame]) -> Result<EstimatorResult, EstimateError> {
        self.ctx.check_frames(frames)?;
        let nu = frames.len();
        let mut total = 0.0;
        // per-pixel weight moments (COM) or section-weight moments (SD)
        let mut weights = vec![(0.0, 0.0); self.ctx.calib.n_pixels];
        let (mut wp, mut wp2, mut wm, mut wm2) = (0.0, 0.0, 0.0, 0.0);
        for f in frames {
            let st = frame_statistic(f, self.ctx.calib.mu_d, &self.geometry, Some(&mut weights))?;
            total += match self.kind {
                EstimatorKind::Sd => st.w_plus - st.w_minus,
                _ => st.value,
            };
            wp += st.w_plus;
            wp2 += st.w_plus * st.w_plus;
            wm += st.w_minus;
            wm2 += st.w_minus * st.w_minus;
        }
        let g_hat = total / nu as f64 / self.slope;
        let variance = (nu >= 2).then(|| {
            let scale = nu as f64 * self.slope * self.slope;
            match self.kind {
                EstimatorKind::Sd => (sample_variance(wp, wp2, nu) + sample_variance(wm, wm2, nu)) / scale,
                _ => {
                    let s: f64 = weights
                        .iter()
                        .zip(&self.geometry)
                        .map(|(&(a, b), &(dx, _))| sample_variance(a, b, nu) * dx * dx)
                        .sum();
                    s / scale
                }
            }
        });
        Ok(EstimatorResult { kind: self.kind, g_hat, frames: nu, iterations: 0, log_likelihood: None, variance })
    }

    fn prepare(&self, pool: &[&Frame]) -> Result<PreparedLinear, EstimateError> {
        self.ctx.check_frames(pool)?;
        let values = pool.iter().map(|f| self.per_frame(f)).collect::<Result<Vec<_>, _>>()?;
        Ok(PreparedLinear { values, slope: self.slope })
    }
}

struct PreparedLinear {
    values: Vec<f64>,
    slope: f64,
}

impl PreparedPool for PreparedLinear {
    fn estimate_multiset(&self, counts: &[u32]) -> Result<f64, EstimateError> {
        let mut n = 0u64;
        let mut acc = 0.0;
        for (&c, &v) in counts.iter().zip(&self.values) {
            if c > 0 {
                n += c as u64;
                acc += c as f64 * v;
            }
        }
        if n == 0 {
            return Err(EstimateError::NoFrames);
        }
        Ok(acc / n as f64 / self.slope)
    }
}

/// Split detection: `ĝ = mean_frames(W₊ - W₋) / ξ`, with `W₊`/`W₋` the
/// dark-subtracted signal fractions above/below `X₀`.
pub struct SdEstimator(Linear);

impl SdEstimator {
    pub fn new(ctx: ModelContext, slope: Slope) -> Result<Self, EstimateError> {
        Ok(Self(Linear::new(ctx, EstimatorKind::Sd, slope)?))
    }

    /// The sensitivity ξ in use (mm⁻¹).
    pub fn xi(&self) -> f64 {
        self.0.slope
    }
}

impl Estimator for SdEstimator {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Sd
    }

    fn estimate(&self, frames: &[&Frame]) -> Result<EstimatorResult, EstimateError> {
        self.0.estimate(frames)
    }

    fn prepare<'a>(&'a self, pool: &'a [&'a Frame], _nu: usize) -> Result<Box<dyn PreparedPool + 'a>, EstimateError> {
        Ok(Box::new(self.0.prepare(pool)?))
    }
}

/// Centre of mass: `ĝ = mean_frames(Σ_j w_j (x_j - X₀)) / κ`,
/// `w_j = (k_j - μ_d) / Σ_i (k_i - μ_d)`.
pub struct ComEstimator(Linear);

impl ComEstimator {
    pub fn new(ctx: ModelContext, slope: Slope) -> Result<Self, EstimateError> {
        Ok(Self(Linear::new(ctx, EstimatorKind::Com, slope)?))
    }

    /// The sensitivity κ in use.
    pub fn kappa(&self) -> f64 {
        self.0.slope
    }
}

impl Estimator for ComEstimator {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Com
    }

    fn estimate(&self, frames: &[&Frame]) -> Result<EstimatorResult, EstimateError> {
        self.0.estimate(frames)
    }

    fn prepare<'a>(&'a self, pool: &'a [&'a Frame], _nu: usize) -> Result<Box<dyn PreparedPool + 'a>, EstimateError> {
        Ok(Box::new(self.0.prepare(pool)?))
    }
}

pub fn sd_estimate(frames: &[&Frame], ctx: &ModelContext, slope: Slope) -> Result<EstimatorResult, EstimateError> {
    SdEstimator::new(ctx.clone(), slope)?.estimate(frames)
}

pub fn com_estimate(frames: &[&Frame], ctx: &ModelContext, slope: Slope) -> Result<EstimatorResult, EstimateError> {
    ComEstimator::new(ctx.clone(), slope)?.estimate(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorCalib;
    use crate::qmeter::{MeasurementScheme, MeterParams};

    fn ctx(scheme: MeasurementScheme<f64>, nbar_t: f64, calib: DetectorCalib) -> ModelContext {
        ModelContext { scheme, nbar_t, meter: MeterParams::laboratory(), calib }
    }

    fn symmetric_frame(calib: &DetectorCalib) -> Frame {
        let tau = calib.n_pixels;
        let readouts = (0..tau)
            .map(|j| {
                let d = (j as f64 - 0.5 * (tau as f64 - 1.0)).abs();
                100 + (5000.0 * (-d * d / 2000.0).exp()) as u32
            })
            .collect();
        Frame { index: 0, readouts }
    }

    #[test]
    fn symmetric_frame_gives_zero() {
        let calib = DetectorCalib::laboratory();
        let c = ctx(MeasurementScheme::conventional(), 1e6, calib.clone());
        let f = symmetric_frame(&calib);
        for r in [sd_estimate(&[&f], &c, Slope::Analytic).unwrap(), com_estimate(&[&f], &c, Slope::Analytic).unwrap()] {
            assert!(r.g_hat.abs() < 1e-15, "{r:?}");
        }
    }

    #[test]
    fn unsaturated_split_slope_matches_gaussian_value() {
        // fine pixels, no clipping: ξ = √(2/π)/σ
        let calib = DetectorCalib { pixel_pitch: 0.002, n_pixels: 2400, ..DetectorCalib::laboratory() };
        let m = model_slopes(&ctx(MeasurementScheme::conventional(), 1e6, calib)).unwrap();
        let analytic = (2.0 / std::f64::consts::PI).sqrt() / 0.472;
        assert!((m.xi_sd - analytic).abs() < 1e-4 * analytic, "xi={} analytic={analytic}", m.xi_sd);
        // beam tails beyond the ±5σ array edge cost ~1e-5
        assert!((m.kappa_com - 1.0).abs() < 5e-5, "kappa={}", m.kappa_com);
    }

    #[test]
    fn saturation_lowers_split_slope() {
        let calib = DetectorCalib::laboratory();
        let analytic = (2.0 / std::f64::consts::PI).sqrt() / 0.472;
        let m = model_slopes(&ctx(MeasurementScheme::conventional(), 1e9, calib)).unwrap();
        assert!(m.xi_sd < 0.9 * analytic, "xi={}", m.xi_sd);
    }

    #[test]
    fn dark_level_offset_is_exactly_removed() {
        let calib = DetectorCalib::laboratory();
        let shifted = DetectorCalib { mu_d: calib.mu_d + 37.0, ..calib.clone() };
        let f = Frame { index: 0, readouts: (0..calib.n_pixels).map(|j| 100 + (j as u32 * 7919) % 400).collect() };
        let g = Frame { index: 0, readouts: f.readouts.iter().map(|k| k + 37).collect() };
        let c1 = ctx(MeasurementScheme::conventional(), 1e6, calib);
        let c2 = ctx(MeasurementScheme::conventional(), 1e6, shifted);
        let slope = Slope::Fixed(0.8);
        let a = sd_estimate(&[&f], &c1, slope).unwrap().g_hat;
        let b = sd_estimate(&[&g], &c2, slope).unwrap().g_hat;
        assert!((a - b).abs() < 1e-15);
        let a = com_estimate(&[&f], &c1, slope).unwrap().g_hat;
        let b = com_estimate(&[&g], &c2, slope).unwrap().g_hat;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn dark_frame_is_empty_signal() {
        let calib = DetectorCalib::laboratory();
        let c = ctx(MeasurementScheme::conventional(), 1e6, calib.clone());
        let f = Frame { index: 4, readouts: vec![90; calib.n_pixels] };
        assert_eq!(com_estimate(&[&f], &c, Slope::Analytic).unwrap_err(), EstimateError::EmptySignal { frame: 4 });
    }

    #[test]
    fn prepared_pool_agrees_with_direct_estimate() {
        let calib = DetectorCalib::laboratory();
        let c = ctx(MeasurementScheme::conventional(), 1e6, calib.clone());
        let frames: Vec<Frame> = (0..5)
            .map(|i| Frame { index: i, readouts: (0..calib.n_pixels).map(|j| 120 + ((j as u32 + 3 * i) * 31) % 97).collect() })
            .collect();
        let refs: Vec<&Frame> = frames.iter().collect();
        let est = SdEstimator::new(c, Slope::Fixed(1.3)).unwrap();
        let prepared = est.prepare(&refs, 3).unwrap();
        let counts = [2, 0, 1, 0, 0];
        let multiset = [&frames[0], &frames[0], &frames[2]];
        let direct = est.estimate(&multiset).unwrap().g_hat;
        assert!((prepared.estimate_multiset(&counts).unwrap() - direct).abs() < 1e-15);
    }
}
