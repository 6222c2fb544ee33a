//! Choice of post-selection strength per input intensity, judged by the
//! Cramér-Rao precision relative to the shot-noise limit.

use rayon::prelude::*;
use serde::Serialize;

use crate::detector::DetectorCalib;
use crate::fisher::total_fisher;
use crate::qmeter::{MeasurementScheme, MeterParams};

use super::{shot_noise_limit, ExperimentError};

/// Pair angles `θ_i = -θ_f` of the laboratory settings, in degrees.
pub const LAB_ANGLES_DEG: [f64; 5] = [84.0, 76.0, 63.0, 45.0, 0.0];

/// `P_f = cos² θ` of the laboratory settings, strongest post-selection first.
pub fn lab_candidates() -> Vec<f64> {
    LAB_ANGLES_DEG.iter().map(|t| t.to_radians().cos().powi(2)).collect()
}

/// Log-spaced `P_f` from `min_pf` up to 1 inclusive.
pub fn log_candidates(min_pf: f64, per_decade: usize) -> Vec<f64> {
    let decades = -min_pf.log10();
    let n = (decades * per_decade as f64).round().max(1.0) as usize;
    (0..=n).map(|i| 10f64.powf(-decades * (1.0 - i as f64 / n as f64))).collect()
}

/// Everything but the intensity and the candidate list.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PfCore {
    pub g: f64,
    pub meter: MeterParams<f64>,
    pub calib: DetectorCalib,
    pub nu: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PfCandidate {
    pub pf: f64,
    pub fisher: f64,
    pub delta_g: f64,
    /// `δg / SNL`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PfOptimum {
    pub nbar_t: f64,
    pub best_pf: f64,
    pub delta_g: f64,
    pub ratio: f64,
    pub candidates: Vec<PfCandidate>,
}

fn evaluate(
    scheme: &MeasurementScheme<f64>,
    pf: f64,
    nbar_t: f64,
    core: &PfCore,
) -> Result<PfCandidate, ExperimentError> {
    let fisher = total_fisher(scheme, core.g, nbar_t, &core.meter, &core.calib)?.total;
    let delta_g = 1.0 / (core.nu as f64 * fisher).sqrt();
    let snl = shot_noise_limit(&core.meter, core.calib.eta, core.nu, nbar_t);
    Ok(PfCandidate { pf, fisher, delta_g, ratio: delta_g / snl })
}

/// Cramér-Rao `δg` and SNL ratio of every candidate `P_f` (realized by the
/// symmetric pair with `cos² θ = P_f`); the minimizer wins, ties going to the
/// larger `P_f`.
pub fn optimize_postselection(nbar_t: f64, candidates: &[f64], core: &PfCore) -> Result<PfOptimum, ExperimentError> {
    if candidates.is_empty() {
        return Err(ExperimentError::InvalidScenario { field: "candidates", reason: "empty list".into() });
    }
    if let Some(bad) = candidates.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(ExperimentError::InvalidScenario {
            field: "candidates",
            reason: format!("P_f = {bad} is not realizable by a symmetric pair"),
        });
    }
    let evaluated = candidates
        .par_iter()
        .map(|&pf| evaluate(&MeasurementScheme::for_success_probability(pf)?, pf, nbar_t, core))
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let mut best = evaluated[0];
    for c in &evaluated[1..] {
        let tie = (c.ratio - best.ratio).abs() <= 1e-12 * best.ratio;
        if (c.ratio < best.ratio && !tie) || (tie && c.pf > best.pf) {
            best = *c;
        }
    }
    Ok(PfOptimum { nbar_t, best_pf: best.pf, delta_g: best.delta_g, ratio: best.ratio, candidates: evaluated })
}

/// Best candidate at every intensity.
pub fn snl_ratio_curve(nbar_t: &[f64], candidates: &[f64], core: &PfCore) -> Result<Vec<PfOptimum>, ExperimentError> {
    nbar_t.iter().map(|&n| optimize_postselection(n, candidates, core)).collect()
}

/// Conventional-measurement `δg / SNL`.
pub fn cm_ratio(nbar_t: f64, core: &PfCore) -> Result<f64, ExperimentError> {
    Ok(evaluate(&MeasurementScheme::conventional(), 1.0, nbar_t, core)?.ratio)
}

/// Intensity interval on which `δg/SNL` stays at or below a threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DynamicRange {
    pub lo: f64,
    pub hi: f64,
    /// `hi / lo`.
    pub span: f64,
    /// The interval reaches the first or last grid point, so the span is a lower bound.
    pub clipped: bool,
    pub min_ratio: f64,
    pub min_ratio_at: f64,
}

/// The contiguous run of grid points around the smallest ratio with
/// `ratio <= threshold`, its edges refined by log-log interpolation.
pub fn dynamic_range(nbar_t: &[f64], ratio: &[f64], threshold: f64) -> Option<DynamicRange> {
    assert_eq!(nbar_t.len(), ratio.len());
    let (imin, &min_ratio) = ratio
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    if min_ratio > threshold {
        return None;
    }
    let ok = |i: usize| ratio[i].is_finite() && ratio[i] <= threshold;
    let mut a = imin;
    while a > 0 && ok(a - 1) {
        a -= 1;
    }
    let mut b = imin;
    while b + 1 < ratio.len() && ok(b + 1) {
        b += 1;
    }
    let crossing = |inside: usize, outside: usize| {
        let (x0, x1) = (nbar_t[inside].ln(), nbar_t[outside].ln());
        let (y0, y1) = (ratio[inside].ln(), ratio[outside].ln());
        if !y1.is_finite() || !x0.is_finite() || !x1.is_finite() {
            return nbar_t[inside];
        }
        let t = (threshold.ln() - y0) / (y1 - y0);
        (x0 + t * (x1 - x0)).exp()
    };
    let lo = if a > 0 { crossing(a, a - 1) } else { nbar_t[a] };
    let hi = if b + 1 < ratio.len() { crossing(b, b + 1) } else { nbar_t[b] };
    Some(DynamicRange {
        lo,
        hi,
        span: hi / lo,
        clipped: a == 0 || b + 1 == ratio.len(),
        min_ratio,
        min_ratio_at: nbar_t[imin],
    })
}
