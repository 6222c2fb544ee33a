//! Outcome distributions, Fisher information and the per-pixel
//! signal-to-noise coefficient Γ.
//!
//! The total information is `F(g) = Σ_j Σ_k (∂_g P(k_j|g))² / P(k_j|g)`. For an
//! ideal counter a pixel contributes `(η/n̄_j)(dn̄_j/dg)²`; Γ_j is the fraction
//! of that which survives the noisy, saturating readout.
//!
//! The readout noise σ_a(n̄_j) is evaluated at the working point and held fixed
//! when differentiating with respect to `g`. Only the photoelectron rate
//! carries `g`, which is what keeps Γ_j ≤ 1.

mod kernel;
mod scan;

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::detector::{expected_counts, DetectorCalib, DetectorError, PixelModel};
use crate::qmeter::{MeasurementScheme, MeterParams, QmeterError, SchemeKind};
use crate::scalar::Real;
use crate::special::compensated_sum;

pub use kernel::{outcome_distribution, BandPmf, PmfCache};
pub use scan::{ideal_fi_ratio_scan, ideal_fisher_per_photon, RatioPoint, ScanSettings};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FisherError {
    #[error("invalid Poisson rate {lambda}")]
    InvalidRate { lambda: f64 },
    #[error("Poisson window for rate {lambda} captured only {captured} of the mass")]
    TruncationFailure { lambda: f64, captured: f64 },
    #[error("Γ undefined at pixel {pixel}: the expected count does not depend on g there")]
    UndefinedGamma { pixel: usize },
    #[error("no {kind} selection reaches post-selection probability {pf}")]
    InfeasiblePf { kind: SchemeKind, pf: f64 },
    #[error("invalid scan request: {0}")]
    InvalidScan(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Meter(#[from] QmeterError),
}

/// `P(k|g)` and `∂_g P(k|g)` of one pixel over a contiguous readout band.
///
/// Readouts outside `[k0, k0 + prob.len())` have zero probability.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomePmf {
    pub pixel: usize,
    pub k0: u64,
    pub prob: Vec<f64>,
    pub dprob: Vec<f64>,
}

impl OutcomePmf {
    pub fn get(&self, k: u64) -> f64 {
        k.checked_sub(self.k0)
            .and_then(|i| self.prob.get(i as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn derivative(&self, k: u64) -> f64 {
        k.checked_sub(self.k0)
            .and_then(|i| self.dprob.get(i as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.prob.iter().copied())
    }

    pub fn derivative_total(&self) -> f64 {
        compensated_sum(self.dprob.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.prob.iter().enumerate().map(|(i, p)| (self.k0 + i as u64) as f64 * p))
    }

    /// `d⟨k⟩/dg`.
    pub fn mean_derivative(&self) -> f64 {
        compensated_sum(self.dprob.iter().enumerate().map(|(i, d)| (self.k0 + i as u64) as f64 * d))
    }
}

/// Outcome distribution of one pixel with the readout noise fixed at `noise_sigma`.
pub fn outcome_pmf_with_noise(
    pixel: &PixelModel,
    calib: &DetectorCalib,
    noise_sigma: f64,
) -> Result<OutcomePmf, FisherError> {
    let lambda = calib.eta * pixel.nbar;
    let dlambda = calib.eta * pixel.dnbar_dg;
    let band = outcome_distribution(lambda, noise_sigma, calib, true)?;
    let dprob = band.dprob_dlambda.iter().map(|d| d * dlambda).collect();
    Ok(OutcomePmf { pixel: pixel.index, k0: band.k0, prob: band.prob, dprob })
}

/// Outcome distribution of one pixel at its working point.
pub fn outcome_pmf(pixel: &PixelModel, calib: &DetectorCalib) -> Result<OutcomePmf, FisherError> {
    outcome_pmf_with_noise(pixel, calib, calib.noise_sigma(pixel.nbar))
}

/// Fisher information carried by one pixel (mm⁻²).
pub fn pixel_fisher(pmf: &OutcomePmf) -> f64 {
    compensated_sum(
        pmf.prob
            .iter()
            .zip(&pmf.dprob)
            .filter(|(p, _)| **p >= 1e-300)
            .map(|(p, d)| d * d / p),
    )
}

/// Information an ideal photon counter would extract from this pixel.
pub fn ideal_pixel_fisher(pixel: &PixelModel, calib: &DetectorCalib) -> Option<f64> {
    if pixel.nbar > 0.0 && pixel.dnbar_dg != 0.0 {
        Some(calib.eta / pixel.nbar * pixel.dnbar_dg * pixel.dnbar_dg)
    } else {
        None
    }
}

/// `Γ_j = F_j / ((η/n̄_j)(dn̄_j/dg)²)`.
pub fn gamma(pixel: &PixelModel, calib: &DetectorCalib) -> Result<f64, FisherError> {
    let ideal = ideal_pixel_fisher(pixel, calib).ok_or(FisherError::UndefinedGamma { pixel: pixel.index })?;
    Ok(pixel_fisher(&outcome_pmf(pixel, calib)?) / ideal)
}

/// Quantum Fisher information of the conventional measurement, `1/σ²`.
pub fn qfi_cm<T: Real>(meter: &MeterParams<T>) -> T {
    T::one() / (meter.sigma() * meter.sigma())
}

/// One row of a [`FisherReport`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PixelFisher {
    pub j: usize,
    pub x: f64,
    pub nbar: f64,
    pub dnbar_dg: f64,
    pub fisher: f64,
    /// Absent where Γ is undefined.
    pub gamma: Option<f64>,
}

/// Information budget of one scheme at one working point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FisherReport {
    pub scheme: SchemeKind,
    pub g: f64,
    pub nbar_t: f64,
    pub calib_fingerprint: String,
    pub eta: f64,
    pub total: f64,
    pub pixels: Vec<PixelFisher>,
}

impl FisherReport {
    /// The same total assembled as `Σ_j (η/n̄_j)(dn̄_j/dg)² Γ_j`.
    pub fn assembled_total(&self) -> f64 {
        compensated_sum(self.pixels.iter().map(|p| match p.gamma {
            Some(gm) => self.eta / p.nbar * p.dnbar_dg * p.dnbar_dg * gm,
            None => p.fisher,
        }))
    }

    /// Cramér-Rao bound on `δg` for `nu` frames.
    pub fn cramer_rao(&self, nu: usize) -> f64 {
        1.0 / (nu as f64 * self.total).sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-pixel table `j,x_j,nbar_j,F_j,Gamma_j`; undefined Γ is left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "j,x_j,nbar_j,F_j,Gamma_j")?;
        for p in &self.pixels {
            let gm = p.gamma.map(|v| format!("{v:.16e}")).unwrap_or_default();
            writeln!(w, "{},{:.16e},{:.16e},{:.16e},{}", p.j, p.x, p.nbar, p.fisher, gm)?;
        }
        Ok(())
    }
}

/// Fisher information of every pixel and in total.
pub fn total_fisher(
    scheme: &MeasurementScheme<f64>,
    g: f64,
    nbar_t: f64,
    meter: &MeterParams<f64>,
    calib: &DetectorCalib,
) -> Result<FisherReport, FisherError> {
    calib.validate()?;
    meter.check_displacement(g)?;
    if !(nbar_t >= 0.0) || !nbar_t.is_finite() {
        return Err(FisherError::InvalidRate { lambda: nbar_t });
    }
    let model = expected_counts(scheme, g, nbar_t, meter, calib);
    let pixels = model
        .par_iter()
        .map(|px| {
            let pmf = outcome_pmf(px, calib)?;
            let fisher = pixel_fisher(&pmf);
            let gamma = ideal_pixel_fisher(px, calib).map(|ideal| fisher / ideal);
            Ok(PixelFisher { j: px.index, x: px.x, nbar: px.nbar, dnbar_dg: px.dnbar_dg, fisher, gamma })
        })
        .collect::<Result<Vec<_>, FisherError>>()?;
    let total = compensated_sum(pixels.iter().map(|p| p.fisher));
    Ok(FisherReport {
        scheme: scheme.kind(),
        g,
        nbar_t,
        calib_fingerprint: calib.fingerprint(),
        eta: calib.eta,
        total,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel(nbar: f64, dnbar: f64) -> PixelModel {
        PixelModel { index: 0, x: 0.0, nbar, dnbar_dg: dnbar }
    }

    #[test]
    fn qfi_reference_values() {
        assert_eq!(qfi_cm(&MeterParams::<f64>::dimensionless()), 4.0);
        assert!((qfi_cm(&MeterParams::<f64>::laboratory()) - 4.488_652_686_009_767).abs() < 1e-12);
        let wide = MeterParams::new(1.0f64, 0.0).unwrap();
        assert_eq!(qfi_cm(&wide), 0.25 * qfi_cm(&MeterParams::new(0.5, 0.0).unwrap()));
        assert!((qfi_cm(&MeterParams::<f32>::dimensionless()) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn mean_readout_below_saturation() {
        let calib = DetectorCalib { gain: 2.0, ..DetectorCalib::laboratory() };
        for &nbar in &[5.0, 400.0, 2.0e4] {
            let pmf = outcome_pmf(&pixel(nbar, 10.0), &calib).unwrap();
            let expect = calib.gain * calib.eta * nbar + calib.mu_d;
            assert!((pmf.mean() - expect).abs() < 1e-6 * expect, "nbar={nbar}");
            let dexpect = calib.gain * calib.eta * 10.0;
            assert!((pmf.mean_derivative() - dexpect).abs() < 1e-6 * dexpect);
        }
    }

    #[test]
    fn ideal_detector_gamma_is_one() {
        let calib = DetectorCalib::ideal();
        for &(nbar, d) in &[(1e-3, 0.02), (3.0, -5.0), (2.0e4, 1.0e3), (1.0e7, 4.0e5)] {
            let gm = gamma(&pixel(nbar, d), &calib).unwrap();
            assert!((gm - 1.0).abs() < 1e-6, "nbar={nbar} gamma={gm}");
        }
    }

    #[test]
    fn empty_pixel_has_no_information() {
        let calib = DetectorCalib::laboratory();
        let pmf = outcome_pmf(&pixel(0.0, 0.0), &calib).unwrap();
        assert_eq!(pixel_fisher(&pmf), 0.0);
        assert!(matches!(gamma(&pixel(0.0, 0.0), &calib), Err(FisherError::UndefinedGamma { .. })));
        assert!(matches!(gamma(&pixel(10.0, 0.0), &calib), Err(FisherError::UndefinedGamma { .. })));
    }

    #[test]
    fn saturated_pixel_loses_information() {
        let calib = DetectorCalib::laboratory();
        let px = pixel(1.0e6, 1.0e6);
        let pmf = outcome_pmf(&px, &calib).unwrap();
        assert!(pmf.get(calib.k_s as u64) > 1.0 - 1e-9);
        let ideal = ideal_pixel_fisher(&px, &calib).unwrap();
        assert!(pixel_fisher(&pmf) < 1e-6 * ideal);
        assert!(gamma(&px, &calib).unwrap() < 0.01);
    }

    #[test]
    fn dark_noise_dominated_pixel_has_small_gamma() {
        let calib = DetectorCalib::laboratory();
        let gm = gamma(&pixel(2.0, 0.5), &calib).unwrap();
        assert!(gm < 0.05, "gamma={gm}");
    }

    #[test]
    fn derivative_matches_finite_difference_with_frozen_noise() {
        let calib = DetectorCalib::laboratory();
        let nbar = 3000.0;
        let d = 2.0e4;
        let s = calib.noise_sigma(nbar);
        let h = 1e-5 * 0.472;
        let mid = outcome_pmf_with_noise(&pixel(nbar, d), &calib, s).unwrap();
        let up = outcome_pmf_with_noise(&pixel(nbar + d * h, d), &calib, s).unwrap();
        let dn = outcome_pmf_with_noise(&pixel(nbar - d * h, d), &calib, s).unwrap();
        let peak = mid.dprob.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..mid.prob.len() {
            let k = mid.k0 + i as u64;
            let fd = (up.get(k) - dn.get(k)) / (2.0 * h);
            let an = mid.dprob[i];
            if an.abs() > 1e-3 * peak {
                assert!((fd - an).abs() <= 1e-4 * an.abs(), "k={k} fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn report_csv_has_header_and_rows() {
        let calib = DetectorCalib { n_pixels: 12, ..DetectorCalib::laboratory() };
        let r = total_fisher(&MeasurementScheme::conventional(), 1e-3, 1e6, &MeterParams::laboratory(), &calib).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("j,x_j,nbar_j,F_j,Gamma_j\n"));
        assert!((r.assembled_total() - r.total).abs() <= 1e-12 * r.total);
    }
}
