//! Displacement estimators (maximum likelihood, split detection, centre of
//! mass) and bootstrap precision analysis.
//!
//! Every estimator can be *prepared* on a frame pool. The prepared form answers
//! "what is the estimate for this multiset of pool frames" without touching the
//! raw readouts again, which is what the bootstrap needs.

mod bootstrap;
mod linear;
mod mle;

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectorCalib, DetectorError, Frame, FrameMeta};
use crate::fisher::FisherError;
use crate::qmeter::{MeasurementScheme, MeterParams, SchemeKind};

pub use bootstrap::{bootstrap_precision, bootstrap_statistics, resample_counts, BootstrapStats};
pub use linear::{com_estimate, model_slopes, sd_estimate, ComEstimator, LinearSlopes, SdEstimator, Slope};
pub use mle::{mle_estimate, MleEstimator, MleSettings};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("log-likelihood is maximal at the edge of the search interval [{lo}, {hi}] mm")]
    BracketFailure { lo: f64, hi: f64 },
    #[error("frame {frame} has no signal above the dark level")]
    EmptySignal { frame: u32 },
    #[error("no frames to estimate from")]
    NoFrames,
    #[error("frame {frame} has {got} readouts, expected {expected}")]
    PixelCount { frame: u32, got: usize, expected: usize },
    #[error("estimator slope {slope} is too small to invert")]
    DegenerateSlope { slope: f64 },
    #[error("need 2 <= nu and 2 <= resamples, got nu = {nu}, resamples = {resamples}")]
    Protocol { nu: usize, resamples: usize },
    #[error(transparent)]
    Fisher(#[from] FisherError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Mle,
    Sd,
    Com,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Mle, EstimatorKind::Sd, EstimatorKind::Com];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Mle => "mle",
            EstimatorKind::Sd => "sd",
            EstimatorKind::Com => "com",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mle" => Ok(EstimatorKind::Mle),
            "sd" => Ok(EstimatorKind::Sd),
            "com" => Ok(EstimatorKind::Com),
            other => Err(format!("unknown estimator '{other}' (expected mle, sd or com)")),
        }
    }
}

/// Forward model the estimators invert.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelContext {
    pub scheme: MeasurementScheme<f64>,
    pub nbar_t: f64,
    pub meter: MeterParams<f64>,
    pub calib: DetectorCalib,
}

impl ModelContext {
    pub fn from_meta(meta: &FrameMeta) -> Self {
        Self { scheme: meta.scheme, nbar_t: meta.nbar_t, meter: meta.meter, calib: meta.calib.clone() }
    }

    pub(crate) fn check_frames(&self, frames: &[&Frame]) -> Result<(), EstimateError> {
        if frames.is_empty() {
            return Err(EstimateError::NoFrames);
        }
        for f in frames {
            if f.readouts.len() != self.calib.n_pixels {
                return Err(EstimateError::PixelCount {
                    frame: f.index,
                    got: f.readouts.len(),
                    expected: self.calib.n_pixels,
                });
            }
        }
        Ok(())
    }
}

/// Outcome of one estimator run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub kind: EstimatorKind,
    /// Estimated displacement (mm).
    pub g_hat: f64,
    pub frames: usize,
    /// Objective evaluations (MLE) or 0.
    pub iterations: usize,
    /// Log-likelihood at the optimum (MLE only).
    pub log_likelihood: Option<f64>,
    /// Variance of `g_hat` predicted from per-frame spreads (SD and COM only).
    pub variance: Option<f64>,
}

/// An estimator bound to its forward model.
pub trait Estimator: Send + Sync {
    fn kind(&self) -> EstimatorKind;

    fn estimate(&self, frames: &[&Frame]) -> Result<EstimatorResult, EstimateError>;

    /// Precomputes whatever is needed to re-estimate from multisets of `pool`
    /// of size `nu`.
    fn prepare<'a>(&'a self, pool: &'a [&'a Frame], nu: usize) -> Result<Box<dyn PreparedPool + 'a>, EstimateError>;
}

/// Estimator specialised to one frame pool.
pub trait PreparedPool: Send + Sync {
    /// Estimate from the multiset that contains pool frame `l` `counts[l]` times.
    fn estimate_multiset(&self, counts: &[u32]) -> Result<f64, EstimateError>;
}

/// Bootstrap precision of one estimator at one operating point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrecisionPoint {
    pub scheme: SchemeKind,
    pub estimator: EstimatorKind,
    pub nbar_t: f64,
    pub pf: f64,
    pub delta_g: f64,
    pub delta_g_err: f64,
    pub mean_g: f64,
    pub nu: usize,
    pub resamples: usize,
    pub seed: u64,
    pub calib_fingerprint: String,
}

impl PrecisionPoint {
    pub const CSV_HEADER: &'static str = "scheme,estimator,nbar_t,P_f,delta_g,delta_g_err,seed,calib_hash";

    pub fn write_csv_row<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            self.scheme,
            self.estimator,
            self.nbar_t,
            self.pf,
            self.delta_g,
            self.delta_g_err,
            self.seed,
            self.calib_fingerprint
        )
    }
}

/// Builds the estimator of the given kind with default settings.
pub fn build_estimator(kind: EstimatorKind, ctx: &ModelContext) -> Result<Box<dyn Estimator>, EstimateError> {
    Ok(match kind {
        EstimatorKind::Mle => Box::new(MleEstimator::new(ctx.clone(), MleSettings::default())),
        EstimatorKind::Sd => Box::new(SdEstimator::new(ctx.clone(), Slope::Model)?),
        EstimatorKind::Com => Box::new(ComEstimator::new(ctx.clone(), Slope::Model)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_names_roundtrip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.as_str().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("ml".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn precision_row_format() {
        let p = PrecisionPoint {
            scheme: SchemeKind::Rwva,
            estimator: EstimatorKind::Sd,
            nbar_t: 1e6,
            pf: 0.0585,
            delta_g: 1e-4,
            delta_g_err: 5e-6,
            mean_g: 1e-3,
            nu: 300,
            resamples: 200,
            seed: 7,
            calib_fingerprint: "abc".into(),
        };
        let mut buf = Vec::new();
        p.write_csv_row(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(line.trim_end().split(',').count(), PrecisionPoint::CSV_HEADER.split(',').count());
        assert!(line.starts_with("rwva,sd,1.0000000000000000e6,"));
    }
}
