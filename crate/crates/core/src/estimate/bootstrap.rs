//! Bootstrap precision: resample `ν` frames with replacement from a pool,
//! re-estimate, and take the spread of the estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::detector::FrameSet;

use super::{EstimateError, Estimator, PrecisionPoint};

/// Keeps resample streams apart from the frame streams of a pool generated with
/// the same user seed.
const RESAMPLE_DOMAIN: u64 = 0xB007_5742_A9E1_D3C5;

/// Multiplicities of pool frames in resample `r`: `ν` uniform draws with
/// replacement from `pool_len` frames, on stream `r` of the seeded generator.
pub fn resample_counts(pool_len: usize, nu: usize, seed: u64, r: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RESAMPLE_DOMAIN);
    rng.set_stream(r);
    let mut counts = vec![0u32; pool_len];
    for _ in 0..nu {
        counts[rng.random_range(0..pool_len)] += 1;
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BootstrapStats {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub std: f64,
    /// Standard error of `std`, from the sample fourth central moment.
    pub std_err: f64,
}

/// Mean, standard deviation and the standard error of the standard deviation.
///
/// `Var(s²) ≈ (m₄ - (n-3)/(n-1)·s⁴)/n` and `δs = δ(s²)/(2s)`.
pub fn bootstrap_statistics(values: &[f64]) -> BootstrapStats {
    let n = values.len();
    if n == 0 {
        return BootstrapStats { mean: f64::NAN, std: f64::NAN, std_err: f64::NAN };
    }
    let nf = n as f64;
    if values.iter().all(|&v| v == values[0]) {
        return BootstrapStats { mean: values[0], std: 0.0, std_err: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / nf;
    if n < 2 {
        return BootstrapStats { mean, std: 0.0, std_err: 0.0 };
    }
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = (v - mean) * (v - mean);
        (a + d, b + d * d)
    });
    let s2 = m2 / (nf - 1.0);
    let std = s2.sqrt();
    if std == 0.0 {
        return BootstrapStats { mean, std, std_err: 0.0 };
    }
    let m4 = m4 / nf;
    let var_s2 = ((m4 - (nf - 3.0) / (nf - 1.0) * s2 * s2) / nf).max(0.0);
    BootstrapStats { mean, std, std_err: var_s2.sqrt() / (2.0 * std) }
}

/// Bootstrap precision `δg` of `estimator` with `nu` frames per estimate.
pub fn bootstrap_precision(
    pool: &FrameSet,
    estimator: &dyn Estimator,
    nu: usize,
    resamples: usize,
    seed: u64,
) -> Result<PrecisionPoint, EstimateError> {
    if nu < 2 || resamples < 2 {
        return Err(EstimateError::Protocol { nu, resamples });
    }
    let refs = pool.refs();
    let prepared = estimator.prepare(&refs, nu)?;
    let estimates = (0..resamples as u64)
        .into_par_iter()
        .map(|r| prepared.estimate_multiset(&resample_counts(refs.len(), nu, seed, r)))
        .collect::<Result<Vec<f64>, EstimateError>>()?;
    let stats = bootstrap_statistics(&estimates);
    let meta = &pool.meta;
    Ok(PrecisionPoint {
        scheme: meta.scheme.kind(),
        estimator: estimator.kind(),
        nbar_t: meta.nbar_t,
        pf: meta.scheme.pf0(),
        delta_g: stats.std,
        delta_g_err: stats.std_err,
        mean_g: stats.mean,
        nu,
        resamples,
        seed,
        calib_fingerprint: meta.calib.fingerprint(),
    })
}
