//! Weak-value amplified versus conventional measurement of a small beam
//! displacement, read out by a noisy, saturating pixel detector.
//!
//! * [`qmeter`]: meter states, pre/post-selection, weak values.
//! * [`detector`]: detector response, expected counts, frame synthesis and storage.
//! * [`fisher`]: outcome distributions, Fisher information, Γ, ideal-detector scans.
//! * [`estimate`]: maximum-likelihood, split-detection and centre-of-mass estimators
//!   with bootstrap precision.
//! * [`experiments`]: precision sweeps and figure datasets.
//!
//! Lengths are millimetres. The state algebra is generic over `f32`/`f64`; the
//! detector and information pipeline run in `f64`.

// `!(x > 0.0)` is used deliberately so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod detector;
pub mod estimate;
pub mod experiments;
pub mod fisher;
pub mod optimize;
pub mod qmeter;
pub mod scalar;
pub mod special;

pub use detector::{DetectorCalib, DetectorError, Frame, FrameMeta, FrameSet, NoiseLaw, PixelModel};
pub use fisher::{FisherError, FisherReport, OutcomePmf};
pub use qmeter::{QmeterError, SchemeKind};
pub use scalar::Real;

/// Double-precision aliases used throughout the pipeline.
pub type Qubit = qmeter::QubitState<f64>;
pub type Meter = qmeter::MeterParams<f64>;
pub type Scheme = qmeter::MeasurementScheme<f64>;
pub type Amplitudes = qmeter::SuperpositionAmplitudes<f64>;

/// Single-precision state algebra.
pub type Qubit32 = qmeter::QubitState<f32>;
pub type Meter32 = qmeter::MeterParams<f32>;
pub type Scheme32 = qmeter::MeasurementScheme<f32>;
