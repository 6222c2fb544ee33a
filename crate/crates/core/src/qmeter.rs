//! Gaussian meter states, ancilla pre/post-selection and weak values.
//!
//! The ancilla observable is fixed to `+1` on `|0⟩` and `-1` on `|1⟩`, so the
//! coupling `exp(-i g Â P̂)` displaces the meter by `+g` on the `|0⟩` branch and
//! by `-g` on the `|1⟩` branch. After post-selection the (unnormalized) meter is
//! the two-Gaussian superposition `α Φ₀(q - g) + β Φ₀(q + g)` with
//!
//! ```text
//! α = cos(θ_f/2) cos(θ_i/2)
//! β = sin(θ_f/2) sin(θ_i/2) e^{i(φ_i - φ_f)}
//! ```
//!
//! A negative polar angle `-θ` is represented as `(θ, φ + π)`; with that
//! convention the pair `θ_i = 76°`, `θ_f = -76°` gives `A_w = 1/cos 76° ≈ 4.13`
//! and `P_f = cos² 76° ≈ 0.0585`.
//!
//! Everything here is exact (non-perturbative); the first-order shift formulas
//! are only exposed as diagnostics.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QmeterError {
    #[error("pre- and post-selected states are orthogonal (|overlap| = {overlap:e})")]
    OrthogonalSelection { overlap: f64 },
    #[error("polar angle {theta} rad outside [0, pi]")]
    InvalidAngle { theta: f64 },
    #[error("meter width must be positive and finite, got {sigma}")]
    InvalidWidth { sigma: f64 },
    #[error("displacement {g} outside the supported range |g| < 10 sigma (sigma = {sigma})")]
    DisplacementOutOfRange { g: f64, sigma: f64 },
    #[error("selection gives weak value {re} + {im}i, which is not {expected}")]
    WeakValueKind { re: f64, im: f64, expected: &'static str },
}

fn f<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Pure two-level state `cos(θ/2)|0⟩ + sin(θ/2) e^{iφ}|1⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QubitState<T> {
    theta: T,
    phi: T,
}

impl<T: Real> QubitState<T> {
    /// Validates `θ ∈ [0, π]` and wraps `φ` into `[0, 2π)`.
    pub fn new(theta: T, phi: T) -> Result<Self, QmeterError> {
        let slack = T::eps_zero();
        if !theta.is_finite() || theta < -slack || theta > T::PI() + slack {
            return Err(QmeterError::InvalidAngle { theta: f(theta) });
        }
        let theta = theta.max(T::zero()).min(T::PI());
        let tau = T::PI() + T::PI();
        let mut phi = phi % tau;
        if phi < T::zero() {
            phi = phi + tau;
        }
        if phi >= tau {
            phi = phi - tau;
        }
        Ok(Self { theta, phi })
    }

    /// Accepts a signed polar angle; `-θ` maps to `(θ, φ + π)`.
    pub fn from_signed(theta: T, phi: T) -> Result<Self, QmeterError> {
        if theta < T::zero() {
            Self::new(-theta, phi + T::PI())
        } else {
            Self::new(theta, phi)
        }
    }

    pub fn from_degrees(theta_deg: T, phi_deg: T) -> Result<Self, QmeterError> {
        Self::from_signed(theta_deg.to_radians(), phi_deg.to_radians())
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn phi(&self) -> T {
        self.phi
    }

    /// Components on `|0⟩` and `|1⟩`.
    pub fn amplitudes(&self) -> (Complex<T>, Complex<T>) {
        let half = self.theta * T::lit(0.5);
        (
            Complex::new(half.cos(), T::zero()),
            Complex::from_polar(half.sin(), self.phi),
        )
    }

    /// `⟨ψ|Â|ψ⟩ = cos θ`.
    pub fn observable_expectation(&self) -> T {
        self.theta.cos()
    }
}

/// Gaussian meter: width `σ` and beam centre `X₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeterParams<T> {
    sigma: T,
    x0: T,
}

impl<T: Real> MeterParams<T> {
    pub fn new(sigma: T, x0: T) -> Result<Self, QmeterError> {
        if !(sigma > T::zero()) || !sigma.is_finite() || !x0.is_finite() {
            return Err(QmeterError::InvalidWidth { sigma: f(sigma) });
        }
        Ok(Self { sigma, x0 })
    }

    /// Beam width of the laboratory setup, 0.472 mm, centred at the origin.
    pub fn laboratory() -> Self {
        Self { sigma: T::lit(0.472), x0: T::zero() }
    }

    /// Dimensionless meter with `2σ = 1`.
    pub fn dimensionless() -> Self {
        Self { sigma: T::lit(0.5), x0: T::zero() }
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn x0(&self) -> T {
        self.x0
    }

    /// Rejects displacements outside `|g| < 10σ`.
    pub fn check_displacement(&self, g: T) -> Result<(), QmeterError> {
        if !g.is_finite() || g.abs() >= T::lit(10.0) * self.sigma {
            return Err(QmeterError::DisplacementOutOfRange { g: f(g), sigma: f(self.sigma) });
        }
        Ok(())
    }

    /// Position-space amplitude `Φ₀(q)` of the undisplaced meter, `q` measured from `X₀`.
    pub fn amplitude_q(&self, q: T) -> T {
        let s2 = self.sigma * self.sigma;
        let norm = (T::TAU() * s2).powf(T::lit(-0.25));
        norm * (-(q * q) / (T::lit(4.0) * s2)).exp()
    }

    /// Momentum-space amplitude `Φ̃₀(p)`.
    pub fn amplitude_p(&self, p: T) -> T {
        let s2 = self.sigma * self.sigma;
        let norm = (T::lit(2.0) * s2 / T::PI()).powf(T::lit(0.25));
        norm * (-(s2 * p * p)).exp()
    }

    /// Overlap `∫ Φ₀(q - g) Φ₀(q + g) dq = exp(-g²/(2σ²))`.
    pub fn branch_overlap(&self, g: T) -> T {
        (-(g * g) / (T::lit(2.0) * self.sigma * self.sigma)).exp()
    }
}

/// Weights of the two displaced Gaussians in the post-selected meter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuperpositionAmplitudes<T> {
    pub alpha: Complex<T>,
    pub beta: Complex<T>,
}

impl<T: Real> SuperpositionAmplitudes<T> {
    pub fn from_selection(pre: &QubitState<T>, post: &QubitState<T>) -> Self {
        let (pre0, pre1) = pre.amplitudes();
        let (post0, post1) = post.amplitudes();
        Self { alpha: post0.conj() * pre0, beta: post1.conj() * pre1 }
    }

    /// Conventional measurement: the whole meter is displaced by `+g`.
    pub fn conventional() -> Self {
        Self { alpha: Complex::new(T::one(), T::zero()), beta: Complex::new(T::zero(), T::zero()) }
    }

    /// `⟨ψ_f|ψ_i⟩ = α + β`.
    pub fn overlap(&self) -> Complex<T> {
        self.alpha + self.beta
    }

    /// `Re(ᾱβ)`, the interference weight seen in position space.
    pub fn interference(&self) -> Complex<T> {
        self.alpha.conj() * self.beta
    }

    /// Exact success probability of post-selection at displacement `g`.
    pub fn success_probability(&self, g: T, meter: &MeterParams<T>) -> T {
        self.alpha.norm_sqr()
            + self.beta.norm_sqr()
            + T::lit(2.0) * self.interference().re * meter.branch_overlap(g)
    }

    /// `dP_f/dg`.
    pub fn success_probability_derivative(&self, g: T, meter: &MeterParams<T>) -> T {
        let s2 = meter.sigma() * meter.sigma();
        -T::lit(2.0) * self.interference().re * (g / s2) * meter.branch_overlap(g)
    }

    /// Unnormalized position amplitude `αΦ₀(q'-g) + βΦ₀(q'+g)` and its `g`-derivative,
    /// where `q' = q - X₀`.
    pub fn position_amplitude(&self, g: T, meter: &MeterParams<T>, q: T) -> (Complex<T>, Complex<T>) {
        let qq = q - meter.x0();
        let two_s2 = T::lit(2.0) * meter.sigma() * meter.sigma();
        let a = meter.amplitude_q(qq - g);
        let b = meter.amplitude_q(qq + g);
        let psi = self.alpha * a + self.beta * b;
        let dpsi = self.alpha * (a * (qq - g) / two_s2) - self.beta * (b * (qq + g) / two_s2);
        (psi, dpsi)
    }

    /// Unnormalized momentum amplitude `(αe^{-igp} + βe^{igp}) Φ̃₀(p)` and its `g`-derivative.
    pub fn momentum_amplitude(&self, g: T, meter: &MeterParams<T>, p: T) -> (Complex<T>, Complex<T>) {
        let env = meter.amplitude_p(p);
        let minus = Complex::from_polar(T::one(), -g * p);
        let plus = Complex::from_polar(T::one(), g * p);
        let i = Complex::new(T::zero(), T::one());
        let psi = (self.alpha * minus + self.beta * plus) * env;
        let dpsi = (self.alpha * minus * (-i * p) + self.beta * plus * (i * p)) * env;
        (psi, dpsi)
    }
}

/// Weak value `⟨ψ_f|Â|ψ_i⟩ / ⟨ψ_f|ψ_i⟩`.
pub fn weak_value<T: Real>(pre: &QubitState<T>, post: &QubitState<T>) -> Result<Complex<T>, QmeterError> {
    let amps = SuperpositionAmplitudes::from_selection(pre, post);
    let overlap = amps.overlap();
    if overlap.norm() <= T::eps_zero() {
        return Err(QmeterError::OrthogonalSelection { overlap: f(overlap.norm()) });
    }
    Ok((amps.alpha - amps.beta) / overlap)
}

/// Exact post-selection probability at displacement `g`; equals `|⟨ψ_f|ψ_i⟩|²` at `g = 0`.
pub fn postselection_probability<T: Real>(
    pre: &QubitState<T>,
    post: &QubitState<T>,
    g: T,
    meter: &MeterParams<T>,
) -> Result<T, QmeterError> {
    meter.check_displacement(g)?;
    Ok(SuperpositionAmplitudes::from_selection(pre, post).success_probability(g, meter))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Cm,
    Rwva,
    Iwva,
}

impl SchemeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeKind::Cm => "cm",
            SchemeKind::Rwva => "rwva",
            SchemeKind::Iwva => "iwva",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            SchemeKind::Cm => 0,
            SchemeKind::Rwva => 1,
            SchemeKind::Iwva => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SchemeKind::Cm),
            1 => Some(SchemeKind::Rwva),
            2 => Some(SchemeKind::Iwva),
            _ => None,
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cm" => Ok(SchemeKind::Cm),
            "rwva" | "wva" => Ok(SchemeKind::Rwva),
            "iwva" => Ok(SchemeKind::Iwva),
            other => Err(format!("unknown scheme '{other}' (expected cm, rwva or iwva)")),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Conventional measurement or a pre/post-selected weak-value scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementScheme<T> {
    kind: SchemeKind,
    selection: Option<(QubitState<T>, QubitState<T>)>,
    weak_value: Complex<T>,
    pf0: T,
}

impl<T: Real> MeasurementScheme<T> {
    pub fn conventional() -> Self {
        Self {
            kind: SchemeKind::Cm,
            selection: None,
            weak_value: Complex::new(T::one(), T::zero()),
            pf0: T::one(),
        }
    }

    /// Classifies the selection by its weak value (purely real or purely imaginary).
    pub fn from_selection(pre: QubitState<T>, post: QubitState<T>) -> Result<Self, QmeterError> {
        let aw = weak_value(&pre, &post)?;
        let tol = T::eps_zero() * aw.norm().max(T::one());
        let kind = if aw.im.abs() <= tol {
            SchemeKind::Rwva
        } else if aw.re.abs() <= tol {
            SchemeKind::Iwva
        } else {
            return Err(QmeterError::WeakValueKind {
                re: f(aw.re),
                im: f(aw.im),
                expected: "purely real or purely imaginary",
            });
        };
        let pf0 = SuperpositionAmplitudes::from_selection(&pre, &post).overlap().norm_sqr();
        Ok(Self { kind, selection: Some((pre, post)), weak_value: aw, pf0 })
    }

    /// Selection whose weak value must be real.
    pub fn real_weak_value(pre: QubitState<T>, post: QubitState<T>) -> Result<Self, QmeterError> {
        let s = Self::from_selection(pre, post);
        match s {
            Ok(s) if s.kind == SchemeKind::Rwva => Ok(s),
            Ok(s) => Err(QmeterError::WeakValueKind {
                re: f(s.weak_value.re),
                im: f(s.weak_value.im),
                expected: "real",
            }),
            Err(e) => Err(e),
        }
    }

    /// Selection whose weak value must be imaginary.
    pub fn imaginary_weak_value(pre: QubitState<T>, post: QubitState<T>) -> Result<Self, QmeterError> {
        let s = Self::from_selection(pre, post);
        match s {
            Ok(s) if s.kind == SchemeKind::Iwva => Ok(s),
            Ok(s) => Err(QmeterError::WeakValueKind {
                re: f(s.weak_value.re),
                im: f(s.weak_value.im),
                expected: "imaginary",
            }),
            Err(e) => Err(e),
        }
    }

    /// The `θ_i = -θ_f = θ`, `φ_i = φ_f = 0` pair; `A_w = 1/cos θ`, `P_f = cos² θ`.
    pub fn symmetric_pair(theta: T) -> Result<Self, QmeterError> {
        let pre = QubitState::from_signed(theta, T::zero())?;
        let post = QubitState::from_signed(-theta, T::zero())?;
        Self::real_weak_value(pre, post)
    }

    pub fn symmetric_pair_degrees(theta_deg: T) -> Result<Self, QmeterError> {
        Self::symmetric_pair(theta_deg.to_radians())
    }

    /// Symmetric pair realizing `P_f = cos² θ` at `g → 0`.
    pub fn for_success_probability(pf: T) -> Result<Self, QmeterError> {
        let pf = pf.max(T::zero()).min(T::one());
        Self::symmetric_pair(pf.sqrt().acos())
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn selection(&self) -> Option<(QubitState<T>, QubitState<T>)> {
        self.selection
    }

    pub fn weak_value(&self) -> Complex<T> {
        self.weak_value
    }

    /// Post-selection probability at `g → 0` (1 for CM).
    pub fn pf0(&self) -> T {
        self.pf0
    }

    pub fn amplitudes(&self) -> SuperpositionAmplitudes<T> {
        match &self.selection {
            None => SuperpositionAmplitudes::conventional(),
            Some((pre, post)) => SuperpositionAmplitudes::from_selection(pre, post),
        }
    }

    /// Exact `P_f(g)`; 1 for CM.
    pub fn success_probability(&self, g: T, meter: &MeterParams<T>) -> T {
        self.amplitudes().success_probability(g, meter)
    }

    /// First-order position shift `g Re(A_w)`.
    pub fn first_order_shift_q(&self, g: T) -> T {
        g * self.weak_value.re
    }

    /// First-order momentum shift `g Im(A_w) / (2σ²)`.
    pub fn first_order_shift_p(&self, g: T, meter: &MeterParams<T>) -> T {
        g * self.weak_value.im / (T::lit(2.0) * meter.sigma() * meter.sigma())
    }
}

fn normalized_pf<T: Real>(
    scheme: &MeasurementScheme<T>,
    g: T,
    meter: &MeterParams<T>,
) -> Result<(SuperpositionAmplitudes<T>, T), QmeterError> {
    meter.check_displacement(g)?;
    let amps = scheme.amplitudes();
    let pf = amps.success_probability(g, meter);
    if !(pf > T::zero()) {
        return Err(QmeterError::OrthogonalSelection { overlap: 0.0 });
    }
    Ok((amps, pf))
}

/// Normalized position density of the final meter at `q`.
pub fn meter_pdf_q<T: Real>(
    scheme: &MeasurementScheme<T>,
    g: T,
    meter: &MeterParams<T>,
    q: T,
) -> Result<T, QmeterError> {
    let (amps, pf) = normalized_pf(scheme, g, meter)?;
    Ok(amps.position_amplitude(g, meter, q).0.norm_sqr() / pf)
}

/// Normalized momentum density of the final meter at `p`.
pub fn meter_pdf_p<T: Real>(
    scheme: &MeasurementScheme<T>,
    g: T,
    meter: &MeterParams<T>,
    p: T,
) -> Result<T, QmeterError> {
    let (amps, pf) = normalized_pf(scheme, g, meter)?;
    Ok(amps.momentum_amplitude(g, meter, p).0.norm_sqr() / pf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::trapezoid;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    #[test]
    fn laboratory_pair_weak_value() {
        let s = MeasurementScheme::<f64>::symmetric_pair_degrees(76.0).unwrap();
        assert_eq!(s.kind(), SchemeKind::Rwva);
        assert!((s.weak_value().re - 4.13).abs() < 5e-3);
        assert!((s.pf0() - 0.0585).abs() < 5e-5);
    }

    #[test]
    fn identical_zero_angle_states_give_unit_weak_value() {
        let z = QubitState::new(0.0, 0.0).unwrap();
        let aw = weak_value(&z, &z).unwrap();
        assert!((aw - Complex::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn imaginary_weak_value_example() {
        // 2-component oracle: |ψ_i⟩ = (1, i)/√2, |ψ_f⟩ = (1, 1)/√2, Â = diag(1, -1)
        let s = 0.5f64.sqrt();
        let pi = [Complex::new(s, 0.0), Complex::new(0.0, s)];
        let pf = [Complex::new(s, 0.0), Complex::new(s, 0.0)];
        let num = pf[0].conj() * pi[0] - pf[1].conj() * pi[1];
        let den = pf[0].conj() * pi[0] + pf[1].conj() * pi[1];
        let oracle = num / den;
        let pre = QubitState::new(deg(90.0), deg(90.0)).unwrap();
        let post = QubitState::new(deg(90.0), 0.0).unwrap();
        let aw = weak_value(&pre, &post).unwrap();
        assert!((aw - oracle).norm() < 1e-14);
        assert!((aw - Complex::new(0.0, -1.0)).norm() < 1e-14);
    }

    #[test]
    fn orthogonal_selection_is_rejected() {
        let pre = QubitState::new(deg(90.0), 0.0).unwrap();
        let post = QubitState::new(deg(90.0), std::f64::consts::PI).unwrap();
        assert!(matches!(weak_value(&pre, &post), Err(QmeterError::OrthogonalSelection { .. })));
        assert!(MeasurementScheme::from_selection(pre, post).is_err());
    }

    #[test]
    fn invalid_inputs() {
        assert!(QubitState::new(4.0, 0.0).is_err());
        assert!(MeterParams::new(0.0, 0.0).is_err());
        let m = MeterParams::<f64>::laboratory();
        let s = QubitState::new(0.3, 0.0).unwrap();
        assert!(postselection_probability(&s, &s, 5.0, &m).is_err());
    }

    #[test]
    fn phi_wraps_into_range() {
        let s = QubitState::new(1.0, -0.5).unwrap();
        assert!((s.phi() - (std::f64::consts::TAU - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn pf_matches_quadrature_at_small_displacement() {
        let m = MeterParams::<f64>::laboratory();
        let s = MeasurementScheme::symmetric_pair_degrees(76.0).unwrap();
        let (pre, post) = s.selection().unwrap();
        let g = 0.1 * m.sigma();
        let amps = s.amplitudes();
        let lo = -10.0 * m.sigma();
        let quad = trapezoid(lo, -lo, 10_000, |q| amps.position_amplitude(g, &m, q).0.norm_sqr());
        let pf = postselection_probability(&pre, &post, g, &m).unwrap();
        assert!((pf - quad).abs() < 1e-9);
    }

    #[test]
    fn cm_density_is_a_pure_shift() {
        let m = MeterParams::new(0.472, 0.3).unwrap();
        let cm = MeasurementScheme::conventional();
        for i in 0..50 {
            let q = -1.0 + 0.05 * i as f64;
            let g = 0.013;
            let shifted = meter_pdf_q(&cm, g, &m, q).unwrap();
            let base = meter_pdf_q(&cm, 0.0, &m, q - g).unwrap();
            assert!((shifted - base).abs() < 1e-12);
        }
        // centred on X0 at g = 0
        let peak = meter_pdf_q(&cm, 0.0, &m, 0.3).unwrap();
        let expect = 1.0 / (0.472 * std::f64::consts::TAU.sqrt());
        assert!((peak - expect).abs() < 1e-12);
    }

    #[test]
    fn single_precision_instantiation() {
        let s = MeasurementScheme::<f32>::symmetric_pair_degrees(76.0).unwrap();
        assert!((s.weak_value().re - 4.13).abs() < 5e-3);
        let m = MeterParams::<f32>::dimensionless();
        let v = meter_pdf_q(&s, 1e-3, &m, 0.1).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }
}
