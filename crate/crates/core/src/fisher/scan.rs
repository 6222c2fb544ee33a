//! Best achievable ideal-detector information at a fixed post-selection rate.
//!
//! For a pre/post-selection with amplitudes `(α, β)` the unnormalized meter
//! density after post-selection is `u(q) = |αΦ₀(q-g) + βΦ₀(q+g)|²` (or its
//! momentum-space counterpart). Counting the post-selected photons of a
//! Poisson source with an ideal detector gives `∫ (∂_g u)² / u` per input
//! photon, which for `P_f = 1` reduces to `1/σ²`.
//!
//! Real weak values need `ᾱβ` real, so the relative phase is 0 or π and only
//! the two polar angles remain. Imaginary weak values need `|α| = |β|`, which
//! fixes `θ_f = π - θ_i`, and the phase is then set by the `P_f` constraint.
//! Either way one angle is left free; it is scanned on a grid and refined by
//! golden-section search.

use num_complex::Complex64;
use serde::Serialize;

use crate::optimize::golden_section_minimize;
use crate::qmeter::{MeterParams, SchemeKind};

use super::{qfi_cm, FisherError};

/// Quadrature and search resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanSettings {
    pub nodes: usize,
    pub coarse: usize,
    pub tol: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self { nodes: 3001, coarse: 241, tol: 1e-10 }
    }
}

/// Optimum found for one target `P_f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioPoint {
    pub pf: f64,
    /// `F / Q_CM`.
    pub ratio: f64,
    pub theta_i: f64,
    pub theta_f: f64,
    /// Relative phase `φ_i - φ_f` of the optimal selection.
    pub phase: f64,
}

/// Meter basis functions on a quadrature grid: the two displaced branches and
/// their `g`-derivatives, with trapezoid weights folded in.
struct Basis {
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    da: Vec<Complex64>,
    db: Vec<Complex64>,
    w: Vec<f64>,
}

impl Basis {
    fn new(kind: SchemeKind, g: f64, meter: &MeterParams<f64>, nodes: usize) -> Self {
        let sigma = meter.sigma();
        let half = match kind {
            SchemeKind::Iwva => 6.0 / sigma,
            _ => 10.0 * sigma + g.abs(),
        };
        let h = 2.0 * half / (nodes - 1) as f64;
        let mut basis = Basis {
            a: Vec::with_capacity(nodes),
            b: Vec::with_capacity(nodes),
            da: Vec::with_capacity(nodes),
            db: Vec::with_capacity(nodes),
            w: Vec::with_capacity(nodes),
        };
        let two_s2 = 2.0 * sigma * sigma;
        let i = Complex64::new(0.0, 1.0);
        for n in 0..nodes {
            let x = -half + n as f64 * h;
            let (a, b, da, db) = match kind {
                SchemeKind::Iwva => {
                    let env = meter.amplitude_p(x);
                    let a = Complex64::from_polar(env, -g * x);
                    let b = Complex64::from_polar(env, g * x);
                    (a, b, -i * x * a, i * x * b)
                }
                _ => {
                    let a = meter.amplitude_q(x - g);
                    let b = meter.amplitude_q(x + g);
                    (
                        Complex64::from(a),
                        Complex64::from(b),
                        Complex64::from(a * (x - g) / two_s2),
                        Complex64::from(-b * (x + g) / two_s2),
                    )
                }
            };
            basis.a.push(a);
            basis.b.push(b);
            basis.da.push(da);
            basis.db.push(db);
            basis.w.push(if n == 0 || n == nodes - 1 { 0.5 * h } else { h });
        }
        basis
    }

    /// `∫ (∂_g u)² / u` for amplitudes `(α, β)`.
    fn fisher(&self, alpha: Complex64, beta: Complex64) -> f64 {
        let mut acc = 0.0;
        for n in 0..self.w.len() {
            let psi = alpha * self.a[n] + beta * self.b[n];
            let dpsi = alpha * self.da[n] + beta * self.db[n];
            let u = psi.norm_sqr();
            if u > 1e-300 {
                let du = 2.0 * (psi.conj() * dpsi).re;
                acc += self.w[n] * du * du / u;
            }
        }
        acc
    }
}

fn amplitudes(theta_i: f64, theta_f: f64, phase: f64) -> (Complex64, Complex64) {
    let alpha = Complex64::from((0.5 * theta_f).cos() * (0.5 * theta_i).cos());
    let beta = Complex64::from_polar((0.5 * theta_f).sin() * (0.5 * theta_i).sin(), phase);
    (alpha, beta)
}

/// Ideal-detector information per input photon (mm⁻²) for the selection
/// `(θ_i, θ_f, φ_i - φ_f)`, read out in position (`Rwva`/`Cm`) or momentum (`Iwva`).
pub fn ideal_fisher_per_photon(
    kind: SchemeKind,
    g: f64,
    meter: &MeterParams<f64>,
    theta_i: f64,
    theta_f: f64,
    phase: f64,
    nodes: usize,
) -> f64 {
    let (alpha, beta) = amplitudes(theta_i, theta_f, phase);
    Basis::new(kind, g, meter, nodes.max(3)).fisher(alpha, beta)
}

/// Candidate selection evaluated during the search.
#[derive(Clone, Copy)]
struct Candidate {
    fisher: f64,
    theta_i: f64,
    theta_f: f64,
    phase: f64,
}

/// Real weak value: `θ_i = 2x`; both phase signs and both roots for `θ_f`.
fn rwva_candidates(basis: &Basis, pf: f64, e: f64, x: f64) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for phase in [0.0, std::f64::consts::PI] {
        let s = phase.cos();
        // P_f(y) = 1/2 + (R/2) cos(2y - φ0)
        let (c2, s2) = ((2.0 * x).cos(), s * e * (2.0 * x).sin());
        let r = c2.hypot(s2);
        if r == 0.0 {
            continue;
        }
        let c = (2.0 * pf - 1.0) / r;
        if c.abs() > 1.0 + 1e-12 {
            continue;
        }
        let phi0 = s2.atan2(c2);
        let d = c.clamp(-1.0, 1.0).acos();
        for u in [phi0 + d, phi0 - d] {
            let u = u.rem_euclid(std::f64::consts::TAU);
            if u > std::f64::consts::PI + 1e-12 {
                continue;
            }
            let theta_f = u.min(std::f64::consts::PI);
            let theta_i = 2.0 * x;
            let (alpha, beta) = amplitudes(theta_i, theta_f, phase);
            let fisher = basis.fisher(alpha, beta);
            if best.is_none_or(|b| fisher > b.fisher) {
                best = Some(Candidate { fisher, theta_i, theta_f, phase });
            }
        }
    }
    best
}

/// Imaginary weak value: `θ_f = π - θ_i`, phase from the `P_f` constraint.
fn iwva_candidate(basis: &Basis, pf: f64, e: f64, theta_i: f64) -> Option<Candidate> {
    let a2 = 0.25 * theta_i.sin().powi(2);
    if a2 <= 0.0 {
        return None;
    }
    let c = (pf / (2.0 * a2) - 1.0) / e;
    if c.abs() > 1.0 + 1e-12 {
        return None;
    }
    let phase = c.clamp(-1.0, 1.0).acos();
    let theta_f = std::f64::consts::PI - theta_i;
    let (alpha, beta) = amplitudes(theta_i, theta_f, phase);
    Some(Candidate { fisher: basis.fisher(alpha, beta), theta_i, theta_f, phase })
}

fn best_selection(
    kind: SchemeKind,
    basis: &Basis,
    pf: f64,
    e: f64,
    settings: &ScanSettings,
) -> Option<Candidate> {
    // free angle range
    let (lo, hi) = match kind {
        SchemeKind::Iwva => (0.0, 0.5 * std::f64::consts::PI),
        _ => (0.0, 0.5 * std::f64::consts::PI),
    };
    let eval = |t: f64| match kind {
        SchemeKind::Iwva => iwva_candidate(basis, pf, e, t),
        _ => rwva_candidates(basis, pf, e, t),
    };
    let n = settings.coarse.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let mut best: Option<(usize, Candidate)> = None;
    for i in 0..n {
        if let Some(c) = eval(lo + i as f64 * step) {
            if best.is_none_or(|(_, b)| c.fisher > b.fisher) {
                best = Some((i, c));
            }
        }
    }
    let (i, coarse) = best?;
    let a = lo + i.saturating_sub(1) as f64 * step;
    let b = (lo + (i + 1) as f64 * step).min(hi);
    let m = golden_section_minimize(|t| eval(t).map_or(f64::INFINITY, |c| -c.fisher), a, b, settings.tol, 200);
    match eval(m.x) {
        Some(c) if c.fisher >= coarse.fisher => Some(c),
        _ => Some(coarse),
    }
}

/// Maximal ideal-detector `F / Q_CM` over real (`Rwva`) or imaginary (`Iwva`)
/// weak-value selections at each target success probability.
pub fn ideal_fi_ratio_scan(
    kind: SchemeKind,
    g: f64,
    meter: &MeterParams<f64>,
    pf_grid: &[f64],
    settings: &ScanSettings,
) -> Result<Vec<RatioPoint>, FisherError> {
    if kind == SchemeKind::Cm {
        return Err(FisherError::InvalidScan("the scan needs a weak-value scheme".into()));
    }
    meter.check_displacement(g)?;
    if settings.nodes < 3 {
        return Err(FisherError::InvalidScan("at least three quadrature nodes".into()));
    }
    let basis = Basis::new(kind, g, meter, settings.nodes);
    let e = meter.branch_overlap(g);
    let q = qfi_cm(meter);
    pf_grid
        .iter()
        .map(|&pf| {
            if !(pf > 0.0 && pf <= 1.0) {
                return Err(FisherError::InfeasiblePf { kind, pf });
            }
            let c = best_selection(kind, &basis, pf, e, settings).ok_or(FisherError::InfeasiblePf { kind, pf })?;
            Ok(RatioPoint { pf, ratio: c.fisher / q, theta_i: c.theta_i, theta_f: c.theta_f, phase: c.phase })
        })
        .collect()
}
