//! Bracketed one-dimensional minimization.

use crate::scalar::Real;

/// Outcome of a bracketed scalar search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum<T> {
    pub x: T,
    pub fx: T,
    pub evaluations: usize,
}

/// Brent's method (golden section with parabolic interpolation) on `[a, b]`.
///
/// Terminates when the bracket around the current best point is narrower than
/// `2 * tol` (absolute), or after `max_iter` iterations.
pub fn brent_minimize<T: Real>(
    mut f: impl FnMut(T) -> T,
    a: T,
    b: T,
    tol: T,
    max_iter: usize,
) -> Minimum<T> {
    let golden = T::lit(0.381_966_011_250_105_2);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let eps = T::epsilon().sqrt();

    let (mut lo, mut hi) = if a < b { (a, b) } else { (b, a) };
    let mut x = lo + golden * (hi - lo);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut evaluations = 1;
    let mut d = T::zero();
    let mut e = T::zero();

    for _ in 0..max_iter {
        let mid = half * (lo + hi);
        let tol1 = eps * x.abs() + tol / T::lit(3.0);
        let tol2 = two * tol1;
        if (x - mid).abs() <= tol2 - half * (hi - lo) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = two * (q - r);
            if q > T::zero() {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (half * q * e_prev).abs() && p > q * (lo - x) && p < q * (hi - x) {
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if mid >= x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x >= mid { lo - x } else { hi - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > T::zero() {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        evaluations += 1;
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Minimum { x, fx, evaluations }
}

/// Plain golden-section search on `[a, b]`.
pub fn golden_section_minimize<T: Real>(
    mut f: impl FnMut(T) -> T,
    a: T,
    b: T,
    tol: T,
    max_iter: usize,
) -> Minimum<T> {
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let (mut lo, mut hi) = if a < b { (a, b) } else { (b, a) };
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut evaluations = 2;
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
        evaluations += 1;
    }
    if f1 <= f2 {
        Minimum { x: x1, fx: f1, evaluations }
    } else {
        Minimum { x: x2, fx: f2, evaluations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_quadratic_minimum() {
        let m = brent_minimize(|x: f64| (x - 0.3).powi(2) + 1.0, -1.0, 2.0, 1e-10, 200);
        assert!((m.x - 0.3).abs() < 1e-8);
        assert!(m.evaluations < 40, "evaluations={}", m.evaluations);
    }

    #[test]
    fn brent_handles_minimum_at_edge() {
        let m = brent_minimize(|x: f64| x, 0.0, 1.0, 1e-9, 200);
        assert!(m.x < 1e-8);
    }

    #[test]
    fn brent_works_in_single_precision() {
        let m = brent_minimize(|x: f32| (x + 1.25).powi(2), -4.0, 4.0, 1e-4, 200);
        assert!((m.x + 1.25).abs() < 1e-3);
    }

    #[test]
    fn golden_section_non_smooth() {
        let m = golden_section_minimize(|x: f64| (x - 0.7).abs(), 0.0, 1.0, 1e-9, 200);
        assert!((m.x - 0.7).abs() < 1e-8);
    }
}
