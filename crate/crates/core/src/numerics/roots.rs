//! Bracketing root finders and sign-change scanning.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bisection on a bracketing interval. Returns `None` when `f(lo)` and
/// `f(hi)` have the same strict sign.
pub fn bisect<T, F>(mut f: F, mut lo: T, mut hi: T, tol: T) -> Option<T>
where
    T: Scalar,
    F: FnMut(T) -> T,
{
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == T::zero() {
        return Some(lo);
    }
    if f_hi == T::zero() {
        return Some(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return None;
    }
    let two = T::lit(2.0);
    // bisection halves the bracket, so the iteration count is bounded by
    // the ratio of the bracket to tol; 200 covers every finite case in f64
    for _ in 0..200 {
        let mid = (lo + hi) / two;
        if hi - lo <= tol || mid == lo || mid == hi {
            return Some(mid);
        }
        let f_mid = f(mid);
        if f_mid == T::zero() {
            return Some(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Some((lo + hi) / two)
}

/// Brent's method (inverse quadratic interpolation with bisection fallback).
pub fn brent<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if !(fa.is_finite() && fb.is_finite()) {
        return Err(Error::Calibration(format!(
            "non-finite function value at bracket [{lo}, {hi}]"
        )));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Calibration(format!(
            "root not bracketed: f({lo})={fa:e}, f({hi})={fb:e}"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(Error::Calibration(format!(
        "Brent did not converge in {max_iter} iterations"
    )))
}

/// Outcome of scanning a sampled curve for its first return to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing<T> {
    /// `|value|` never exceeded the departure tolerance.
    NeverDeparts,
    /// Departed with the given sign and never came back across zero.
    NoReturn { departure_sign: T },
    /// Sign change between `ts[index - 1]` and `ts[index]`.
    Bracket {
        lo: T,
        hi: T,
        index: usize,
        departure_sign: T,
    },
}

/// Finds the first sign change of a sampled curve after it has departed from
/// zero by more than `tol`.
///
/// When `direction` is given, only a departure with that sign counts; values
/// on the other side before departure are ignored.
pub fn first_crossing_after_departure<T: Scalar>(
    ts: &[T],
    values: &[T],
    tol: T,
    direction: Option<T>,
) -> Crossing<T> {
    assert_eq!(ts.len(), values.len());
    let departed = values.iter().position(|&v| match direction {
        Some(s) => v * s > tol,
        None => v.abs() > tol,
    });
    let Some(start) = departed else {
        return Crossing::NeverDeparts;
    };
    let sign = direction.unwrap_or_else(|| values[start].signum());
    for k in (start + 1)..values.len() {
        if values[k] * sign <= T::zero() {
            return Crossing::Bracket {
                lo: ts[k - 1],
                hi: ts[k],
                index: k,
                departure_sign: sign,
            };
        }
    }
    Crossing::NoReturn {
        departure_sign: sign,
    }
}
