//! Small dense vector helpers shared across the crate.
//!
//! Everything operates on `&[f64]` slices; dimensions are the caller's
//! responsibility except where noted. Reductions run left-to-right so that
//! results are bitwise reproducible.

use alloc::vec::Vec;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(norm_sq(a))
}

pub fn norm1(a: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in a {
        acc += libm::fabs(*x);
    }
    acc
}

pub fn norm_inf(a: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in a {
        let v = libm::fabs(*x);
        if v > acc {
            acc = v;
        }
    }
    acc
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

/// `y += c * x` in place.
pub fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Componentwise clamp onto `[0, 1]^d`.
pub fn clamp_unit_box(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

pub fn in_unit_box(x: &[f64], tol: f64) -> bool {
    x.iter().all(|&v| v >= -tol && v <= 1.0 + tol)
}

/// Least-squares slope of `y` against `x`.
///
/// Used by the theory checks to fit log-log decay rates.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
    }
    sxy / sxx
}
