//! Closed-form ground truth for isotropic Gaussian mixtures.
//!
//! For a mixture with component standard deviations `std_k`, corrupting with
//! `N(0, sigma^2 I)` noise yields another mixture with per-component variance
//! `std_k^2 + sigma^2` (Gaussian-convolution closure). The smoothed
//! log-density, the exact score and its Jacobian, the posterior-mean
//! denoiser, and the expected reconstruction error all follow in closed
//! form, which is what makes this module the independent oracle for the
//! rest of the crate.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::field::ScoreField;
use crate::linalg;
use crate::rng;

/// Isotropic Gaussian mixture: `sum_k w_k N(mu_k, std_k^2 I)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GmmSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GmmError {
    InvalidSpec(&'static str),
    NonFiniteInput,
    InvalidSigma,
    DimTooLarge { dim: usize },
}

impl fmt::Display for GmmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GmmError::InvalidSpec(why) => write!(f, "invalid mixture spec: {why}"),
            GmmError::NonFiniteInput => write!(f, "input vector has non-finite entries"),
            GmmError::InvalidSigma => write!(f, "noise scale must be positive"),
            GmmError::DimTooLarge { dim } => {
                write!(f, "grid search supports dimension <= 2, got {dim}")
            }
        }
    }
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self, GmmError> {
        let spec = GmmSpec { weights, means, stds };
        spec.validate()?;
        Ok(spec)
    }

    pub fn single(mean: Vec<f64>, std: f64) -> Self {
        GmmSpec {
            weights: vec![1.0],
            means: vec![mean],
            stds: vec![std],
        }
    }

    pub fn validate(&self) -> Result<(), GmmError> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.stds.len() != k {
            return Err(GmmError::InvalidSpec("component counts disagree"));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(GmmError::InvalidSpec("mean dimensions disagree"));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(GmmError::InvalidSpec("weights must be positive"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(GmmError::InvalidSpec("weights must sum to 1 within 1e-12"));
        }
        if self.stds.iter().any(|&s| !(s > 0.0)) {
            return Err(GmmError::InvalidSpec("stds must be positive"));
        }
        if self.means.iter().any(|m| !linalg::all_finite(m)) {
            return Err(GmmError::InvalidSpec("means must be finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Per-component log joint `ln w_k + ln N(y; mu_k, (std_k^2 + sigma^2) I)`.
    fn component_log_terms(&self, y: &[f64], sigma: f64, out: &mut Vec<f64>) {
        let d = self.dim() as f64;
        out.clear();
        for k in 0..self.components() {
            let var = self.stds[k] * self.stds[k] + sigma * sigma;
            let mut sq = 0.0;
            for (yi, mi) in y.iter().zip(&self.means[k]) {
                let diff = yi - mi;
                sq += diff * diff;
            }
            let term = libm::log(self.weights[k])
                - 0.5 * d * libm::log(2.0 * core::f64::consts::PI * var)
                - 0.5 * sq / var;
            out.push(term);
        }
    }

    fn log_density_raw(&self, y: &[f64], sigma: f64) -> f64 {
        let mut terms = Vec::with_capacity(self.components());
        self.component_log_terms(y, sigma, &mut terms);
        log_sum_exp(&terms)
    }

    /// Posterior responsibilities of the smoothed mixture at `y`.
    fn responsibilities(&self, y: &[f64], sigma: f64, out: &mut Vec<f64>) {
        self.component_log_terms(y, sigma, out);
        let lse = log_sum_exp(out);
        for t in out.iter_mut() {
            *t = libm::exp(*t - lse);
        }
    }

    fn score_raw(&self, y: &[f64], sigma: f64) -> Vec<f64> {
        let mut resp = Vec::with_capacity(self.components());
        self.responsibilities(y, sigma, &mut resp);
        let mut s = vec![0.0; self.dim()];
        for k in 0..self.components() {
            let var = self.stds[k] * self.stds[k] + sigma * sigma;
            let c = resp[k] / var;
            for (si, (mi, yi)) in s.iter_mut().zip(self.means[k].iter().zip(y)) {
                *si += c * (mi - yi);
            }
        }
        s
    }

    /// Draw `n` samples, component by weight then isotropic Gaussian.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut cdf = Vec::with_capacity(self.components());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let base = (i as u64) * (d as u64 + 1);
            let u = rng::stream_open01(seed, 2 * base);
            let k = cdf.iter().position(|&c| u <= c).unwrap_or(self.components() - 1);
            let mut x = self.means[k].clone();
            for (j, xj) in x.iter_mut().enumerate() {
                *xj += self.stds[k] * rng::stream_normal(seed, base + 1 + j as u64);
            }
            out.push(x);
        }
        out
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    let mut acc = 0.0;
    for t in terms {
        acc += libm::exp(t - m);
    }
    m + libm::log(acc)
}

/// `log p_{Y_sigma}(y)`: the mixture smoothed by `N(0, sigma^2 I)`.
pub fn smoothed_log_density(spec: &GmmSpec, y: &[f64], sigma: f64) -> Result<f64, GmmError> {
    if !linalg::all_finite(y) {
        return Err(GmmError::NonFiniteInput);
    }
    if sigma < 0.0 {
        return Err(GmmError::InvalidSigma);
    }
    Ok(spec.log_density_raw(y, sigma))
}

/// Exact score `grad_y log p_{Y_sigma}(y)`.
pub fn exact_score(spec: &GmmSpec, y: &[f64], sigma: f64) -> Result<Vec<f64>, GmmError> {
    if !linalg::all_finite(y) {
        return Err(GmmError::NonFiniteInput);
    }
    if sigma < 0.0 {
        return Err(GmmError::InvalidSigma);
    }
    Ok(spec.score_raw(y, sigma))
}

/// Jacobian of the exact score (the Hessian of the smoothed log-density),
/// row-major `d x d`.
pub fn exact_score_jacobian(spec: &GmmSpec, y: &[f64], sigma: f64) -> Vec<f64> {
    let d = spec.dim();
    let mut resp = Vec::with_capacity(spec.components());
    spec.responsibilities(y, sigma, &mut resp);
    let s = spec.score_raw(y, sigma);
    let mut h = vec![0.0; d * d];
    for k in 0..spec.components() {
        let var = spec.stds[k] * spec.stds[k] + sigma * sigma;
        let mut u = vec![0.0; d];
        for (ui, (mi, yi)) in u.iter_mut().zip(spec.means[k].iter().zip(y)) {
            *ui = (mi - yi) / var;
        }
        for i in 0..d {
            for j in 0..d {
                h[i * d + j] += resp[k] * u[i] * u[j];
            }
            h[i * d + i] -= resp[k] / var;
        }
    }
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] -= s[i] * s[j];
        }
    }
    h
}

/// Trace of the score Jacobian, `tr(grad_y s(y; sigma))`.
pub fn exact_score_jacobian_trace(spec: &GmmSpec, y: &[f64], sigma: f64) -> f64 {
    let d = spec.dim();
    let h = exact_score_jacobian(spec, y, sigma);
    (0..d).map(|i| h[i * d + i]).sum()
}

/// Posterior-mean denoiser `y + sigma^2 s(y; sigma)`.
pub fn tweedie_denoiser(spec: &GmmSpec, y: &[f64], sigma: f64) -> Result<Vec<f64>, GmmError> {
    if sigma <= 0.0 {
        return Err(GmmError::InvalidSigma);
    }
    let s = exact_score(spec, y, sigma)?;
    let mut out = y.to_vec();
    linalg::axpy(&mut out, sigma * sigma, &s);
    Ok(out)
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EreEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte Carlo estimate of the expected reconstruction error
/// `R(x; sigma) = E ||Xi + sigma s(x + sigma Xi; sigma)||^2`
/// using the exact mixture score. Deterministic for a fixed seed.
pub fn exact_ere(
    spec: &GmmSpec,
    x: &[f64],
    sigma: f64,
    n_mc: usize,
    seed: u64,
) -> Result<EreEstimate, GmmError> {
    if sigma <= 0.0 {
        return Err(GmmError::InvalidSigma);
    }
    if !linalg::all_finite(x) {
        return Err(GmmError::NonFiniteInput);
    }
    let d = spec.dim();
    let mut xi = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..n_mc {
        rng::fill_normal(seed, (i as u64) * d as u64, &mut xi);
        for j in 0..d {
            y[j] = x[j] + sigma * xi[j];
        }
        let s = spec.score_raw(&y, sigma);
        let mut r = 0.0;
        for j in 0..d {
            let t = xi[j] + sigma * s[j];
            r += t * t;
        }
        sum += r;
        sum_sq += r * r;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(EreEstimate {
        mean,
        std_err: libm::sqrt(var / n),
    })
}

/// Closed-form `R(x; sigma)` for a single-component mixture:
/// `d (std^2/(std^2+sigma^2))^2 + sigma^2 ||x - mu||^2 / (std^2+sigma^2)^2`.
///
/// Returns `None` when the mixture has more than one component.
pub fn ere_closed_form_single(spec: &GmmSpec, x: &[f64], sigma: f64) -> Option<f64> {
    if spec.components() != 1 {
        return None;
    }
    let d = spec.dim() as f64;
    let v = spec.stds[0] * spec.stds[0] + sigma * sigma;
    let shrink = spec.stds[0] * spec.stds[0] / v;
    let diff = linalg::sub(x, &spec.means[0]);
    Some(d * shrink * shrink + sigma * sigma * linalg::norm_sq(&diff) / (v * v))
}

/// Gauss–Hermite nodes and weights for `integral f(t) exp(-t^2) dt`.
///
/// Newton refinement of the orthonormal Hermite recurrence; nodes come out
/// in increasing order.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => {
                let nf = n as f64;
                libm::sqrt(2.0 * nf + 1.0) - 1.85575 * libm::pow(2.0 * nf + 1.0, -1.0 / 6.0)
            }
            1 => z - 1.14 * libm::pow(n as f64, 0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[n - 1],
            3 => 1.91 * z - 0.91 * nodes[n - 2],
            _ => 2.0 * z - nodes[n - i + 1],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = libm::pow(core::f64::consts::PI, -0.25);
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * libm::sqrt(2.0 / j as f64) * p2
                    - libm::sqrt((j as f64 - 1.0) / j as f64) * p3;
            }
            pp = libm::sqrt(2.0 * n as f64) * p2;
            let dz = p1 / pp;
            z -= dz;
            if libm::fabs(dz) < 1e-14 {
                break;
            }
        }
        nodes[n - 1 - i] = z;
        nodes[i] = -z;
        weights[n - 1 - i] = 2.0 / (pp * pp);
        weights[i] = weights[n - 1 - i];
    }
    (nodes, weights)
}

/// Quadrature evaluation of `R(x; sigma)` in one dimension, the cross-check
/// route for the Monte Carlo oracle.
pub fn ere_quadrature_1d(spec: &GmmSpec, x: f64, sigma: f64, n_nodes: usize) -> Result<f64, GmmError> {
    if spec.dim() != 1 {
        return Err(GmmError::DimTooLarge { dim: spec.dim() });
    }
    if sigma <= 0.0 {
        return Err(GmmError::InvalidSigma);
    }
    let (nodes, weights) = gauss_hermite(n_nodes);
    let mut acc = 0.0;
    let sqrt2 = libm::sqrt(2.0);
    for (t, w) in nodes.iter().zip(&weights) {
        let xi = sqrt2 * t;
        let y = [x + sigma * xi];
        let s = spec.score_raw(&y, sigma);
        let r = xi + sigma * s[0];
        acc += w * r * r;
    }
    Ok(acc / libm::sqrt(core::f64::consts::PI))
}

/// Brute-force maximizer of the smoothed log-density over an axis-aligned
/// box, `resolution` points per axis. Restricted to `d <= 2`.
pub fn grid_argmax(
    spec: &GmmSpec,
    sigma: f64,
    lo: &[f64],
    hi: &[f64],
    resolution: usize,
) -> Result<Vec<f64>, GmmError> {
    let d = spec.dim();
    if d > 2 {
        return Err(GmmError::DimTooLarge { dim: d });
    }
    if lo.len() != d || hi.len() != d || resolution < 2 {
        return Err(GmmError::InvalidSpec("grid bounds do not match dimension"));
    }
    let coord = |axis: usize, i: usize| {
        lo[axis] + (hi[axis] - lo[axis]) * i as f64 / (resolution - 1) as f64
    };
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0.0; d];
    if d == 1 {
        for i in 0..resolution {
            let y = [coord(0, i)];
            let v = spec.log_density_raw(&y, sigma);
            if v > best {
                best = v;
                arg[0] = y[0];
            }
        }
    } else {
        for i in 0..resolution {
            for j in 0..resolution {
                let y = [coord(0, i), coord(1, j)];
                let v = spec.log_density_raw(&y, sigma);
                if v > best {
                    best = v;
                    arg.copy_from_slice(&y);
                }
            }
        }
    }
    Ok(arg)
}

/// The mixture's exact score as a [`ScoreField`]: the oracle adapter that
/// stands in for a trained network in tests and fixtures.
#[derive(Debug, Clone)]
pub struct GmmScore<'a> {
    spec: &'a GmmSpec,
}

impl<'a> GmmScore<'a> {
    pub fn new(spec: &'a GmmSpec) -> Self {
        GmmScore { spec }
    }
}

impl ScoreField for GmmScore<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        self.spec.score_raw(x, sigma)
    }

    fn score_vjp(&self, x: &[f64], sigma: f64, v: &[f64]) -> Vec<f64> {
        // The Jacobian is symmetric (Hessian of a scalar), so J^T v = J v.
        let d = self.spec.dim();
        let h = exact_score_jacobian(self.spec, x, sigma);
        let mut out = vec![0.0; d];
        for i in 0..d {
            out[i] = linalg::dot(&h[i * d..(i + 1) * d], v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_1d(mean: f64, std: f64) -> GmmSpec {
        GmmSpec::single(vec![mean], std)
    }

    fn two_mode_1d() -> GmmSpec {
        GmmSpec::new(
            vec![0.5, 0.5],
            vec![vec![0.25], vec![0.75]],
            vec![0.1, 0.1],
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_peak_log_density() {
        let spec = single_1d(0.0, 1.0);
        let v = smoothed_log_density(&spec, &[0.0], 0.0).unwrap();
        assert!((v - (-0.9189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn unit_noise_on_unit_gaussian() {
        // Variances add: std^2 + sigma^2 = 2, so the peak is log(1/sqrt(4 pi)).
        let spec = single_1d(0.0, 1.0);
        let v = smoothed_log_density(&spec, &[0.0], 1.0).unwrap();
        let expected = -0.5 * libm::log(4.0 * core::f64::consts::PI);
        assert!((v - expected).abs() < 1e-12);
        assert!((expected - (-1.2655121234846454)).abs() < 1e-6);
    }

    #[test]
    fn zero_noise_identity_on_grid() {
        let spec = two_mode_1d();
        for i in 0..100 {
            let y = [i as f64 / 99.0];
            let a = smoothed_log_density(&spec, &y, 0.0).unwrap();
            let b = spec.log_density_raw(&y, 0.0);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_closure_on_grid() {
        // Smoothing by sigma equals a plain mixture with stds' = sqrt(std^2 + sigma^2).
        let spec = two_mode_1d();
        let sigma = 0.17;
        let widened = GmmSpec::new(
            spec.weights.clone(),
            spec.means.clone(),
            spec.stds
                .iter()
                .map(|s| libm::sqrt(s * s + sigma * sigma))
                .collect(),
        )
        .unwrap();
        for i in 0..200 {
            let y = [-0.5 + 2.0 * i as f64 / 199.0];
            let a = smoothed_log_density(&spec, &y, sigma).unwrap();
            let b = smoothed_log_density(&widened, &y, 0.0).unwrap();
            assert!((a - b).abs() < 1e-12, "at {}: {} vs {}", y[0], a, b);
        }
    }

    #[test]
    fn score_vanishes_at_single_mode() {
        let spec = single_1d(0.5, 0.1);
        let s = exact_score(&spec, &[0.5], 0.1).unwrap();
        assert!(s[0].abs() < 1e-12);
    }

    #[test]
    fn score_single_component_closed_form() {
        let spec = single_1d(0.5, 0.1);
        let s = exact_score(&spec, &[0.6], 0.1).unwrap();
        assert!((s[0] - (-5.0)).abs() < 1e-12, "{}", s[0]);
    }

    #[test]
    fn score_matches_density_finite_differences() {
        let spec = GmmSpec::new(
            vec![0.3, 0.7],
            vec![vec![0.2, 0.8], vec![0.7, 0.3]],
            vec![0.15, 0.25],
        )
        .unwrap();
        let sigma = 0.2;
        let h = 1e-6;
        for trial in 0..20 {
            let y = [
                crate::rng::stream_open01(55, 2 * trial),
                crate::rng::stream_open01(55, 2 * trial + 1),
            ];
            let s = exact_score(&spec, &y, sigma).unwrap();
            for j in 0..2 {
                let mut yp = y;
                yp[j] += h;
                let fp = smoothed_log_density(&spec, &yp, sigma).unwrap();
                yp[j] = y[j] - h;
                let fm = smoothed_log_density(&spec, &yp, sigma).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let rel = (s[j] - fd).abs() / fd.abs().max(1e-9);
                assert!(rel < 1e-6, "trial {trial} dim {j}: {} vs {}", s[j], fd);
            }
        }
    }

    #[test]
    fn jacobian_matches_score_finite_differences() {
        let spec =
            GmmSpec::new(vec![0.4, 0.6], vec![vec![0.3], vec![0.7]], vec![0.1, 0.2]).unwrap();
        let sigma = 0.15;
        let h = 1e-6;
        for i in 0..10 {
            let y = [0.1 + 0.08 * i as f64];
            let jac = exact_score_jacobian(&spec, &y, sigma);
            let sp = exact_score(&spec, &[y[0] + h], sigma).unwrap();
            let sm = exact_score(&spec, &[y[0] - h], sigma).unwrap();
            let fd = (sp[0] - sm[0]) / (2.0 * h);
            assert!((jac[0] - fd).abs() < 1e-5, "at {}: {} vs {}", y[0], jac[0], fd);
        }
    }

    #[test]
    fn ere_closed_form_examples() {
        let spec = single_1d(0.5, 0.1);
        let at_mode = ere_closed_form_single(&spec, &[0.5], 0.1).unwrap();
        assert!((at_mode - 0.25).abs() < 1e-12);
        let off_mode = ere_closed_form_single(&spec, &[0.6], 0.1).unwrap();
        assert!((off_mode - 0.50).abs() < 1e-12);
    }

    #[test]
    fn ere_monte_carlo_matches_closed_form() {
        let spec = single_1d(0.5, 0.1);
        for (x, expected) in [(0.5, 0.25), (0.6, 0.50)] {
            let est = exact_ere(&spec, &[x], 0.1, 1_000_000, 2024).unwrap();
            assert!(
                (est.mean - expected).abs() < 3.0 * est.std_err,
                "x={x}: {} vs {expected} (se {})",
                est.mean,
                est.std_err
            );
        }
    }

    #[test]
    fn ere_quadrature_matches_closed_form() {
        let spec = single_1d(0.5, 0.1);
        for x in [0.4, 0.5, 0.65] {
            let q = ere_quadrature_1d(&spec, x, 0.1, 128).unwrap();
            let c = ere_closed_form_single(&spec, &[x], 0.1).unwrap();
            assert!((q - c).abs() < 1e-9, "x={x}: {q} vs {c}");
        }
        // And on a mixture, quadrature vs Monte Carlo.
        let spec = two_mode_1d();
        let q = ere_quadrature_1d(&spec, 0.4, 0.1, 128).unwrap();
        let est = exact_ere(&spec, &[0.4], 0.1, 400_000, 7).unwrap();
        assert!((q - est.mean).abs() < 3.0 * est.std_err, "{q} vs {}", est.mean);
    }

    #[test]
    fn average_ere_over_data_is_at_most_dimension() {
        // E_X[R(X; sigma)] <= d, checked by sampling X from the mixture.
        let spec = GmmSpec::new(
            vec![0.5, 0.5],
            vec![vec![0.3, 0.3], vec![0.7, 0.7]],
            vec![0.05, 0.05],
        )
        .unwrap();
        let sigma = 0.1;
        let xs = spec.sample(400, 99);
        let mut means = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            let est = exact_ere(&spec, x, sigma, 2_000, 1000 + i as u64).unwrap();
            means.push(est.mean);
        }
        let n = means.len() as f64;
        let mean = means.iter().sum::<f64>() / n;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
        let se = libm::sqrt(var / n);
        let d = spec.dim() as f64;
        assert!(mean <= d + 3.0 * se, "E[R] = {mean} exceeds d = {d} (se {se})");
    }

    #[test]
    fn tweedie_shrinks_toward_mode() {
        let spec = single_1d(0.0, 1.0);
        let den = tweedie_denoiser(&spec, &[2.0], 1.0).unwrap();
        assert!((den[0] - 1.0).abs() < 1e-12);
        let at_mode = tweedie_denoiser(&spec, &[0.0], 0.7).unwrap();
        assert!(at_mode[0].abs() < 1e-12);
    }

    #[test]
    fn tweedie_beats_identity_estimator() {
        // MMSE property over joint samples (X, Y_sigma).
        let spec = two_mode_1d();
        let sigma = 0.15;
        let n = 100_000;
        let xs = spec.sample(n, 5);
        let mut mse_tweedie = 0.0;
        let mut mse_identity = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let noise = rng::stream_normal(77, i as u64);
            let y = [x[0] + sigma * noise];
            let den = tweedie_denoiser(&spec, &y, sigma).unwrap();
            mse_tweedie += (den[0] - x[0]) * (den[0] - x[0]);
            mse_identity += (y[0] - x[0]) * (y[0] - x[0]);
        }
        assert!(
            mse_tweedie < mse_identity,
            "tweedie {mse_tweedie} vs identity {mse_identity}"
        );
    }

    #[test]
    fn grid_argmax_unimodal() {
        let spec = single_1d(0.5, 0.1);
        let arg = grid_argmax(&spec, 0.0, &[0.0], &[1.0], 1001).unwrap();
        assert!((arg[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn grid_argmax_two_modes_near_means() {
        // With sigma = 0, the bimodal mixture has local maxima near 0.25 and 0.75;
        // the global argmax lands on one of them, and restricting the box finds the other.
        let spec = two_mode_1d();
        let left = grid_argmax(&spec, 0.0, &[0.0], &[0.5], 2001).unwrap();
        let right = grid_argmax(&spec, 0.0, &[0.5], &[1.0], 2001).unwrap();
        assert!((left[0] - 0.25).abs() < 0.01, "left {}", left[0]);
        assert!((right[0] - 0.75).abs() < 0.01, "right {}", right[0]);
    }

    #[test]
    fn grid_argmax_symmetric_about_midpoint() {
        let spec = two_mode_1d();
        let left = grid_argmax(&spec, 0.05, &[0.0], &[0.5], 2001).unwrap();
        let right = grid_argmax(&spec, 0.05, &[0.5], &[1.0], 2001).unwrap();
        assert!((left[0] + right[0] - 1.0).abs() < 2e-3, "{} {}", left[0], right[0]);
    }

    #[test]
    fn grid_argmax_rejects_high_dimension() {
        let spec = GmmSpec::single(vec![0.0, 0.0, 0.0], 1.0);
        assert!(matches!(
            grid_argmax(&spec, 0.0, &[0.0; 3], &[1.0; 3], 10),
            Err(GmmError::DimTooLarge { dim: 3 })
        ));
    }

    #[test]
    fn invalid_inputs_rejected() {
        let spec = single_1d(0.0, 1.0);
        assert!(smoothed_log_density(&spec, &[f64::NAN], 0.1).is_err());
        assert!(exact_ere(&spec, &[0.0], 0.0, 10, 1).is_err());
        assert!(exact_ere(&spec, &[0.0], -1.0, 10, 1).is_err());
        assert!(GmmSpec::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GmmSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn score_field_adapter_consistency() {
        let spec = two_mode_1d();
        let field = GmmScore::new(&spec);
        let x = [0.42];
        let sigma = 0.1;
        assert_eq!(field.score(&x, sigma), exact_score(&spec, &x, sigma).unwrap());
        let vjp = field.score_vjp(&x, sigma, &[2.0]);
        let jac = exact_score_jacobian(&spec, &x, sigma);
        assert!((vjp[0] - 2.0 * jac[0]).abs() < 1e-12);
    }
}
