//! Numerical verification of the small-noise theory on fixtures where every
//! quantity is known in closed form.
//!
//! Four checks, each emitting machine-readable pass/fail outcomes:
//!
//! - **expansion**: the reconstruction error of a mixture expands as
//!   `d + sigma^2 ||s(x,0)||^2 + 2 sigma^2 tr(grad s(x,0)) + O(sigma^3)`;
//!   measured by the log-log slope of the residual against the oracle.
//! - **recovery**: on a piecewise-affine score field that is strongly
//!   concave around its maximizer, the grid minimizer of the estimated
//!   reconstruction error converges to the maximizer as sigma shrinks, at
//!   the rate `sqrt(C)/(sigma mu) * exp(-(d/8)(rho/sigma - 1)^2)`.
//! - **gaussian tail**: `P(||Xi||_2 >= sqrt(d) r) <= exp(-(d/2)(r-1)^2)`.
//! - **quadratic minimizer**: a quadratic `mu ||x - x*||^2` perturbed by
//!   `|g| <= eps` moves its minimizer by at most `sqrt(2 eps / mu)`.
//!
//! The recovery check drives the estimator with antithetic noise pairs:
//! with a zero sample mean the empirical minimizer of the quadratic main
//! term sits exactly on the maximizer, so the grid search measures the
//! boundary effect the theorem bounds instead of plain Monte Carlo drift
//! (which scales like `1/(sigma mu sqrt(n))` and would swamp the grid).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::ere::{self, NoiseBank};
use crate::field::ScoreField;
use crate::gmm::{self, GmmSpec};
use crate::linalg;
use crate::rng;

/// One affine piece `s(x) = A x + b` on an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Row-major `d x d`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl AffineRegion {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut out = self.b.clone();
        for i in 0..d {
            out[i] += linalg::dot(&self.a[i * d..(i + 1) * d], x);
        }
        out
    }
}

/// Piecewise-affine score field satisfying the recovery theorem's
/// assumptions by construction: continuous across facets, globally
/// Lipschitz, and strongly concave on a designated region.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAffineField {
    pub dim: usize,
    pub regions: Vec<AffineRegion>,
    /// Index of the region whose potential is strongly concave.
    pub concave_region: usize,
    /// Strong-concavity constant mu on that region.
    pub mu: f64,
    /// Global Lipschitz constant of the score.
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TheoryError {
    DimTooLarge { dim: usize },
    EmptyOffsetRegion,
    BadFixture(&'static str),
    AssumptionViolated(String),
    Gmm(gmm::GmmError),
}

impl fmt::Display for TheoryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TheoryError::DimTooLarge { dim } => write!(f, "checks support dimension <= 2, got {dim}"),
            TheoryError::EmptyOffsetRegion => write!(f, "the offset of the concave region is empty"),
            TheoryError::BadFixture(why) => write!(f, "bad fixture: {why}"),
            TheoryError::AssumptionViolated(why) => write!(f, "assumption violated: {why}"),
            TheoryError::Gmm(e) => write!(f, "oracle error: {e}"),
        }
    }
}

impl From<gmm::GmmError> for TheoryError {
    fn from(e: gmm::GmmError) -> Self {
        TheoryError::Gmm(e)
    }
}

impl PiecewiseAffineField {
    /// The documented 1d fixture: potential `f(x) = -2 (x - 0.5)^2` on
    /// `D = [0, 1]` (so `mu = 4`), score constant-extended outside.
    pub fn quadratic_well_1d() -> Self {
        PiecewiseAffineField {
            dim: 1,
            regions: vec![
                AffineRegion {
                    lo: vec![f64::NEG_INFINITY],
                    hi: vec![0.0],
                    a: vec![0.0],
                    b: vec![2.0],
                },
                AffineRegion {
                    lo: vec![0.0],
                    hi: vec![1.0],
                    a: vec![-4.0],
                    b: vec![2.0],
                },
                AffineRegion {
                    lo: vec![1.0],
                    hi: vec![f64::INFINITY],
                    a: vec![0.0],
                    b: vec![-2.0],
                },
            ],
            concave_region: 1,
            mu: 4.0,
            lipschitz: 4.0,
        }
    }

    fn region_of(&self, x: &[f64]) -> &AffineRegion {
        self.regions
            .iter()
            .find(|r| r.contains(x))
            .expect("regions cover the evaluation domain")
    }

    /// Maximizer of the potential on the concave region (`A x* + b = 0`).
    pub fn maximizer(&self) -> Result<Vec<f64>, TheoryError> {
        let region = &self.regions[self.concave_region];
        let d = self.dim;
        match d {
            1 => {
                if region.a[0] == 0.0 {
                    return Err(TheoryError::BadFixture("concave region has singular map"));
                }
                Ok(vec![-region.b[0] / region.a[0]])
            }
            2 => {
                let (a, bm, c, dd) = (region.a[0], region.a[1], region.a[2], region.a[3]);
                let det = a * dd - bm * c;
                if det == 0.0 {
                    return Err(TheoryError::BadFixture("concave region has singular map"));
                }
                let (r0, r1) = (-region.b[0], -region.b[1]);
                Ok(vec![(dd * r0 - bm * r1) / det, (a * r1 - c * r0) / det])
            }
            dim => Err(TheoryError::DimTooLarge { dim }),
        }
    }

    /// Verify the three structural assumptions: facet continuity, strong
    /// concavity on the designated region, global Lipschitz bound. Sampled
    /// over a probe box; returns the first violation found.
    pub fn assert_assumptions(&self, probe_lo: &[f64], probe_hi: &[f64]) -> Result<(), TheoryError> {
        if self.dim > 2 {
            return Err(TheoryError::DimTooLarge { dim: self.dim });
        }
        // Continuity: everywhere two regions overlap (shared facets), their
        // affine values must agree.
        let steps = 400usize;
        let mut probe = vec![0.0; self.dim];
        let mut idx = vec![0usize; self.dim];
        loop {
            for (j, i) in idx.iter().enumerate() {
                probe[j] =
                    probe_lo[j] + (probe_hi[j] - probe_lo[j]) * *i as f64 / (steps - 1) as f64;
            }
            let mut value: Option<Vec<f64>> = None;
            let mut covered = false;
            for region in &self.regions {
                if region.contains(&probe) {
                    covered = true;
                    let v = region.eval(&probe);
                    if let Some(prev) = &value {
                        let jump = linalg::norm_inf(&linalg::sub(&v, prev));
                        if jump > 1e-10 {
                            return Err(TheoryError::AssumptionViolated(format!(
                                "facet jump {jump} at {probe:?}"
                            )));
                        }
                    }
                    value = Some(v);
                }
            }
            if !covered {
                return Err(TheoryError::AssumptionViolated(format!("no region covers {probe:?}")));
            }
            // Advance the grid index odometer.
            let mut j = 0;
            loop {
                idx[j] += 1;
                if idx[j] < steps {
                    break;
                }
                idx[j] = 0;
                j += 1;
                if j == self.dim {
                    break;
                }
            }
            if j == self.dim {
                break;
            }
        }

        // Strong concavity: the designated region's map is symmetric with
        // eigenvalues at most -mu.
        let region = &self.regions[self.concave_region];
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                if (region.a[i * d + j] - region.a[j * d + i]).abs() > 1e-12 {
                    return Err(TheoryError::AssumptionViolated(String::from(
                        "concave region map is not symmetric",
                    )));
                }
            }
        }
        let max_eig = symmetric_max_eig(&region.a, d);
        if max_eig > -self.mu + 1e-12 {
            return Err(TheoryError::AssumptionViolated(format!(
                "largest eigenvalue {max_eig} exceeds -mu = {}",
                -self.mu
            )));
        }

        // Lipschitz: per-region spectral norms, plus a sampled two-point check.
        for region in &self.regions {
            let norm = spectral_norm(&region.a, d);
            if norm > self.lipschitz + 1e-12 {
                return Err(TheoryError::AssumptionViolated(format!(
                    "region spectral norm {norm} exceeds L = {}",
                    self.lipschitz
                )));
            }
        }
        for trial in 0..500u64 {
            let mut x = vec![0.0; d];
            let mut y = vec![0.0; d];
            for j in 0..d {
                x[j] = probe_lo[j]
                    + (probe_hi[j] - probe_lo[j]) * rng::stream_open01(11, trial * 4 + j as u64);
                y[j] = probe_lo[j]
                    + (probe_hi[j] - probe_lo[j]) * rng::stream_open01(12, trial * 4 + j as u64);
            }
            let ds = linalg::norm2(&linalg::sub(&self.score(&x, 1.0), &self.score(&y, 1.0)));
            let dx = linalg::norm2(&linalg::sub(&x, &y));
            if ds > self.lipschitz * dx + 1e-9 {
                return Err(TheoryError::AssumptionViolated(format!(
                    "sampled Lipschitz ratio {} exceeds L",
                    ds / dx
                )));
            }
        }
        Ok(())
    }
}

impl ScoreField for PiecewiseAffineField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64], _sigma: f64) -> Vec<f64> {
        self.region_of(x).eval(x)
    }

    fn score_vjp(&self, x: &[f64], _sigma: f64, v: &[f64]) -> Vec<f64> {
        let region = self.region_of(x);
        let d = self.dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                out[j] += region.a[i * d + j] * v[i];
            }
        }
        out
    }
}

fn symmetric_max_eig(a: &[f64], d: usize) -> f64 {
    match d {
        1 => a[0],
        2 => {
            let tr = a[0] + a[3];
            let det = a[0] * a[3] - a[1] * a[2];
            let disc = libm::sqrt((tr * tr - 4.0 * det).max(0.0));
            0.5 * (tr + disc)
        }
        _ => unreachable!("dimension checked earlier"),
    }
}

fn spectral_norm(a: &[f64], d: usize) -> f64 {
    match d {
        1 => libm::fabs(a[0]),
        2 => {
            // sqrt of the largest eigenvalue of A^T A.
            let g = [
                a[0] * a[0] + a[2] * a[2],
                a[0] * a[1] + a[2] * a[3],
                a[1] * a[0] + a[3] * a[2],
                a[1] * a[1] + a[3] * a[3],
            ];
            libm::sqrt(symmetric_max_eig(&g, 2).max(0.0))
        }
        _ => unreachable!("dimension checked earlier"),
    }
}

/// The inner region left after removing a `sqrt(d) * rho` margin from an
/// axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub offset: f64,
}

impl OffsetRegion {
    pub fn from_box(lo: &[f64], hi: &[f64], rho: f64) -> Result<Self, TheoryError> {
        let d = lo.len() as f64;
        let offset = libm::sqrt(d) * rho;
        let new_lo: Vec<f64> = lo.iter().map(|v| v + offset).collect();
        let new_hi: Vec<f64> = hi.iter().map(|v| v - offset).collect();
        if new_lo.iter().zip(&new_hi).any(|(a, b)| a > b) {
            return Err(TheoryError::EmptyOffsetRegion);
        }
        Ok(OffsetRegion { lo: new_lo, hi: new_hi, offset })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// A single machine-readable verification outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckOutcome {
    fn at_most(name: String, measured: f64, bound: f64, tolerance: f64) -> Self {
        CheckOutcome {
            pass: measured <= bound + tolerance,
            name,
            measured,
            bound,
            tolerance,
        }
    }

    fn at_least(name: String, measured: f64, bound: f64, tolerance: f64) -> Self {
        CheckOutcome {
            pass: measured >= bound - tolerance,
            name,
            measured,
            bound,
            tolerance,
        }
    }
}

/// One sigma row of the expansion check.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionRow {
    pub sigma: f64,
    pub measured: f64,
    pub predicted: f64,
    pub residual: f64,
    pub std_err: f64,
    /// Set when the Monte Carlo error is within a factor 3 of the residual;
    /// the caller should rerun with a larger sample count.
    pub noise_dominated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionCheck {
    pub rows: Vec<ExpansionRow>,
    /// Log-log slope of |residual| against sigma.
    pub slope: f64,
}

/// Compare the oracle reconstruction error against its second-order
/// expansion around sigma = 0, with the score at a small floor scale
/// standing in for the sigma = 0 score.
pub fn check_expansion(
    spec: &GmmSpec,
    x: &[f64],
    sigma_list: &[f64],
    sigma_floor: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ExpansionCheck, TheoryError> {
    let d = spec.dim() as f64;
    let s0 = gmm::exact_score(spec, x, sigma_floor)?;
    let tr0 = gmm::exact_score_jacobian_trace(spec, x, sigma_floor);
    let base = linalg::norm_sq(&s0);
    let mut rows = Vec::with_capacity(sigma_list.len());
    let mut log_sigma = Vec::new();
    let mut log_res = Vec::new();
    for (i, &sigma) in sigma_list.iter().enumerate() {
        let est = gmm::exact_ere(spec, x, sigma, n_mc, rng::derive_seed(seed, i as u64))?;
        let predicted = d + sigma * sigma * base + 2.0 * sigma * sigma * tr0;
        let residual = est.mean - predicted;
        rows.push(ExpansionRow {
            sigma,
            measured: est.mean,
            predicted,
            residual,
            std_err: est.std_err,
            noise_dominated: residual.abs() < 3.0 * est.std_err,
        });
        log_sigma.push(libm::log(sigma));
        log_res.push(libm::log(residual.abs().max(1e-300)));
    }
    Ok(ExpansionCheck {
        slope: linalg::ls_slope(&log_sigma, &log_res),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRow {
    pub sigma: f64,
    pub minimizer: Vec<f64>,
    pub error: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryCheck {
    pub maximizer: Vec<f64>,
    pub rows: Vec<RecoveryRow>,
    pub grid_resolution: f64,
}

/// Analytic upper bound for the constant `C` in the recovery rate: a second
/// moment bound on the difference between the quadratic main term and the
/// full integrand, assembled from the Lipschitz constant, the region
/// diameter, and Gaussian moments.
fn recovery_constant(field: &PiecewiseAffineField, rho: f64, region_diameter: f64) -> f64 {
    let d = field.dim as f64;
    let l = field.lipschitz;
    let m2 = d; // E||Xi||^2
    let m4 = d * (d + 2.0); // E||Xi||^4
    let a1 = 2.0 * (1.0 + l * rho * rho) * (1.0 + l * rho * rho);
    let c1 = 2.0 * (l * rho) * (l * rho) * region_diameter * region_diameter;
    let a2 = 2.0 * (1.0 + 2.0 * l * l * rho * rho * rho * rho);
    let c2 = 4.0 * rho * rho * l * l * region_diameter * region_diameter;
    let e_g1_sq = a1 * a1 * m4 + 2.0 * a1 * c1 * m2 + c1 * c1;
    let e_g2_sq = a2 * a2 * m4 + 2.0 * a2 * c2 * m2 + c2 * c2;
    2.0 * (e_g1_sq + e_g2_sq)
}

/// Grid search for the minimizer of the estimated reconstruction error over
/// the offset region, one row per sigma. Requires `sigma < rho` throughout.
pub fn check_recovery(
    field: &PiecewiseAffineField,
    rho: f64,
    sigma_list: &[f64],
    grid_resolution: f64,
    n_mc: usize,
    seed: u64,
) -> Result<RecoveryCheck, TheoryError> {
    if field.dim > 2 {
        return Err(TheoryError::DimTooLarge { dim: field.dim });
    }
    if sigma_list.iter().any(|&s| s >= rho || s <= 0.0) {
        return Err(TheoryError::BadFixture("need 0 < sigma < rho for every entry"));
    }
    let region = &field.regions[field.concave_region];
    let offset = OffsetRegion::from_box(&region.lo, &region.hi, rho)?;
    let maximizer = field.maximizer()?;
    if !offset.contains(&maximizer) {
        return Err(TheoryError::BadFixture("maximizer must lie in the offset region"));
    }
    let diameter = linalg::norm2(&linalg::sub(&region.hi, &region.lo));
    let c_bound = recovery_constant(field, rho, diameter);

    // Antithetic pairs: zero sample mean keeps the empirical quadratic
    // centered on the maximizer (see module docs).
    let bank = NoiseBank::new(seed, sigma_list.len(), n_mc).with_antithetic(true);

    let mut rows = Vec::with_capacity(sigma_list.len());
    for (level_idx, &sigma) in sigma_list.iter().enumerate() {
        let level = level_idx + 1;
        let minimizer = match field.dim {
            1 => {
                let steps = ((offset.hi[0] - offset.lo[0]) / grid_resolution) as usize + 1;
                let mut best_val = f64::INFINITY;
                let mut best = vec![offset.lo[0]];
                for i in 0..steps {
                    let x = [offset.lo[0] + i as f64 * grid_resolution];
                    if x[0] > offset.hi[0] {
                        break;
                    }
                    let v = ere::ere_value(field, &x, sigma, level, &bank);
                    if v < best_val {
                        best_val = v;
                        best = x.to_vec();
                    }
                }
                best
            }
            _ => {
                let steps0 = ((offset.hi[0] - offset.lo[0]) / grid_resolution) as usize + 1;
                let steps1 = ((offset.hi[1] - offset.lo[1]) / grid_resolution) as usize + 1;
                let mut best_val = f64::INFINITY;
                let mut best = offset.lo.clone();
                for i in 0..steps0 {
                    let x0 = offset.lo[0] + i as f64 * grid_resolution;
                    if x0 > offset.hi[0] {
                        break;
                    }
                    for j in 0..steps1 {
                        let x1 = offset.lo[1] + j as f64 * grid_resolution;
                        if x1 > offset.hi[1] {
                            break;
                        }
                        let x = [x0, x1];
                        let v = ere::ere_value(field, &x, sigma, level, &bank);
                        if v < best_val {
                            best_val = v;
                            best = x.to_vec();
                        }
                    }
                }
                best
            }
        };
        let error = linalg::norm2(&linalg::sub(&minimizer, &maximizer));
        let ratio = rho / sigma - 1.0;
        let bound = libm::sqrt(c_bound) / (sigma * field.mu)
            * libm::exp(-(field.dim as f64) / 8.0 * ratio * ratio);
        rows.push(RecoveryRow { sigma, minimizer, error, bound });
    }
    Ok(RecoveryCheck {
        maximizer,
        rows,
        grid_resolution,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub ratio: f64,
    pub empirical: f64,
    pub bound: f64,
    pub std_err: f64,
    pub pass: bool,
}

/// Empirical Gaussian norm tail against `exp(-(d/2)(r-1)^2)`.
pub fn check_gaussian_tail(dim: usize, ratios: &[f64], n_mc: usize, seed: u64) -> Vec<TailRow> {
    let sqrt_d = libm::sqrt(dim as f64);
    let mut xi = vec![0.0; dim];
    ratios
        .iter()
        .map(|&r| {
            let mut hits = 0usize;
            for i in 0..n_mc {
                rng::fill_normal(seed, (i * dim) as u64, &mut xi);
                if linalg::norm2(&xi) >= sqrt_d * r {
                    hits += 1;
                }
            }
            let p = hits as f64 / n_mc as f64;
            let std_err = libm::sqrt((p * (1.0 - p)).max(0.0) / n_mc as f64);
            let bound = libm::exp(-(dim as f64) / 2.0 * (r - 1.0) * (r - 1.0));
            TailRow {
                ratio: r,
                empirical: p,
                bound,
                std_err,
                pass: p <= bound + 3.0 * std_err,
            }
        })
        .collect()
}

/// Perturbation shapes for the quadratic-minimizer check, each bounded by
/// the given amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Zero,
    Constant,
    Cosine { frequency: f64 },
}

impl Perturbation {
    fn eval(&self, eps: f64, x: f64) -> f64 {
        match self {
            Perturbation::Zero => 0.0,
            Perturbation::Constant => eps,
            Perturbation::Cosine { frequency } => eps * libm::cos(frequency * x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadMinCheck {
    pub distance: f64,
    pub bound: f64,
    pub grid_resolution: f64,
    pub pass: bool,
}

/// Grid minimizer of `mu (x - 0.5)^2 + g(x)` on `[0, 1]`; any minimizer must
/// lie within `sqrt(2 eps / mu)` of the unperturbed one.
pub fn check_quadratic_minimizer(
    mu: f64,
    eps: f64,
    perturbation: Perturbation,
    grid_resolution: f64,
) -> Result<QuadMinCheck, TheoryError> {
    if !(mu > 0.0) || eps < 0.0 {
        return Err(TheoryError::BadFixture("need mu > 0 and eps >= 0"));
    }
    let x_star = 0.5;
    let steps = (1.0 / grid_resolution) as usize + 1;
    let mut best_val = f64::INFINITY;
    let mut best = 0.0;
    for i in 0..steps {
        let x = (i as f64 * grid_resolution).min(1.0);
        let g = perturbation.eval(eps, x);
        if g.abs() > eps + 1e-15 {
            return Err(TheoryError::BadFixture("perturbation exceeds its amplitude"));
        }
        let f = mu * (x - x_star) * (x - x_star) + g;
        if f < best_val {
            best_val = f;
            best = x;
        }
    }
    let distance = libm::fabs(best - x_star);
    let bound = libm::sqrt(2.0 * eps / mu);
    Ok(QuadMinCheck {
        distance,
        bound,
        grid_resolution,
        pass: distance <= bound + grid_resolution,
    })
}

/// Sample counts for the standard verification suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationBudget {
    pub n_mc_expansion: usize,
    pub n_mc_recovery: usize,
    pub n_mc_tail: usize,
}

impl Default for VerificationBudget {
    fn default() -> Self {
        VerificationBudget {
            n_mc_expansion: 1_000_000,
            n_mc_recovery: 100_000,
            n_mc_tail: 1_000_000,
        }
    }
}

/// The fixed verification suite: expansion slopes on the single-Gaussian and
/// asymmetric-mixture fixtures, recovery on the 1d quadratic well, the
/// Gaussian tail rows, and the perturbed-quadratic rows. Pass thresholds are
/// pinned here.
pub fn standard_verification(budget: &VerificationBudget, seed: u64) -> Result<Vec<CheckOutcome>, TheoryError> {
    let mut out = Vec::new();
    let sigma_list = [0.02, 0.05, 0.1, 0.2];
    let sigma_floor = 1e-3;

    // Expansion, single Gaussian at its mode: cubic term vanishes by
    // symmetry, slope close to 4.
    let single = GmmSpec::single(vec![0.5], 0.1);
    let exp_single = check_expansion(
        &single,
        &[0.5],
        &sigma_list,
        sigma_floor,
        budget.n_mc_expansion,
        rng::derive_seed(seed, 1),
    )?;
    out.push(CheckOutcome::at_least(
        String::from("expansion-slope-single-gaussian"),
        exp_single.slope,
        2.9,
        0.0,
    ));

    // Expansion, asymmetric mixture between the modes: generic cubic term.
    let mixture = GmmSpec::new(
        vec![0.4, 0.6],
        vec![vec![0.35], vec![0.7]],
        vec![0.08, 0.12],
    )
    .map_err(TheoryError::Gmm)?;
    let exp_mix = check_expansion(
        &mixture,
        &[0.5],
        &sigma_list,
        sigma_floor,
        budget.n_mc_expansion,
        rng::derive_seed(seed, 2),
    )?;
    out.push(CheckOutcome::at_least(
        String::from("expansion-slope-asymmetric-mixture"),
        exp_mix.slope,
        2.5,
        0.0,
    ));

    // Recovery on the quadratic well, after verifying its assumptions.
    let field = PiecewiseAffineField::quadratic_well_1d();
    field
        .assert_assumptions(&[-0.5], &[1.5])
        .map_err(|e| TheoryError::AssumptionViolated(format!("{e}")))?;
    let recovery = check_recovery(
        &field,
        0.1,
        &[0.05, 0.02, 0.01],
        1e-3,
        budget.n_mc_recovery,
        rng::derive_seed(seed, 3),
    )?;
    for w in recovery.rows.windows(2) {
        out.push(CheckOutcome::at_most(
            format!("recovery-monotone-sigma-{}-to-{}", w[0].sigma, w[1].sigma),
            w[1].error,
            w[0].error,
            1e-12,
        ));
    }
    let last = recovery.rows.last().expect("nonempty sigma list");
    out.push(CheckOutcome::at_most(
        format!("recovery-error-at-sigma-{}", last.sigma),
        last.error,
        1e-3,
        0.0,
    ));
    for row in &recovery.rows {
        out.push(CheckOutcome::at_most(
            format!("recovery-rate-bound-sigma-{}", row.sigma),
            row.error,
            row.bound,
            recovery.grid_resolution,
        ));
    }

    // Gaussian tails.
    for row in check_gaussian_tail(4, &[1.0, 3.0], budget.n_mc_tail, rng::derive_seed(seed, 4)) {
        out.push(CheckOutcome::at_most(
            format!("gaussian-tail-d4-r-{}", row.ratio),
            row.empirical,
            row.bound,
            3.0 * row.std_err,
        ));
    }
    for row in check_gaussian_tail(1, &[2.0], budget.n_mc_tail, rng::derive_seed(seed, 5)) {
        out.push(CheckOutcome::at_most(
            format!("gaussian-tail-d1-r-{}", row.ratio),
            row.empirical,
            row.bound,
            3.0 * row.std_err,
        ));
    }

    // Perturbed quadratic minimizers.
    for (name, eps, pert) in [
        ("quadratic-minimizer-constant", 0.05, Perturbation::Constant),
        ("quadratic-minimizer-cosine", 0.02, Perturbation::Cosine { frequency: 10.0 }),
        ("quadratic-minimizer-zero", 0.0, Perturbation::Zero),
    ] {
        let check = check_quadratic_minimizer(1.0, eps, pert, 1e-3)?;
        out.push(CheckOutcome::at_most(
            String::from(name),
            check.distance,
            check.bound,
            check.grid_resolution,
        ));
    }
    Ok(out)
}
