//! Deterministic score-based adversarial purification at desk scale.
//!
//! The crate is organized around a small set of numerical building blocks:
//!
//! - [`tape`]: a minimal reverse-mode differentiation tape for dense networks,
//!   with gradients w.r.t. both inputs and parameters.
//! - [`gmm`]: closed-form Gaussian-mixture ground truth (smoothed densities,
//!   exact scores, exact expected reconstruction errors), the independent
//!   oracle throughout the test suites.
//! - [`score`]: the trainable score network `s(x; sigma) = gamma(x) / sigma`
//!   and its denoising-score-matching trainer over a geometric noise schedule.
//! - [`ere`]: the deterministic Monte Carlo estimator of the expected
//!   reconstruction error and its input gradient, driven by a counter-based
//!   noise bank so that evaluation is a pure function of the seeds.
//! - [`purify`]: sequential refinement over decreasing noise levels with a
//!   sharpness-aware ascent step, Adam descent, and ball/box projection.
//! - [`attack`]: FGSM/PGD under l1/l2/linf budgets, the deterministic
//!   straight-through adaptive attack, and the expectation-over-transformation
//!   wrapper, plus a robustness evaluation harness.
//! - [`classify`]: a small dense softmax classifier and the purified-sample
//!   augmentation objective.
//! - [`theory`]: numerical checks of the reconstruction-error expansion, the
//!   local recovery of density maximizers on piecewise-affine score fields,
//!   the Gaussian tail bound, and the perturbed-quadratic minimizer bound.
//!
//! The crate is `no_std` (with `alloc`); all floating-point math goes through
//! `libm` so results are bitwise reproducible across platforms. Everything
//! that consumes randomness takes explicit seeds.

#![no_std]
#![deny(unsafe_code)]
// Negated comparisons like `!(x > 0.0)` are how config validators reject
// NaN along with out-of-range values; keep them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attack;
pub mod classify;
pub mod ere;
pub mod field;
pub mod gmm;
pub mod linalg;
pub mod purify;
pub mod rng;
pub mod schedule;
pub mod score;
pub mod tape;
pub mod theory;

pub use ere::{EreValueGrad, NoiseBank};
pub use field::ScoreField;
pub use gmm::GmmSpec;
pub use purify::{PurifyConfig, PurifyTrace};
pub use schedule::NoiseSchedule;
pub use score::{Activation, ScoreNet, TrainConfig};
