//! Purification by sequential minimization of the expected reconstruction
//! error over decreasing noise levels.
//!
//! One level of the loop, starting from the previous iterate `x`:
//!
//! 1. gradient of the estimator at `x`;
//! 2. sharpness step: normalized ascent of radius `rho_sam`, clamped to the
//!    unit box (skipped when the gradient norm is below 1e-12 or SAM is off);
//! 3. gradient at the ascent point;
//! 4. Adam update applied at `x` with that gradient;
//! 5. projection onto `[0,1]^d` intersected with the l2 ball of radius
//!    `rho_pur` around the original input (radial projection, then box clamp;
//!    for centers inside the box the composition lands in the intersection,
//!    which is asserted).
//!
//! The Adam state persists across levels; the learning rate ramps linearly
//! from `eta_max` at the coarsest scale down to `eta_min` at the finest.
//! Everything is a pure function of `(input, field, schedule, config)`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::ere::{self, NoiseBank};
use crate::field::ScoreField;
use crate::linalg;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PurifyConfig {
    /// l2 radius of the search ball around the input.
    pub rho_pur: f64,
    /// l2 radius of the sharpness ascent step.
    pub rho_sam: f64,
    pub sam_enabled: bool,
    pub eta_max: f64,
    pub eta_min: f64,
    pub bank: NoiseBank,
    /// Norm index of the constraint geometry; only 2 is supported.
    pub q: u32,
    /// Ramp the learning rate up instead of down (the non-default reading of
    /// the update rule; see `lr_schedule_ramp_up`).
    #[cfg_attr(feature = "serde", serde(default))]
    pub lr_ramp_up: bool,
}

impl PurifyConfig {
    pub fn new(rho_pur: f64, rho_sam: f64, bank: NoiseBank) -> Self {
        PurifyConfig {
            rho_pur,
            rho_sam,
            sam_enabled: rho_sam > 0.0,
            eta_max: 0.1,
            eta_min: 0.001,
            bank,
            q: 2,
            lr_ramp_up: false,
        }
    }

    pub fn validate(&self) -> Result<(), PurifyError> {
        if !(self.rho_pur > 0.0) {
            return Err(PurifyError::BadConfig("rho_pur must be positive"));
        }
        if !(self.rho_sam >= 0.0) {
            return Err(PurifyError::BadConfig("rho_sam must be nonnegative"));
        }
        if !(self.eta_max >= self.eta_min && self.eta_min > 0.0) {
            return Err(PurifyError::BadConfig("need eta_max >= eta_min > 0"));
        }
        if self.q != 2 {
            return Err(PurifyError::BadConfig(
                "only the l2 constraint geometry (q = 2) is supported",
            ));
        }
        Ok(())
    }

    fn effective_sam_radius(&self) -> f64 {
        if self.sam_enabled {
            self.rho_sam
        } else {
            0.0
        }
    }
}

/// Adam with bias correction; one instance lives across all levels of a
/// purification run.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    /// One update of `x` with gradient `grad`.
    pub fn update(&mut self, x: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(x.len(), grad.len());
        self.step_count += 1;
        let b1t = 1.0 - libm::pow(self.beta1, self.step_count as f64);
        let b2t = 1.0 - libm::pow(self.beta2, self.step_count as f64);
        for j in 0..x.len() {
            let g = grad[j];
            self.first_moment[j] = self.beta1 * self.first_moment[j] + (1.0 - self.beta1) * g;
            self.second_moment[j] = self.beta2 * self.second_moment[j] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[j] / b1t;
            let v_hat = self.second_moment[j] / b2t;
            x[j] -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
    }
}

/// Learning rate at 1-based level `k`: linear ramp from `eta_max` down to
/// `eta_min` at the finest scale (computed as a convex combination so both
/// endpoints are exact). A single-level schedule returns `eta_max`.
pub fn lr_schedule(k: usize, levels: usize, eta_max: f64, eta_min: f64) -> f64 {
    if levels <= 1 {
        return eta_max;
    }
    let t = (k - 1) as f64 / (levels - 1) as f64;
    (1.0 - t) * eta_max + t * eta_min
}

/// The increasing variant, `eta_min + (eta_max - eta_min)(k-1)/(L-1)`,
/// selectable via `PurifyConfig::lr_ramp_up`.
pub fn lr_schedule_ramp_up(k: usize, levels: usize, eta_max: f64, eta_min: f64) -> f64 {
    if levels <= 1 {
        return eta_max;
    }
    let t = (k - 1) as f64 / (levels - 1) as f64;
    (1.0 - t) * eta_min + t * eta_max
}

/// Normalized gradient ascent of radius `rho_sam`, clamped to the unit box.
/// Gradients with norm below 1e-12 skip the ascent; the flag reports it.
pub fn sam_ascent(x: &[f64], grad: &[f64], rho_sam: f64) -> (Vec<f64>, bool) {
    if rho_sam == 0.0 {
        return (x.to_vec(), false);
    }
    let norm = linalg::norm2(grad);
    if norm < 1e-12 {
        return (x.to_vec(), true);
    }
    let mut out = x.to_vec();
    linalg::axpy(&mut out, rho_sam / norm, grad);
    linalg::clamp_unit_box(&mut out);
    (out, false)
}

/// Projection onto `[0,1]^d` intersected with `B_2(center, rho)`: radial ball
/// projection followed by the box clamp. Returns the point and whether each
/// stage was active.
pub fn project_ball_box(x: &[f64], center: &[f64], rho: f64) -> (Vec<f64>, bool, bool) {
    let diff = linalg::sub(x, center);
    let dist = linalg::norm2(&diff);
    let mut out;
    let ball_active = dist > rho;
    if ball_active {
        out = center.to_vec();
        linalg::axpy(&mut out, rho / dist, &diff);
    } else {
        out = x.to_vec();
    }
    let before = out.clone();
    linalg::clamp_unit_box(&mut out);
    let box_active = out != before;
    (out, ball_active, box_active)
}

/// Per-level record of a purification run.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifyTraceRow {
    pub level: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    /// Estimator value at the incoming iterate.
    pub ere_value: f64,
    pub sam_skipped: bool,
    pub proj_ball_active: bool,
    pub proj_box_active: bool,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PurifyTrace {
    pub rows: Vec<PurifyTraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PurifyError {
    BadConfig(&'static str),
    InputOutsideBox,
    /// A non-finite iterate or gradient appeared; the partial trace is kept.
    NonFinite { level: usize, trace: PurifyTrace },
}

impl fmt::Display for PurifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PurifyError::BadConfig(why) => write!(f, "bad purify config: {why}"),
            PurifyError::InputOutsideBox => write!(f, "input must lie in the unit box"),
            PurifyError::NonFinite { level, .. } => {
                write!(f, "non-finite value during purification at level {level}")
            }
        }
    }
}

/// A score field plus its purification parameters, packaged as the
/// deterministic defense map the attack harness sees. The replicate index is
/// ignored: with a fixed bank every replicate coincides.
pub struct FieldPurifier<'a, S> {
    pub field: &'a S,
    pub schedule: &'a NoiseSchedule,
    pub cfg: PurifyConfig,
}

impl<'a, S: ScoreField> FieldPurifier<'a, S> {
    pub fn new(field: &'a S, schedule: &'a NoiseSchedule, cfg: PurifyConfig) -> Self {
        FieldPurifier { field, schedule, cfg }
    }
}

impl<S: ScoreField> crate::attack::PurifyMap for FieldPurifier<'_, S> {
    fn purify(&self, x: &[f64], _replicate: u64) -> Vec<f64> {
        let (out, _) = purify(x, self.field, self.schedule, &self.cfg)
            .expect("purification of an in-box input is infallible");
        out
    }
}

/// Run the full refinement loop; returns the purified point and the trace.
pub fn purify<S: ScoreField>(
    x_adv: &[f64],
    field: &S,
    schedule: &NoiseSchedule,
    cfg: &PurifyConfig,
) -> Result<(Vec<f64>, PurifyTrace), PurifyError> {
    cfg.validate()?;
    if !linalg::in_unit_box(x_adv, 0.0) || !linalg::all_finite(x_adv) {
        return Err(PurifyError::InputOutsideBox);
    }
    let levels = schedule.len();
    assert!(
        cfg.bank.levels() >= levels,
        "noise bank has {} levels, schedule needs {}",
        cfg.bank.levels(),
        levels
    );

    let d = x_adv.len();
    let rho_sam = cfg.effective_sam_radius();
    let mut x = x_adv.to_vec();
    let mut adam = AdamState::new(d, cfg.eta_max);
    let mut trace = PurifyTrace::default();

    for k in 1..=levels {
        let sigma = schedule.sigma(k);
        let lr = if cfg.lr_ramp_up {
            lr_schedule_ramp_up(k, levels, cfg.eta_max, cfg.eta_min)
        } else {
            lr_schedule(k, levels, cfg.eta_max, cfg.eta_min)
        };
        adam.learning_rate = lr;

        let at_x = ere::ere_grad(field, &x, sigma, k, &cfg.bank);
        let (sam_point, sam_skipped) = sam_ascent(&x, &at_x.grad, rho_sam);
        let grad = if rho_sam == 0.0 || sam_skipped {
            at_x.grad.clone()
        } else {
            ere::ere_grad(field, &sam_point, sigma, k, &cfg.bank).grad
        };

        adam.update(&mut x, &grad);
        let (projected, ball_active, box_active) = project_ball_box(&x, x_adv, cfg.rho_pur);
        x = projected;

        if !linalg::all_finite(&x) || !at_x.value.is_finite() {
            return Err(PurifyError::NonFinite { level: k, trace });
        }
        // Feasibility of every emitted iterate.
        assert!(linalg::in_unit_box(&x, 0.0), "iterate left the unit box");
        let dist = linalg::norm2(&linalg::sub(&x, x_adv));
        assert!(dist <= cfg.rho_pur + 1e-9, "iterate left the search ball: {dist}");

        trace.rows.push(PurifyTraceRow {
            level: k,
            sigma,
            learning_rate: lr,
            ere_value: at_x.value,
            sam_skipped,
            proj_ball_active: ball_active,
            proj_box_active: box_active,
            x: x.clone(),
        });
    }
    Ok((x, trace))
}
