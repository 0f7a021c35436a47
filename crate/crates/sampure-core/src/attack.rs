//! Adversarial example generation and robustness evaluation.
//!
//! Attacks are projected gradient ascent on the classification loss under an
//! l1/l2/linf budget, plus the deterministic adaptive attack that pushes
//! gradients through a purification map with the straight-through (identity)
//! backward approximation. The gray-box threat attacks the bare classifier;
//! the adaptive threat sees the whole pipeline including the fixed noise
//! bank. Both reuse the same update loop, so with an identity purifier the
//! adaptive attack reproduces plain projected ascent bitwise.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::classify::LabeledDataset;
use crate::linalg;
use crate::rng;

/// Perturbation geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    /// Conventional desk-scale budgets: 8/255 (linf), 1 (l2), 12 (l1).
    pub fn default_budget(self) -> f64 {
        match self {
            Norm::Linf => 8.0 / 255.0,
            Norm::L2 => 1.0,
            Norm::L1 => 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Threat {
    /// Adversary sees the classifier only; evaluation runs the full pipeline.
    GrayBox,
    /// Deterministic white-box: adversary sees classifier, purifier, and seeds.
    BpdaDet,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttackConfig {
    pub norm: Norm,
    pub budget: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Gradient averages per step; 1 means no averaging.
    pub eot_samples: usize,
    pub threat: Threat,
    /// Seed for the zero-gradient fallback direction.
    pub seed: u64,
}

impl AttackConfig {
    /// `steps` iterations with the 2.5 * budget / steps step-size rule.
    pub fn new(norm: Norm, budget: f64, steps: usize) -> Self {
        AttackConfig {
            norm,
            budget,
            steps,
            step_size: 2.5 * budget / steps as f64,
            eot_samples: 1,
            threat: Threat::BpdaDet,
            seed: 0,
        }
    }

    /// Gray-box attack: 20 steps, linf 8/255 budget, 2/255 step size.
    pub fn gray_box_20() -> Self {
        AttackConfig {
            norm: Norm::Linf,
            budget: Norm::Linf.default_budget(),
            steps: 20,
            step_size: 2.0 / 255.0,
            eot_samples: 1,
            threat: Threat::GrayBox,
            seed: 0,
        }
    }

    /// Adaptive attack: 20 steps, linf 8/255 budget, 2/255 step size.
    pub fn adaptive_20() -> Self {
        AttackConfig {
            threat: Threat::BpdaDet,
            ..Self::gray_box_20()
        }
    }

    /// Adaptive attack: 200 steps at the default budget for the norm, with
    /// the 2.5 * budget / 200 step size.
    pub fn adaptive_200(norm: Norm) -> Self {
        AttackConfig::new(norm, norm.default_budget(), 200)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.budget >= 0.0) || !(self.step_size > 0.0) || self.steps == 0 || self.eot_samples == 0 {
            return Err(AttackError::BadConfig("budget, steps, step size, and eot count must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackError {
    BadConfig(&'static str),
    EmptyDataset,
}

impl fmt::Display for AttackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackError::BadConfig(why) => write!(f, "bad attack config: {why}"),
            AttackError::EmptyDataset => write!(f, "evaluation dataset is empty"),
        }
    }
}

/// A differentiable classification loss: what the attacker ascends.
pub trait Model {
    fn num_classes(&self) -> usize;
    fn logits(&self, x: &[f64]) -> Vec<f64>;
    /// Cross-entropy-style loss and its input gradient.
    fn loss_grad_input(&self, x: &[f64], y: usize) -> (f64, Vec<f64>);

    fn predict(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (i, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = i;
            }
        }
        best
    }
}

impl Model for crate::classify::Classifier {
    fn num_classes(&self) -> usize {
        self.num_classes()
    }
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.logits(x)
    }
    fn loss_grad_input(&self, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        self.loss_grad_input(x, y)
    }
}

/// A purification map as the attacker sees it. `replicate` selects the
/// randomness for stochastic defenses and is ignored by deterministic ones.
pub trait PurifyMap {
    fn purify(&self, x: &[f64], replicate: u64) -> Vec<f64>;
    fn stochastic(&self) -> bool {
        false
    }
}

/// The no-op defense; useful as the straight-through consistency baseline.
pub struct IdentityPurifier;

impl PurifyMap for IdentityPurifier {
    fn purify(&self, x: &[f64], _replicate: u64) -> Vec<f64> {
        x.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: Vec<f64>,
    /// Whether the attacked pipeline misclassifies `x_adv`.
    pub success: bool,
    pub loss_trajectory: Vec<f64>,
    pub pert_norm: f64,
    /// Steps where the gradient vanished and a seeded random direction was used.
    pub zero_grad_steps: Vec<usize>,
}

fn pert_norm(norm: Norm, delta: &[f64]) -> f64 {
    match norm {
        Norm::L1 => linalg::norm1(delta),
        Norm::L2 => linalg::norm2(delta),
        Norm::Linf => linalg::norm_inf(delta),
    }
}

/// Steepest-ascent direction for the given geometry. For l1 this is the
/// single largest-magnitude gradient coordinate.
fn ascent_direction(norm: Norm, grad: &[f64]) -> Vec<f64> {
    match norm {
        Norm::Linf => grad.iter().map(|g| sign(*g)).collect(),
        Norm::L2 => {
            let n = linalg::norm2(grad);
            linalg::scale(grad, 1.0 / n)
        }
        Norm::L1 => {
            let mut best = 0;
            for (i, g) in grad.iter().enumerate() {
                if libm::fabs(*g) > libm::fabs(grad[best]) {
                    best = i;
                }
            }
            let mut dir = vec![0.0; grad.len()];
            dir[best] = sign(grad[best]);
            dir
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Project `x` onto the p-ball of radius `rho` around `center`, then clamp
/// to the unit box. Both stages only shrink coordinate deviations, so the
/// result lies in the intersection.
fn project_ball(norm: Norm, x: &[f64], center: &[f64], rho: f64) -> Vec<f64> {
    let mut delta = linalg::sub(x, center);
    match norm {
        Norm::Linf => {
            for d in delta.iter_mut() {
                *d = d.clamp(-rho, rho);
            }
        }
        Norm::L2 => {
            let n = linalg::norm2(&delta);
            if n > rho {
                let s = rho / n;
                for d in delta.iter_mut() {
                    *d *= s;
                }
            }
        }
        Norm::L1 => project_l1_ball(&mut delta, rho),
    }
    let mut out = center.to_vec();
    for (o, d) in out.iter_mut().zip(&delta) {
        *o += d;
    }
    linalg::clamp_unit_box(&mut out);
    out
}

/// In-place Euclidean projection onto the l1 ball of radius `rho` via the
/// sorted soft-threshold rule.
fn project_l1_ball(delta: &mut [f64], rho: f64) {
    if linalg::norm1(delta) <= rho {
        return;
    }
    if rho == 0.0 {
        delta.iter_mut().for_each(|d| *d = 0.0);
        return;
    }
    let mut mags: Vec<f64> = delta.iter().map(|d| libm::fabs(*d)).collect();
    mags.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite magnitudes"));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - rho) / (i + 1) as f64;
        if *m > candidate {
            tau = candidate;
        } else {
            break;
        }
    }
    for d in delta.iter_mut() {
        let m = libm::fabs(*d) - tau;
        *d = if m > 0.0 { sign(*d) * m } else { 0.0 };
    }
}

/// The shared projected-ascent loop. `loss_grad` supplies the surrogate loss
/// and its gradient at the current iterate.
fn pgd_iterate(
    x0: &[f64],
    cfg: &AttackConfig,
    mut loss_grad: impl FnMut(&[f64]) -> (f64, Vec<f64>),
) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut zero_grad_steps = Vec::new();
    for step in 0..cfg.steps {
        let (loss, mut grad) = loss_grad(&x);
        losses.push(loss);
        if linalg::norm2(&grad) < 1e-12 {
            // Flat loss surface: take a seeded random direction instead.
            zero_grad_steps.push(step);
            let seed = rng::derive_seed(cfg.seed, step as u64);
            grad = (0..d).map(|j| rng::stream_normal(seed, j as u64)).collect();
        }
        let dir = ascent_direction(cfg.norm, &grad);
        linalg::axpy(&mut x, cfg.step_size, &dir);
        x = project_ball(cfg.norm, &x, x0, cfg.budget);
    }
    (x, losses, zero_grad_steps)
}

fn finish(
    norm: Norm,
    x0: &[f64],
    x_adv: Vec<f64>,
    losses: Vec<f64>,
    zero_grad_steps: Vec<usize>,
    success: bool,
) -> AttackResult {
    let delta = linalg::sub(&x_adv, x0);
    AttackResult {
        pert_norm: pert_norm(norm, &delta),
        x_adv,
        success,
        loss_trajectory: losses,
        zero_grad_steps,
    }
}

/// Projected gradient ascent on the model's own loss.
pub fn pgd<M: Model>(x: &[f64], y: usize, model: &M, cfg: &AttackConfig) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    let (x_adv, losses, zeros) = pgd_iterate(x, cfg, |p| model.loss_grad_input(p, y));
    let success = model.predict(&x_adv) != y;
    Ok(finish(cfg.norm, x, x_adv, losses, zeros, success))
}

/// Single-step sign attack: projected ascent with one full-budget step.
pub fn fgsm<M: Model>(x: &[f64], y: usize, model: &M, cfg: &AttackConfig) -> Result<AttackResult, AttackError> {
    let one = AttackConfig {
        steps: 1,
        step_size: cfg.budget.max(f64::MIN_POSITIVE),
        ..cfg.clone()
    };
    pgd(x, y, model, &one)
}

/// Straight-through loss and gradient: evaluate the classifier at the
/// purified point and treat that gradient as the gradient at `x`. Averages
/// `k` replicates for stochastic purifiers; deterministic purifiers are
/// evaluated once since every replicate would coincide.
pub fn eot_loss_grad<P: PurifyMap + ?Sized, M: Model>(
    purifier: &P,
    classifier: &M,
    x: &[f64],
    y: usize,
    k: usize,
    replicate_base: u64,
) -> (f64, Vec<f64>) {
    if k <= 1 || !purifier.stochastic() {
        let x_pur = purifier.purify(x, replicate_base);
        return classifier.loss_grad_input(&x_pur, y);
    }
    let mut loss_acc = 0.0;
    let mut grad_acc = vec![0.0; x.len()];
    for j in 0..k {
        let x_pur = purifier.purify(x, replicate_base + j as u64);
        let (loss, grad) = classifier.loss_grad_input(&x_pur, y);
        loss_acc += loss;
        linalg::axpy(&mut grad_acc, 1.0, &grad);
    }
    let inv = 1.0 / k as f64;
    for g in grad_acc.iter_mut() {
        *g *= inv;
    }
    (loss_acc * inv, grad_acc)
}

/// Deterministic adaptive attack through a purification map with the
/// identity backward approximation.
pub fn bpda_det<P: PurifyMap + ?Sized, M: Model>(
    x: &[f64],
    y: usize,
    purifier: &P,
    classifier: &M,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    let (x_adv, losses, zeros) = pgd_iterate(x, cfg, |p| {
        eot_loss_grad(purifier, classifier, p, y, cfg.eot_samples, 0)
    });
    let success = classifier.predict(&purifier.purify(&x_adv, 0)) != y;
    Ok(finish(cfg.norm, x, x_adv, losses, zeros, success))
}

/// Same attack with `k` gradient averages per step.
pub fn eot_wrap(cfg: &AttackConfig, k: usize) -> AttackConfig {
    AttackConfig {
        eot_samples: k.max(1),
        ..cfg.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sample_id: usize,
    pub label: usize,
    pub clean_pred: usize,
    pub adv_pred: usize,
    pub pert_norm: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub rows: Vec<ReportRow>,
}

/// Evaluate one sample of a robustness run; used by the batch evaluator and
/// by parallel drivers that shard the dataset. The row for sample `i` is a
/// pure function of `(dataset[i], classifier, purifier, cfg)`; the attacked
/// input comes back alongside the row.
pub fn evaluate_sample<M: Model, P: PurifyMap + ?Sized>(
    sample_id: usize,
    x: &[f64],
    y: usize,
    classifier: &M,
    purifier: Option<&P>,
    cfg: &AttackConfig,
) -> Result<(ReportRow, Vec<f64>), AttackError> {
    let through = |p: &[f64]| -> usize {
        match purifier {
            Some(pur) => classifier.predict(&pur.purify(p, 0)),
            None => classifier.predict(p),
        }
    };
    let clean_pred = through(x);
    let result = match (cfg.threat, purifier) {
        (Threat::BpdaDet, Some(pur)) => bpda_det(x, y, pur, classifier, cfg)?,
        // Gray-box (and any run without a purifier): attack the bare classifier.
        _ => pgd(x, y, classifier, cfg)?,
    };
    let adv_pred = through(&result.x_adv);
    let row = ReportRow {
        sample_id,
        label: y,
        clean_pred,
        adv_pred,
        pert_norm: result.pert_norm,
        success: adv_pred != y,
    };
    Ok((row, result.x_adv))
}

/// Clean and adversarial accuracy of a (possibly defended) pipeline.
pub fn evaluate_robustness<M: Model, P: PurifyMap + ?Sized>(
    dataset: &LabeledDataset,
    classifier: &M,
    purifier: Option<&P>,
    cfg: &AttackConfig,
) -> Result<RobustnessReport, AttackError> {
    if dataset.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(dataset.len());
    for (i, (x, &y)) in dataset.xs.iter().zip(&dataset.ys).enumerate() {
        let (row, _) = evaluate_sample(i, x, y, classifier, purifier, cfg)?;
        rows.push(row);
    }
    Ok(report_from_rows(rows))
}

/// Assemble a report from per-sample rows (already in sample order).
pub fn report_from_rows(rows: Vec<ReportRow>) -> RobustnessReport {
    let n = rows.len() as f64;
    let clean = rows.iter().filter(|r| r.clean_pred == r.label).count() as f64;
    let adv = rows.iter().filter(|r| r.adv_pred == r.label).count() as f64;
    RobustnessReport {
        clean_accuracy: clean / n,
        adversarial_accuracy: adv / n,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Classifier;
    use crate::tape::DenseLayer;
    use proptest::prelude::*;

    /// Binary model with logits `[0, w . x]`.
    fn linear_margin_model(w: &[f64]) -> Classifier {
        let d = w.len();
        let mut weight = vec![0.0; 2 * d];
        weight[d..].copy_from_slice(w);
        Classifier::from_layers(vec![DenseLayer::new(2, d, weight, vec![0.0, 0.0]).unwrap()]).unwrap()
    }

    #[test]
    fn linf_attack_on_linear_model_hits_the_corner() {
        let model = linear_margin_model(&[1.0, -1.0]);
        let cfg = AttackConfig {
            norm: Norm::Linf,
            budget: 8.0 / 255.0,
            steps: 12,
            step_size: 2.0 / 255.0,
            eot_samples: 1,
            threat: Threat::GrayBox,
            seed: 0,
        };
        let x = [0.5, 0.5];
        // Label 0: ascent pushes along +w = (1, -1).
        let r = pgd(&x, 0, &model, &cfg).unwrap();
        assert!((r.x_adv[0] - (0.5 + 8.0 / 255.0)).abs() < 1e-12);
        assert!((r.x_adv[1] - (0.5 - 8.0 / 255.0)).abs() < 1e-12);
        assert!((r.pert_norm - 8.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_returns_the_input() {
        let model = linear_margin_model(&[1.0, 2.0]);
        let cfg = AttackConfig {
            budget: 0.0,
            ..AttackConfig::gray_box_20()
        };
        let x = [0.3, 0.4];
        let r = pgd(&x, 0, &model, &cfg).unwrap();
        assert_eq!(r.x_adv, x.to_vec());
    }

    #[test]
    fn l2_single_step_lands_on_the_sphere() {
        // One step with alpha >= budget: perturbation is exactly g / ||g||.
        let d = 16;
        let w: Vec<f64> = (0..d).map(|i| 0.3 + 0.05 * i as f64).collect();
        let model = linear_margin_model(&w);
        let cfg = AttackConfig {
            norm: Norm::L2,
            budget: 1.0,
            steps: 1,
            step_size: 1.5,
            eot_samples: 1,
            threat: Threat::GrayBox,
            seed: 0,
        };
        let x = vec![0.5; d];
        let (_, g) = model.loss_grad_input(&x, 0);
        let expected = linalg::scale(&g, 1.0 / linalg::norm2(&g));
        let r = pgd(&x, 0, &model, &cfg).unwrap();
        for j in 0..d {
            assert!(((r.x_adv[j] - x[j]) - expected[j]).abs() < 1e-12, "dim {j}");
        }
        assert!((r.pert_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_200_step_sizes_match_the_rule() {
        let inf = AttackConfig::adaptive_200(Norm::Linf);
        let l2 = AttackConfig::adaptive_200(Norm::L2);
        let l1 = AttackConfig::adaptive_200(Norm::L1);
        assert_eq!(l2.step_size, 0.0125);
        assert_eq!(l1.step_size, 0.15);
        // 2.5 * (8/255) / 200 = 0.000392...; displayed to two figures as 0.00039.
        assert!((inf.step_size - 0.00039216).abs() < 1e-8);
        assert_eq!(libm::round(inf.step_size * 1e5) / 1e5, 0.00039);
    }

    #[test]
    fn identity_purifier_reproduces_pgd_bitwise() {
        let model = Classifier::default_arch(2, 2, 44);
        let cfg = AttackConfig::adaptive_20();
        let x = [0.41, 0.63];
        let plain = pgd(&x, 1, &model, &cfg).unwrap();
        let through = bpda_det(&x, 1, &IdentityPurifier, &model, &cfg).unwrap();
        let pa: Vec<u64> = plain.x_adv.iter().map(|v| v.to_bits()).collect();
        let pb: Vec<u64> = through.x_adv.iter().map(|v| v.to_bits()).collect();
        assert_eq!(pa, pb);
        assert_eq!(plain.loss_trajectory, through.loss_trajectory);
    }

    #[test]
    fn attack_is_deterministic_across_runs() {
        let model = Classifier::default_arch(3, 2, 9);
        let cfg = AttackConfig::new(Norm::L2, 0.5, 30);
        let x = [0.2, 0.5, 0.8];
        let a = pgd(&x, 0, &model, &cfg).unwrap();
        let b = pgd(&x, 0, &model, &cfg).unwrap();
        let pa: Vec<u64> = a.x_adv.iter().map(|v| v.to_bits()).collect();
        let pb: Vec<u64> = b.x_adv.iter().map(|v| v.to_bits()).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn monotone_loss_on_convex_linf_fixture() {
        // Linear logits make the loss convex; with componentwise clamping the
        // update never moves against the gradient, so the trajectory is
        // exactly non-decreasing.
        let model = linear_margin_model(&[0.8, -1.3, 0.4]);
        let cfg = AttackConfig {
            norm: Norm::Linf,
            budget: 0.1,
            steps: 25,
            step_size: 0.01,
            eot_samples: 1,
            threat: Threat::GrayBox,
            seed: 0,
        };
        let r = pgd(&[0.5, 0.5, 0.5], 0, &model, &cfg).unwrap();
        for w in r.loss_trajectory.windows(2) {
            assert!(w[1] >= w[0], "loss decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn zero_gradient_falls_back_to_random_direction() {
        // Uniform logits everywhere: the input gradient vanishes identically.
        let model = Classifier::from_layers(vec![DenseLayer::zeros(2, 2)]).unwrap();
        let cfg = AttackConfig::new(Norm::L2, 0.1, 3);
        let r = pgd(&[0.5, 0.5], 0, &model, &cfg).unwrap();
        assert_eq!(r.zero_grad_steps, vec![0, 1, 2]);
        assert!(r.pert_norm > 0.0);
        assert!(r.pert_norm <= 0.1 + 1e-9);
    }

    #[test]
    fn separable_margin_means_no_adversarial_errors() {
        // Boundary x0 + x1 = 1; every sample sits at l2 distance >= 0.28 from
        // it, beyond the 0.2 budget, so the attack cannot cross.
        let model = {
            let weight = vec![0.0, 0.0, 1.0, 1.0];
            Classifier::from_layers(vec![DenseLayer::new(2, 2, weight, vec![0.0, -1.0]).unwrap()])
                .unwrap()
        };
        let xs = vec![vec![0.2, 0.2], vec![0.8, 0.8], vec![0.1, 0.3], vec![0.9, 0.7]];
        let ys = vec![0, 1, 0, 1];
        let data = LabeledDataset::new(xs, ys).unwrap();
        let cfg = AttackConfig::new(Norm::L2, 0.2, 20);
        let report =
            evaluate_robustness::<_, IdentityPurifier>(&data, &model, None, &cfg).unwrap();
        assert_eq!(report.clean_accuracy, 1.0);
        assert_eq!(report.adversarial_accuracy, 1.0);
    }

    #[test]
    fn fgsm_is_a_single_full_budget_step() {
        let model = linear_margin_model(&[1.0, -0.5]);
        let cfg = AttackConfig::new(Norm::Linf, 0.05, 40);
        let x = [0.5, 0.5];
        let single = fgsm(&x, 0, &model, &cfg).unwrap();
        assert_eq!(single.loss_trajectory.len(), 1);
        // One sign step of size equal to the budget.
        assert!((single.x_adv[0] - 0.55).abs() < 1e-12);
        assert!((single.x_adv[1] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_evaluation_equals_clean_accuracy() {
        let model = Classifier::default_arch(2, 2, 17);
        let xs = vec![vec![0.2, 0.3], vec![0.8, 0.7], vec![0.4, 0.9], vec![0.6, 0.1]];
        let ys = vec![0, 1, 0, 1];
        let data = LabeledDataset::new(xs, ys).unwrap();
        let cfg = AttackConfig {
            budget: 0.0,
            ..AttackConfig::gray_box_20()
        };
        let report = evaluate_robustness::<_, IdentityPurifier>(&data, &model, None, &cfg).unwrap();
        assert_eq!(report.adversarial_accuracy, report.clean_accuracy);
        for row in &report.rows {
            assert_eq!(row.clean_pred, row.adv_pred);
            assert_eq!(row.pert_norm, 0.0);
        }
    }

    #[test]
    fn eot_wrap_controls_replicates() {
        let cfg = AttackConfig::gray_box_20();
        assert_eq!(eot_wrap(&cfg, 1).eot_samples, 1);
        assert_eq!(eot_wrap(&cfg, 16).eot_samples, 16);
        assert_eq!(eot_wrap(&cfg, 0).eot_samples, 1);
    }

    #[test]
    fn eot_on_deterministic_purifier_is_vacuous() {
        let model = Classifier::default_arch(2, 2, 3);
        let x = [0.45, 0.55];
        let (l1, g1) = eot_loss_grad(&IdentityPurifier, &model, &x, 0, 1, 0);
        let (l16, g16) = eot_loss_grad(&IdentityPurifier, &model, &x, 0, 16, 0);
        assert_eq!(l1.to_bits(), l16.to_bits());
        assert_eq!(g1[0].to_bits(), g16[0].to_bits());
        assert_eq!(g1[1].to_bits(), g16[1].to_bits());
    }

    /// Stochastic toy defense: jitters the input by a replicate-seeded offset.
    struct JitterPurifier {
        scale: f64,
    }

    impl PurifyMap for JitterPurifier {
        fn purify(&self, x: &[f64], replicate: u64) -> Vec<f64> {
            let mut out = x.to_vec();
            for (j, v) in out.iter_mut().enumerate() {
                *v = (*v + self.scale * rng::stream_normal(replicate, j as u64)).clamp(0.0, 1.0);
            }
            out
        }
        fn stochastic(&self) -> bool {
            true
        }
    }

    #[test]
    fn eot_variance_scales_inversely_with_replicates() {
        let model = Classifier::default_arch(2, 2, 21);
        let purifier = JitterPurifier { scale: 0.05 };
        let x = [0.5, 0.5];
        let trials = 64;
        let mut log_k = Vec::new();
        let mut log_var = Vec::new();
        for &k in &[1usize, 4, 16] {
            let mut grads = Vec::new();
            for t in 0..trials {
                let base = (1 + t as u64) * 100_000 + (k as u64) * 1_000_000_000;
                let (_, g) = eot_loss_grad(&purifier, &model, &x, 0, k, base);
                grads.push(g);
            }
            let mean: Vec<f64> = (0..2)
                .map(|j| grads.iter().map(|g| g[j]).sum::<f64>() / trials as f64)
                .collect();
            let var: f64 = grads
                .iter()
                .map(|g| (g[0] - mean[0]) * (g[0] - mean[0]) + (g[1] - mean[1]) * (g[1] - mean[1]))
                .sum::<f64>()
                / trials as f64;
            log_k.push(libm::log(k as f64));
            log_var.push(libm::log(var));
        }
        let slope = linalg::ls_slope(&log_k, &log_var);
        assert!((slope + 1.0).abs() < 0.2, "variance slope {slope}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn adversarial_points_respect_budget_and_box(
            x0 in 0.0f64..1.0,
            x1 in 0.0f64..1.0,
            budget in 0.0f64..0.9,
            norm_pick in 0usize..3,
            steps in 1usize..12,
        ) {
            let norm = [Norm::L1, Norm::L2, Norm::Linf][norm_pick];
            let model = Classifier::default_arch(2, 2, 5);
            let cfg = AttackConfig { threat: Threat::GrayBox, seed: 9, ..AttackConfig::new(norm, budget, steps) };
            let x = [x0, x1];
            let r = pgd(&x, 0, &model, &cfg).unwrap();
            prop_assert!(linalg::in_unit_box(&r.x_adv, 1e-12));
            let delta = linalg::sub(&r.x_adv, &x);
            prop_assert!(pert_norm(norm, &delta) <= budget + 1e-9);
        }
    }
}
