//! Deterministic Monte Carlo estimation of the expected reconstruction error
//! and its input gradient.
//!
//! `R(x; sigma_k) ~= (1/m) sum_i ||xi_ki + sigma_k s(x + sigma_k xi_ki; sigma_k)||^2`
//!
//! The noise samples `xi_ki` come from a [`NoiseBank`]: each one is a pure
//! function of `(master seed, level k, index i, dimension)`, so estimates are
//! bitwise reproducible across runs and independent of how the `m` samples
//! might be scheduled. The reduction over `i` always runs in index order.

use alloc::vec;
use alloc::vec::Vec;

use crate::field::ScoreField;
use crate::rng;

/// Counter-keyed noise source for the estimator.
///
/// With `antithetic` set, samples come in `(xi, -xi)` pairs: index `2t` draws
/// from the stream, index `2t + 1` is its negation. This is a variance
/// reduction option and is off by default.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct NoiseBank {
    pub generator: &'static str,
    pub master_seed: u64,
    pub level_seeds: Vec<u64>,
    pub m: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub antithetic: bool,
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for NoiseBank {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(serde::Deserialize)]
        struct Raw {
            generator: alloc::string::String,
            master_seed: u64,
            level_seeds: Vec<u64>,
            m: usize,
            #[serde(default)]
            antithetic: bool,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.generator != rng::GENERATOR_NAME {
            return Err(serde::de::Error::custom("unknown generator name"));
        }
        Ok(NoiseBank {
            generator: rng::GENERATOR_NAME,
            master_seed: raw.master_seed,
            level_seeds: raw.level_seeds,
            m: raw.m,
            antithetic: raw.antithetic,
        })
    }
}

impl NoiseBank {
    /// Bank for `levels` noise scales with `m` samples per evaluation; the
    /// per-level seeds are derived from the master seed.
    pub fn new(master_seed: u64, levels: usize, m: usize) -> Self {
        assert!(levels > 0 && m > 0);
        let level_seeds = (0..levels).map(|k| rng::derive_seed(master_seed, k as u64)).collect();
        NoiseBank {
            generator: rng::GENERATOR_NAME,
            master_seed,
            level_seeds,
            m,
            antithetic: false,
        }
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn levels(&self) -> usize {
        self.level_seeds.len()
    }

    /// Write sample `xi_{k,i}` into `out`; `level` is 1-based.
    pub fn write_xi(&self, level: usize, index: usize, out: &mut [f64]) {
        assert!(
            (1..=self.levels()).contains(&level),
            "level {level} outside 1..={}",
            self.levels()
        );
        let seed = self.level_seeds[level - 1];
        if self.antithetic {
            let base = (index / 2) as u64 * out.len() as u64;
            rng::fill_normal(seed, base, out);
            if index % 2 == 1 {
                for v in out.iter_mut() {
                    *v = -*v;
                }
            }
        } else {
            rng::fill_normal(seed, index as u64 * out.len() as u64, out);
        }
    }
}

/// Estimator output at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct EreValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
    pub sigma: f64,
    pub level: usize,
}

fn ere_eval<S: ScoreField>(
    field: &S,
    x: &[f64],
    sigma: f64,
    level: usize,
    bank: &NoiseBank,
    with_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let d = field.dim();
    debug_assert_eq!(x.len(), d);
    let mut xi = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut r = vec![0.0; d];
    let mut sum = 0.0;
    let mut grad = if with_grad { Some(vec![0.0; d]) } else { None };
    for i in 0..bank.m {
        bank.write_xi(level, i, &mut xi);
        for j in 0..d {
            y[j] = x[j] + sigma * xi[j];
        }
        let s = field.score(&y, sigma);
        for j in 0..d {
            r[j] = xi[j] + sigma * s[j];
        }
        sum += crate::linalg::norm_sq(&r);
        if let Some(g) = grad.as_mut() {
            let pull = field.score_vjp(&y, sigma, &r);
            for j in 0..d {
                g[j] += 2.0 * sigma * pull[j];
            }
        }
    }
    let inv_m = 1.0 / bank.m as f64;
    if let Some(g) = grad.as_mut() {
        for v in g.iter_mut() {
            *v *= inv_m;
        }
    }
    (sum * inv_m, grad)
}

/// The estimator value at `x` for the given field; deterministic for a fixed bank.
pub fn ere_value<S: ScoreField>(field: &S, x: &[f64], sigma: f64, level: usize, bank: &NoiseBank) -> f64 {
    ere_eval(field, x, sigma, level, bank, false).0
}

/// Estimate together with its reverse-mode gradient with respect to `x`.
pub fn ere_grad<S: ScoreField>(
    field: &S,
    x: &[f64],
    sigma: f64,
    level: usize,
    bank: &NoiseBank,
) -> EreValueGrad {
    let (value, grad) = ere_eval(field, x, sigma, level, bank, true);
    EreValueGrad {
        value,
        grad: grad.expect("grad requested"),
        sigma,
        level,
    }
}

/// One row of the Monte Carlo convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct McProbeRow {
    pub m: usize,
    pub estimate: f64,
    pub abs_error: f64,
}

/// `|R_m - R|` for each sample count in `m_list`, against a reference value
/// from an analytic oracle.
#[allow(clippy::too_many_arguments)]
pub fn mc_convergence_probe<S: ScoreField>(
    field: &S,
    x: &[f64],
    sigma: f64,
    level: usize,
    master_seed: u64,
    levels: usize,
    m_list: &[usize],
    reference: f64,
) -> Vec<McProbeRow> {
    m_list
        .iter()
        .map(|&m| {
            let bank = NoiseBank::new(master_seed, levels, m);
            let estimate = ere_value(field, x, sigma, level, &bank);
            McProbeRow {
                m,
                estimate,
                abs_error: (estimate - reference).abs(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{ere_closed_form_single, GmmScore, GmmSpec};
    use crate::linalg;
    use crate::score::{Activation, ScoreNet};
    use crate::tape::DenseLayer;
    use proptest::prelude::*;

    fn single_spec() -> GmmSpec {
        GmmSpec::single(alloc::vec![0.5], 0.1)
    }

    #[test]
    fn zero_net_gives_pure_noise_norm() {
        let net = ScoreNet::from_layers(alloc::vec![DenseLayer::zeros(2, 2)], Activation::Tanh).unwrap();
        let bank = NoiseBank::new(404, 3, 64);
        let value = ere_value(&net, &[0.3, 0.7], 0.25, 2, &bank);
        let mut expected = 0.0;
        let mut xi = [0.0; 2];
        for i in 0..bank.m {
            bank.write_xi(2, i, &mut xi);
            expected += linalg::norm_sq(&xi);
        }
        expected /= bank.m as f64;
        assert_eq!(value, expected);
    }

    #[test]
    fn oracle_adapter_matches_closed_form() {
        // K=1, mu=0.5, std=0.1, sigma=0.1: R(0.5) = 0.25, R(0.6) = 0.50.
        let spec = single_spec();
        let field = GmmScore::new(&spec);
        let bank = NoiseBank::new(11, 1, 100_000);
        // Per-sample variance at the mode is 2 * 0.25^2, off-mode slightly larger.
        let se = libm::sqrt(2.0 * 0.0625 / bank.m as f64);
        for (x, expected) in [(0.5, 0.25), (0.6, 0.50)] {
            let v = ere_value(&field, &[x], 0.1, 1, &bank);
            assert!((v - expected).abs() < 4.0 * se, "x={x}: {v} vs {expected}");
        }
    }

    #[test]
    fn repeated_calls_are_bitwise_identical() {
        let spec = single_spec();
        let field = GmmScore::new(&spec);
        let bank = NoiseBank::new(987, 4, 512);
        let a = ere_grad(&field, &[0.61], 0.07, 3, &bank);
        let b = ere_grad(&field, &[0.61], 0.07, 3, &bank);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.grad[0].to_bits(), b.grad[0].to_bits());
        // Value path and grad path accumulate identically.
        let v = ere_value(&field, &[0.61], 0.07, 3, &bank);
        assert_eq!(v.to_bits(), a.value.to_bits());
    }

    #[test]
    fn gradient_matches_finite_differences_same_bank() {
        let spec = GmmSpec::new(
            alloc::vec![0.5, 0.5],
            alloc::vec![alloc::vec![0.25], alloc::vec![0.75]],
            alloc::vec![0.1, 0.1],
        )
        .unwrap();
        let field = GmmScore::new(&spec);
        let bank = NoiseBank::new(5, 1, 2_000);
        let sigma = 0.1;
        let x = [0.4];
        let g = ere_grad(&field, &x, sigma, 1, &bank);
        let h = 1e-5;
        let fp = ere_value(&field, &[x[0] + h], sigma, 1, &bank);
        let fm = ere_value(&field, &[x[0] - h], sigma, 1, &bank);
        let fd = (fp - fm) / (2.0 * h);
        let rel = (g.grad[0] - fd).abs() / fd.abs().max(1e-9);
        assert!(rel < 1e-4, "grad {} vs fd {fd} (rel {rel})", g.grad[0]);
    }

    #[test]
    fn gradient_matches_finite_differences_through_network() {
        let net = ScoreNet::default_arch(2, Activation::Tanh, 37);
        let bank = NoiseBank::new(6, 2, 32);
        let sigma = 0.2;
        let x = [0.35, 0.65];
        let g = ere_grad(&net, &x, sigma, 1, &bank);
        let h = 1e-5;
        for j in 0..2 {
            let mut xp = x;
            xp[j] += h;
            let fp = ere_value(&net, &xp, sigma, 1, &bank);
            xp[j] = x[j] - h;
            let fm = ere_value(&net, &xp, sigma, 1, &bank);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (g.grad[j] - fd).abs() / fd.abs().max(1e-9);
            assert!(rel < 1e-4, "dim {j}: grad {} vs fd {fd}", g.grad[j]);
        }
    }

    #[test]
    fn closed_form_gradient_away_from_mode() {
        // grad R = 2 sigma^2 (x - mu) / (std^2 + sigma^2)^2 = 5.0 at x = 0.6.
        let spec = single_spec();
        let field = GmmScore::new(&spec);
        let bank = NoiseBank::new(2, 1, 100_000);
        let g = ere_grad(&field, &[0.6], 0.1, 1, &bank);
        // Per-sample gradient sd is (2 sigma / v) * sd(r) = 10 * 0.5 = 5.
        let se = 5.0 / libm::sqrt(bank.m as f64);
        assert!((g.grad[0] - 5.0).abs() < 4.0 * se, "{} (se {se})", g.grad[0]);
    }

    #[test]
    fn antithetic_gradient_vanishes_at_mode() {
        let spec = single_spec();
        let field = GmmScore::new(&spec);
        let bank = NoiseBank::new(3, 1, 64).with_antithetic(true);
        let g = ere_grad(&field, &[0.5], 0.1, 1, &bank);
        assert!(g.grad[0].abs() < 1e-3, "{}", g.grad[0]);
    }

    #[test]
    fn antithetic_pairs_negate() {
        let bank = NoiseBank::new(77, 2, 8).with_antithetic(true);
        let mut even = [0.0; 3];
        let mut odd = [0.0; 3];
        bank.write_xi(1, 4, &mut even);
        bank.write_xi(1, 5, &mut odd);
        for (e, o) in even.iter().zip(&odd) {
            assert_eq!(*e, -*o);
        }
    }

    #[test]
    fn convergence_probe_error_shrinks_at_root_m_rate() {
        // The spread of R_m over independent banks halves when m quadruples.
        let spec = single_spec();
        let field = GmmScore::new(&spec);
        let reference = ere_closed_form_single(&spec, &[0.55], 0.1).unwrap();
        let m_list = [16usize, 64, 256, 1024];
        let replicas = 200;
        let mut log_m = alloc::vec::Vec::new();
        let mut log_std = alloc::vec::Vec::new();
        for &m in &m_list {
            let mut devs = alloc::vec::Vec::new();
            for rep in 0..replicas {
                let bank = NoiseBank::new(1000 + rep as u64, 1, m);
                let v = ere_value(&field, &[0.55], 0.1, 1, &bank);
                devs.push(v - reference);
            }
            let mean = devs.iter().sum::<f64>() / devs.len() as f64;
            let var = devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / devs.len() as f64;
            log_m.push(libm::log(m as f64));
            log_std.push(libm::log(libm::sqrt(var)));
        }
        let slope = linalg::ls_slope(&log_m, &log_std);
        assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn probe_records_default_scale_and_degenerate_m() {
        let spec = single_spec();
        let field = GmmScore::new(&spec);
        let reference = ere_closed_form_single(&spec, &[0.5], 0.1).unwrap();
        let rows = mc_convergence_probe(&field, &[0.5], 0.1, 1, 42, 1, &[1, 4, 1024], reference);
        assert_eq!(rows.len(), 3);
        // m = 1 is a single-sample reconstruction error.
        let bank = NoiseBank::new(42, 1, 1);
        let mut xi = [0.0];
        bank.write_xi(1, 0, &mut xi);
        let spec_score = GmmScore::new(&spec);
        let y = [0.5 + 0.1 * xi[0]];
        let s = spec_score.score(&y, 0.1);
        let r = xi[0] + 0.1 * s[0];
        assert_eq!(rows[0].estimate.to_bits(), (r * r).to_bits());
        // m = 4 (the purification default) is recorded for reference.
        assert_eq!(rows[1].m, 4);
        assert!(rows[2].abs_error < rows[0].abs_error.max(0.05));
    }

    proptest! {
        #[test]
        fn estimates_are_nonnegative_and_deterministic(
            seed in any::<u64>(),
            x in -1.5f64..2.5,
            sigma in 0.01f64..0.8,
            m in 1usize..24,
        ) {
            let spec = single_spec();
            let field = GmmScore::new(&spec);
            let bank = NoiseBank::new(seed, 2, m);
            let a = ere_value(&field, &[x], sigma, 1, &bank);
            let b = ere_value(&field, &[x], sigma, 1, &bank);
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
