//! Trainable score network and its denoising trainer.
//!
//! The network is noise-conditioned purely through its output scaling:
//! `s(x; sigma) = gamma(x) / sigma`, where `gamma` is a sigma-free dense
//! network `R^d -> R^d`. Two consequences drive the design:
//!
//! - the piecewise structure of `gamma` (and hence of the score) does not
//!   depend on sigma, which is what the relu "theory mode" needs;
//! - the denoising residual `xi + sigma * s(x + sigma xi; sigma)` is exactly
//!   `xi + gamma(x + sigma xi)`, so the training loss needs no per-level
//!   weighting.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::field::ScoreField;
use crate::linalg;
use crate::rng::{self, Stream};
use crate::schedule::NoiseSchedule;
use crate::tape::{DenseLayer, NodeId, ParamId, Tape, TapeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    /// Smooth default for training.
    Tanh,
    /// Piecewise-affine mode; keeps the score affine on fixed cells.
    Relu,
}

/// Dense score network with `1/sigma` output conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreError {
    BadArchitecture(&'static str),
    EmptyDataset,
    Diverged { step: usize },
    Tape(TapeError),
}

impl fmt::Display for ScoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreError::BadArchitecture(why) => write!(f, "bad architecture: {why}"),
            ScoreError::EmptyDataset => write!(f, "training data is empty"),
            ScoreError::Diverged { step } => write!(f, "training diverged (non-finite loss) at step {step}"),
            ScoreError::Tape(e) => write!(f, "tape error: {e}"),
        }
    }
}

impl From<TapeError> for ScoreError {
    fn from(e: TapeError) -> Self {
        ScoreError::Tape(e)
    }
}

impl ScoreNet {
    /// Network with the given layer dimensions, e.g. `[d, 64, 64, d]`.
    /// Weights are seeded normal scaled by `1/sqrt(fan_in)`, biases zero.
    pub fn with_random_init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self, ScoreError> {
        if dims.len() < 2 {
            return Err(ScoreError::BadArchitecture("need at least one layer"));
        }
        if dims[0] != dims[dims.len() - 1] {
            return Err(ScoreError::BadArchitecture("input and output dimensions must match"));
        }
        let mut stream = Stream::new(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / libm::sqrt(fan_in as f64);
            let weight: Vec<f64> = (0..fan_in * fan_out).map(|_| scale * stream.next_normal()).collect();
            let bias = vec![0.0; fan_out];
            layers.push(DenseLayer::new(fan_out, fan_in, weight, bias).map_err(ScoreError::from)?);
        }
        Ok(ScoreNet { layers, activation })
    }

    /// Default desk-scale architecture: two hidden layers of width 64.
    pub fn default_arch(dim: usize, activation: Activation, seed: u64) -> Self {
        Self::with_random_init(&[dim, 64, 64, dim], activation, seed).expect("valid default architecture")
    }

    pub fn from_layers(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self, ScoreError> {
        if layers.is_empty() {
            return Err(ScoreError::BadArchitecture("need at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(ScoreError::BadArchitecture("adjacent layer shapes disagree"));
            }
        }
        if layers[0].in_dim != layers[layers.len() - 1].out_dim {
            return Err(ScoreError::BadArchitecture("input and output dimensions must match"));
        }
        Ok(ScoreNet { layers, activation })
    }

    pub fn dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// The sigma-free network output `gamma(x)`.
    pub fn gamma(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                for v in h.iter_mut() {
                    *v = match self.activation {
                        Activation::Tanh => libm::tanh(*v),
                        Activation::Relu => v.max(0.0),
                    };
                }
            }
        }
        h
    }

    /// The conditioning-free part as used when evaluating at scale `sigma`.
    /// It does not depend on `sigma`; the argument exists so callers can
    /// assert that fact directly.
    pub fn gamma_for_sigma(&self, x: &[f64], _sigma: f64) -> Vec<f64> {
        self.gamma(x)
    }

    /// Register all layers on a tape; returns one param id per layer.
    pub fn register_on<'p>(&'p self, tape: &mut Tape<'p>) -> Vec<ParamId> {
        self.layers.iter().map(|l| tape.register(l)).collect()
    }

    /// Append the `gamma` graph to a tape, returning the output node.
    pub fn build_gamma_graph(
        &self,
        tape: &mut Tape<'_>,
        params: &[ParamId],
        input: NodeId,
    ) -> Result<NodeId, TapeError> {
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, pid) in params.iter().enumerate() {
            h = tape.affine(*pid, h)?;
            if i < last {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        Ok(h)
    }
}

impl ScoreField for ScoreNet {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let mut g = self.gamma(x);
        for v in g.iter_mut() {
            *v /= sigma;
        }
        g
    }

    fn score_vjp(&self, x: &[f64], sigma: f64, v: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let params = self.register_on(&mut tape);
        let input = tape.leaf(self.dim());
        let gamma = self
            .build_gamma_graph(&mut tape, &params, input)
            .expect("network shapes are validated at construction");
        tape.set(input, x).expect("input dimension matches network");
        tape.forward();
        tape.backward_seeded(gamma, v).expect("seed dimension matches output");
        linalg::scale(tape.adjoint(input), 1.0 / sigma)
    }
}

/// Training hyperparameters. Seeds are split: `param_seed` initializes the
/// network, `noise_seed` drives batch order, level choices, and noise draws.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub param_seed: u64,
    pub noise_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 80,
            step_size: 0.05,
            param_seed: 1,
            noise_seed: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.step_size > 0.0) {
            return Err(ScoreError::BadArchitecture("training config fields must be positive"));
        }
        Ok(())
    }
}

pub struct TrainResult {
    pub net: ScoreNet,
    /// Mean denoising loss per optimization step.
    pub losses: Vec<f64>,
}

/// Denoising loss of a batch at one noise scale:
/// `mean_i ||xi_i + gamma(x_i + sigma xi_i)||^2`.
pub fn dsm_loss(net: &ScoreNet, batch: &[Vec<f64>], sigma: f64, noise: &[Vec<f64>]) -> f64 {
    assert_eq!(batch.len(), noise.len(), "noise shape must match batch");
    let d = net.dim();
    let mut acc = 0.0;
    let mut y = vec![0.0; d];
    for (x, xi) in batch.iter().zip(noise) {
        for j in 0..d {
            y[j] = x[j] + sigma * xi[j];
        }
        let g = net.gamma(&y);
        let mut r = 0.0;
        for j in 0..d {
            let t = xi[j] + g[j];
            r += t * t;
        }
        acc += r;
    }
    acc / batch.len() as f64
}

/// Stochastic gradient descent on the denoising objective. Each batch item
/// draws its own level from the schedule and its own noise vector; the whole
/// run is a pure function of the seeds.
pub fn train(
    net: ScoreNet,
    data: &[Vec<f64>],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainResult, ScoreError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ScoreError::EmptyDataset);
    }
    let d = net.dim();
    let mut net = net;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut order_stream = Stream::new(rng::derive_seed(cfg.noise_seed, 0));
    let mut pick_stream = Stream::new(rng::derive_seed(cfg.noise_seed, 1));
    let noise_seed = rng::derive_seed(cfg.noise_seed, 2);

    let mut losses = Vec::new();
    let mut step = 0usize;
    let mut y = vec![0.0; d];
    let mut xi = vec![0.0; d];

    for _epoch in 0..cfg.epochs {
        order_stream.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = {
                let mut tape = Tape::new();
                let params = net.register_on(&mut tape);
                let mut residuals = Vec::with_capacity(chunk.len());
                let mut leaves = Vec::with_capacity(chunk.len());
                for _ in chunk {
                    let y_leaf = tape.leaf(d);
                    let xi_leaf = tape.leaf(d);
                    let g = net.build_gamma_graph(&mut tape, &params, y_leaf)?;
                    let r = tape.add(xi_leaf, g)?;
                    residuals.push(tape.sum_squares(r));
                    leaves.push((y_leaf, xi_leaf));
                }
                let root = tape.mean(&residuals)?;

                for (slot, &idx) in chunk.iter().enumerate() {
                    let level = pick_stream.next_index(schedule.len()) + 1;
                    let sigma = schedule.sigma(level);
                    // Counter layout: (step, slot) pairs never collide.
                    let base = ((step as u64) << 32 | slot as u64) * d as u64;
                    rng::fill_normal(noise_seed, base, &mut xi);
                    for j in 0..d {
                        y[j] = data[idx][j] + sigma * xi[j];
                    }
                    let (y_leaf, xi_leaf) = leaves[slot];
                    tape.set(y_leaf, &y)?;
                    tape.set(xi_leaf, &xi)?;
                }
                tape.forward();
                tape.backward(root)?;
                (tape.value(root)[0], tape.into_param_grads())
            };

            if !loss.is_finite() {
                return Err(ScoreError::Diverged { step });
            }
            losses.push(loss);
            for (layer, grad) in net.layers.iter_mut().zip(&grads) {
                linalg::axpy(&mut layer.weight, -cfg.step_size, &grad.weight);
                linalg::axpy(&mut layer.bias, -cfg.step_size, &grad.bias);
            }
            step += 1;
        }
    }
    Ok(TrainResult { net, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{self, GmmSpec};
    use crate::schedule::geometric_schedule;

    fn zero_net(d: usize) -> ScoreNet {
        ScoreNet::from_layers(vec![DenseLayer::zeros(d, d)], Activation::Tanh).unwrap()
    }

    /// Single affine layer realizing the exact K=1 score at a fixed sigma:
    /// gamma(y) = -sigma (y - mu) / (std^2 + sigma^2).
    fn exact_single_gaussian_net(mu: f64, std: f64, sigma: f64) -> ScoreNet {
        let v = std * std + sigma * sigma;
        let layer = DenseLayer::new(1, 1, vec![-sigma / v], vec![sigma * mu / v]).unwrap();
        ScoreNet::from_layers(vec![layer], Activation::Tanh).unwrap()
    }

    #[test]
    fn zero_net_loss_is_mean_noise_norm() {
        let net = zero_net(3);
        let batch = vec![vec![0.2, 0.4, 0.6]; 50];
        let noise: Vec<Vec<f64>> = (0..50)
            .map(|i| (0..3).map(|j| rng::stream_normal(4, (i * 3 + j) as u64)).collect())
            .collect();
        let loss = dsm_loss(&net, &batch, 0.3, &noise);
        let expected: f64 =
            noise.iter().map(|n| linalg::norm_sq(n)).sum::<f64>() / noise.len() as f64;
        assert_eq!(loss, expected);
        // In expectation this is the dimension d = 3.
        assert!((loss - 3.0).abs() < 0.5);
    }

    #[test]
    fn exact_score_net_recovers_oracle_ere_at_mode() {
        // With data pinned at the mode, E[loss] = R(mu; sigma) = 0.25 for
        // mu=0.5, std=0.1, sigma=0.1.
        let (mu, std, sigma) = (0.5, 0.1, 0.1);
        let net = exact_single_gaussian_net(mu, std, sigma);
        let n = 100_000;
        let batch = vec![vec![mu]; n];
        let noise: Vec<Vec<f64>> = (0..n).map(|i| vec![rng::stream_normal(15, i as u64)]).collect();
        let loss = dsm_loss(&net, &batch, sigma, &noise);
        // Var of each ((1 - sigma^2/v) xi)^2 term is 2 * 0.25^2.
        let se = libm::sqrt(2.0 * 0.25 * 0.25 / n as f64);
        assert!((loss - 0.25).abs() < 3.0 * se, "{loss} (se {se})");

        let spec = GmmSpec::single(vec![mu], std);
        let oracle = gmm::exact_ere(&spec, &[mu], sigma, n, 16).unwrap();
        assert!((loss - oracle.mean).abs() < 3.0 * (se + oracle.std_err));
    }

    #[test]
    fn dsm_difference_identity_against_exact_score() {
        // For fixed nets a, b and (X, Xi) sampled jointly:
        //   E[||xi + gamma_a||^2 - ||xi + gamma_b||^2]
        //     = sigma^2 E[||s - s_a||^2 - ||s - s_b||^2],
        // with s the exact mixture score. Paired sampling keeps the variance
        // of the difference small.
        let spec = GmmSpec::new(vec![0.5, 0.5], vec![vec![0.25], vec![0.75]], vec![0.1, 0.1]).unwrap();
        let sigma = 0.2;
        let net_a = ScoreNet::default_arch(1, Activation::Tanh, 100);
        let net_b = ScoreNet::default_arch(1, Activation::Tanh, 200);

        let n = 100_000;
        let xs = spec.sample(n, 31);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let xi = rng::stream_normal(32, i as u64);
            let y = [x[0] + sigma * xi];
            let s = gmm::exact_score(&spec, &y, sigma).unwrap()[0];
            let ga = net_a.gamma(&y)[0];
            let gb = net_b.gamma(&y)[0];
            let lhs = {
                let ra = xi + ga;
                let rb = xi + gb;
                ra * ra - rb * rb
            };
            let rhs = {
                let da = s - ga / sigma;
                let db = s - gb / sigma;
                sigma * sigma * (da * da - db * db)
            };
            let diff = lhs - rhs;
            sum += diff;
            sum_sq += diff * diff;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = libm::sqrt(var / n as f64);
        assert!(mean.abs() < 3.0 * se.max(1e-12), "mean {mean}, se {se}");
    }

    #[test]
    fn sigma_conditioning_factorizes_exactly() {
        let net = ScoreNet::default_arch(2, Activation::Tanh, 7);
        let x = [0.3, 0.8];
        let g1 = net.gamma_for_sigma(&x, 0.05);
        let g2 = net.gamma_for_sigma(&x, 5.0);
        assert_eq!(g1, g2);
        // score * sigma recovers gamma up to one rounding of the division.
        let s = net.score(&x, 0.05);
        for (si, gi) in s.iter().zip(&g1) {
            assert!((si * 0.05 - gi).abs() <= 1e-15 * gi.abs().max(1.0));
        }
    }

    #[test]
    fn relu_mode_is_affine_between_pattern_changes() {
        let net = ScoreNet::default_arch(2, Activation::Relu, 13);

        let pattern = |net: &ScoreNet, x: &[f64]| -> Vec<bool> {
            let mut h = x.to_vec();
            let mut pat = Vec::new();
            let last = net.layers.len() - 1;
            for (i, layer) in net.layers.iter().enumerate() {
                h = layer.apply(&h);
                if i < last {
                    for v in h.iter_mut() {
                        pat.push(*v > 0.0);
                        *v = v.max(0.0);
                    }
                }
            }
            pat
        };

        let mut checked = 0;
        for trial in 0..200 {
            let a = [
                rng::stream_open01(900, 2 * trial),
                rng::stream_open01(900, 2 * trial + 1),
            ];
            let dir = [
                rng::stream_normal(901, 2 * trial),
                rng::stream_normal(901, 2 * trial + 1),
            ];
            let span = 1e-3;
            let b = [a[0] + span * dir[0], a[1] + span * dir[1]];
            if pattern(&net, &a) != pattern(&net, &b) {
                continue;
            }
            // Same activation pattern at both ends of the segment, so gamma
            // must be affine along it: midpoint value = average of endpoints.
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let gm = net.gamma(&mid);
            let ga = net.gamma(&a);
            let gb = net.gamma(&b);
            for j in 0..2 {
                let lin = 0.5 * (ga[j] + gb[j]);
                assert!(
                    (gm[j] - lin).abs() < 1e-12,
                    "trial {trial}: {} vs {}",
                    gm[j],
                    lin
                );
            }
            checked += 1;
        }
        assert!(checked > 50, "only {checked} segments avoided pattern changes");
    }

    /// Pointwise minimizer of the multi-level denoising objective for a
    /// single Gaussian: the density-weighted compromise across levels,
    /// `gamma*(y) = sum_k w_k(y) sigma_k s(y; sigma_k) / sum_k w_k(y)` with
    /// `w_k(y) = N(y; mu, std^2 + sigma_k^2)`. This is what a shared,
    /// sigma-free network can converge to at best: the per-level regression
    /// targets `sigma_k s(y; sigma_k)` differ across levels, so no single
    /// `gamma` matches the exact score at every scale.
    fn optimal_gamma_compromise(mu: f64, std: f64, sigmas: &[f64], y: f64) -> f64 {
        let mut wsum = 0.0;
        let mut tsum = 0.0;
        for &sk in sigmas {
            let v = std * std + sk * sk;
            let w = libm::exp(-(y - mu) * (y - mu) / (2.0 * v)) / libm::sqrt(v);
            tsum += w * (-sk * (y - mu) / v);
            wsum += w;
        }
        tsum / wsum
    }

    #[test]
    fn training_converges_to_the_level_compromise() {
        let (mu, std) = (0.5, 0.1);
        let spec = GmmSpec::single(vec![mu], std);
        let data = spec.sample(512, 11);
        let schedule = geometric_schedule(1.0, 0.01, 10).unwrap();
        let net = ScoreNet::with_random_init(&[1, 64, 64, 1], Activation::Tanh, 21).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            epochs: 120,
            step_size: 0.02,
            param_seed: 21,
            noise_seed: 22,
        };
        let result = train(net, &data, &schedule, &cfg).unwrap();

        // Relative L2 error of the trained gamma against the closed-form
        // objective minimizer over a grid on [0.2, 0.8].
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..61 {
            let y = 0.2 + 0.6 * i as f64 / 60.0;
            let g_hat = result.net.gamma(&[y])[0];
            let g_star = optimal_gamma_compromise(mu, std, schedule.sigmas(), y);
            num += (g_hat - g_star) * (g_hat - g_star);
            den += g_star * g_star;
        }
        let rel = libm::sqrt(num / den);
        assert!(rel < 0.1, "relative L2 error against the compromise {rel}");

        // Against the exact per-sigma score the conditioning bias caps the
        // achievable accuracy near 0.39 on this schedule; check the trained
        // net sits close to that floor and points the right way everywhere.
        let sigma = 0.1;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..61 {
            let x = [0.2 + 0.6 * i as f64 / 60.0];
            let s_hat = result.net.score(&x, sigma)[0];
            let s = gmm::exact_score(&spec, &x, sigma).unwrap()[0];
            num += (s_hat - s) * (s_hat - s);
            den += s * s;
            if (x[0] - mu).abs() > 0.05 {
                assert!(s_hat * s > 0.0, "score points away from the mode at {}", x[0]);
            }
        }
        let rel_exact = libm::sqrt(num / den);
        assert!(rel_exact < 0.5, "relative L2 error against the exact score {rel_exact}");

        // Loss curve should have improved substantially.
        let first = result.losses[..10].iter().sum::<f64>() / 10.0;
        let n = result.losses.len();
        let last = result.losses[n - 10..].iter().sum::<f64>() / 10.0;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn single_atom_dataset_score_points_home() {
        let x0 = 0.62;
        let data = vec![vec![x0]; 64];
        let schedule = geometric_schedule(0.5, 0.02, 8).unwrap();
        let net = ScoreNet::with_random_init(&[1, 32, 32, 1], Activation::Tanh, 3).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            epochs: 60,
            step_size: 0.02,
            param_seed: 3,
            noise_seed: 4,
        };
        let result = train(net, &data, &schedule, &cfg).unwrap();
        let sigma = 0.02;
        assert!(result.net.score(&[x0 - 0.05], sigma)[0] > 0.0);
        assert!(result.net.score(&[x0 + 0.05], sigma)[0] < 0.0);
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let spec = GmmSpec::single(vec![0.4], 0.15);
        let data = spec.sample(64, 8);
        let schedule = geometric_schedule(0.5, 0.05, 5).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            epochs: 3,
            step_size: 0.05,
            param_seed: 5,
            noise_seed: 6,
        };
        let run = || {
            let net = ScoreNet::with_random_init(&[1, 16, 1], Activation::Tanh, cfg.param_seed).unwrap();
            train(net, &data, &schedule, &cfg).unwrap().net
        };
        let a = run();
        let b = run();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            let wa: Vec<u64> = la.weight.iter().map(|v| v.to_bits()).collect();
            let wb: Vec<u64> = lb.weight.iter().map(|v| v.to_bits()).collect();
            assert_eq!(wa, wb);
            let ba: Vec<u64> = la.bias.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = lb.bias.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let schedule = geometric_schedule(1.0, 0.1, 3).unwrap();
        let net = zero_net(1);
        assert!(matches!(
            train(net, &[], &schedule, &TrainConfig::default()),
            Err(ScoreError::EmptyDataset)
        ));
    }
}
