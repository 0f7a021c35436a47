//! Small dense softmax classifier and the purified-sample augmentation
//! objective.
//!
//! The classifier keeps its own closed-form backward pass (softmax
//! cross-entropy through tanh layers) rather than going through the tape:
//! the tape's primitive set is sized for the score model, and the
//! cross-entropy gradient is two lines by hand.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::field::ScoreField;
use crate::linalg;
use crate::purify::{self, PurifyConfig, PurifyError};
use crate::rng::Stream;
use crate::schedule::NoiseSchedule;
use crate::tape::{DenseLayer, LayerGrad};

/// Dense network `R^d -> R^C` with tanh hidden activations and linear logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifyError {
    BadArchitecture(&'static str),
    MisalignedDataset,
    EmptyDataset,
    LabelOutOfRange { label: usize, classes: usize },
    Diverged { step: usize },
    Purify(PurifyError),
}

impl fmt::Display for ClassifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifyError::BadArchitecture(why) => write!(f, "bad architecture: {why}"),
            ClassifyError::MisalignedDataset => write!(f, "dataset fields have different lengths"),
            ClassifyError::EmptyDataset => write!(f, "dataset is empty"),
            ClassifyError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            ClassifyError::Diverged { step } => write!(f, "training diverged at step {step}"),
            ClassifyError::Purify(e) => write!(f, "purification failed: {e}"),
        }
    }
}

impl From<PurifyError> for ClassifyError {
    fn from(e: PurifyError) -> Self {
        ClassifyError::Purify(e)
    }
}

impl Classifier {
    pub fn with_random_init(dims: &[usize], seed: u64) -> Result<Self, ClassifyError> {
        if dims.len() < 2 {
            return Err(ClassifyError::BadArchitecture("need at least one layer"));
        }
        if dims[dims.len() - 1] < 2 {
            return Err(ClassifyError::BadArchitecture("need at least two classes"));
        }
        let mut stream = Stream::new(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let scale = 1.0 / libm::sqrt(w[0] as f64);
            let weight: Vec<f64> = (0..w[0] * w[1]).map(|_| scale * stream.next_normal()).collect();
            layers.push(
                DenseLayer::new(w[1], w[0], weight, vec![0.0; w[1]])
                    .map_err(|_| ClassifyError::BadArchitecture("non-finite init"))?,
            );
        }
        Ok(Classifier { layers })
    }

    /// Default desk-scale architecture: two hidden layers of width 32.
    pub fn default_arch(dim: usize, classes: usize, seed: u64) -> Self {
        Self::with_random_init(&[dim, 32, 32, classes], seed).expect("valid default architecture")
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, ClassifyError> {
        if layers.is_empty() {
            return Err(ClassifyError::BadArchitecture("need at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(ClassifyError::BadArchitecture("adjacent layer shapes disagree"));
            }
        }
        if layers[layers.len() - 1].out_dim < 2 {
            return Err(ClassifyError::BadArchitecture("need at least two classes"));
        }
        Ok(Classifier { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                for v in h.iter_mut() {
                    *v = libm::tanh(*v);
                }
            }
        }
        h
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// Cross-entropy loss plus gradients w.r.t. parameters and the input,
    /// all from one backward pass.
    pub fn loss_and_grads(&self, x: &[f64], y: usize) -> (f64, Vec<LayerGrad>, Vec<f64>) {
        debug_assert!(y < self.num_classes());
        let last = self.layers.len() - 1;
        // Forward, keeping post-activation values per layer (h[0] = input).
        let mut hs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        hs.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(&hs[i]);
            if i < last {
                for v in z.iter_mut() {
                    *v = libm::tanh(*v);
                }
            }
            hs.push(z);
        }
        let logits = &hs[self.layers.len()];
        let (loss, probs) = cross_entropy_with_probs(logits, y);

        // Backward: dz at the logits is softmax - onehot.
        let mut dz = probs;
        dz[y] -= 1.0;
        let mut grads: Vec<LayerGrad> = self
            .layers
            .iter()
            .map(|l| LayerGrad {
                weight: vec![0.0; l.weight.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let h_in = &hs[i];
            for (r, dzr) in dz.iter().enumerate() {
                let row = &mut grads[i].weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                linalg::axpy(row, *dzr, h_in);
                grads[i].bias[r] += dzr;
            }
            let mut dh = layer.apply_transpose(&dz);
            if i > 0 {
                // Through the tanh of the previous layer's output.
                for (dv, hv) in dh.iter_mut().zip(&hs[i]) {
                    *dv *= 1.0 - hv * hv;
                }
            }
            dz = dh;
        }
        (loss, grads, dz)
    }

    /// Loss and input gradient only.
    pub fn loss_grad_input(&self, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        let (loss, _, gx) = self.loss_and_grads(x, y);
        (loss, gx)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable `logsumexp(z) - z_y` plus the softmax probabilities.
fn cross_entropy_with_probs(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    let mut probs: Vec<f64> = logits.iter().map(|z| libm::exp(z - m)).collect();
    for p in &probs {
        sum += p;
    }
    let lse = m + libm::log(sum);
    for p in probs.iter_mut() {
        *p /= sum;
    }
    (lse - logits[y], probs)
}

pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    cross_entropy_with_probs(logits, y).0
}

/// Labeled samples in the unit box, optionally paired with purified versions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<usize>,
    pub purified: Option<Vec<Vec<f64>>>,
}

impl LabeledDataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<usize>) -> Result<Self, ClassifyError> {
        if xs.len() != ys.len() {
            return Err(ClassifyError::MisalignedDataset);
        }
        if xs.iter().any(|x| !linalg::in_unit_box(x, 0.0)) {
            return Err(ClassifyError::BadArchitecture("samples must lie in the unit box"));
        }
        Ok(LabeledDataset { xs, ys, purified: None })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// `1/2 l(h(x), y) + 1/2 l(h(x_pur), y)` with cross-entropy `l`.
pub fn augmented_loss(h: &Classifier, x: &[f64], x_pur: &[f64], y: usize) -> f64 {
    0.5 * cross_entropy(&h.logits(x), y) + 0.5 * cross_entropy(&h.logits(x_pur), y)
}

/// Pair every sample with its purified version. The sharpness option is
/// force-disabled here: augmentation trains the classifier on the plain
/// landscape of the score field. A zero purification radius short-circuits
/// to `x_pur = x`.
pub fn build_augmented_dataset<S: ScoreField>(
    data: &LabeledDataset,
    field: &S,
    schedule: &NoiseSchedule,
    cfg: &PurifyConfig,
) -> Result<LabeledDataset, ClassifyError> {
    if data.is_empty() {
        return Err(ClassifyError::EmptyDataset);
    }
    let mut cfg = cfg.clone();
    cfg.sam_enabled = false;
    let mut purified = Vec::with_capacity(data.len());
    if cfg.rho_pur == 0.0 {
        purified.extend(data.xs.iter().cloned());
    } else {
        for x in &data.xs {
            let (x_pur, _) = purify::purify(x, field, schedule, &cfg)?;
            purified.push(x_pur);
        }
    }
    Ok(LabeledDataset {
        xs: data.xs.clone(),
        ys: data.ys.clone(),
        purified: Some(purified),
    })
}

/// Minibatch gradient descent on the (augmented) cross-entropy objective.
/// Deterministic under a fixed seed.
pub fn train_classifier_with(
    data: &LabeledDataset,
    dims: &[usize],
    epochs: usize,
    step_size: f64,
    seed: u64,
) -> Result<Classifier, ClassifyError> {
    if data.is_empty() {
        return Err(ClassifyError::EmptyDataset);
    }
    let mut h = Classifier::with_random_init(dims, seed)?;
    let classes = h.num_classes();
    if let Some(&bad) = data.ys.iter().find(|&&y| y >= classes) {
        return Err(ClassifyError::LabelOutOfRange { label: bad, classes });
    }
    if let Some(p) = &data.purified {
        if p.len() != data.len() {
            return Err(ClassifyError::MisalignedDataset);
        }
    }

    let batch = 16usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_stream = Stream::new(crate::rng::derive_seed(seed, 1));
    let mut step = 0usize;
    for _epoch in 0..epochs {
        shuffle_stream.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let mut acc: Vec<LayerGrad> = h
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect();
            let mut loss_acc = 0.0;
            let mut weight_total = 0.0;
            for &idx in chunk {
                let branches: &[(&[f64], f64)] = match &data.purified {
                    Some(p) => &[(&data.xs[idx], 0.5), (&p[idx], 0.5)],
                    None => &[(&data.xs[idx], 1.0)],
                };
                for (x, w) in branches {
                    let (loss, grads, _) = h.loss_and_grads(x, data.ys[idx]);
                    loss_acc += w * loss;
                    weight_total += w;
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        linalg::axpy(&mut a.weight, *w, &g.weight);
                        linalg::axpy(&mut a.bias, *w, &g.bias);
                    }
                }
            }
            if !loss_acc.is_finite() {
                return Err(ClassifyError::Diverged { step });
            }
            let scale = -step_size / weight_total;
            for (layer, g) in h.layers.iter_mut().zip(&acc) {
                linalg::axpy(&mut layer.weight, scale, &g.weight);
                linalg::axpy(&mut layer.bias, scale, &g.bias);
            }
            step += 1;
        }
    }
    Ok(h)
}

/// Default architecture and step size; see [`train_classifier_with`].
pub fn train_classifier(
    data: &LabeledDataset,
    epochs: usize,
    seed: u64,
) -> Result<Classifier, ClassifyError> {
    let dim = data.xs.first().map(|x| x.len()).unwrap_or(0);
    let classes = data.ys.iter().copied().max().unwrap_or(0).max(1) + 1;
    train_classifier_with(data, &[dim, 32, 32, classes], epochs, 0.1, seed)
}
