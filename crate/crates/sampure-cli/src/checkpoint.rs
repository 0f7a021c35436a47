//! Checkpoint files for score networks and classifiers.
//!
//! One JSON schema for both kinds:
//!
//! ```json
//! {
//!   "version": 1,
//!   "kind": "score" | "classifier",
//!   "dims": [1, 64, 64, 1],
//!   "activation": "tanh" | "relu",
//!   "layers": [{"w": [[row], [row]], "b": [..]}, ..],
//!   "schedule": {"sigma_max": .., "sigma_min": .., "levels": ..},
//!   "seeds": {"param": .., "noise": ..}
//! }
//! ```
//!
//! `schedule` travels with score checkpoints so purification can rebuild the
//! exact training scales; classifiers omit it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sampure_core::classify::Classifier;
use sampure_core::schedule::{geometric_schedule, NoiseSchedule};
use sampure_core::score::{Activation, ScoreNet};
use sampure_core::tape::DenseLayer;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerJson {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScheduleJson {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub levels: usize,
}

impl ScheduleJson {
    pub fn build(&self) -> Result<NoiseSchedule> {
        geometric_schedule(self.sigma_max, self.sigma_min, self.levels)
            .map_err(|e| anyhow::anyhow!("bad schedule in checkpoint: {e}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointFile {
    pub version: u32,
    pub kind: String,
    pub dims: Vec<usize>,
    pub activation: String,
    pub layers: Vec<LayerJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleJson>,
    pub seeds: BTreeMap<String, u64>,
}

fn layers_to_json(layers: &[DenseLayer]) -> Vec<LayerJson> {
    layers
        .iter()
        .map(|l| LayerJson {
            w: (0..l.out_dim)
                .map(|r| l.weight[r * l.in_dim..(r + 1) * l.in_dim].to_vec())
                .collect(),
            b: l.bias.clone(),
        })
        .collect()
}

fn layers_from_json(json: &[LayerJson]) -> Result<Vec<DenseLayer>> {
    json.iter()
        .map(|l| {
            let out_dim = l.w.len();
            if out_dim == 0 {
                bail!("layer has no rows");
            }
            let in_dim = l.w[0].len();
            if l.w.iter().any(|row| row.len() != in_dim) {
                bail!("ragged weight rows");
            }
            let weight: Vec<f64> = l.w.iter().flatten().copied().collect();
            DenseLayer::new(out_dim, in_dim, weight, l.b.clone())
                .map_err(|e| anyhow::anyhow!("bad layer: {e}"))
        })
        .collect()
}

fn dims_of(layers: &[DenseLayer]) -> Vec<usize> {
    let mut dims = vec![layers[0].in_dim];
    dims.extend(layers.iter().map(|l| l.out_dim));
    dims
}

pub fn score_checkpoint(
    net: &ScoreNet,
    schedule: &ScheduleJson,
    seeds: BTreeMap<String, u64>,
) -> CheckpointFile {
    CheckpointFile {
        version: CHECKPOINT_VERSION,
        kind: "score".into(),
        dims: dims_of(&net.layers),
        activation: match net.activation {
            Activation::Tanh => "tanh".into(),
            Activation::Relu => "relu".into(),
        },
        layers: layers_to_json(&net.layers),
        schedule: Some(schedule.clone()),
        seeds,
    }
}

pub fn classifier_checkpoint(h: &Classifier, seeds: BTreeMap<String, u64>) -> CheckpointFile {
    CheckpointFile {
        version: CHECKPOINT_VERSION,
        kind: "classifier".into(),
        dims: dims_of(&h.layers),
        activation: "tanh".into(),
        layers: layers_to_json(&h.layers),
        schedule: None,
        seeds,
    }
}

pub fn save(path: &Path, file: &CheckpointFile) -> Result<()> {
    let json = serde_json::to_string_pretty(file)?;
    fs::write(path, json).with_context(|| format!("writing checkpoint {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<CheckpointFile> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    if file.version != CHECKPOINT_VERSION {
        bail!("unsupported checkpoint version {}", file.version);
    }
    Ok(file)
}

pub fn as_score_net(file: &CheckpointFile) -> Result<(ScoreNet, Option<NoiseSchedule>)> {
    if file.kind != "score" {
        bail!("checkpoint kind {:?} is not a score network", file.kind);
    }
    let activation = match file.activation.as_str() {
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        other => bail!("unknown activation {other:?}"),
    };
    let layers = layers_from_json(&file.layers)?;
    let net = ScoreNet::from_layers(layers, activation)
        .map_err(|e| anyhow::anyhow!("bad score network: {e}"))?;
    if dims_of(&net.layers) != file.dims {
        bail!("checkpoint dims disagree with layer shapes");
    }
    let schedule = file.schedule.as_ref().map(|s| s.build()).transpose()?;
    Ok((net, schedule))
}

pub fn as_classifier(file: &CheckpointFile) -> Result<Classifier> {
    if file.kind != "classifier" {
        bail!("checkpoint kind {:?} is not a classifier", file.kind);
    }
    let layers = layers_from_json(&file.layers)?;
    let h = Classifier::from_layers(layers).map_err(|e| anyhow::anyhow!("bad classifier: {e}"))?;
    if dims_of(&h.layers) != file.dims {
        bail!("checkpoint dims disagree with layer shapes");
    }
    Ok(h)
}
