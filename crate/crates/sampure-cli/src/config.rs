//! Experiment configuration: one JSON file per run.
//!
//! Every field has a default, and `reference_config()` emits a fully
//! populated document so the defaults are self-documenting. The config hash
//! is computed over the parsed (canonicalized) structure, so reordering
//! fields in the file does not change it while any semantic change does.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sampure_core::attack::{AttackConfig, Norm, Threat};
use sampure_core::ere::NoiseBank;
use sampure_core::gmm::GmmSpec;
use sampure_core::purify::PurifyConfig;
use sampure_core::schedule::{geometric_schedule, NoiseSchedule};
use sampure_core::score::{Activation, TrainConfig};

use crate::checkpoint::ScheduleJson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    TrainScore,
    TrainClassifier,
    Purify,
    Attack,
    Evaluate,
    VerifyTheory,
    Fig1,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::TrainScore => "train-score",
            Kind::TrainClassifier => "train-classifier",
            Kind::Purify => "purify",
            Kind::Attack => "attack",
            Kind::Evaluate => "evaluate",
            Kind::VerifyTheory => "verify-theory",
            Kind::Fig1 => "fig1",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// One class-conditional mixture per class.
    pub classes: Vec<GmmSpec>,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: vec![
                GmmSpec::single(vec![0.3, 0.3], 0.05),
                GmmSpec::single(vec![0.7, 0.7], 0.05),
            ],
            n_train: 200,
            n_test: 200,
        }
    }
}

impl DatasetConfig {
    pub fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    /// The unconditional input density: classes mixed with equal priors.
    pub fn joint_density(&self) -> Result<GmmSpec> {
        let prior = 1.0 / self.classes.len() as f64;
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for class in &self.classes {
            for k in 0..class.components() {
                weights.push(prior * class.weights[k]);
                means.push(class.means[k].clone());
                stds.push(class.stds[k]);
            }
        }
        GmmSpec::new(weights, means, stds).map_err(|e| anyhow::anyhow!("bad joint density: {e}"))
    }

    /// Labeled samples, clamped to the unit box; `split` keeps train and
    /// test draws disjoint.
    pub fn sample(&self, n_per_class: usize, seed: u64, split: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (label, class) in self.classes.iter().enumerate() {
            let class_seed = sampure_core::rng::derive_seed(seed, split * 1000 + label as u64);
            for x in class.sample(n_per_class, class_seed) {
                xs.push(x.iter().map(|v| v.clamp(0.0, 1.0)).collect());
                ys.push(label);
            }
        }
        (xs, ys)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreNetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        ScoreNetConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

impl ScoreNetConfig {
    pub fn dims(&self, d: usize) -> Vec<usize> {
        let mut dims = vec![d];
        dims.extend(&self.hidden);
        dims.push(d);
        dims
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub step_size: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![32, 32],
            epochs: 60,
            step_size: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PurifySection {
    pub rho_pur: f64,
    pub rho_sam: f64,
    pub sam_enabled: bool,
    pub eta_max: f64,
    pub eta_min: f64,
    /// Monte Carlo samples per estimator evaluation.
    pub m: usize,
    pub bank_seed: u64,
    pub antithetic: bool,
    pub lr_ramp_up: bool,
}

impl Default for PurifySection {
    fn default() -> Self {
        PurifySection {
            rho_pur: 0.3,
            rho_sam: 0.15,
            sam_enabled: true,
            eta_max: 0.1,
            eta_min: 0.001,
            m: 4,
            bank_seed: 7,
            antithetic: false,
            lr_ramp_up: false,
        }
    }
}

impl PurifySection {
    pub fn build(&self, levels: usize) -> PurifyConfig {
        let bank = NoiseBank::new(self.bank_seed, levels, self.m).with_antithetic(self.antithetic);
        PurifyConfig {
            rho_pur: self.rho_pur,
            rho_sam: self.rho_sam,
            sam_enabled: self.sam_enabled,
            eta_max: self.eta_max,
            eta_min: self.eta_min,
            bank,
            q: 2,
            lr_ramp_up: self.lr_ramp_up,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub norm: Norm,
    /// Defaults to the conventional budget for the norm.
    pub budget: Option<f64>,
    pub steps: usize,
    /// Defaults to 2.5 * budget / steps.
    pub step_size: Option<f64>,
    pub eot_samples: usize,
    pub threat: Threat,
    pub attack_seed: u64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            norm: Norm::L2,
            budget: None,
            steps: 20,
            step_size: None,
            eot_samples: 1,
            threat: Threat::BpdaDet,
            attack_seed: 0,
        }
    }
}

impl AttackSection {
    pub fn build(&self) -> AttackConfig {
        let budget = self.budget.unwrap_or_else(|| self.norm.default_budget());
        let mut cfg = AttackConfig::new(self.norm, budget, self.steps);
        if let Some(step) = self.step_size {
            cfg.step_size = step;
        }
        cfg.eot_samples = self.eot_samples.max(1);
        cfg.threat = self.threat;
        cfg.seed = self.attack_seed;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub n_mc_expansion: usize,
    pub n_mc_recovery: usize,
    pub n_mc_tail: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            n_mc_expansion: 1_000_000,
            n_mc_recovery: 100_000,
            n_mc_tail: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Fig1Section {
    pub sigma: f64,
    pub grid_points: usize,
    pub n_mc: usize,
}

impl Default for Fig1Section {
    fn default() -> Self {
        Fig1Section {
            sigma: 0.1,
            grid_points: 2000,
            n_mc: 50_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleJson,
    #[serde(default)]
    pub score_net: ScoreNetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub purify: PurifySection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub fig1: Fig1Section,
    /// Use the exact mixture score of the dataset's joint density instead of
    /// a trained network.
    #[serde(default)]
    pub oracle_score: bool,
    #[serde(default)]
    pub score_checkpoint: Option<String>,
    #[serde(default)]
    pub classifier_checkpoint: Option<String>,
}

fn default_seed() -> u64 {
    42
}

fn default_schedule() -> ScheduleJson {
    ScheduleJson {
        sigma_max: 0.3,
        sigma_min: 0.01,
        levels: 30,
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        geometric_schedule(self.schedule.sigma_max, self.schedule.sigma_min, self.schedule.levels)
            .map_err(|e| anyhow::anyhow!("bad schedule: {e}"))
    }

    /// Semantic validation; `base` resolves relative checkpoint paths.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.dataset.classes.is_empty() {
            bail!("dataset needs at least one class");
        }
        for (i, class) in self.dataset.classes.iter().enumerate() {
            class
                .validate()
                .map_err(|e| anyhow::anyhow!("dataset class {i}: {e}"))?;
            if class.dim() != self.dataset.dim() {
                bail!("dataset class dimensions disagree");
            }
        }
        if self.dataset.n_train == 0 || self.dataset.n_test == 0 {
            bail!("dataset sizes must be positive");
        }
        self.build_schedule()?;
        self.purify.build(self.schedule.levels).validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.attack.build().validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.train.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        // The negated comparison also rejects NaN step sizes.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if self.classifier.epochs == 0 || !(self.classifier.step_size > 0.0) {
            bail!("classifier training fields must be positive");
        }

        let needs_field = matches!(self.kind, Kind::Purify | Kind::TrainClassifier)
            || (matches!(self.kind, Kind::Attack | Kind::Evaluate)
                && self.attack.threat == Threat::BpdaDet);
        if needs_field && !self.oracle_score && self.score_checkpoint.is_none() {
            bail!(
                "kind {} needs a score field: set oracle_score or score_checkpoint",
                self.kind.as_str()
            );
        }
        if matches!(self.kind, Kind::Attack | Kind::Evaluate) && self.classifier_checkpoint.is_none() {
            bail!("kind {} needs classifier_checkpoint", self.kind.as_str());
        }
        for path in [&self.score_checkpoint, &self.classifier_checkpoint].into_iter().flatten() {
            let resolved = base.join(path);
            if !resolved.exists() {
                bail!("referenced file does not exist: {}", resolved.display());
            }
        }
        Ok(())
    }

    /// Stable hash of the parsed config: canonical JSON (sorted keys) run
    /// through FNV-1a.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = value.to_string();
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in canonical.as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

/// A fully populated config documenting every default.
pub fn reference_config() -> ExperimentConfig {
    ExperimentConfig {
        kind: Kind::Evaluate,
        seed: default_seed(),
        out_dir: Some("sampure-out".into()),
        threads: Some(1),
        dataset: DatasetConfig::default(),
        schedule: default_schedule(),
        score_net: ScoreNetConfig::default(),
        train: TrainConfig::default(),
        classifier: ClassifierConfig::default(),
        purify: PurifySection::default(),
        attack: AttackSection {
            budget: Some(Norm::L2.default_budget()),
            step_size: Some(2.5 * Norm::L2.default_budget() / 20.0),
            ..AttackSection::default()
        },
        theory: TheorySection::default(),
        fig1: Fig1Section::default(),
        oracle_score: true,
        score_checkpoint: None,
        classifier_checkpoint: None,
    }
}
