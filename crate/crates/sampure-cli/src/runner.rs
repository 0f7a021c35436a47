//! Experiment dispatch: resolve a config into artifacts on disk.
//!
//! Exit-code contract: validation problems (bad config, missing files,
//! unusable checkpoints) map to 2 and happen before anything is written;
//! numerical aborts (divergence, non-finite iterates) map to 3. The
//! verify-theory kind reports whether every check passed so the binary can
//! exit nonzero on red checks.
//!
//! Sample-parallel kinds (purify, attack, evaluate) shard by index and merge
//! in index order, so outputs are byte-identical for any thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, Context, Result};

use sampure_core::attack::{evaluate_sample, report_from_rows, PurifyMap, Threat};
use sampure_core::classify::{build_augmented_dataset, train_classifier_with, ClassifyError, LabeledDataset};
use sampure_core::field::ScoreField;
use sampure_core::gmm::{self, GmmScore, GmmSpec};
use sampure_core::purify::{purify, FieldPurifier, PurifyError};
use sampure_core::rng;
use sampure_core::score::{train, ScoreError, ScoreNet};
use sampure_core::theory::{standard_verification, VerificationBudget};

use crate::checkpoint;
use crate::config::{ExperimentConfig, Kind};
use crate::formats::{self, ResultRow, TableRow};

#[derive(Debug, Default, Clone)]
pub struct RunOptions {
    pub out_override: Option<PathBuf>,
    pub seed_override: Option<u64>,
    pub threads_override: Option<usize>,
}

#[derive(Debug)]
pub enum RunError {
    /// Configuration or referenced inputs are unusable; nothing was written.
    Validation(anyhow::Error),
    /// The computation itself failed (divergence, non-finite values).
    Numeric(anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            RunError::Validation(e) => format!("validation error: {e:#}"),
            RunError::Numeric(e) => format!("numerical abort: {e:#}"),
        }
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    /// Set by verification kinds: did every check pass?
    pub checks_passed: Option<bool>,
    pub lines: Vec<String>,
}

/// Either side of the build-or-oracle choice for the score field.
pub enum OwnedField {
    Oracle(GmmSpec),
    Net(ScoreNet),
}

impl ScoreField for OwnedField {
    fn dim(&self) -> usize {
        match self {
            OwnedField::Oracle(spec) => spec.dim(),
            OwnedField::Net(net) => net.dim(),
        }
    }

    fn score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        match self {
            OwnedField::Oracle(spec) => GmmScore::new(spec).score(x, sigma),
            OwnedField::Net(net) => net.score(x, sigma),
        }
    }

    fn score_vjp(&self, x: &[f64], sigma: f64, v: &[f64]) -> Vec<f64> {
        match self {
            OwnedField::Oracle(spec) => GmmScore::new(spec).score_vjp(x, sigma, v),
            OwnedField::Net(net) => net.score_vjp(x, sigma, v),
        }
    }
}

pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let cfg = ExperimentConfig::from_path(path).map_err(RunError::Validation)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    run_config(cfg, &base, opts)
}

pub fn run_config(mut cfg: ExperimentConfig, base: &Path, opts: &RunOptions) -> Result<RunSummary, RunError> {
    if let Some(seed) = opts.seed_override {
        cfg.seed = seed;
    }
    if let Some(threads) = opts.threads_override {
        cfg.threads = Some(threads);
    }
    cfg.validate(base).map_err(RunError::Validation)?;

    // Load referenced checkpoints before creating any output.
    let field = load_field(&cfg, base).map_err(RunError::Validation)?;
    let classifier = load_classifier(&cfg, base).map_err(RunError::Validation)?;

    let out_dir = resolve_out_dir(&cfg, opts);
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(RunError::Validation)?;

    let mut summary = RunSummary {
        out_dir: out_dir.clone(),
        checks_passed: None,
        lines: Vec::new(),
    };
    match cfg.kind {
        Kind::TrainScore => kind_train_score(&cfg, &out_dir, &mut summary)?,
        Kind::TrainClassifier => {
            kind_train_classifier(&cfg, field.expect("validated"), &out_dir, &mut summary)?
        }
        Kind::Purify => kind_purify(&cfg, field.expect("validated"), &out_dir, &mut summary)?,
        Kind::Attack | Kind::Evaluate => kind_attack_or_evaluate(
            &cfg,
            field,
            classifier.ok_or_else(|| RunError::Validation(anyhow!("classifier required")))?,
            &out_dir,
            &mut summary,
        )?,
        Kind::VerifyTheory => kind_verify_theory(&cfg, &out_dir, &mut summary)?,
        Kind::Fig1 => kind_fig1(&cfg, &out_dir, &mut summary)?,
    }
    Ok(summary)
}

fn resolve_out_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(out) = &opts.out_override {
        return out.clone();
    }
    if let Some(out) = &cfg.out_dir {
        return PathBuf::from(out);
    }
    if let Ok(root) = std::env::var("SAMPURE_OUT") {
        return PathBuf::from(root);
    }
    PathBuf::from("sampure-out")
}

fn load_field(cfg: &ExperimentConfig, base: &Path) -> Result<Option<OwnedField>> {
    if cfg.oracle_score {
        return Ok(Some(OwnedField::Oracle(cfg.dataset.joint_density()?)));
    }
    match &cfg.score_checkpoint {
        Some(path) => {
            let file = checkpoint::load(&base.join(path))?;
            let (net, _) = checkpoint::as_score_net(&file)?;
            if net.dim() != cfg.dataset.dim() {
                anyhow::bail!("score network dimension disagrees with the dataset");
            }
            Ok(Some(OwnedField::Net(net)))
        }
        None => Ok(None),
    }
}

fn load_classifier(
    cfg: &ExperimentConfig,
    base: &Path,
) -> Result<Option<sampure_core::classify::Classifier>> {
    match &cfg.classifier_checkpoint {
        Some(path) => {
            let file = checkpoint::load(&base.join(path))?;
            let h = checkpoint::as_classifier(&file)?;
            if h.input_dim() != cfg.dataset.dim() {
                anyhow::bail!("classifier dimension disagrees with the dataset");
            }
            Ok(Some(h))
        }
        None => Ok(None),
    }
}

fn numeric(e: impl core::fmt::Display) -> RunError {
    RunError::Numeric(anyhow!("{e}"))
}

fn io_err(e: anyhow::Error) -> RunError {
    RunError::Validation(e)
}

/// Deterministic sample-parallel map: contiguous shards, merge by index.
pub fn parallel_map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let mut shards: Vec<Vec<(usize, T)>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                scope.spawn(move || {
                    let lo = t * chunk;
                    let hi = ((t + 1) * chunk).min(n);
                    (lo..hi).map(|i| (i, f(i))).collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out: Vec<(usize, T)> = shards.drain(..).flatten().collect();
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, v)| v).collect()
}

fn train_dataset(cfg: &ExperimentConfig) -> (Vec<Vec<f64>>, Vec<usize>) {
    cfg.dataset.sample(cfg.dataset.n_train, cfg.seed, 1)
}

fn test_dataset(cfg: &ExperimentConfig) -> (Vec<Vec<f64>>, Vec<usize>) {
    cfg.dataset.sample(cfg.dataset.n_test, cfg.seed, 2)
}

fn experiment_id(cfg: &ExperimentConfig) -> String {
    format!("{}-{}", cfg.kind.as_str(), &cfg.config_hash()[..8])
}

fn kind_train_score(
    cfg: &ExperimentConfig,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<(), RunError> {
    let (xs, _) = train_dataset(cfg);
    let dims = cfg.score_net.dims(cfg.dataset.dim());
    let net = ScoreNet::with_random_init(&dims, cfg.score_net.activation, cfg.train.param_seed)
        .map_err(|e| RunError::Validation(anyhow!("{e}")))?;
    let schedule = cfg.build_schedule().map_err(RunError::Validation)?;
    let result = train(net, &xs, &schedule, &cfg.train).map_err(|e| match e {
        ScoreError::Diverged { .. } => numeric(e),
        other => RunError::Validation(anyhow!("{other}")),
    })?;

    let mut seeds = BTreeMap::new();
    seeds.insert("param".to_string(), cfg.train.param_seed);
    seeds.insert("noise".to_string(), cfg.train.noise_seed);
    let file = checkpoint::score_checkpoint(&result.net, &cfg.schedule, seeds);
    checkpoint::save(&out.join("score_checkpoint.json"), &file).map_err(io_err)?;
    formats::write_text(&out.join("loss_curve.csv"), &formats::loss_curve_csv(&result.losses))
        .map_err(io_err)?;
    let final_loss = *result.losses.last().unwrap_or(&f64::NAN);
    write_results(
        cfg,
        out,
        &[("final_loss", final_loss), ("steps", result.losses.len() as f64)],
    )?;
    summary.lines.push(format!(
        "trained score network ({} steps, final loss {final_loss:.4})",
        result.losses.len()
    ));
    Ok(())
}

fn kind_train_classifier(
    cfg: &ExperimentConfig,
    field: OwnedField,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<(), RunError> {
    let (xs, ys) = train_dataset(cfg);
    let data = LabeledDataset::new(xs, ys).map_err(|e| RunError::Validation(anyhow!("{e}")))?;
    let schedule = cfg.build_schedule().map_err(RunError::Validation)?;
    let purify_cfg = cfg.purify.build(cfg.schedule.levels);
    let augmented = build_augmented_dataset(&data, &field, &schedule, &purify_cfg).map_err(|e| match e {
        ClassifyError::Purify(PurifyError::NonFinite { .. }) => numeric(e),
        other => RunError::Validation(anyhow!("{other}")),
    })?;

    let classes = cfg.dataset.classes.len();
    let mut dims = vec![cfg.dataset.dim()];
    dims.extend(&cfg.classifier.hidden);
    dims.push(classes);
    let h = train_classifier_with(
        &augmented,
        &dims,
        cfg.classifier.epochs,
        cfg.classifier.step_size,
        rng::derive_seed(cfg.seed, 3),
    )
    .map_err(|e| match e {
        ClassifyError::Diverged { .. } => numeric(e),
        other => RunError::Validation(anyhow!("{other}")),
    })?;

    let (test_xs, test_ys) = test_dataset(cfg);
    let correct = test_xs
        .iter()
        .zip(&test_ys)
        .filter(|(x, &y)| h.predict(x) == y)
        .count();
    let clean = correct as f64 / test_xs.len() as f64;

    let mut seeds = BTreeMap::new();
    seeds.insert("train".to_string(), rng::derive_seed(cfg.seed, 3));
    let file = checkpoint::classifier_checkpoint(&h, seeds);
    checkpoint::save(&out.join("classifier_checkpoint.json"), &file).map_err(io_err)?;
    write_results(cfg, out, &[("clean_accuracy", clean)])?;
    summary
        .lines
        .push(format!("trained classifier (clean accuracy {:.2}%)", 100.0 * clean));
    Ok(())
}

fn kind_purify(
    cfg: &ExperimentConfig,
    field: OwnedField,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<(), RunError> {
    let (xs, _) = test_dataset(cfg);
    let schedule = cfg.build_schedule().map_err(RunError::Validation)?;
    let purify_cfg = cfg.purify.build(cfg.schedule.levels);
    let threads = cfg.threads.unwrap_or(1);

    let outputs = parallel_map_indexed(xs.len(), threads, |i| purify(&xs[i], &field, &schedule, &purify_cfg));
    let mut points = Vec::with_capacity(xs.len());
    for (i, result) in outputs.into_iter().enumerate() {
        let (x_pur, trace) = result.map_err(numeric)?;
        formats::write_text(&out.join(format!("trace_{i}.csv")), &formats::trace_csv(&trace))
            .map_err(io_err)?;
        points.push((i, x_pur));
    }
    formats::write_text(&out.join("purified.csv"), &formats::points_csv(&points)).map_err(io_err)?;
    write_results(cfg, out, &[("n_purified", points.len() as f64)])?;
    summary.lines.push(format!("purified {} samples", points.len()));
    Ok(())
}

fn kind_attack_or_evaluate(
    cfg: &ExperimentConfig,
    field: Option<OwnedField>,
    classifier: sampure_core::classify::Classifier,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<(), RunError> {
    let (xs, ys) = test_dataset(cfg);
    let schedule = cfg.build_schedule().map_err(RunError::Validation)?;
    let purify_cfg = cfg.purify.build(cfg.schedule.levels);
    let attack_cfg = cfg.attack.build();
    let threads = cfg.threads.unwrap_or(1);

    let purifier = field
        .as_ref()
        .map(|f| FieldPurifier::new(f, &schedule, purify_cfg.clone()));
    if attack_cfg.threat == Threat::BpdaDet && purifier.is_none() {
        return Err(RunError::Validation(anyhow!(
            "the adaptive threat needs a purifier (oracle_score or score_checkpoint)"
        )));
    }

    let results = parallel_map_indexed(xs.len(), threads, |i| {
        evaluate_sample(
            i,
            &xs[i],
            ys[i],
            &classifier,
            purifier.as_ref().map(|p| p as &dyn PurifyMap),
            &attack_cfg,
        )
    });
    let mut rows = Vec::with_capacity(xs.len());
    let mut advs = Vec::with_capacity(xs.len());
    for result in results {
        let (row, x_adv) = result.map_err(|e| RunError::Validation(anyhow!("{e}")))?;
        advs.push((row.sample_id, x_adv));
        rows.push(row);
    }
    let report = report_from_rows(rows);
    formats::write_text(&out.join("attack_report.csv"), &formats::report_csv(&report.rows))
        .map_err(io_err)?;

    let attack_name = format!(
        "{:?}-{:?}-{}",
        attack_cfg.threat, attack_cfg.norm, attack_cfg.steps
    )
    .to_lowercase();
    if cfg.kind == Kind::Attack {
        formats::write_text(&out.join("adversarial.csv"), &formats::points_csv(&advs)).map_err(io_err)?;
    } else {
        let table_rows = vec![TableRow {
            rho_pur: if purifier.is_some() { purify_cfg.rho_pur } else { 0.0 },
            attack: attack_name.clone(),
            clean_pct: 100.0 * report.clean_accuracy,
            adv_pct: 100.0 * report.adversarial_accuracy,
        }];
        let (csv, text) = formats::table_report(&table_rows).map_err(RunError::Validation)?;
        formats::write_text(&out.join("table.csv"), &csv).map_err(io_err)?;
        formats::write_text(&out.join("table.txt"), &text).map_err(io_err)?;
        for line in text.lines() {
            summary.lines.push(line.to_string());
        }
    }
    write_results(
        cfg,
        out,
        &[
            ("clean_accuracy", report.clean_accuracy),
            ("adversarial_accuracy", report.adversarial_accuracy),
        ],
    )?;
    summary.lines.push(format!(
        "{attack_name}: clean {:.2}%, adversarial {:.2}%",
        100.0 * report.clean_accuracy,
        100.0 * report.adversarial_accuracy
    ));
    Ok(())
}

fn kind_verify_theory(
    cfg: &ExperimentConfig,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<(), RunError> {
    let budget = VerificationBudget {
        n_mc_expansion: cfg.theory.n_mc_expansion,
        n_mc_recovery: cfg.theory.n_mc_recovery,
        n_mc_tail: cfg.theory.n_mc_tail,
    };
    let outcomes = standard_verification(&budget, cfg.seed).map_err(numeric)?;
    let json = formats::verify_report_json(&outcomes).map_err(io_err)?;
    formats::write_text(&out.join("verify_report.json"), &json).map_err(io_err)?;
    for check in &outcomes {
        summary.lines.push(format!(
            "{} {} (measured {:.6e}, bound {:.6e})",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.measured,
            check.bound
        ));
    }
    summary.checks_passed = Some(outcomes.iter().all(|c| c.pass));
    Ok(())
}

/// The 1d landscape grid: the two-mode mixture's log-density next to the
/// oracle reconstruction error at the fig1 noise scale. The same noise seed
/// serves every grid point (common random numbers), so the sampled landscape
/// is smooth in x.
fn kind_fig1(cfg: &ExperimentConfig, out: &Path, summary: &mut RunSummary) -> Result<(), RunError> {
    let spec = GmmSpec::new(
        vec![0.5, 0.5],
        vec![vec![0.25], vec![0.75]],
        vec![0.1, 0.1],
    )
    .map_err(|e| RunError::Validation(anyhow!("{e}")))?;
    let n = cfg.fig1.grid_points;
    let seed = rng::derive_seed(cfg.seed, 777);
    let rows = parallel_map_indexed(n, cfg.threads.unwrap_or(1), |i| {
        let x = i as f64 / (n - 1) as f64;
        let logp = gmm::smoothed_log_density(&spec, &[x], 0.0).expect("finite grid point");
        let ere = gmm::exact_ere(&spec, &[x], cfg.fig1.sigma, cfg.fig1.n_mc, seed)
            .expect("valid sigma")
            .mean;
        (x, logp, ere)
    });
    formats::write_text(&out.join("fig1.csv"), &formats::landscape_csv(&rows)).map_err(io_err)?;
    write_results(cfg, out, &[("grid_points", n as f64)])?;
    summary.lines.push(format!("wrote landscape grid with {n} points"));
    Ok(())
}

fn write_results(cfg: &ExperimentConfig, out: &Path, metrics: &[(&str, f64)]) -> Result<(), RunError> {
    let rows: Vec<ResultRow> = metrics
        .iter()
        .map(|(name, value)| ResultRow {
            experiment_id: experiment_id(cfg),
            config_hash: cfg.config_hash(),
            metric: name.to_string(),
            value: *value,
            seed: cfg.seed,
        })
        .collect();
    formats::write_text(&out.join("results.csv"), &formats::results_csv(&rows)).map_err(io_err)
}
