//! Cached experiment steps: data preparation, training, attacks, reference
//! beds and evaluation, plus the sweep that strings them together.

use std::fs;
use std::path::PathBuf;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::{content_hash, create_dir_atomic, sha256_file, write_json_atomic, Cache};
use super::config::{DatasetConfig, ExperimentConfig};
use super::search::{validation_search, SearchResult};
use crate::aspects::AspectMatrices;
use crate::dataset::{build_split, dataset_stats, filter_users, ingest_reviews, synth, DatasetSplit, ReviewRecord};
use crate::diffcore::ParamSet;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, Condition, EvalConfig, EvalReport, EvaluationBed, GoldExplanations, ResultRow};
use crate::models::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
use crate::models::{Model, ModelKind, Recommender};
use crate::robustness::attack::{
    attack_label, full_data_batches, load_attack, loss_and_gradient, perturbation_from_gradient, save_attack,
};
use crate::robustness::train::EpochLog;
use crate::robustness::{apply_attack, train_defended, DefenseConfig, TrainingConfig, WeightPerturbation};

/// Split and aspect matrices of one dataset configuration.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub key: String,
    pub name: String,
    pub dir: PathBuf,
    pub split: DatasetSplit,
    pub aspects: AspectMatrices,
}

pub fn load_records(cfg: &DatasetConfig) -> Result<Vec<ReviewRecord>> {
    match &cfg.path {
        Some(path) => ingest_reviews(path, cfg.min_reviews_per_user, cfg.rating_scale),
        None => Ok(filter_users(synth::generate(&cfg.synth), cfg.min_reviews_per_user)),
    }
}

fn dataset_key(cfg: &DatasetConfig) -> Result<String> {
    let source = match &cfg.path {
        Some(p) => Value::String(sha256_file(p)?),
        None => Value::Null,
    };
    Ok(content_hash(&json!({ "dataset": cfg, "source": source })))
}

/// Builds (or loads) the split and aspect matrices under `data/<key>/`.
pub fn prepare_data(cache: &Cache, cfg: &DatasetConfig) -> Result<PreparedData> {
    let key = dataset_key(cfg)?;
    let dir = cache.dir("data", &key);
    if !dir.join("split.json").exists() {
        info!("preparing dataset {} ({key})", cfg.name);
        let records = load_records(cfg)?;
        let split = build_split(&records, &cfg.split, cfg.rating_scale)?;
        let aspects = AspectMatrices::from_split(&split)?;
        create_dir_atomic(&dir, |tmp| {
            write_json_atomic(tmp.join("split.json"), &split)?;
            aspects.save(tmp.join("aspects.bin"))?;
            write_json_atomic(tmp.join("manifest.json"), &split.manifest())?;
            write_json_atomic(tmp.join("stats.json"), &dataset_stats(&split))?;
            write_json_atomic(tmp.join("config.json"), cfg)
        })?;
    }
    let mut split: DatasetSplit = serde_json::from_slice(&fs::read(dir.join("split.json"))?)?;
    split.reindex();
    let aspects = AspectMatrices::load(dir.join("aspects.bin"))?;
    Ok(PreparedData {
        key,
        name: cfg.name.clone(),
        dir,
        split,
        aspects,
    })
}

/// Everything that determines a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub algo: ModelKind,
    pub model: Value,
    pub training: TrainingConfig,
    pub defense: DefenseConfig,
}

impl RunSpec {
    pub fn new(cfg: &ExperimentConfig, algo: ModelKind, training: &TrainingConfig, defense: DefenseConfig) -> Self {
        Self {
            algo,
            model: cfg.model.section(algo),
            training: training.clone(),
            defense,
        }
    }

    pub fn run_id(&self, data_key: &str) -> String {
        content_hash(&json!({ "data": data_key, "run": self }))
    }

    /// The undefended run with otherwise identical settings.
    pub fn reference(&self) -> Self {
        Self {
            defense: DefenseConfig::vanilla(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRun {
    pub run_id: String,
    pub dir: PathBuf,
    pub manifest: CheckpointManifest,
    pub params: ParamSet,
    pub history: Vec<EpochLog>,
}

pub fn run_dir(cache: &Cache, run_id: &str) -> PathBuf {
    cache.dir("runs", run_id)
}

pub fn load_run(cache: &Cache, run_id: &str) -> Result<Option<TrainedRun>> {
    let dir = run_dir(cache, run_id);
    if !dir.join("manifest.json").exists() {
        return Ok(None);
    }
    let (manifest, params) = load_checkpoint(&dir)?;
    let history = serde_json::from_slice(&fs::read(dir.join("history.json"))?)?;
    Ok(Some(TrainedRun {
        run_id: run_id.to_string(),
        dir,
        manifest,
        params,
        history,
    }))
}

/// Trains `spec` unless a checkpoint for it is cached.
pub fn train_run(cache: &Cache, data: &PreparedData, model: &Model, spec: &RunSpec) -> Result<TrainedRun> {
    let run_id = spec.run_id(&data.key);
    if let Some(run) = load_run(cache, &run_id)? {
        return Ok(run);
    }
    info!(
        "training {} lambda={} eps_d={} seed={} ({run_id})",
        spec.algo, spec.defense.lambda, spec.defense.eps_d, spec.training.seed
    );
    let trained = train_defended(model, &data.split, &data.aspects, &spec.defense, &spec.training, &mut |_| {})?;
    let manifest = CheckpointManifest {
        model: spec.algo,
        n_users: data.split.n_users(),
        n_items: data.split.n_items(),
        n_features: data.split.n_features(),
        hyperparameters: model.hyperparameters(),
        seed: spec.training.seed,
        epochs: trained.best_epoch,
    };
    let dir = run_dir(cache, &run_id);
    create_dir_atomic(&dir, |tmp| {
        write_json_atomic(
            tmp.join("config.json"),
            &json!({ "data": data.key, "dataset": data.name, "run": spec, "learning_rate_used": trained.learning_rate }),
        )?;
        write_json_atomic(tmp.join("history.json"), &trained.history)?;
        save_checkpoint(tmp, &manifest, &trained.params)
    })?;
    load_run(cache, &run_id)?.ok_or_else(|| Error::Dependency(format!("checkpoint {run_id} vanished")))
}

/// Requires an already trained run.
pub fn require_run(cache: &Cache, data: &PreparedData, spec: &RunSpec) -> Result<TrainedRun> {
    let run_id = spec.run_id(&data.key);
    load_run(cache, &run_id)?.ok_or_else(|| {
        Error::Dependency(format!(
            "{} run {run_id} (lambda={}, eps_d={}, seed={}) has not been trained",
            spec.algo, spec.defense.lambda, spec.defense.eps_d, spec.training.seed
        ))
    })
}

/// Weight perturbations of `run` for each budget, cached next to the checkpoint.
pub fn attack_run(
    data: &PreparedData,
    model: &Model,
    run: &TrainedRun,
    spec: &RunSpec,
    eps_list: &[f64],
) -> Result<Vec<WeightPerturbation>> {
    let mut gradient: Option<ParamSet> = None;
    let mut out = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        crate::robustness::AttackConfig::new(eps)?;
        if run.dir.join(format!("{}.json", attack_label(eps))).exists() {
            out.push(load_attack(&run.dir, eps)?);
            continue;
        }
        if gradient.is_none() {
            let batches = full_data_batches(&data.split, spec.training.batch_size, spec.training.seed)?;
            let (_, xi) = loss_and_gradient(model, &run.params, &data.aspects, &batches, &spec.defense)?;
            gradient = Some(xi);
        }
        let attack = perturbation_from_gradient(gradient.as_ref().expect("computed above"), eps);
        save_attack(&run.dir, &attack)?;
        out.push(attack);
    }
    Ok(out)
}

/// Bed of the reference run, cached in its directory.
pub fn reference_bed(data: &PreparedData, model: &Model, reference: &TrainedRun, eval: &EvalConfig) -> Result<EvaluationBed> {
    let path = reference.dir.join(format!("bed_top{}.json", eval.top_k));
    if path.exists() {
        return EvaluationBed::from_json(&fs::read(&path)?);
    }
    let bed = EvaluationBed::build(model, &reference.params, &data.split, &data.aspects, eval.top_k)?;
    super::cache::write_atomic(&path, &bed.to_json()?)?;
    Ok(bed)
}

/// Clean evaluation first, then one per nonzero budget.
pub fn evaluation_budgets(eps_list: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0];
    for &e in eps_list {
        if e != 0.0 && !out.contains(&e) {
            out.push(e);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_run(
    data: &PreparedData,
    model: &Model,
    run: &TrainedRun,
    spec: &RunSpec,
    bed: &EvaluationBed,
    gold: &GoldExplanations,
    eval: &EvalConfig,
    eps_list: &[f64],
) -> Result<Vec<ResultRow>> {
    let budgets = evaluation_budgets(eps_list);
    let attacks = attack_run(data, model, run, spec, &budgets[1..])?;
    let bed_hash = content_hash(bed);
    let mut rows = Vec::with_capacity(budgets.len());
    for (i, &eps) in budgets.iter().enumerate() {
        let key = content_hash(&json!({ "eps_a": eps, "eval": eval, "bed": bed_hash }));
        let path = run.dir.join(format!("eval_{key}.json"));
        let report: EvalReport = if path.exists() {
            serde_json::from_slice(&fs::read(&path)?)?
        } else {
            let (params, condition) = if i == 0 {
                (run.params.clone(), Condition::Clean)
            } else {
                (apply_attack(&run.params, &attacks[i - 1])?, Condition::Attacked { eps_a: eps })
            };
            let report = evaluate(model, &params, &data.split, &data.aspects, bed, gold, eval, condition)?;
            write_json_atomic(&path, &report)?;
            report
        };
        rows.push(ResultRow::from_report(
            &run.run_id,
            spec.algo.as_str(),
            &data.name,
            spec.defense.lambda,
            spec.defense.eps_d,
            &report,
        ));
    }
    Ok(rows)
}

/// Tuned training settings for `algo`, cached by configuration.
pub fn tuned_training(cache: &Cache, data: &PreparedData, cfg: &ExperimentConfig, algo: ModelKind) -> Result<TrainingConfig> {
    let mut base = cfg.training.clone();
    base.seed = cfg.sweep.seeds[0];
    let key = content_hash(&json!({
        "data": data.key,
        "model": cfg.model.section(algo),
        "algo": algo,
        "base": base,
        "grid": cfg.sweep.search,
    }));
    let path = cache.dir("search", &format!("{key}.json"));
    let result: SearchResult = if path.exists() {
        serde_json::from_slice(&fs::read(&path)?)?
    } else {
        let model = cfg.model.build(algo);
        let r = validation_search(&model, &data.split, &data.aspects, &DefenseConfig::vanilla(), &base, &cfg.sweep.search)?;
        write_json_atomic(&path, &r)?;
        r
    };
    Ok(TrainingConfig {
        seed: cfg.training.seed,
        ..result.best
    })
}

/// Runs every sweep cell, reference models first, and returns the result rows.
pub fn run_sweep(cache: &Cache, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let data = prepare_data(cache, &cfg.dataset)?;
    let gold = GoldExplanations::from_split(&data.split);
    let mut rows = Vec::new();
    for &algo in &cfg.sweep.algorithms {
        let model = cfg.model.build(algo);
        let base = if cfg.sweep.tune {
            tuned_training(cache, &data, cfg, algo)?
        } else {
            cfg.training.clone()
        };
        for &seed in &cfg.sweep.seeds {
            let training = TrainingConfig { seed, ..base.clone() };
            let reference_spec = RunSpec::new(cfg, algo, &training, DefenseConfig::vanilla());
            let reference = train_run(cache, &data, &model, &reference_spec)?;
            let bed = reference_bed(&data, &model, &reference, &cfg.eval)?;
            for defense in cfg.sweep.defense_cells() {
                let spec = RunSpec::new(cfg, algo, &training, defense);
                let run = if defense.is_vanilla() {
                    reference.clone()
                } else {
                    train_run(cache, &data, &model, &spec)?
                };
                rows.extend(evaluate_run(&data, &model, &run, &spec, &bed, &gold, &cfg.eval, &cfg.sweep.eps_a_list)?);
            }
        }
    }
    Ok(rows)
}

/// Evaluates the single run described by the `model`/`training`/`defense`
/// sections; its reference run must already be trained.
pub fn evaluate_configured(cache: &Cache, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let data = prepare_data(cache, &cfg.dataset)?;
    let algo = cfg.model.algo;
    let model = cfg.model.build(algo);
    let spec = RunSpec::new(cfg, algo, &cfg.training, cfg.defense);
    let reference = require_run(cache, &data, &spec.reference())?;
    let run = require_run(cache, &data, &spec)?;
    let bed = reference_bed(&data, &model, &reference, &cfg.eval)?;
    let gold = GoldExplanations::from_split(&data.split);
    evaluate_run(&data, &model, &run, &spec, &bed, &gold, &cfg.eval, &cfg.attack.eps_a_list)
}
