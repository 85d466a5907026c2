//! Browser bindings: aspect-score curves, one FGSM step on an item-aspect
//! row, and a small clean-vs-defended robustness curve.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use robustrec::aspects::{item_aspect_value, user_aspect_value, AspectMatrices};
use robustrec::dataset::synth::{generate, SynthConfig};
use robustrec::dataset::{build_split, SplitConfig};
use robustrec::evalkit::{evaluate, Condition, EvalConfig, EvaluationBed, GoldExplanations};
use robustrec::models::{Efm, EfmConfig};
use robustrec::robustness::attack::full_data_batches;
use robustrec::robustness::defense::delta_from_gradient;
use robustrec::robustness::{apply_attack, attack_weights, train_defended, AttackConfig, DefenseConfig, TrainingConfig};

#[derive(Debug, Serialize)]
pub struct AspectCurves {
    pub counts: Vec<u32>,
    pub user: Vec<f64>,
    pub item: Vec<f64>,
}

/// User and item aspect values for mention counts `0..=max_count`.
pub fn aspect_curves(max_count: u32, mean_sentiment: f64, rating_scale: u32) -> AspectCurves {
    let counts: Vec<u32> = (0..=max_count).collect();
    AspectCurves {
        user: counts.iter().map(|&t| user_aspect_value(t, rating_scale)).collect(),
        item: counts.iter().map(|&t| item_aspect_value(t, mean_sentiment, rating_scale)).collect(),
        counts,
    }
}

/// `clamp(y + eps_d * sign(grad), 0, N)` for one row.
pub fn fgsm_row(y: &[f64], grad: &[f64], eps_d: f64, rating_scale: u32) -> Result<Vec<f64>, String> {
    if y.len() != grad.len() {
        return Err(format!("row has {} entries, gradient {}", y.len(), grad.len()));
    }
    let psi = robustrec::diffcore::Tensor::row(grad);
    let delta = delta_from_gradient(&psi, eps_d);
    let n = f64::from(rating_scale);
    Ok(y.iter().zip(delta.data()).map(|(a, d)| (a + d).clamp(0.0, n)).collect())
}

#[derive(Debug, Serialize)]
pub struct RobustnessCurve {
    pub eps_a: Vec<f64>,
    pub vanilla_f1: Vec<f64>,
    pub defended_f1: Vec<f64>,
    pub pairs: usize,
}

/// Trains a vanilla and a defended EFM on a small synthetic corpus and
/// reports explanation F1 under increasing attack budgets.
pub fn robustness_curve(seed: u64, lambda: f64, eps_d: f64) -> Result<RobustnessCurve, String> {
    let synth = SynthConfig {
        users: 40,
        items: 120,
        features: 10,
        min_interactions: 12,
        max_interactions: 16,
        seed,
        ..SynthConfig::default()
    };
    let records = generate(&synth);
    let split_cfg = SplitConfig {
        test_negatives: 30,
        seed,
        ..SplitConfig::default()
    };
    let split = build_split(&records, &split_cfg, 5).map_err(|e| e.to_string())?;
    let aspects = AspectMatrices::from_split(&split).map_err(|e| e.to_string())?;
    let model = Efm::new(EfmConfig {
        rank: 8,
        aux_rank: 4,
        k_top_features: 3,
        ..EfmConfig::default()
    });
    let training = TrainingConfig {
        learning_rate: 0.05,
        max_epochs: 8,
        seed,
        ..TrainingConfig::default()
    };
    let defense = DefenseConfig { lambda, eps_d };
    defense.validate().map_err(|e| e.to_string())?;
    let err = |e: robustrec::error::Error| e.to_string();

    let vanilla = train_defended(&model, &split, &aspects, &DefenseConfig::vanilla(), &training, &mut |_| {}).map_err(err)?;
    let defended = train_defended(&model, &split, &aspects, &defense, &training, &mut |_| {}).map_err(err)?;
    let eval = EvalConfig::default();
    let bed = EvaluationBed::build(&model, &vanilla.params, &split, &aspects, eval.top_k).map_err(err)?;
    let gold = GoldExplanations::from_split(&split);
    let batches = full_data_batches(&split, training.batch_size, seed).map_err(err)?;

    let eps_a = vec![0.0, 0.25, 0.5, 0.75, 1.0];
    let curve = |params: &robustrec::diffcore::ParamSet, d: &DefenseConfig| -> Result<(Vec<f64>, usize), String> {
        let mut f1 = Vec::new();
        let mut pairs = 0;
        for &e in &eps_a {
            let wp = attack_weights(&model, params, &aspects, &batches, d, &AttackConfig::new(e).map_err(err)?).map_err(err)?;
            let hit = apply_attack(params, &wp).map_err(err)?;
            let report = evaluate(&model, &hit, &split, &aspects, &bed, &gold, &eval, Condition::Attacked { eps_a: e }).map_err(err)?;
            pairs = report.n_explained_pairs;
            f1.push(report.expl_f1);
        }
        Ok((f1, pairs))
    };
    let (vanilla_f1, pairs) = curve(&vanilla.params, &DefenseConfig::vanilla())?;
    let (defended_f1, _) = curve(&defended.params, &defense)?;
    Ok(RobustnessCurve {
        eps_a,
        vanilla_f1,
        defended_f1,
        pairs,
    })
}

fn to_js<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = aspectCurves)]
pub fn aspect_curves_js(max_count: u32, mean_sentiment: f64, rating_scale: u32) -> Result<String, JsError> {
    to_js(&aspect_curves(max_count, mean_sentiment, rating_scale))
}

#[wasm_bindgen(js_name = fgsmRow)]
pub fn fgsm_row_js(y: &[f64], grad: &[f64], eps_d: f64, rating_scale: u32) -> Result<Vec<f64>, JsError> {
    fgsm_row(y, grad, eps_d, rating_scale).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = robustnessCurve)]
pub fn robustness_curve_js(seed: u32, lambda: f64, eps_d: f64) -> Result<String, JsError> {
    let curve = robustness_curve(u64::from(seed), lambda, eps_d).map_err(|e| JsError::new(&e))?;
    to_js(&curve)
}
