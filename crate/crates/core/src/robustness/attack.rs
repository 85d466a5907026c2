//! Single-step white-box attack on model weights: move every parameter along
//! the normalised full-data loss gradient.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::defense::{defense_step, DefenseConfig};
use super::train::{make_batches, NegativeSampler};
use crate::aspects::AspectMatrices;
use crate::dataset::DatasetSplit;
use crate::diffcore::ParamSet;
use crate::error::{Error, Result};
use crate::models::checkpoint::{load_params, save_params};
use crate::models::{Batch, Recommender};
use crate::rng;

/// Below this gradient norm the attack is a no-op.
pub const MIN_GRADIENT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub eps_a: f64,
}

impl AttackConfig {
    pub fn new(eps_a: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps_a) {
            return Err(Error::Config {
                key: "attack.eps_a".into(),
                msg: format!("{eps_a} is outside [0, 1]"),
            });
        }
        Ok(Self { eps_a })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightPerturbation {
    pub eps_a: f64,
    pub delta: ParamSet,
    /// Global L2 norm of `delta`.
    pub norm: f64,
    /// Global L2 norm of the loss gradient the direction came from.
    pub grad_norm: f64,
}

/// Every training interaction in stored order, with one sampled negative each.
pub fn full_data_batches(split: &DatasetSplit, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    let order: Vec<usize> = (0..split.train.len()).collect();
    let sampler = NegativeSampler::new(split);
    let mut rng = rng::stream(seed, "attack");
    make_batches(&split.train, &order, batch_size.max(1), &sampler, &mut rng)
}

/// Sum over `batches` of the combined objective and of its parameter gradient.
pub fn loss_and_gradient<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    aspects: &AspectMatrices,
    batches: &[Batch],
    defense: &DefenseConfig,
) -> Result<(f64, ParamSet)> {
    let mut total = 0.0;
    let mut grad = params.zeros_like();
    for batch in batches {
        let out = defense_step(model, params, batch, aspects, defense)?;
        total += out.loss;
        for (g, b) in grad.tensors_mut().iter_mut().zip(out.grads.tensors()) {
            for (x, y) in g.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
    Ok((total, grad))
}

/// `eps_a * xi / |xi|`, or zero when `|xi|` is negligible. The result never
/// has a norm above `eps_a`.
pub fn perturbation_from_gradient(xi: &ParamSet, eps_a: f64) -> WeightPerturbation {
    let grad_norm = xi.global_norm();
    if eps_a == 0.0 || !(grad_norm >= MIN_GRADIENT_NORM) {
        return WeightPerturbation {
            eps_a,
            delta: xi.zeros_like(),
            norm: 0.0,
            grad_norm,
        };
    }
    let mut delta = scaled(xi, eps_a / grad_norm);
    let mut norm = delta.global_norm();
    while norm > eps_a {
        delta = scaled(&delta, eps_a / norm * (1.0 - f64::EPSILON));
        norm = delta.global_norm();
    }
    WeightPerturbation {
        eps_a,
        delta,
        norm,
        grad_norm,
    }
}

fn scaled(p: &ParamSet, factor: f64) -> ParamSet {
    let mut out = p.clone();
    for t in out.tensors_mut() {
        for x in t.data_mut() {
            *x *= factor;
        }
    }
    out
}

/// Gradient over the full training data at the trained parameters, using the
/// objective the model was trained with, normalised to `eps_a`.
pub fn attack_weights<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    aspects: &AspectMatrices,
    batches: &[Batch],
    defense: &DefenseConfig,
    cfg: &AttackConfig,
) -> Result<WeightPerturbation> {
    let (_, xi) = loss_and_gradient(model, params, aspects, batches, defense)?;
    Ok(perturbation_from_gradient(&xi, cfg.eps_a))
}

/// `params + delta` as a fresh set.
pub fn apply_attack(params: &ParamSet, attack: &WeightPerturbation) -> Result<ParamSet> {
    params.add_scaled(&attack.delta, 1.0)
}

/// `params - delta` as a fresh set.
pub fn remove_attack(params: &ParamSet, attack: &WeightPerturbation) -> Result<ParamSet> {
    params.add_scaled(&attack.delta, -1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackManifest {
    pub eps_a: f64,
    pub norm: f64,
    pub grad_norm: f64,
    pub delta_dir: String,
}

pub fn attack_label(eps_a: f64) -> String {
    format!("attack_{eps_a}")
}

/// Writes `attack_<eps>.json` and the perturbation tensors under
/// `attack_<eps>/` in `dir`.
pub fn save_attack(dir: impl AsRef<Path>, attack: &WeightPerturbation) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let label = attack_label(attack.eps_a);
    save_params(dir.join(&label), &attack.delta)?;
    let manifest = AttackManifest {
        eps_a: attack.eps_a,
        norm: attack.norm,
        grad_norm: attack.grad_norm,
        delta_dir: label.clone(),
    };
    let path = dir.join(format!("{label}.json"));
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

pub fn load_attack(dir: impl AsRef<Path>, eps_a: f64) -> Result<WeightPerturbation> {
    let dir = dir.as_ref();
    let label = attack_label(eps_a);
    let manifest: AttackManifest = serde_json::from_slice(&fs::read(dir.join(format!("{label}.json")))?)?;
    let delta = load_params(dir.join(&manifest.delta_dir))?;
    Ok(WeightPerturbation {
        eps_a: manifest.eps_a,
        delta,
        norm: manifest.norm,
        grad_norm: manifest.grad_norm,
    })
}
