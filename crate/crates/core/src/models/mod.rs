//! Feature-aware explainable recommenders behind one contract.

pub mod cer;
pub mod checkpoint;
pub mod counterfactual;
pub mod efm;

use serde::{Deserialize, Serialize};

use crate::aspects::AspectMatrices;
use crate::diffcore::{ParamSet, ParamVars, Tape, Var};
use crate::error::Result;
use crate::rng::Rng;

pub use cer::{Cer, CerConfig};
pub use efm::{Efm, EfmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum ModelKind {
    #[default]
    #[serde(rename = "EFM", alias = "efm")]
    Efm,
    #[serde(rename = "CER", alias = "cer")]
    Cer,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Efm => "EFM",
            ModelKind::Cer => "CER",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Labelled `(user, item)` pairs. A rating of 0 marks a sampled negative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub ratings: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn push(&mut self, user: usize, item: usize, rating: f64) {
        self.users.push(user);
        self.items.push(item);
        self.ratings.push(rating);
    }
}

/// Tape handles for the aspect matrices a loss reads.
///
/// `x` and `y` are the (possibly perturbed) inputs; `observed` carries the
/// clean matrices whose nonzero pattern defines the reconstruction masks.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    pub x: Var,
    pub y: Var,
    pub observed: &'a AspectMatrices,
}

/// Ranked explaining features for one `(user, item)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub user: usize,
    pub item: usize,
    /// `(feature, score)` with non-increasing score.
    pub features: Vec<(usize, f64)>,
    /// For counterfactual explainers: whether the found perturbation actually
    /// removes the item from the top-K.
    pub counterfactual: Option<bool>,
}

impl Explanation {
    pub fn feature_ids(&self) -> Vec<usize> {
        self.features.iter().map(|&(f, _)| f).collect()
    }
}

/// What an explainer needs beyond the pair itself.
#[derive(Debug, Clone, Copy)]
pub struct ExplainRequest<'a> {
    pub user: usize,
    pub item: usize,
    /// The user's ranking candidates (used by counterfactual explainers).
    pub candidates: &'a [usize],
    /// Size of the recommendation list being explained.
    pub top_k: usize,
    pub top_n: usize,
}

/// Capabilities every plug-in recommender provides.
///
/// `loss` must be differentiable with respect to both the parameters and the
/// item-aspect input `y`.
pub trait Recommender {
    fn kind(&self) -> ModelKind;

    fn init_params(&self, n_users: usize, n_items: usize, n_features: usize, rng: &mut Rng) -> ParamSet;

    fn loss(&self, tape: &mut Tape, params: &ParamVars, batch: &Batch, input: LossInput<'_>) -> Result<Var>;

    /// Scores `items` for `user`; higher is better.
    fn score(&self, params: &ParamSet, aspects: &AspectMatrices, user: usize, items: &[usize]) -> Result<Vec<f64>>;

    fn explain(&self, params: &ParamSet, aspects: &AspectMatrices, request: &ExplainRequest<'_>) -> Result<Explanation>;

    /// Hyperparameters recorded in checkpoint manifests.
    fn hyperparameters(&self) -> serde_json::Value;
}

/// Runtime-selected model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Efm(Efm),
    Cer(Cer),
}

impl Recommender for Model {
    fn kind(&self) -> ModelKind {
        match self {
            Model::Efm(m) => m.kind(),
            Model::Cer(m) => m.kind(),
        }
    }

    fn init_params(&self, n_users: usize, n_items: usize, n_features: usize, rng: &mut Rng) -> ParamSet {
        match self {
            Model::Efm(m) => m.init_params(n_users, n_items, n_features, rng),
            Model::Cer(m) => m.init_params(n_users, n_items, n_features, rng),
        }
    }

    fn loss(&self, tape: &mut Tape, params: &ParamVars, batch: &Batch, input: LossInput<'_>) -> Result<Var> {
        match self {
            Model::Efm(m) => m.loss(tape, params, batch, input),
            Model::Cer(m) => m.loss(tape, params, batch, input),
        }
    }

    fn score(&self, params: &ParamSet, aspects: &AspectMatrices, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        match self {
            Model::Efm(m) => m.score(params, aspects, user, items),
            Model::Cer(m) => m.score(params, aspects, user, items),
        }
    }

    fn explain(&self, params: &ParamSet, aspects: &AspectMatrices, request: &ExplainRequest<'_>) -> Result<Explanation> {
        match self {
            Model::Efm(m) => m.explain(params, aspects, request),
            Model::Cer(m) => m.explain(params, aspects, request),
        }
    }

    fn hyperparameters(&self) -> serde_json::Value {
        match self {
            Model::Efm(m) => m.hyperparameters(),
            Model::Cer(m) => m.hyperparameters(),
        }
    }
}

/// Sorts `candidates` by descending score; ties go to the lower item index.
pub fn rank_by_scores(candidates: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = candidates.iter().copied().zip(scores.iter().copied()).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(v, _)| v).collect()
}

/// Ranks `candidates` for `user` under `params`.
pub fn rank_items<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    aspects: &AspectMatrices,
    user: usize,
    candidates: &[usize],
) -> Result<Vec<usize>> {
    let scores = model.score(params, aspects, user, candidates)?;
    Ok(rank_by_scores(candidates, &scores))
}

/// Indices of the `k` largest values; ties go to the lower index.
pub(crate) fn top_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_sorts_descending() {
        // items a=0, b=1, c=2
        assert_eq!(rank_by_scores(&[0, 1, 2], &[0.1, 0.9, 0.5]), vec![1, 2, 0]);
    }

    #[test]
    fn equal_scores_fall_back_to_index_order() {
        assert_eq!(rank_by_scores(&[7, 3, 5], &[1.0, 1.0, 1.0]), vec![3, 5, 7]);
    }

    #[test]
    fn top_indices_tie_break() {
        assert_eq!(top_indices(&[1.0, 3.0, 3.0, 2.0], 2), vec![1, 2]);
    }
}
