//! Ranking quality, explanation quality and the fixed set of pairs the
//! explanations are judged on.

pub mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use metrics::{explanation_prf, mask_explanation, ndcg_at, Prf};

use crate::aspects::AspectMatrices;
use crate::dataset::DatasetSplit;
use crate::diffcore::ParamSet;
use crate::error::{Error, Result};
use crate::models::{rank_items, ExplainRequest, Explanation, Recommender};

/// Positively mentioned features of each held-out (user, item) pair.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoldExplanations {
    pairs: BTreeMap<(usize, usize), BTreeSet<usize>>,
}

impl GoldExplanations {
    /// Pairs without a positive mention are left out.
    pub fn from_split(split: &DatasetSplit) -> Self {
        let mut pairs = BTreeMap::new();
        for tu in &split.test {
            for p in &tu.positives {
                let gold: BTreeSet<usize> = p
                    .mentions
                    .iter()
                    .filter(|m| m.sentiment == 1)
                    .map(|m| m.feature)
                    .collect();
                if !gold.is_empty() {
                    pairs.insert((p.user, p.item), gold);
                }
            }
        }
        Self { pairs }
    }

    pub fn insert(&mut self, user: usize, item: usize, features: BTreeSet<usize>) {
        self.pairs.insert((user, item), features);
    }

    pub fn get(&self, user: usize, item: usize) -> Option<&BTreeSet<usize>> {
        self.pairs.get(&(user, item)).filter(|g| !g.is_empty())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BedUser {
    pub user: usize,
    pub items: Vec<usize>,
}

/// Held-out positives the reference model placed in each user's top-K.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationBed {
    pub top_k: usize,
    pub users: Vec<BedUser>,
}

impl EvaluationBed {
    pub fn build<M: Recommender + ?Sized>(
        model: &M,
        params: &ParamSet,
        split: &DatasetSplit,
        aspects: &AspectMatrices,
        top_k: usize,
    ) -> Result<Self> {
        let mut users = Vec::with_capacity(split.test.len());
        for tu in &split.test {
            let ranked = rank_items(model, params, aspects, tu.user, &tu.candidates())?;
            let top: BTreeSet<usize> = ranked.iter().take(top_k).copied().collect();
            let items = tu
                .positives
                .iter()
                .map(|p| p.item)
                .filter(|v| top.contains(v))
                .collect();
            users.push(BedUser { user: tu.user, items });
        }
        Ok(Self { top_k, users })
    }

    pub fn n_pairs(&self) -> usize {
        self.users.iter().map(|u| u.items.len()).sum()
    }

    /// Canonical serialised form.
    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    fn check(&self, split: &DatasetSplit) -> Result<()> {
        let by_user: BTreeMap<usize, Vec<usize>> = split.test.iter().map(|t| (t.user, t.candidates())).collect();
        for bu in &self.users {
            let candidates = by_user
                .get(&bu.user)
                .ok_or_else(|| Error::Validation(format!("bed references unknown user {}", bu.user)))?;
            if let Some(v) = bu.items.iter().find(|v| !candidates.contains(v)) {
                return Err(Error::Validation(format!(
                    "bed references item {v} outside the test candidates of user {}",
                    bu.user
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Cutoff of the ranking metric.
    pub ndcg_k: usize,
    /// Length of the recommendation list defining the bed.
    pub top_k: usize,
    /// Features kept per explanation after masking.
    pub top_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ndcg_k: 100,
            top_k: 5,
            top_n: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Condition {
    Clean,
    Attacked { eps_a: f64 },
}

impl Condition {
    pub fn eps_a(&self) -> f64 {
        match self {
            Condition::Clean => 0.0,
            Condition::Attacked { eps_a } => *eps_a,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Attacked { .. } => "attacked",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clean => f.write_str("clean"),
            Condition::Attacked { eps_a } => write!(f, "attacked({eps_a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub ndcg_at_k: f64,
    pub expl_pr: f64,
    pub expl_re: f64,
    pub expl_f1: f64,
    /// Users contributing to the ranking metric.
    pub n_users: usize,
    /// Users without held-out positives.
    pub n_skipped_users: usize,
    pub n_explained_pairs: usize,
    /// Explained pairs whose explanation came out empty.
    pub n_empty_explanations: usize,
}

/// Explains `(user, item)` against the user's test candidates, masks the
/// result to the user's train features and keeps the first `top_n`.
///
/// An item that left the model's top-K has no counterfactual explanation and
/// yields an empty one.
pub fn masked_explanation<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    aspects: &AspectMatrices,
    request: &ExplainRequest<'_>,
    user_features: &BTreeSet<usize>,
    top_n: usize,
) -> Result<Explanation> {
    let full = ExplainRequest {
        top_n: aspects.n_features(),
        ..*request
    };
    let mut expl = match model.explain(params, aspects, &full) {
        Ok(e) => e,
        Err(Error::Contract(_)) => Explanation {
            user: request.user,
            item: request.item,
            features: Vec::new(),
            counterfactual: None,
        },
        Err(e) => return Err(e),
    };
    expl = mask_explanation(&expl, user_features);
    expl.features.truncate(top_n);
    Ok(expl)
}

pub fn evaluate<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    split: &DatasetSplit,
    aspects: &AspectMatrices,
    bed: &EvaluationBed,
    gold: &GoldExplanations,
    cfg: &EvalConfig,
    condition: Condition,
) -> Result<EvalReport> {
    bed.check(split)?;
    let mut ndcg_sum = 0.0;
    let mut n_users = 0;
    let mut n_skipped_users = 0;
    let mut candidates_by_user = BTreeMap::new();
    for tu in &split.test {
        let candidates = tu.candidates();
        let relevant: Vec<usize> = tu.positives.iter().map(|p| p.item).collect();
        let ranked = rank_items(model, params, aspects, tu.user, &candidates)?;
        match ndcg_at(&ranked, &relevant, cfg.ndcg_k) {
            Some(v) => {
                ndcg_sum += v;
                n_users += 1;
            }
            None => n_skipped_users += 1,
        }
        candidates_by_user.insert(tu.user, candidates);
    }

    let user_features = split.train_features_by_user();
    let (mut pr, mut re, mut f1) = (0.0, 0.0, 0.0);
    let mut n_pairs = 0;
    let mut n_empty = 0;
    for bu in &bed.users {
        let candidates = &candidates_by_user[&bu.user];
        for &item in &bu.items {
            let Some(gold_set) = gold.get(bu.user, item) else {
                continue;
            };
            let request = ExplainRequest {
                user: bu.user,
                item,
                candidates,
                top_k: bed.top_k,
                top_n: cfg.top_n,
            };
            let expl = masked_explanation(model, params, aspects, &request, &user_features[bu.user], cfg.top_n)?;
            if expl.features.is_empty() {
                n_empty += 1;
            }
            let predicted: BTreeSet<usize> = expl.feature_ids().into_iter().collect();
            let s = explanation_prf(&predicted, gold_set)?;
            pr += s.precision;
            re += s.recall;
            f1 += s.f1;
            n_pairs += 1;
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    Ok(EvalReport {
        condition,
        ndcg_at_k: mean(ndcg_sum, n_users),
        expl_pr: mean(pr, n_pairs),
        expl_re: mean(re, n_pairs),
        expl_f1: mean(f1, n_pairs),
        n_users,
        n_skipped_users,
        n_explained_pairs: n_pairs,
        n_empty_explanations: n_empty,
    })
}

/// One line of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub algo: String,
    pub dataset: String,
    pub lambda: f64,
    pub eps_d: f64,
    pub eps_a: f64,
    pub condition: String,
    pub ndcg: f64,
    pub expl_pr: f64,
    pub expl_re: f64,
    pub expl_f1: f64,
    pub n_users: usize,
    pub n_pairs: usize,
}

impl ResultRow {
    pub fn from_report(run_id: &str, algo: &str, dataset: &str, lambda: f64, eps_d: f64, report: &EvalReport) -> Self {
        Self {
            run_id: run_id.to_string(),
            algo: algo.to_string(),
            dataset: dataset.to_string(),
            lambda,
            eps_d,
            eps_a: report.condition.eps_a(),
            condition: report.condition.label().to_string(),
            ndcg: report.ndcg_at_k,
            expl_pr: report.expl_pr,
            expl_re: report.expl_re,
            expl_f1: report.expl_f1,
            n_users: report.n_users,
            n_pairs: report.n_explained_pairs,
        }
    }
}

pub fn write_rows<W: std::io::Write>(writer: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
