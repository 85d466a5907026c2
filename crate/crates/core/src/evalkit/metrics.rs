use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Explanation;

/// Binary-relevance NDCG@k with a `log2(i + 1)` discount over 1-based
/// positions. `None` when `relevant` is empty.
pub fn ndcg_at(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    let relevant: BTreeSet<usize> = relevant.iter().copied().collect();
    if relevant.is_empty() {
        return None;
    }
    let discount = |i: usize| 1.0 / ((i + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, v)| relevant.contains(v))
        .map(|(i, _)| discount(i + 1))
        .fold(0.0, |a, b| a + b);
    let idcg: f64 = (1..=k.min(relevant.len())).map(discount).fold(0.0, |a, b| a + b);
    if idcg == 0.0 {
        return Some(0.0);
    }
    Some(dcg / idcg)
}

/// Keeps explanation features the user has mentioned, in order.
pub fn mask_explanation(expl: &Explanation, user_features: &BTreeSet<usize>) -> Explanation {
    Explanation {
        features: expl
            .features
            .iter()
            .copied()
            .filter(|(f, _)| user_features.contains(f))
            .collect(),
        ..expl.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Feature-level precision, recall and F1 of one explanation.
pub fn explanation_prf(predicted: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> Result<Prf> {
    if gold.is_empty() {
        return Err(Error::Contract("gold feature set is empty".into()));
    }
    let hits = predicted.intersection(gold).count() as f64;
    let precision = if predicted.is_empty() {
        0.0
    } else {
        hits / predicted.len() as f64
    };
    let recall = hits / gold.len() as f64;
    // 2PR / (P + R) == 2|hits| / (|predicted| + |gold|)
    let f1 = if hits == 0.0 {
        0.0
    } else {
        2.0 * hits / (predicted.len() + gold.len()) as f64
    };
    Ok(Prf { precision, recall, f1 })
}
