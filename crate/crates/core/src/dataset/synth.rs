//! Seeded synthetic review corpora with planted user-feature preferences.
//!
//! Every user cares about a few features. Every item carries a handful of
//! features, each with a fixed quality polarity. Users pick items whose
//! features overlap their preferences, and each review mentions the shared
//! features with the item's polarity.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ReviewRecord, SentimentTriple};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub features: usize,
    /// Preferred features per user.
    pub prefs_per_user: usize,
    /// Features carried by each item.
    pub features_per_item: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    /// Probability that an item feature has positive quality.
    pub positive_rate: f64,
    /// Probability of an extra mention of a non-preferred item feature.
    pub off_pref_mention_rate: f64,
    /// Probability that a mention's sentiment is flipped.
    pub sentiment_noise: f64,
    /// Cap on triples per review; `0` means unlimited.
    pub max_triples_per_review: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 500,
            features: 30,
            prefs_per_user: 3,
            features_per_item: 6,
            min_interactions: 14,
            max_interactions: 22,
            positive_rate: 0.7,
            off_pref_mention_rate: 0.3,
            sentiment_noise: 0.05,
            max_triples_per_review: 0,
            seed: 0,
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Vec<ReviewRecord> {
    let mut rng = rng::stream(cfg.seed, "synth");
    let all_features: Vec<usize> = (0..cfg.features).collect();

    // item -> [(feature, polarity)]
    let item_features: Vec<Vec<(usize, i8)>> = (0..cfg.items)
        .map(|_| {
            let mut fs: Vec<usize> = all_features
                .choose_multiple(&mut rng, cfg.features_per_item.min(cfg.features))
                .copied()
                .collect();
            fs.sort_unstable();
            fs.into_iter()
                .map(|f| (f, if rng.random_bool(cfg.positive_rate) { 1 } else { -1 }))
                .collect()
        })
        .collect();

    let mut records = Vec::new();
    for u in 0..cfg.users {
        let mut prefs: Vec<usize> = all_features
            .choose_multiple(&mut rng, cfg.prefs_per_user.min(cfg.features))
            .copied()
            .collect();
        prefs.sort_unstable();

        // affinity + Gumbel noise, keep the top n
        let mut scored: Vec<(f64, usize)> = item_features
            .iter()
            .enumerate()
            .map(|(v, fs)| {
                let affinity: f64 = fs
                    .iter()
                    .filter(|(f, _)| prefs.contains(f))
                    .map(|&(_, p)| if p > 0 { 1.0 } else { 0.25 })
                    .sum();
                let g: f64 = -(-rng.random::<f64>().max(1e-300).ln()).ln();
                (affinity * 1.5 + g, v)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let n = rng.random_range(cfg.min_interactions..=cfg.max_interactions);

        let mut ts: i64 = rng.random_range(0..1_000);
        for &(_, v) in scored.iter().take(n) {
            ts += rng.random_range(1..10_000);
            let mut triples = Vec::new();
            for &(f, polarity) in &item_features[v] {
                let preferred = prefs.contains(&f);
                if preferred || rng.random_bool(cfg.off_pref_mention_rate) {
                    let sentiment = if rng.random_bool(cfg.sentiment_noise) { -polarity } else { polarity };
                    triples.push(SentimentTriple {
                        feature: format!("feat{f:02}"),
                        opinion: if sentiment > 0 { "good" } else { "bad" }.to_string(),
                        sentiment,
                    });
                }
            }
            if cfg.max_triples_per_review > 0 && triples.len() > cfg.max_triples_per_review {
                triples.shuffle(&mut rng);
                triples.truncate(cfg.max_triples_per_review);
            }
            let net: i32 = triples.iter().map(|t| i32::from(t.sentiment)).sum();
            let rating = (3 + net).clamp(1, 5) as u32;
            records.push(ReviewRecord {
                user_id: format!("user{u:04}"),
                item_id: format!("item{v:04}"),
                rating,
                timestamp: ts,
                triples,
            });
        }
    }
    records
}
