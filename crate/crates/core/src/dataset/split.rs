use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::ReviewRecord;
use crate::error::{Error, Result};
use crate::rng;

/// Bidirectional string <-> dense index map. Indices follow sorted name order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interner {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Self {
        let set: BTreeSet<String> = names.into_iter().collect();
        let names: Vec<String> = set.into_iter().collect();
        let index = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        Self { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn rebuild(&mut self) {
        self.index = self.names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
    }
}

/// A feature mention with interned feature id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub feature: usize,
    pub sentiment: i8,
}

/// All reviews of one (user, item) pair, merged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Rating of the latest review of the pair.
    pub rating: u32,
    /// Timestamp of the latest review of the pair.
    pub timestamp: i64,
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationUser {
    pub user: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestUser {
    pub user: usize,
    pub positives: Vec<Interaction>,
    pub negatives: Vec<usize>,
}

impl TestUser {
    /// Positives followed by negatives.
    pub fn candidates(&self) -> Vec<usize> {
        self.positives
            .iter()
            .map(|p| p.item)
            .chain(self.negatives.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_positives: usize,
    pub test_negatives: usize,
    pub val_negatives: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_positives: 6,
            test_negatives: 100,
            val_negatives: 10,
            seed: 0,
        }
    }
}

/// Interned corpus divided into train interactions and per-user
/// validation/test candidate lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub users: Interner,
    pub items: Interner,
    pub features: Interner,
    pub rating_scale: u32,
    /// Number of raw review records the split was built from.
    pub n_reviews: usize,
    pub train: Vec<Interaction>,
    pub validation: Vec<ValidationUser>,
    pub test: Vec<TestUser>,
}

impl DatasetSplit {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Restores lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.users.rebuild();
        self.items.rebuild();
        self.features.rebuild();
    }

    /// Train items per user, sorted.
    pub fn train_items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for it in &self.train {
            out[it.user].push(it.item);
        }
        for items in &mut out {
            items.sort_unstable();
        }
        out
    }

    /// Features mentioned in each user's train reviews.
    pub fn train_features_by_user(&self) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); self.n_users()];
        for it in &self.train {
            out[it.user].extend(it.mentions.iter().map(|m| m.feature));
        }
        out
    }

    /// Audit view: interner tables and per-user membership without review text.
    pub fn manifest(&self) -> serde_json::Value {
        let train = self.train_items_by_user();
        let per_user: Vec<_> = (0..self.n_users())
            .map(|u| {
                let val = &self.validation[u];
                let test = &self.test[u];
                serde_json::json!({
                    "user": self.users.name(u),
                    "train": train[u].iter().map(|&v| self.items.name(v)).collect::<Vec<_>>(),
                    "validation": {
                        "positive": self.items.name(val.positive),
                        "negatives": val.negatives.iter().map(|&v| self.items.name(v)).collect::<Vec<_>>(),
                    },
                    "test": {
                        "positives": test.positives.iter().map(|p| self.items.name(p.item)).collect::<Vec<_>>(),
                        "negatives": test.negatives.iter().map(|&v| self.items.name(v)).collect::<Vec<_>>(),
                    },
                })
            })
            .collect();
        serde_json::json!({
            "users": self.users.names(),
            "items": self.items.names(),
            "features": self.features.names(),
            "rating_scale": self.rating_scale,
            "n_reviews": self.n_reviews,
            "per_user": per_user,
        })
    }
}

/// Splits filtered records per user by recency.
///
/// The latest `test_positives` distinct items become test positives, the next
/// latest becomes the validation positive and everything older is train.
/// Negatives are drawn without replacement from items the user never touched.
pub fn build_split(records: &[ReviewRecord], cfg: &SplitConfig, rating_scale: u32) -> Result<DatasetSplit> {
    let users = Interner::from_names(records.iter().map(|r| r.user_id.clone()));
    let items = Interner::from_names(records.iter().map(|r| r.item_id.clone()));
    let features = Interner::from_names(
        records
            .iter()
            .flat_map(|r| r.triples.iter().map(|t| t.feature.clone())),
    );

    // (user, item) -> merged interaction
    let mut pairs: BTreeMap<(usize, usize), Interaction> = BTreeMap::new();
    for r in records {
        let u = users.id(&r.user_id).expect("interned");
        let v = items.id(&r.item_id).expect("interned");
        let mentions = r.triples.iter().map(|t| Mention {
            feature: features.id(&t.feature).expect("interned"),
            sentiment: t.sentiment,
        });
        let entry = pairs.entry((u, v)).or_insert_with(|| Interaction {
            user: u,
            item: v,
            rating: r.rating,
            timestamp: r.timestamp,
            mentions: Vec::new(),
        });
        if r.timestamp >= entry.timestamp {
            entry.timestamp = r.timestamp;
            entry.rating = r.rating;
        }
        entry.mentions.extend(mentions);
    }

    let mut by_user: Vec<Vec<Interaction>> = vec![Vec::new(); users.len()];
    for ((u, _), it) in pairs {
        by_user[u].push(it);
    }

    let mut rng = rng::stream(cfg.seed, "split");
    let n_items = items.len();
    let mut train = Vec::new();
    let mut validation = Vec::with_capacity(users.len());
    let mut test = Vec::with_capacity(users.len());

    for (u, mut history) in by_user.into_iter().enumerate() {
        let name = users.name(u);
        if history.len() < 3 {
            return Err(Error::TooFewInteractions {
                user: name.to_string(),
                count: history.len(),
            });
        }
        history.sort_by(|a, b| {
            (a.timestamp, items.name(a.item)).cmp(&(b.timestamp, items.name(b.item)))
        });
        let n_test = cfg.test_positives.min(history.len() - 2);
        if n_test < cfg.test_positives {
            warn!(
                "user `{name}` has {} interactions; using {n_test} test positives",
                history.len()
            );
        }
        let interacted: BTreeSet<usize> = history.iter().map(|i| i.item).collect();
        let candidates: Vec<usize> = (0..n_items).filter(|v| !interacted.contains(v)).collect();
        let needed = cfg.test_negatives.max(cfg.val_negatives);
        if candidates.len() < needed {
            return Err(Error::NegativeSampling {
                user: name.to_string(),
                needed,
                available: candidates.len(),
            });
        }

        let test_pos = history.split_off(history.len() - n_test);
        let val_pos = history.pop().expect("at least two remain");

        let mut test_neg: Vec<usize> = sample(&mut rng, candidates.len(), cfg.test_negatives)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        test_neg.sort_unstable();
        let mut val_neg: Vec<usize> = sample(&mut rng, candidates.len(), cfg.val_negatives)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        val_neg.sort_unstable();

        train.extend(history);
        validation.push(ValidationUser {
            user: u,
            positive: val_pos.item,
            negatives: val_neg,
        });
        test.push(TestUser {
            user: u,
            positives: test_pos,
            negatives: test_neg,
        });
    }

    Ok(DatasetSplit {
        users,
        items,
        features,
        rating_scale,
        n_reviews: records.len(),
        train,
        validation,
        test,
    })
}
