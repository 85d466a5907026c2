//! Review ingestion, density filtering and train/validation/test splits.

mod split;
pub mod synth;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use split::{build_split, DatasetSplit, Interaction, SplitConfig, TestUser, ValidationUser};

/// One `(feature, opinion, sentiment)` extraction from a review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentTriple {
    pub feature: String,
    pub opinion: String,
    pub sentiment: i8,
}

/// One user-item review as read from the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: u32,
    pub timestamp: i64,
    #[serde(default)]
    pub triples: Vec<SentimentTriple>,
}

#[derive(Deserialize)]
struct RawTriple {
    feature: String,
    #[serde(default)]
    opinion: String,
    sentiment: i64,
}

#[derive(Deserialize)]
struct RawReview {
    user_id: String,
    item_id: String,
    rating: i64,
    timestamp: i64,
    #[serde(default)]
    triples: Vec<RawTriple>,
}

fn validate(raw: RawReview, line: usize, rating_scale: u32) -> Result<ReviewRecord> {
    if raw.rating < 1 || raw.rating > i64::from(rating_scale) {
        return Err(Error::Validation(format!(
            "line {line}: rating {} outside [1, {rating_scale}]",
            raw.rating
        )));
    }
    let triples = raw
        .triples
        .into_iter()
        .map(|t| match t.sentiment {
            -1 | 1 => Ok(SentimentTriple {
                feature: t.feature,
                opinion: t.opinion,
                sentiment: t.sentiment as i8,
            }),
            s => Err(Error::Validation(format!(
                "line {line}: sentiment {s} is not -1 or +1"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReviewRecord {
        user_id: raw.user_id,
        item_id: raw.item_id,
        rating: raw.rating as u32,
        timestamp: raw.timestamp,
        triples,
    })
}

/// Parses JSON-lines reviews. Blank lines are skipped; line numbers are 1-based.
pub fn parse_reviews(reader: impl BufRead, rating_scale: u32) -> Result<Vec<ReviewRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawReview = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(validate(raw, i + 1, rating_scale)?);
    }
    Ok(out)
}

/// Keeps users with at least `min_reviews_per_user` reviews.
///
/// Output is sorted by `(user_id, timestamp, item_id)`.
pub fn filter_users(mut records: Vec<ReviewRecord>, min_reviews_per_user: usize) -> Vec<ReviewRecord> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in &records {
        *counts.entry(r.user_id.as_str()).or_default() += 1;
    }
    let keep: std::collections::HashSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_reviews_per_user)
        .map(|(u, _)| u.to_string())
        .collect();
    records.retain(|r| keep.contains(&r.user_id));
    records.sort_by(|a, b| {
        (&a.user_id, a.timestamp, &a.item_id).cmp(&(&b.user_id, b.timestamp, &b.item_id))
    });
    records
}

/// Reads and filters a JSON-lines review file.
pub fn ingest_reviews(
    path: impl AsRef<Path>,
    min_reviews_per_user: usize,
    rating_scale: u32,
) -> Result<Vec<ReviewRecord>> {
    if min_reviews_per_user == 0 {
        return Err(Error::Validation("min_reviews_per_user must be >= 1".into()));
    }
    let file = File::open(path)?;
    let records = parse_reviews(BufReader::new(file), rating_scale)?;
    Ok(filter_users(records, min_reviews_per_user))
}

/// Corpus size summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub features: usize,
    pub reviews: usize,
    /// `100 * reviews / (users * items)`.
    pub sparsity_pct: f64,
}

impl DatasetStats {
    pub fn from_counts(users: usize, items: usize, features: usize, reviews: usize) -> Self {
        let cells = (users * items) as f64;
        let sparsity_pct = if cells > 0.0 {
            100.0 * reviews as f64 / cells
        } else {
            0.0
        };
        Self {
            users,
            items,
            features,
            reviews,
            sparsity_pct,
        }
    }

    /// Sparsity rounded to four significant digits, as corpus tables print it.
    pub fn sparsity_display(&self) -> String {
        format_significant(self.sparsity_pct, 4)
    }
}

pub fn dataset_stats(split: &DatasetSplit) -> DatasetStats {
    DatasetStats::from_counts(
        split.users.len(),
        split.items.len(),
        split.features.len(),
        split.n_reviews,
    )
}

pub(crate) fn format_significant(x: f64, digits: i32) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Writes records as JSON lines.
pub fn write_jsonl(path: impl AsRef<Path>, records: &[ReviewRecord]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
