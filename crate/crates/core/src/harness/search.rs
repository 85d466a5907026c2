//! Grid search over learning rate and weight decay on validation NDCG@10.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::aspects::AspectMatrices;
use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::models::Recommender;
use crate::robustness::{train_defended, DefenseConfig, TrainingConfig};

pub const RATE_GRID: [f64; 7] = [1e-5, 1e-4, 0.001, 0.01, 0.05, 0.1, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchGrid {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    /// Epoch cap per cell.
    pub max_epochs: usize,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            learning_rates: RATE_GRID.to_vec(),
            weight_decays: RATE_GRID.to_vec(),
            max_epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// `None` when the cell diverged.
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: TrainingConfig,
    pub best_metric: f64,
    pub cells: Vec<CellResult>,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Scores every grid cell with `metric` and keeps the best one; ties go to the
/// smaller learning rate, then the smaller weight decay. Diverged cells are
/// skipped.
pub fn hyperparameter_search<F>(base: &TrainingConfig, grid: &SearchGrid, mut metric: F) -> Result<SearchResult>
where
    F: FnMut(&TrainingConfig) -> Result<f64>,
{
    let mut cells = Vec::new();
    let mut best: Option<(f64, TrainingConfig)> = None;
    for &lr in &sorted(&grid.learning_rates) {
        for &wd in &sorted(&grid.weight_decays) {
            let cfg = TrainingConfig {
                learning_rate: lr,
                weight_decay: wd,
                max_epochs: grid.max_epochs.max(1),
                ..base.clone()
            };
            let m = match metric(&cfg) {
                Ok(m) if m.is_finite() => Some(m),
                Ok(_) | Err(Error::Divergence) => {
                    warn!("cell lr={lr} wd={wd} diverged");
                    None
                }
                Err(e) => return Err(e),
            };
            if let Some(m) = m {
                if best.as_ref().is_none_or(|(b, _)| m > *b) {
                    best = Some((m, cfg));
                }
            }
            cells.push(CellResult {
                learning_rate: lr,
                weight_decay: wd,
                metric: m,
            });
        }
    }
    let (best_metric, best) = best.ok_or(Error::Divergence)?;
    info!(
        "best cell lr={} wd={} (val ndcg@10 {best_metric:.4})",
        best.learning_rate, best.weight_decay
    );
    Ok(SearchResult {
        best: TrainingConfig {
            max_epochs: base.max_epochs,
            ..best
        },
        best_metric,
        cells,
    })
}

/// Search scored by the best validation NDCG@10 of a capped training run.
pub fn validation_search<M: Recommender + ?Sized>(
    model: &M,
    split: &DatasetSplit,
    aspects: &AspectMatrices,
    defense: &DefenseConfig,
    base: &TrainingConfig,
    grid: &SearchGrid,
) -> Result<SearchResult> {
    hyperparameter_search(base, grid, |cfg| {
        let trained = train_defended(model, split, aspects, defense, cfg, &mut |_| {})?;
        Ok(trained
            .history
            .iter()
            .map(|h| h.val_ndcg)
            .fold(f64::NEG_INFINITY, f64::max))
    })
}
