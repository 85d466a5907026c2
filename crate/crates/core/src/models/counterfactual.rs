//! Minimal item-aspect perturbations that push an item out of a top-K list.
//!
//! For a score function `s(y)` over one item-aspect row, find `delta`
//! minimising `|delta|^2 + gamma * max(0, margin + s(y + delta) - threshold)`
//! with Adam from `delta = 0`.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Adam, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterfactualConfig {
    pub gamma: f64,
    pub margin: f64,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            gamma: 100.0,
            margin: 0.01,
            steps: 200,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualResult {
    pub delta: Vec<f64>,
    /// Score of the perturbed row.
    pub score: f64,
    /// `score <= threshold - margin`.
    pub converged: bool,
}

/// Runs the hinge optimisation. `score_fn` maps a `1 x F` row on `tape` to a `1 x 1` score.
///
/// Returns the smallest-norm iterate that satisfies the margin, or the final
/// iterate when none does.
pub fn optimize_delta<F>(base_row: &[f64], threshold: f64, cfg: &CounterfactualConfig, score_fn: F) -> Result<CounterfactualResult>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let width = base_row.len();
    let base = Tensor::row(base_row);
    let mut params = ParamSet::new();
    params.push("delta", Tensor::zeros(1, width));
    let mut adam = Adam::new(cfg.learning_rate, 0.0);
    let target = threshold - cfg.margin;

    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut last_score = f64::NAN;
    for step in 0..=cfg.steps {
        let mut tape = Tape::new();
        let delta = tape.variable(params.tensors()[0].clone());
        let row = tape.constant(base.clone());
        let perturbed = tape.add(row, delta)?;
        let score = score_fn(&mut tape, perturbed)?;
        let s = tape.value(score).item();
        if !s.is_finite() {
            return Err(Error::Divergence);
        }
        last_score = s;
        let norm = params.tensors()[0].squared_norm();
        if s <= target && best.as_ref().is_none_or(|(n, _, _)| norm < *n) {
            best = Some((norm, params.tensors()[0].data().to_vec(), s));
        }
        if step == cfg.steps {
            break;
        }
        let hinge_in = tape.scale(score, 1.0)?;
        let offset = tape.constant(Tensor::scalar(cfg.margin - threshold));
        let hinge_in = tape.add(hinge_in, offset)?;
        let hinge = tape.relu(hinge_in)?;
        let hinge = tape.scale(hinge, cfg.gamma)?;
        let sq = tape.square(delta)?;
        let reg = tape.sum(sq)?;
        let loss = tape.add(reg, hinge)?;
        let mut grads = tape.backward(loss)?;
        let g = grads
            .take(delta)
            .unwrap_or_else(|| Tensor::zeros(1, width));
        let mut gset = ParamSet::new();
        gset.push("delta", g);
        adam.step(&mut params, &gset)?;
    }

    Ok(match best {
        Some((_, delta, score)) => CounterfactualResult {
            delta,
            score,
            converged: true,
        },
        None => CounterfactualResult {
            delta: params.tensors()[0].data().to_vec(),
            score: last_score,
            converged: false,
        },
    })
}

/// Orders features for an explanation: features with `delta < 0` by
/// descending `|delta|`; if there are none, every nonzero feature by `|delta|`.
pub fn rank_delta_features(delta: &[f64], top_n: usize) -> Vec<(usize, f64)> {
    let by_magnitude = |keep: &dyn Fn(f64) -> bool| {
        let mut v: Vec<(usize, f64)> = delta
            .iter()
            .enumerate()
            .filter(|&(_, &d)| keep(d))
            .map(|(f, &d)| (f, d.abs()))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    };
    let mut ranked = by_magnitude(&|d| d < 0.0);
    if ranked.is_empty() {
        ranked = by_magnitude(&|d| d != 0.0);
    }
    ranked.truncate(top_n);
    ranked
}
