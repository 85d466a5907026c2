//! Counterfactual explainable recommender: a two-hidden-layer network over
//! `[X_u, Y_v]` scores each pair; explanations come from the smallest change
//! to `Y_v` that drops the item out of the user's top-K.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::counterfactual::{optimize_delta, rank_delta_features, CounterfactualConfig, CounterfactualResult};
use super::{rank_by_scores, Batch, ExplainRequest, Explanation, LossInput, ModelKind, Recommender};
use crate::aspects::AspectMatrices;
use crate::diffcore::{ParamSet, ParamVars, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CerConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub lambda_reg: f64,
    pub counterfactual: CounterfactualConfig,
}

impl Default for CerConfig {
    fn default() -> Self {
        Self {
            hidden1: 256,
            hidden2: 64,
            lambda_reg: 1e-4,
            counterfactual: CounterfactualConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cer {
    pub config: CerConfig,
}

/// Outcome of the counterfactual search for one recommended pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual {
    /// Score of the first item outside the top-K.
    pub threshold: f64,
    pub result: CounterfactualResult,
}

pub const LAYERS: [&str; 6] = ["W1", "b1", "W2", "b2", "W3", "b3"];

/// Parameter handles in layer order.
#[derive(Debug, Clone, Copy)]
pub struct Network {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    w3: Var,
    b3: Var,
}

impl Network {
    pub fn from_vars(params: &ParamVars) -> Self {
        let [w1, b1, w2, b2, w3, b3] = LAYERS.map(|n| params.get(n));
        Self { w1, b1, w2, b2, w3, b3 }
    }

    /// `[user_aspects | item_aspects]` (n x 2F) -> logits (n x 1).
    pub fn forward(&self, tape: &mut Tape, user_aspects: Var, item_aspects: Var) -> Result<Var> {
        let input = tape.concat_cols(user_aspects, item_aspects)?;
        let h = tape.matmul(input, self.w1)?;
        let h = tape.add(h, self.b1)?;
        let h = tape.sigmoid(h)?;
        let h = tape.matmul(h, self.w2)?;
        let h = tape.add(h, self.b2)?;
        let h = tape.sigmoid(h)?;
        let out = tape.matmul(h, self.w3)?;
        tape.add(out, self.b3)
    }
}

impl Cer {
    pub fn new(config: CerConfig) -> Self {
        Self { config }
    }

    /// Smallest change to the item's aspects that drops it below the
    /// `(K+1)`-th ranked candidate.
    pub fn counterfactual(
        &self,
        params: &ParamSet,
        aspects: &AspectMatrices,
        request: &ExplainRequest<'_>,
    ) -> Result<Counterfactual> {
        let k = request.top_k;
        if request.candidates.len() <= k {
            return Err(Error::Contract(format!(
                "need more than {k} candidates to explain a top-{k} list"
            )));
        }
        let scores = self.score(params, aspects, request.user, request.candidates)?;
        let ranked = rank_by_scores(request.candidates, &scores);
        if !ranked[..k].contains(&request.item) {
            return Err(Error::Contract(format!(
                "item {} is not in the top-{k} of user {}",
                request.item, request.user
            )));
        }
        let pos = request
            .candidates
            .iter()
            .position(|&v| v == ranked[k])
            .expect("ranked item is a candidate");
        let threshold = scores[pos];

        let user_row = Tensor::row(aspects.x.row_slice(request.user));
        let result = optimize_delta(
            aspects.y.row_slice(request.item),
            threshold,
            &self.config.counterfactual,
            |tape, item_row| {
                let vars = params.register_constant(tape);
                let net = Network::from_vars(&vars);
                let user = tape.constant(user_row.clone());
                net.forward(tape, user, item_row)
            },
        )?;
        Ok(Counterfactual { threshold, result })
    }

    fn gather(source: &Tensor, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * source.cols());
        for &r in rows {
            data.extend_from_slice(source.row_slice(r));
        }
        Tensor::new(rows.len(), source.cols(), data).expect("non-empty rows")
    }
}

impl Recommender for Cer {
    fn kind(&self) -> ModelKind {
        ModelKind::Cer
    }

    fn init_params(&self, _n_users: usize, _n_items: usize, n_features: usize, rng: &mut Rng) -> ParamSet {
        let c = &self.config;
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(fan_in, fan_out, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * limit)
        };
        let w1 = glorot(2 * n_features, c.hidden1);
        let w2 = glorot(c.hidden1, c.hidden2);
        let w3 = glorot(c.hidden2, 1);
        let mut p = ParamSet::new();
        p.push("W1", w1);
        p.push("b1", Tensor::zeros(1, c.hidden1));
        p.push("W2", w2);
        p.push("b2", Tensor::zeros(1, c.hidden2));
        p.push("W3", w3);
        p.push("b3", Tensor::zeros(1, 1));
        p
    }

    /// Mean binary cross-entropy on logits; positive label iff rating > 0.
    fn loss(&self, tape: &mut Tape, params: &ParamVars, batch: &Batch, input: LossInput<'_>) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let net = Network::from_vars(params);
        let xb = tape.gather_rows(input.x, &batch.users)?;
        let yb = tape.gather_rows(input.y, &batch.items)?;
        let logits = net.forward(tape, xb, yb)?;
        let labels: Vec<f64> = batch.ratings.iter().map(|&r| if r > 0.0 { 1.0 } else { 0.0 }).collect();
        let labels = tape.constant(Tensor::new(batch.len(), 1, labels)?);
        // BCE(sigmoid(s), y) = softplus(s) - y s
        let sp = tape.softplus(logits)?;
        let ys = tape.mul(labels, logits)?;
        let per_pair = tape.sub(sp, ys)?;
        let mut total = tape.mean(per_pair)?;
        if self.config.lambda_reg != 0.0 {
            for &p in params.vars() {
                let sq = tape.square(p)?;
                let s = tape.sum(sq)?;
                let s = tape.scale(s, self.config.lambda_reg)?;
                total = tape.add(total, s)?;
            }
        }
        if !tape.value(total).item().is_finite() {
            return Err(Error::Divergence);
        }
        Ok(total)
    }

    fn score(&self, params: &ParamSet, aspects: &AspectMatrices, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = params.register_constant(&mut tape);
        let net = Network::from_vars(&vars);
        let users = vec![user; items.len()];
        let xb = tape.constant(Self::gather(&aspects.x, &users));
        let yb = tape.constant(Self::gather(&aspects.y, items));
        let logits = net.forward(&mut tape, xb, yb)?;
        Ok(tape.value(logits).data().to_vec())
    }

    fn explain(&self, params: &ParamSet, aspects: &AspectMatrices, request: &ExplainRequest<'_>) -> Result<Explanation> {
        let cf = self.counterfactual(params, aspects, request)?;
        Ok(Explanation {
            user: request.user,
            item: request.item,
            features: rank_delta_features(&cf.result.delta, request.top_n),
            counterfactual: Some(cf.result.converged),
        })
    }

    fn hyperparameters(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("serializable config")
    }
}
