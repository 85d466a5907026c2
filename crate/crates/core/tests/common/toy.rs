//! Hand-built recommenders with closed-form losses.

use robustrec::aspects::AspectMatrices;
use robustrec::diffcore::{ParamSet, ParamVars, Tape, Tensor, Var};
use robustrec::error::Result;
use robustrec::models::{Batch, ExplainRequest, Explanation, LossInput, ModelKind, Recommender};
use robustrec::rng::Rng;

/// Loss `w * sum_batch Y[v, 0]` (or `w * 0.5 |Y|^2` when `quadratic`).
pub struct Toy {
    pub quadratic: bool,
}

/// Least squares `mean_batch (Y_v w - Y_v w*)^2`, initialised at `w*`.
pub struct LeastSquares {
    pub w_star: Vec<f64>,
}

fn no_explanation(request: &ExplainRequest<'_>) -> Result<Explanation> {
    Ok(Explanation {
        user: request.user,
        item: request.item,
        features: Vec::new(),
        counterfactual: None,
    })
}

impl Recommender for Toy {
    fn kind(&self) -> ModelKind {
        ModelKind::Efm
    }

    fn init_params(&self, _: usize, _: usize, _: usize, _: &mut Rng) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(1.0));
        p
    }

    fn loss(&self, tape: &mut Tape, params: &ParamVars, batch: &Batch, input: LossInput<'_>) -> Result<Var> {
        let w = params.get("w");
        let base = if self.quadratic {
            let sq = tape.square(input.y)?;
            let s = tape.sum(sq)?;
            tape.scale(s, 0.5)?
        } else {
            let rows = tape.gather_rows(input.y, &batch.items)?;
            let col = tape.constant(Tensor::from_fn(tape.value(rows).cols(), 1, |r, _| if r == 0 { 1.0 } else { 0.0 }));
            let picked = tape.matmul(rows, col)?;
            tape.sum(picked)?
        };
        tape.mul(base, w)
    }

    fn score(&self, _: &ParamSet, _: &AspectMatrices, _: usize, items: &[usize]) -> Result<Vec<f64>> {
        Ok(vec![0.0; items.len()])
    }

    fn explain(&self, _: &ParamSet, _: &AspectMatrices, request: &ExplainRequest<'_>) -> Result<Explanation> {
        no_explanation(request)
    }

    fn hyperparameters(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

impl Recommender for LeastSquares {
    fn kind(&self) -> ModelKind {
        ModelKind::Efm
    }

    fn init_params(&self, _: usize, _: usize, _: usize, _: &mut Rng) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::new(self.w_star.len(), 1, self.w_star.clone()).unwrap());
        p
    }

    fn loss(&self, tape: &mut Tape, params: &ParamVars, batch: &Batch, input: LossInput<'_>) -> Result<Var> {
        let rows = tape.gather_rows(input.y, &batch.items)?;
        let pred = tape.matmul(rows, params.get("w"))?;
        let star = tape.constant(Tensor::new(self.w_star.len(), 1, self.w_star.clone())?);
        let target = tape.matmul(rows, star)?;
        let r = tape.sub(pred, target)?;
        let sq = tape.square(r)?;
        tape.mean(sq)
    }

    fn score(&self, params: &ParamSet, aspects: &AspectMatrices, _: usize, items: &[usize]) -> Result<Vec<f64>> {
        let w = params.get("w").unwrap().data();
        Ok(items
            .iter()
            .map(|&v| aspects.y.row_slice(v).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn explain(&self, _: &ParamSet, _: &AspectMatrices, request: &ExplainRequest<'_>) -> Result<Explanation> {
        no_explanation(request)
    }

    fn hyperparameters(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}
