//! Explicit factor model: joint non-negative-leaning factorisation of the
//! interaction matrix A and the aspect matrices X and Y.
//!
//! ```text
//! X ~ U1 V^T      Y ~ U2 V^T      A ~ U1 U2^T + H1 H2^T
//! ```

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{top_indices, Batch, ExplainRequest, Explanation, LossInput, ModelKind, Recommender};
use crate::aspects::AspectMatrices;
use crate::diffcore::{ParamSet, ParamVars, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EfmConfig {
    /// Rank shared by users, items and features.
    pub rank: usize,
    /// Rank of the auxiliary rating-only factors.
    pub aux_rank: usize,
    /// Weight of the aspect-match term in the score.
    pub alpha: f64,
    /// Number of the user's top features in the aspect-match term.
    pub k_top_features: usize,
    /// Candidate pool for explanations; defaults to `k_top_features`.
    pub explain_candidates: Option<usize>,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lambda_a: f64,
    pub lambda_reg: f64,
    /// Weight of the penalty on negative factor entries.
    pub lambda_nn: f64,
}

impl Default for EfmConfig {
    fn default() -> Self {
        Self {
            rank: 64,
            aux_rank: 32,
            alpha: 0.85,
            k_top_features: 10,
            explain_candidates: None,
            lambda_x: 1.0,
            lambda_y: 1.0,
            lambda_a: 1.0,
            lambda_reg: 1e-4,
            lambda_nn: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Efm {
    pub config: EfmConfig,
}

pub const FACTORS: [&str; 5] = ["U1", "U2", "V", "H1", "H2"];

impl Efm {
    pub fn new(config: EfmConfig) -> Self {
        Self { config }
    }

    fn explain_pool(&self) -> usize {
        self.config.explain_candidates.unwrap_or(self.config.k_top_features)
    }

    /// Reconstructed X row for `user`.
    pub fn user_aspects(&self, params: &ParamSet, user: usize) -> Vec<f64> {
        let (u1, v) = (factor(params, "U1"), factor(params, "V"));
        reconstruct_row(u1.row_slice(user), v)
    }

    /// Reconstructed Y row for `item`.
    pub fn item_aspects(&self, params: &ParamSet, item: usize) -> Vec<f64> {
        let (u2, v) = (factor(params, "U2"), factor(params, "V"));
        reconstruct_row(u2.row_slice(item), v)
    }

    /// Reconstructed interaction strength.
    pub fn interaction(&self, params: &ParamSet, user: usize, item: usize) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        dot(factor(params, "U1").row_slice(user), factor(params, "U2").row_slice(item))
            + dot(factor(params, "H1").row_slice(user), factor(params, "H2").row_slice(item))
    }

    fn reconstruction_term(
        &self,
        tape: &mut Tape,
        target: Var,
        latent: Var,
        features_t: Var,
        mask: Tensor,
    ) -> Result<Var> {
        let rebuilt = tape.matmul(latent, features_t)?;
        let diff = tape.sub(target, rebuilt)?;
        let mask = tape.constant(mask);
        let masked = tape.mul(diff, mask)?;
        let sq = tape.square(masked)?;
        tape.sum(sq)
    }
}

fn factor<'a>(params: &'a ParamSet, name: &str) -> &'a Tensor {
    params
        .get(name)
        .unwrap_or_else(|| panic!("EFM parameter `{name}` missing"))
}

fn reconstruct_row(latent: &[f64], features: &Tensor) -> Vec<f64> {
    (0..features.rows())
        .map(|f| latent.iter().zip(features.row_slice(f)).map(|(a, b)| a * b).sum())
        .collect()
}

fn observed_mask(source: &Tensor, rows: &[usize]) -> Tensor {
    let cols = source.cols();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend(source.row_slice(r).iter().map(|&x| if x != 0.0 { 1.0 } else { 0.0 }));
    }
    Tensor::new(rows.len(), cols, data).expect("non-empty rows")
}

impl Recommender for Efm {
    fn kind(&self) -> ModelKind {
        ModelKind::Efm
    }

    fn init_params(&self, n_users: usize, n_items: usize, n_features: usize, rng: &mut Rng) -> ParamSet {
        let (r, ra) = (self.config.rank, self.config.aux_rank);
        // E[u.v] = r a^2 / 4 for entries uniform on [0, a)
        let a = (12.0 / r as f64).sqrt();
        let b = (4.0 / ra as f64).sqrt();
        let mut uniform = |rows: usize, cols: usize, hi: f64| {
            Tensor::from_fn(rows, cols, |_, _| rng.random::<f64>() * hi)
        };
        let mut p = ParamSet::new();
        p.push("U1", uniform(n_users, r, a));
        p.push("U2", uniform(n_items, r, a));
        p.push("V", uniform(n_features, r, a));
        p.push("H1", uniform(n_users, ra, b));
        p.push("H2", uniform(n_items, ra, b));
        p
    }

    fn loss(&self, tape: &mut Tape, params: &ParamVars, batch: &Batch, input: LossInput<'_>) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let c = &self.config;
        let n = batch.len() as f64;
        let [u1, u2, v, h1, h2] = FACTORS.map(|name| params.get(name));

        let u1b = tape.gather_rows(u1, &batch.users)?;
        let u2b = tape.gather_rows(u2, &batch.items)?;
        let vt = tape.transpose(v)?;

        let xb = tape.gather_rows(input.x, &batch.users)?;
        let x_mask = observed_mask(&input.observed.x, &batch.users);
        let x_term = self.reconstruction_term(tape, xb, u1b, vt, x_mask)?;

        let yb = tape.gather_rows(input.y, &batch.items)?;
        let y_mask = observed_mask(&input.observed.y, &batch.items);
        let y_term = self.reconstruction_term(tape, yb, u2b, vt, y_mask)?;

        let h1b = tape.gather_rows(h1, &batch.users)?;
        let h2b = tape.gather_rows(h2, &batch.items)?;
        let shared = tape.mul(u1b, u2b)?;
        let shared = tape.row_sum(shared)?;
        let aux = tape.mul(h1b, h2b)?;
        let aux = tape.row_sum(aux)?;
        let a_hat = tape.add(shared, aux)?;
        let target = tape.constant(Tensor::new(batch.len(), 1, batch.ratings.clone())?);
        let a_diff = tape.sub(target, a_hat)?;
        let a_sq = tape.square(a_diff)?;
        let a_term = tape.sum(a_sq)?;

        let mut total = tape.scale(x_term, c.lambda_x / n)?;
        let y_scaled = tape.scale(y_term, c.lambda_y / n)?;
        total = tape.add(total, y_scaled)?;
        let a_scaled = tape.scale(a_term, c.lambda_a / n)?;
        total = tape.add(total, a_scaled)?;

        for &p in params.vars() {
            if c.lambda_reg != 0.0 {
                let sq = tape.square(p)?;
                let s = tape.sum(sq)?;
                let s = tape.scale(s, c.lambda_reg)?;
                total = tape.add(total, s)?;
            }
            if c.lambda_nn != 0.0 {
                // min(0, p)^2 == relu(-p)^2
                let neg = tape.scale(p, -1.0)?;
                let neg = tape.relu(neg)?;
                let sq = tape.square(neg)?;
                let s = tape.sum(sq)?;
                let s = tape.scale(s, c.lambda_nn)?;
                total = tape.add(total, s)?;
            }
        }
        let value = tape.value(total).item();
        if !value.is_finite() {
            return Err(Error::Divergence);
        }
        Ok(total)
    }

    fn score(&self, params: &ParamSet, aspects: &AspectMatrices, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        let c = &self.config;
        let x_hat = self.user_aspects(params, user);
        let k = c.k_top_features.min(x_hat.len()).max(1);
        let top = top_indices(&x_hat, k);
        let (u2, v) = (factor(params, "U2"), factor(params, "V"));
        let norm = (k as f64) * f64::from(aspects.rating_scale);
        Ok(items
            .iter()
            .map(|&item| {
                let latent = u2.row_slice(item);
                let matched: f64 = top
                    .iter()
                    .map(|&f| {
                        let y_hat: f64 = latent.iter().zip(v.row_slice(f)).map(|(a, b)| a * b).sum();
                        x_hat[f] * y_hat
                    })
                    .sum();
                c.alpha * matched / norm + (1.0 - c.alpha) * self.interaction(params, user, item)
            })
            .collect())
    }

    /// Best reconstructed item aspects among the user's top reconstructed aspects.
    fn explain(&self, params: &ParamSet, _aspects: &AspectMatrices, request: &ExplainRequest<'_>) -> Result<Explanation> {
        let x_hat = self.user_aspects(params, request.user);
        let y_hat = self.item_aspects(params, request.item);
        let mut pool = top_indices(&x_hat, self.explain_pool().min(x_hat.len()));
        pool.sort_by(|&a, &b| y_hat[b].total_cmp(&y_hat[a]).then(a.cmp(&b)));
        pool.truncate(request.top_n);
        Ok(Explanation {
            user: request.user,
            item: request.item,
            features: pool.into_iter().map(|f| (f, y_hat[f])).collect(),
            counterfactual: None,
        })
    }

    fn hyperparameters(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("serializable config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn small() -> Efm {
        Efm::new(EfmConfig {
            rank: 2,
            aux_rank: 1,
            k_top_features: 1,
            ..EfmConfig::default()
        })
    }

    fn params_from(rows: [(&str, Tensor); 5]) -> ParamSet {
        let mut p = ParamSet::new();
        for (n, t) in rows {
            p.push(n, t);
        }
        p
    }

    fn aspects(x: Tensor, y: Tensor) -> AspectMatrices {
        AspectMatrices { x, y, rating_scale: 5 }
    }

    fn eval_loss(model: &Efm, p: &ParamSet, batch: &Batch, a: &AspectMatrices) -> f64 {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let x = tape.constant(a.x.clone());
        let y = tape.constant(a.y.clone());
        let l = model
            .loss(&mut tape, &vars, batch, LossInput { x, y, observed: a })
            .unwrap();
        tape.value(l).item()
    }

    #[test]
    fn exact_reconstruction_has_zero_loss() {
        let model = Efm::new(EfmConfig {
            rank: 1,
            aux_rank: 1,
            lambda_reg: 0.0,
            ..EfmConfig::default()
        });
        // U1 = [1], U2 = [2], V = [3, 1], H1 = [1], H2 = [0]
        let p = params_from([
            ("U1", Tensor::scalar(1.0)),
            ("U2", Tensor::scalar(2.0)),
            ("V", Tensor::new(2, 1, vec![3.0, 1.0]).unwrap()),
            ("H1", Tensor::scalar(1.0)),
            ("H2", Tensor::scalar(0.0)),
        ]);
        let a = aspects(Tensor::row(&[3.0, 1.0]), Tensor::row(&[6.0, 2.0]));
        let batch = Batch {
            users: vec![0],
            items: vec![0],
            ratings: vec![2.0],
        };
        assert_eq!(eval_loss(&model, &p, &batch, &a), 0.0);
    }

    #[test]
    fn negative_entry_penalty() {
        let model = Efm::new(EfmConfig {
            rank: 1,
            aux_rank: 1,
            lambda_x: 0.0,
            lambda_y: 0.0,
            lambda_a: 0.0,
            lambda_reg: 0.0,
            lambda_nn: 1.0,
            ..EfmConfig::default()
        });
        let p = params_from([
            ("U1", Tensor::scalar(-2.0)),
            ("U2", Tensor::scalar(0.5)),
            ("V", Tensor::scalar(1.0)),
            ("H1", Tensor::scalar(0.0)),
            ("H2", Tensor::scalar(3.0)),
        ]);
        let a = aspects(Tensor::scalar(1.0), Tensor::scalar(1.0));
        let batch = Batch {
            users: vec![0],
            items: vec![0],
            ratings: vec![1.0],
        };
        assert_eq!(eval_loss(&model, &p, &batch, &a), 4.0);
    }

    #[test]
    fn alpha_zero_scores_interaction_only() {
        let model = Efm::new(EfmConfig {
            alpha: 0.0,
            rank: 3,
            aux_rank: 2,
            ..EfmConfig::default()
        });
        let p = model.init_params(3, 4, 5, &mut rng::seeded(1));
        let a = aspects(Tensor::zeros(3, 5), Tensor::zeros(4, 5));
        let s = model.score(&p, &a, 1, &[0, 1, 2, 3]).unwrap();
        for (v, s) in s.iter().enumerate() {
            assert_eq!(*s, model.interaction(&p, 1, v));
        }
    }

    #[test]
    fn alpha_one_single_feature_hand_value() {
        let model = Efm::new(EfmConfig {
            alpha: 1.0,
            ..small().config
        });
        // X_hat_0 = U1_0 V^T = [1*1 + 0*0, 1*0 + 0*2] = [1, 0] -> top feature 0
        // Y_hat_1 = U2_1 V^T = [3, 4]; score = X_hat[0] * Y_hat[0] / (1 * 5) = 3 / 5
        let p = params_from([
            ("U1", Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()),
            ("U2", Tensor::new(2, 2, vec![0.0, 0.0, 3.0, 2.0]).unwrap()),
            ("V", Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap()),
            ("H1", Tensor::new(2, 1, vec![1.0, 1.0]).unwrap()),
            ("H2", Tensor::new(2, 1, vec![1.0, 1.0]).unwrap()),
        ]);
        let a = aspects(Tensor::zeros(2, 2), Tensor::zeros(2, 2));
        let s = model.score(&p, &a, 0, &[1]).unwrap();
        assert!((s[0] - 0.6).abs() < 1e-15);
        // user 1: X_hat_1 = [0, 2] -> top feature 1, Y_hat_1[1] = 4 -> 2*4/5
        let s = model.score(&p, &a, 1, &[1]).unwrap();
        assert!((s[0] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn swapping_user_rows_swaps_scores() {
        let model = Efm::new(EfmConfig {
            rank: 4,
            aux_rank: 2,
            k_top_features: 2,
            ..EfmConfig::default()
        });
        let mut p = model.init_params(3, 6, 5, &mut rng::seeded(5));
        let a = aspects(Tensor::zeros(3, 5), Tensor::zeros(6, 5));
        let items: Vec<usize> = (0..6).collect();
        let before0 = model.score(&p, &a, 0, &items).unwrap();
        let before2 = model.score(&p, &a, 2, &items).unwrap();
        for name in ["U1", "H1"] {
            let t = p.get_mut(name).unwrap();
            let r0 = t.row_slice(0).to_vec();
            let r2 = t.row_slice(2).to_vec();
            t.row_slice_mut(0).copy_from_slice(&r2);
            t.row_slice_mut(2).copy_from_slice(&r0);
        }
        assert_eq!(model.score(&p, &a, 0, &items).unwrap(), before2);
        assert_eq!(model.score(&p, &a, 2, &items).unwrap(), before0);
    }

    /// Three features; the user's reconstructed top-2 is {f1, f2} and the item
    /// prefers f2 over f1, while f0 (outside the pool) is the item's best.
    fn explain_fixture() -> (Efm, ParamSet) {
        let model = Efm::new(EfmConfig {
            rank: 3,
            aux_rank: 1,
            k_top_features: 2,
            ..EfmConfig::default()
        });
        let p = params_from([
            ("U1", Tensor::row(&[0.1, 0.8, 0.9])),
            ("U2", Tensor::row(&[0.9, 0.2, 0.5])),
            ("V", Tensor::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap()),
            ("H1", Tensor::scalar(0.0)),
            ("H2", Tensor::scalar(0.0)),
        ]);
        (model, p)
    }

    fn request(top_n: usize) -> ExplainRequest<'static> {
        ExplainRequest {
            user: 0,
            item: 0,
            candidates: &[],
            top_k: 5,
            top_n,
        }
    }

    #[test]
    fn explanation_head_comes_from_user_pool() {
        let (model, p) = explain_fixture();
        let a = aspects(Tensor::zeros(1, 3), Tensor::zeros(1, 3));
        let e = model.explain(&p, &a, &request(3)).unwrap();
        assert_eq!(e.feature_ids(), vec![2, 1]);
        assert!(e.features.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn full_pool_ranks_by_item_aspects() {
        let (mut model, p) = explain_fixture();
        model.config.explain_candidates = Some(3);
        let a = aspects(Tensor::zeros(1, 3), Tensor::zeros(1, 3));
        assert_eq!(model.explain(&p, &a, &request(3)).unwrap().feature_ids(), vec![0, 2, 1]);
        assert_eq!(model.explain(&p, &a, &request(1)).unwrap().features.len(), 1);
    }
}
