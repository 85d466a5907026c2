use serde::{Deserialize, Serialize};

use crate::aspects::AspectMatrices;
use crate::diffcore::{ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{Batch, LossInput, Recommender};

/// Mixing weight and perturbation scale of the adversarial term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    pub lambda: f64,
    pub eps_d: f64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self::vanilla()
    }
}

impl DefenseConfig {
    pub fn vanilla() -> Self {
        Self {
            lambda: 0.0,
            eps_d: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config {
                key: "defense.lambda".into(),
                msg: format!("{} is outside [0, 1]", self.lambda),
            });
        }
        if !(self.eps_d >= 0.0) {
            return Err(Error::Config {
                key: "defense.eps_d".into(),
                msg: format!("{} is negative", self.eps_d),
            });
        }
        Ok(())
    }

    pub fn is_vanilla(&self) -> bool {
        self.lambda == 0.0
    }
}

/// Loss value and parameter gradients of one optimisation step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Combined objective.
    pub loss: f64,
    /// Loss on the unperturbed inputs.
    pub clean_loss: f64,
    pub grads: ParamSet,
    pub perturbation: Option<PerturbationStats>,
}

/// Observed extent of one adversarial item-aspect perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationStats {
    /// `max |dY|`.
    pub max_abs_delta: f64,
    pub min_perturbed: f64,
    pub max_perturbed: f64,
    /// Entries with nonzero loss gradient.
    pub active_entries: usize,
}

pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clean_pass<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    batch: &Batch,
    aspects: &AspectMatrices,
    want_y_grad: bool,
) -> Result<(f64, ParamSet, Option<Tensor>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let x = tape.constant(aspects.x.clone());
    let y = if want_y_grad {
        tape.variable(aspects.y.clone())
    } else {
        tape.constant(aspects.y.clone())
    };
    let loss = model.loss(&mut tape, &vars, batch, LossInput { x, y, observed: aspects })?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let y_grad = if want_y_grad { grads.take(y) } else { None };
    let param_grads = vars.collect_grads(&mut grads, params)?;
    Ok((value, param_grads, y_grad))
}

/// `eps_d * sign(dL/dY)` of the clean loss, with `sign(0) = 0`.
///
/// Rows the batch never reads get a zero gradient and so stay unperturbed.
pub fn fgsm_delta_y<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    batch: &Batch,
    aspects: &AspectMatrices,
    eps_d: f64,
) -> Result<Tensor> {
    let (_, _, psi) = clean_pass(model, params, batch, aspects, true)?;
    Ok(delta_from_gradient(
        &psi.unwrap_or_else(|| Tensor::zeros(aspects.y.rows(), aspects.y.cols())),
        eps_d,
    ))
}

pub fn delta_from_gradient(psi: &Tensor, eps_d: f64) -> Tensor {
    psi.map(|g| eps_d * sign(g))
}

/// `clamp(Y + dY, 0, N)` elementwise.
pub fn clip_perturbed_y(y: &Tensor, delta: &Tensor, rating_scale: u32) -> Result<Tensor> {
    y.check_same_shape(delta, "clip_perturbed_y")?;
    let hi = f64::from(rating_scale);
    let data = y
        .data()
        .iter()
        .zip(delta.data())
        .map(|(a, d)| (a + d).clamp(0.0, hi))
        .collect();
    Tensor::new(y.rows(), y.cols(), data)
}

/// Plain training step on the clean loss.
pub fn vanilla_step<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    batch: &Batch,
    aspects: &AspectMatrices,
) -> Result<StepOutcome> {
    let (loss, grads, _) = clean_pass(model, params, batch, aspects, false)?;
    Ok(StepOutcome {
        loss,
        clean_loss: loss,
        grads,
        perturbation: None,
    })
}

/// One step on `(1 - lambda) L(X, Y) + lambda L(X, clip(Y + dY))`.
///
/// `dY` comes from the clean-loss gradient at the current parameters and is
/// held constant, so no gradient flows through the sign. The mixture is
/// evaluated as `L + lambda (L_adv - L)`, which returns `L` unchanged whenever
/// the two terms agree (`eps_d = 0`).
pub fn defense_step<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    batch: &Batch,
    aspects: &AspectMatrices,
    cfg: &DefenseConfig,
) -> Result<StepOutcome> {
    if cfg.is_vanilla() {
        return vanilla_step(model, params, batch, aspects);
    }
    let (clean_loss, clean_grads, psi) = clean_pass(model, params, batch, aspects, true)?;
    let psi = psi.unwrap_or_else(|| Tensor::zeros(aspects.y.rows(), aspects.y.cols()));
    let delta = delta_from_gradient(&psi, cfg.eps_d);
    let y_adv = clip_perturbed_y(&aspects.y, &delta, aspects.rating_scale)?;
    let stats = PerturbationStats {
        max_abs_delta: delta.max_abs(),
        min_perturbed: y_adv.data().iter().copied().fold(f64::INFINITY, f64::min),
        max_perturbed: y_adv.data().iter().copied().fold(f64::NEG_INFINITY, f64::max),
        active_entries: psi.data().iter().filter(|&&g| g != 0.0).count(),
    };

    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let x = tape.constant(aspects.x.clone());
    let y = tape.constant(y_adv);
    let adv = model.loss(&mut tape, &vars, batch, LossInput { x, y, observed: aspects })?;
    let adv_loss = tape.value(adv).item();
    let mut g = tape.backward(adv)?;
    let adv_grads = vars.collect_grads(&mut g, params)?;

    let lambda = cfg.lambda;
    let loss = clean_loss + lambda * (adv_loss - clean_loss);
    if !loss.is_finite() {
        return Err(Error::Divergence);
    }
    let mut grads = clean_grads;
    for (g, a) in grads.tensors_mut().iter_mut().zip(adv_grads.tensors()) {
        for (gi, ai) in g.data_mut().iter_mut().zip(a.data()) {
            *gi += lambda * (ai - *gi);
        }
    }
    Ok(StepOutcome {
        loss,
        clean_loss,
        grads,
        perturbation: Some(stats),
    })
}

/// Value of the combined objective on one batch.
pub fn defense_loss<M: Recommender + ?Sized>(
    model: &M,
    params: &ParamSet,
    batch: &Batch,
    aspects: &AspectMatrices,
    cfg: &DefenseConfig,
) -> Result<f64> {
    Ok(defense_step(model, params, batch, aspects, cfg)?.loss)
}
