//! Checks shared by the module tests and the acceptance suite.

use robustrec::diffcore::ParamSet;
use robustrec::evalkit::{evaluate, Condition, EvalConfig, EvalReport, EvaluationBed, GoldExplanations};
use robustrec::models::Recommender;
use robustrec::robustness::attack::{full_data_batches, loss_and_gradient};
use robustrec::robustness::{
    apply_attack, attack_weights, clip_perturbed_y, fgsm_delta_y, train_defended, train_vanilla, AttackConfig,
    DefenseConfig, TrainedModel, TrainingConfig,
};

use super::gradcheck::tiny_model;
use super::{bits, small_fixture, Fixture};

pub fn short_training(epochs: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        batch_size: 16,
        learning_rate: 0.01,
        max_epochs: epochs,
        patience: epochs + 1,
        seed,
        ..TrainingConfig::default()
    }
}

pub fn defended(model: &dyn Recommender, f: &Fixture, defense: DefenseConfig, training: &TrainingConfig) -> TrainedModel {
    train_defended(model, &f.split, &f.aspects, &defense, training, &mut |_| {}).unwrap()
}

fn same_model(a: &TrainedModel, b: &TrainedModel) -> bool {
    a.params.tensors().iter().zip(b.params.tensors()).all(|(x, y)| bits(x) == bits(y))
        && a.history.len() == b.history.len()
        && a.history.iter().zip(&b.history).all(|(x, y)| {
            x.loss.to_bits() == y.loss.to_bits() && x.val_ndcg.to_bits() == y.val_ndcg.to_bits()
        })
}

/// `lambda = 0` training equals plain training bit for bit, for both models.
pub fn lambda_zero_is_vanilla(f: &Fixture) -> Result<(), String> {
    let training = short_training(5, 3);
    for kind in ["EFM", "CER"] {
        let model = tiny_model(kind);
        let plain = train_vanilla(&model, &f.split, &f.aspects, &training).unwrap();
        let zero = defended(&model, f, DefenseConfig { lambda: 0.0, eps_d: 0.5 }, &training);
        if plain.history.len() != 5 || !same_model(&plain, &zero) {
            return Err(format!("{kind}: lambda = 0 diverges from vanilla"));
        }
    }
    Ok(())
}

/// With `eps_d = 0` every step's combined loss equals its clean loss.
pub fn zero_eps_d_keeps_clean_loss(f: &Fixture) -> Result<usize, String> {
    let training = short_training(3, 4);
    let mut steps = 0;
    let mut mismatches = 0;
    for kind in ["EFM", "CER"] {
        let model = tiny_model(kind);
        let defense = DefenseConfig { lambda: 0.5, eps_d: 0.0 };
        train_defended(&model, &f.split, &f.aspects, &defense, &training, &mut |rec| {
            steps += 1;
            if rec.outcome.loss.to_bits() != rec.outcome.clean_loss.to_bits() {
                mismatches += 1;
            }
        })
        .unwrap();
    }
    if mismatches > 0 {
        return Err(format!("{mismatches} of {steps} steps differ"));
    }
    Ok(steps)
}

fn report_bits(r: &EvalReport) -> [u64; 4] {
    [r.ndcg_at_k, r.expl_pr, r.expl_re, r.expl_f1].map(f64::to_bits)
}

/// A zero-budget attack leaves every metric unchanged.
pub fn zero_attack_is_identity(f: &Fixture) -> Result<(), String> {
    let training = short_training(3, 5);
    let eval = EvalConfig {
        ndcg_k: 10,
        ..EvalConfig::default()
    };
    let gold = GoldExplanations::from_split(&f.split);
    for kind in ["EFM", "CER"] {
        let model = tiny_model(kind);
        let run = defended(&model, f, DefenseConfig { lambda: 0.5, eps_d: 0.25 }, &training);
        let bed = EvaluationBed::build(&model, &run.params, &f.split, &f.aspects, eval.top_k).unwrap();
        let batches = full_data_batches(&f.split, training.batch_size, training.seed).unwrap();
        let defense = DefenseConfig { lambda: 0.5, eps_d: 0.25 };
        let wp = attack_weights(&model, &run.params, &f.aspects, &batches, &defense, &AttackConfig::new(0.0).unwrap()).unwrap();
        let attacked = apply_attack(&run.params, &wp).unwrap();
        let run_eval = |p: &ParamSet, c| evaluate(&model, p, &f.split, &f.aspects, &bed, &gold, &eval, c).unwrap();
        let clean = run_eval(&run.params, Condition::Clean);
        let hit = run_eval(&attacked, Condition::Attacked { eps_a: 0.0 });
        if report_bits(&clean) != report_bits(&hit) || clean.n_explained_pairs != hit.n_explained_pairs {
            return Err(format!("{kind}: eps_a = 0 changed the report"));
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct BudgetTally {
    pub defense_steps: usize,
    pub attacks: usize,
    pub violations: Vec<String>,
}

/// Perturbation budgets over full defended training runs and attacks on them.
pub fn budget_invariants(f: &Fixture, eps_a_grid: &[f64]) -> BudgetTally {
    let mut tally = BudgetTally::default();
    let n = f64::from(f.aspects.rating_scale);
    for kind in ["EFM", "CER"] {
        let model = tiny_model(kind);
        let training = short_training(4, 6);
        let defense = DefenseConfig { lambda: 0.5, eps_d: 0.25 };
        let mut violations = Vec::new();
        let mut steps = 0;
        let run = train_defended(&model, &f.split, &f.aspects, &defense, &training, &mut |rec| {
            steps += 1;
            let s = rec.outcome.perturbation.expect("defended step reports its perturbation");
            if s.max_abs_delta > defense.eps_d || s.min_perturbed < 0.0 || s.max_perturbed > n {
                violations.push(format!("{kind} epoch {} step {}: {s:?}", rec.epoch, rec.step));
            }
        })
        .unwrap();
        tally.defense_steps += steps;
        tally.violations.append(&mut violations);

        // independent recomputation on the attack batches
        let batches = full_data_batches(&f.split, training.batch_size, training.seed).unwrap();
        for b in &batches {
            let delta = fgsm_delta_y(&model, &run.params, b, &f.aspects, defense.eps_d).unwrap();
            let y_adv = clip_perturbed_y(&f.aspects.y, &delta, f.aspects.rating_scale).unwrap();
            if delta.max_abs() > defense.eps_d || y_adv.data().iter().any(|&v| !(0.0..=n).contains(&v)) {
                tally.violations.push(format!("{kind}: recomputed perturbation out of budget"));
            }
        }

        for &eps in eps_a_grid {
            let wp = attack_weights(&model, &run.params, &f.aspects, &batches, &defense, &AttackConfig::new(eps).unwrap()).unwrap();
            tally.attacks += 1;
            let norm = wp.delta.global_norm();
            let ok = if wp.grad_norm > 1e-12 && eps > 0.0 {
                norm >= eps - 1e-6 && norm <= eps
            } else {
                norm == 0.0
            };
            if !ok {
                tally.violations.push(format!("{kind} eps_a {eps}: |delta| = {norm}"));
            }
        }
    }
    tally
}

/// Trains a small seeded fixture briefly and checks the attack does not
/// lower the full-data objective.
pub fn attack_raises_loss(seed: u64, eps_a: f64) -> (f64, f64) {
    let f = small_fixture(15, 1000 + seed);
    let model = tiny_model(if seed.is_multiple_of(2) { "EFM" } else { "CER" });
    let defense = if seed % 4 < 2 {
        DefenseConfig::vanilla()
    } else {
        DefenseConfig { lambda: 0.5, eps_d: 0.25 }
    };
    let training = short_training(2, seed);
    let run = defended(&model, &f, defense, &training);
    let batches = full_data_batches(&f.split, training.batch_size, seed).unwrap();
    let wp = attack_weights(&model, &run.params, &f.aspects, &batches, &defense, &AttackConfig::new(eps_a).unwrap()).unwrap();
    let attacked = apply_attack(&run.params, &wp).unwrap();
    let (before, _) = loss_and_gradient(&model, &run.params, &f.aspects, &batches, &defense).unwrap();
    let (after, _) = loss_and_gradient(&model, &attacked, &f.aspects, &batches, &defense).unwrap();
    (before, after)
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn brute_dcg(ranking: &[usize], relevant: &[usize], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, v) in ranking.iter().enumerate().take(k) {
        if relevant.contains(v) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    dcg
}

/// Compares `ndcg_at` with DCG / max-over-permutations DCG on every ranking
/// of up to 6 candidates with up to 3 relevant items. Returns the number of
/// cases checked.
pub fn ndcg_brute_force() -> Result<usize, String> {
    let mut cases = 0;
    for n in 1..=6usize {
        let items: Vec<usize> = (10..10 + n).collect();
        let perms = permutations(&items);
        for mask in 1u32..(1 << n) {
            if mask.count_ones() > 3 {
                continue;
            }
            let relevant: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| items[i]).collect();
            for k in 1..=n + 1 {
                let ideal = perms.iter().map(|p| brute_dcg(p, &relevant, k)).fold(0.0, f64::max);
                for p in &perms {
                    let expected = brute_dcg(p, &relevant, k) / ideal;
                    let got = robustrec::evalkit::ndcg_at(p, &relevant, k).ok_or("missing value")?;
                    if got.to_bits() != expected.to_bits() {
                        return Err(format!("ranking {p:?} relevant {relevant:?} k {k}: {got} vs {expected}"));
                    }
                    cases += 1;
                }
            }
        }
    }
    Ok(cases)
}

/// (predicted, gold, precision, recall, f1) worked by hand.
pub const PRF_FIXTURES: [(&[usize], &[usize], f64, f64, f64); 10] = [
    (&[1], &[1], 1.0, 1.0, 1.0),
    (&[1], &[2], 0.0, 0.0, 0.0),
    (&[], &[2], 0.0, 0.0, 0.0),
    (&[1], &[1, 2], 1.0, 0.5, 2.0 / 3.0),
    (&[1, 2], &[1], 0.5, 1.0, 2.0 / 3.0),
    (&[1, 2], &[1, 3], 0.5, 0.5, 0.5),
    (&[1, 2, 3], &[1, 2], 2.0 / 3.0, 1.0, 0.8),
    (&[1, 2, 3, 4], &[4], 0.25, 1.0, 0.4),
    (&[5, 6], &[1, 2, 3, 5], 0.5, 0.25, 1.0 / 3.0),
    (&[1, 2, 3], &[3, 4, 5, 6, 7], 1.0 / 3.0, 0.2, 0.25),
];

pub fn prf_fixtures() -> Result<(), String> {
    use robustrec::evalkit::explanation_prf;
    for (pred, gold, p, r, f1) in PRF_FIXTURES {
        let s = explanation_prf(&pred.iter().copied().collect(), &gold.iter().copied().collect()).unwrap();
        if (s.precision, s.recall, s.f1) != (p, r, f1) {
            return Err(format!("{pred:?} vs {gold:?}: {s:?}"));
        }
    }
    Ok(())
}

/// Singleton prediction against singleton gold: precision equals recall.
pub fn singleton_identity() -> Result<usize, String> {
    use robustrec::evalkit::explanation_prf;
    let mut n = 0;
    for a in 0..8usize {
        for b in 0..8usize {
            let s = explanation_prf(&[a].into(), &[b].into()).unwrap();
            if s.precision != s.recall {
                return Err(format!("{a} vs {b}: {s:?}"));
            }
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Debug, Default)]
pub struct CounterfactualTally {
    pub pairs: usize,
    pub converged: usize,
    pub violations: Vec<String>,
}

/// Re-scores every converged counterfactual of briefly trained CER models and
/// checks it sits at least `margin` below the first item outside the top-K.
pub fn counterfactual_validity(seeds: std::ops::Range<u64>) -> CounterfactualTally {
    use robustrec::models::{Cer, CerConfig, ExplainRequest};
    let mut tally = CounterfactualTally::default();
    let model = Cer::new(CerConfig {
        hidden1: 16,
        hidden2: 8,
        ..CerConfig::default()
    });
    let margin = model.config.counterfactual.margin;
    for seed in seeds {
        let f = small_fixture(20, 500 + seed);
        let run = train_vanilla(&model, &f.split, &f.aspects, &short_training(3, seed)).unwrap();
        let bed = EvaluationBed::build(&model, &run.params, &f.split, &f.aspects, 5).unwrap();
        for bu in &bed.users {
            let tu = f.split.test.iter().find(|t| t.user == bu.user).unwrap();
            let candidates = tu.candidates();
            for &item in &bu.items {
                let req = ExplainRequest {
                    user: bu.user,
                    item,
                    candidates: &candidates,
                    top_k: 5,
                    top_n: 1,
                };
                let cf = model.counterfactual(&run.params, &f.aspects, &req).unwrap();
                tally.pairs += 1;
                if !cf.result.converged {
                    continue;
                }
                tally.converged += 1;
                let mut y = f.aspects.y.clone();
                for (e, d) in y.row_slice_mut(item).iter_mut().zip(&cf.result.delta) {
                    *e += d;
                }
                let s = model.score(&run.params, &f.aspects.with_y(y), bu.user, &[item]).unwrap()[0];
                if s > cf.threshold - margin + 1e-6 {
                    tally.violations.push(format!("seed {seed} ({}, {item}): {s} vs {}", bu.user, cf.threshold));
                }
            }
        }
    }
    tally
}

/// For `s(y) = a . y` with positive weights the minimal-norm counterfactual
/// is a multiple of `-a`, so the explanation head is `argmax a`.
pub fn linear_head_fixtures(n: u64) -> Result<(), String> {
    use rand::Rng as _;
    use robustrec::diffcore::{Tape, Tensor};
    use robustrec::models::counterfactual::{optimize_delta, rank_delta_features, CounterfactualConfig};
    let cfg = CounterfactualConfig::default();
    let mut r = robustrec::rng::seeded(77);
    for i in 0..n {
        let mut a: [f64; 2] = [r.random_range(0.2..3.0), r.random_range(0.2..3.0)];
        if (a[0] - a[1]).abs() < 0.1 {
            a[1] += 0.5;
        }
        let y: [f64; 2] = [r.random_range(1.0..5.0), r.random_range(1.0..5.0)];
        let s0 = a[0] * y[0] + a[1] * y[1];
        let threshold = s0 - r.random_range(0.1..1.0);
        let res = optimize_delta(&y, threshold, &cfg, |tape: &mut Tape, row| {
            let w = tape.constant(Tensor::new(2, 1, a.to_vec())?);
            tape.matmul(row, w)
        })
        .map_err(|e| e.to_string())?;
        let expected = if a[0] > a[1] { 0 } else { 1 };
        let head = rank_delta_features(&res.delta, 1);
        if !res.converged || head.first().map(|h| h.0) != Some(expected) {
            return Err(format!("fixture {i}: a {a:?} delta {:?}", res.delta));
        }
    }
    Ok(())
}

/// `build_x` / `build_y` against the tanh-form reference on random
/// `(t, w, N)`, plus the worked values.
pub fn formula_oracles(n: usize) -> Result<(), String> {
    use rand::Rng as _;
    use robustrec::aspects::{build_x, build_y, item_aspect_value, user_aspect_value, MentionStats};
    use super::{reference_x, reference_y};
    let mut r = robustrec::rng::seeded(11);
    for _ in 0..n {
        let big_n = r.random_range(2..=10u32);
        let t = r.random_range(0..=60u32);
        let pos = if t == 0 { 0 } else { r.random_range(0..=t) };
        let w = if t == 0 { 0.0 } else { (2.0 * f64::from(pos) - f64::from(t)) / f64::from(t) };
        let stats = MentionStats {
            n_users: 1,
            n_items: 1,
            n_features: 1,
            user_counts: vec![t],
            item_counts: vec![t],
            item_sentiment: vec![w],
        };
        let x = build_x(&stats, big_n).map_err(|e| e.to_string())?.item();
        let y = build_y(&stats, big_n).map_err(|e| e.to_string())?.item();
        if (x - reference_x(t, big_n)).abs() >= 1e-9 || (y - reference_y(t, w, big_n)).abs() >= 1e-9 {
            return Err(format!("t {t} w {w} N {big_n}: x {x} y {y}"));
        }
    }
    let worked = [
        (user_aspect_value(1, 5), 2.848469),
        (item_aspect_value(4, 0.0, 5), 3.0),
        (item_aspect_value(2, 1.0, 5), 4.523188),
    ];
    for (got, want) in worked {
        if (got - want).abs() >= 1e-6 {
            return Err(format!("worked value {got} vs {want}"));
        }
    }
    Ok(())
}
