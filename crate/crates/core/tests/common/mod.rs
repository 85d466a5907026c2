#![allow(dead_code)]

use robustrec::aspects::AspectMatrices;
use robustrec::dataset::synth::{generate, SynthConfig};
use robustrec::dataset::{build_split, DatasetSplit, ReviewRecord, SplitConfig};
use robustrec::diffcore::{Tape, Tensor, Var};
use robustrec::error::Result;

pub mod gradcheck;
pub mod toy;
pub mod criteria;

pub struct Fixture {
    pub records: Vec<ReviewRecord>,
    pub split: DatasetSplit,
    pub aspects: AspectMatrices,
}

pub fn synth_config(users: usize, items: usize, features: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        users,
        items,
        features,
        min_interactions: 12,
        max_interactions: 16,
        seed,
        ..SynthConfig::default()
    }
}

pub fn fixture_from(cfg: &SynthConfig, test_negatives: usize) -> Fixture {
    let records = generate(cfg);
    let split_cfg = SplitConfig {
        test_negatives,
        seed: cfg.seed,
        ..SplitConfig::default()
    };
    let split = build_split(&records, &split_cfg, 5).unwrap();
    let aspects = AspectMatrices::from_split(&split).unwrap();
    Fixture { records, split, aspects }
}

/// Small corpus: `users` users over `3 * users` items and 8 features.
pub fn small_fixture(users: usize, seed: u64) -> Fixture {
    let cfg = SynthConfig {
        prefs_per_user: 2,
        features_per_item: 4,
        ..synth_config(users, 3 * users, 8, seed)
    };
    fixture_from(&cfg, 20)
}

/// Scalar tape function for gradient checks.
pub type TapeFn<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

/// Sweep over a 20-user synthetic corpus that finishes in a few seconds.
pub const SMALL_SWEEP: &str = r#"{
  "dataset": {
    "name": "tiny",
    "synth": {"users": 20, "items": 80, "features": 8, "prefs_per_user": 2, "features_per_item": 4,
              "min_interactions": 12, "max_interactions": 16},
    "split": {"test_negatives": 20}
  },
  "model": {"efm": {"rank": 4, "aux_rank": 2, "k_top_features": 2}, "cer": {"hidden1": 8, "hidden2": 4}},
  "training": {"max_epochs": 3, "patience": 2, "batch_size": 16},
  "eval": {"ndcg_k": 10},
  "attack": {"eps_a_list": [0, 0.5, 1]},
  "sweep": {"algorithms": ["EFM"], "lambdas": [0, 0.5], "eps_d_list": [0.25], "eps_a_list": [0, 0.5, 1], "seeds": [0]}
}"#;

pub fn write_config(dir: &std::path::Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

// 2 sigma(t) - 1 == tanh(t / 2)
pub fn reference_x(t: u32, n: u32) -> f64 {
    if t == 0 {
        return 0.0;
    }
    1.0 + f64::from(n - 1) * (f64::from(t) / 2.0).tanh()
}

// sigma(z) == (1 + tanh(z / 2)) / 2
pub fn reference_y(t: u32, w: f64, n: u32) -> f64 {
    if t == 0 {
        return 0.0;
    }
    1.0 + f64::from(n - 1) * 0.5 * (1.0 + (f64::from(t) * w / 2.0).tanh())
}
