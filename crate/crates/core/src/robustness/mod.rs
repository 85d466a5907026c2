//! Adversarial item-aspect training and the weight-space attack it defends against.

pub mod attack;
pub mod defense;
pub mod train;

pub use attack::{apply_attack, attack_weights, AttackConfig, WeightPerturbation};
pub use defense::{clip_perturbed_y, defense_loss, defense_step, fgsm_delta_y, DefenseConfig, PerturbationStats, StepOutcome};
pub use train::{train_defended, train_vanilla, StepRecord, TrainedModel, TrainingConfig};
