//! Model-to-data distillation: a student trained against teacher soft
//! labels while a feature learner and a structure learner rewrite its input
//! graph.
//!
//! Each outer iteration runs student steps on a fixed augmented graph, then
//! graph steps on the learners with the student frozen. The two phases have
//! disjoint parameter groups and separate optimizers.

mod blend;
mod config;
mod evaluate;
mod learners;
pub mod losses;
mod trainer;

pub use blend::{blend_adjacency, blend_on_tape, clamp_similarity};
pub use config::{M2dConfig, Variant};
pub use evaluate::{distillation_fidelity, evaluate_logits, EvalReport};
pub use learners::{
    feature_learner_forward, init_feature_learner, init_structure_learner, structure_learner_forward, FEATURE_PREFIX,
    STRUCTURE_PREFIX,
};
pub use trainer::{
    distill, plain_train_config, AugmentedGraph, DistillResult, IterationRecord, Objective, Problem, StopReason,
};
