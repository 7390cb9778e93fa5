//! End-to-end toy pipeline: model, objective, training and evaluation.

pub mod eval;
pub mod model;
pub mod objective;
pub mod train;

pub use eval::{evaluate, ConstantRateModel, EvalReport, OracleModel, RateModel};
pub use model::{Draw, Model, ModelConfig, OdeInit, Prediction};
pub use objective::{make_groups, objective, BatchResult, Components, ObjectiveWeights, Sampling};
pub use train::{train_toy, Checkpoint, EpochLog, TrainConfig, TrainLog, TrainOutcome};
