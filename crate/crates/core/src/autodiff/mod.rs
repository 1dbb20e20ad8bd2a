//! Reverse-mode differentiation, layers, losses and optimizer.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod layers;
mod loss;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, OptimizerState};
pub use graph::{si_snr_value, Gradients, Graph, Var};
pub use layers::{Linear, LstmLayer, RecurrentStack};
pub use loss::{best_permutation, masked_synthesis, masked_synthesis_var, permutations, pit_loss, SiSnrLoss, DEFAULT_CAP_DB};
pub use optim::{Adam, AdamConfig, EpochDecision, PlateauSchedule, StepOutcome};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;
