//! Unmixing, pre-separation, attentional selection and extraction networks.

mod attention;
mod check;
mod config;
mod model;

pub use attention::{combine, pool_window, Attention, Averaging};
pub use check::{e2e_gradient_check, gradcheck_config};
pub use config::{Mode, ModelConfig};
pub use model::{E2eNodes, MaskNet, Model, Prepared, Separation, NUM_OUTPUTS};
