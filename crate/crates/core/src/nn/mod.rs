//! Small rectifier MLP classifier with exact gradients, Nesterov SGD, a cosine
//! learning-rate schedule and an EMA teacher.

pub mod checkpoint;
mod ema;
mod mlp;
mod optim;

pub use ema::EmaTeacher;
pub use mlp::{Dense, ForwardCache, Gradients, MlpParams};
pub use optim::{cosine_lr, sgd_nesterov_step, OptimState};
