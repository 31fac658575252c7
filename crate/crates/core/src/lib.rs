//! Debiased pseudo-labeling for semi-supervised and transductive zero-shot
//! learning on synthetic benchmarks.

// negated float comparisons are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops over parallel arrays read better than zipped iterators here
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod data;
pub mod debias;
mod error;
pub mod experiment;
pub mod nn;
pub mod numkit;
pub mod train;

pub use config::ExperimentConfig;
pub use data::{Dataset, DatasetSpec, ImbalanceSpec, LabelBudget};
pub use debias::{DebiasState, Margins};
pub use error::{Error, Result};
pub use nn::{EmaTeacher, MlpParams, OptimState};
pub use numkit::{Matrix, SeededRng};
pub use train::{Method, TrainConfig, ZslConfig};
