pub mod baselines;
pub mod bundle;
pub mod config;
pub mod datasets;
pub mod distributions;
pub mod elbo_gap;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod seeds;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};
