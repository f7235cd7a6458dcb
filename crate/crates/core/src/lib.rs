//! Dynamic feature selection for sequential classification with a
//! recurrent belief state, learned Bernoulli gates and a cost-aware prior.

pub mod backbone;
pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod gating;
pub mod gradcheck;
pub mod init;
pub mod report;
pub mod train;
pub mod model;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
