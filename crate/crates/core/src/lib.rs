//! Green functions, contraction estimates and Monte Carlo experiments for
//! Galton-Watson trees that are random perturbations of trees of finite cone
//! type.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cone_green;
pub mod error;
pub mod estimates;
pub mod experiments;
pub mod halfplane;
pub mod model;
pub mod random_green;
pub mod tree;

pub use error::{Error, Result};
pub use halfplane::{gamma, UpperHalfPoint};
pub use model::{BranchingProcess, OffspringConfig, SubstitutionMatrix};
