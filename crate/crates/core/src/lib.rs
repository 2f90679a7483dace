//! Noncentral Wishart mixtures and exact random-effects tests for balanced
//! two-factor multivariate designs.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod closure;
pub mod dist;
pub mod error;
pub mod io;
pub mod manova;
pub mod pvalue;
pub mod rng;
pub mod stats;
pub mod symmat;

pub use error::{Error, Result};
