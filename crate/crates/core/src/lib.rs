// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod ap_scheme;
pub mod cache;
pub mod collision;
pub mod config;
pub mod error;
pub mod fourier;
pub mod fraclap;
pub mod grids;
pub mod linalg;
pub mod quadrature;
pub mod reference;
pub mod run;
pub mod table;

pub use error::{Error, Result};
