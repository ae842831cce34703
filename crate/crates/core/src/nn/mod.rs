//! Minimal reverse-mode autodiff over `ndarray` (f64 throughout), with the
//! layers and optimizer the search pipeline needs.

pub mod conv;
pub mod grad_check;
pub mod layers;
pub mod ops;
pub mod roi;
pub mod sgd;
mod tape;

pub use tape::{scalar_array, GradSink, Grads, ParamStore, Tape, Var};
