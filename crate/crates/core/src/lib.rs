//! Bayesian ℓ1 trend filtering with epigraph priors.
//!
//! The non-smooth constraint `‖D(x,k+1) β‖₁ ≤ α` (optionally intersected with
//! shape restrictions) is replaced by its Moreau–Yosida envelope, which gives
//! a differentiable surrogate posterior that NUTS can sample.

pub mod data;
pub mod epigraph;
pub mod error;
pub mod linalg;
pub mod pipeline;
pub mod posterior;
pub mod prox;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
