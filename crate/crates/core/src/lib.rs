//! Diffuse domain approximation of a two-sided elliptic transmission problem.
//!
//! The inner region carries `-div grad u + gamma u = q`, the outer region
//! `-alpha lap u + beta u = h`, coupled by a flux jump `kappa u + g` on the
//! interface. The diffuse model smears the interface over a tanh layer of
//! width `eps` and solves a single problem on the whole box.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod diffuse;
pub mod energy;
pub mod error;
pub mod expr;
pub mod fields;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod sharp;

pub use error::{Error, Result};
