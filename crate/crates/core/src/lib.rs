//! Numerical laboratory for learning from adversarial perturbations on
//! one-hidden-layer leaky-ReLU networks.
//!
//! The pipeline is: generate a dataset ([`data`]), train a network with a
//! frozen ±1/√m last layer ([`net`], [`train`]), compute its implicit-bias
//! linear boundary ([`boundary`]), perturb natural samples or noise toward
//! target labels ([`attack`]), retrain a student on the mislabeled
//! perturbations, and measure how well the student recovers the original
//! classifier ([`experiment`]). [`theory`] evaluates the orthogonality
//! conditions and Monte-Carlo checks of the supporting concentration lemmas.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod boundary;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod net;
pub mod plot;
pub mod rng;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
