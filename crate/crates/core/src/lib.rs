//! Non-end-to-end knowledge distillation.
//!
//! A trained teacher is cut into neighbourhoods at block boundaries; student
//! neighbourhoods are distilled independently against cached teacher
//! activations, recomposed, and optionally fine-tuned with the usual
//! distillation loss. Around that core sit the perturbation experiments
//! (how much local error a network tolerates), greedy per-neighbourhood
//! student search, magnitude-pruned sparsification and a data-free
//! Gaussian-input mode.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod data;
pub mod distill;
pub mod error;
pub mod exp;
pub mod network;
pub mod perturb;
pub mod rng;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
