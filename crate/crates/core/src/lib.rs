//! Hybrid models augmented with trainable neural components.
//!
//! A [`hybrid_ode::HybridModel`] exposes a discontinuous right-hand side with
//! time and state events. [`solver`] integrates it and can record a tape that
//! [`training`] sweeps backwards to get parameter gradients. [`neuralfmu`]
//! wraps a model with the network pipeline from [`neural`].

// `!(a > b)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod hybrid_ode;
pub mod neural;
pub mod neuralfmu;
pub mod solver;
pub mod training;
