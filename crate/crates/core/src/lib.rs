//! Markov-state-model emulators at desk scale.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod error;
pub mod evaluate;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod msm;
pub mod network;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod system;
pub mod train;

pub use error::{Error, Result};
