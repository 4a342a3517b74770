//! Experiment driver for the interaction-kernel estimators in `tlse-core`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod fit;
pub mod output;
pub mod plot;
