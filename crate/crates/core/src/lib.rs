//! Neural estimators of the log Bayes factor between two
//! generative models, trained only on labelled simulations.
//!
//! The crate is organized as
//!
//! - [`losses`]: the loss family, the l-POP transform, decoders to `log K`, and
//!   a numerical minimizer that checks every decoder;
//! - [`nn`]: the dense network, its exact gradients, Adam, and checkpoints;
//! - [`models`]: generative model pairs with exact evidence oracles;
//! - [`data`]: labelled datasets and the `EVDS` file format;
//! - [`training`]: mini-batch training, early stopping, and ensembles;
//! - [`evaluation`]: RMSE, blind coverage tests, and derived evidence quantities;
//! - [`cli`]: the `evnet` command-line driver.
//!
//! The guide in `book/` walks through the same material with runnable examples.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/coverage.md")]
    mod coverage {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/alpha.md")]
    mod alpha {}
}
