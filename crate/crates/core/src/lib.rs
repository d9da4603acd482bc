//! Sparse-representation classification of hyperspectral pixels.
//!
//! A labeled cube ([`dataset`]) is split per class into dictionary atoms,
//! training pixels and test pixels. Each test pixel is sparse-coded over the
//! [`Dictionary`] by one of the baseline [`solvers`] or by the trainable
//! unrolled network in [`asdn`], and [`classify`] assigns the class whose
//! atoms reconstruct it with the smallest residual.

pub mod asdn;
pub mod classify;
pub mod dataset;
pub mod dictionary;
pub mod error;
mod rng;
pub mod solvers;
pub mod synthetic;

pub use asdn::NetParams;
pub use classify::{ClassificationReport, SolverSpec};
pub use dataset::{LabeledCube, Split};
pub use dictionary::Dictionary;
pub use error::{Error, Result};
pub use solvers::SparseCode;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/dictionary.md")]
    mod dictionary {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
