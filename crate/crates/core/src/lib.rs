pub mod cli;
pub mod dataset;
pub mod effects;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod optim;
pub mod predictor;
pub mod search;
pub mod types;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/chains.md")]
mod book_chains {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/effects.md")]
mod book_effects {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/similarity.md")]
mod book_similarity {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/optimizers.md")]
mod book_optimizers {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/search.md")]
mod book_search {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/predictors.md")]
mod book_predictors {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/dataset.md")]
mod book_dataset {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}
