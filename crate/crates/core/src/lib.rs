pub mod actions;
pub mod audio;
pub mod backend;
pub mod caption;
pub mod classes;
pub mod config;
pub mod corpus;
pub mod error;
pub mod planning;
pub mod reflection;
pub mod spectral;
pub mod video;
pub mod workflow;

#[cfg(test)]
pub(crate) mod testutil;

/// The guide's chapters, compiled so their snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/signals.md")]
    mod signals {}
    #[doc = include_str!("../../../book/src/actions.md")]
    mod actions {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/workflow.md")]
    mod workflow {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

pub use error::{Error, Result};
