//! Group-invariant skill discovery on small symmetric control problems.

pub mod cli;
pub mod config;
pub mod env;
pub mod equivariant;
pub mod error;
pub mod groups;
pub mod hierarchy;
pub mod nn;
pub mod objective;
pub mod output;
pub mod policy;
pub mod testing;
pub mod training;

pub use error::{Error, Result};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/groups.md")]
    pub mod groups {}
    #[doc = include_str!("../../../book/src/features.md")]
    pub mod features {}
    #[doc = include_str!("../../../book/src/objective.md")]
    pub mod objective {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/hierarchy.md")]
    pub mod hierarchy {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
