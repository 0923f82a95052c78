#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod estimator;
pub mod features;
pub mod error;
pub mod geometry;
pub mod identify;
pub mod nn;
pub mod ot;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/channels.md")]
    struct Channels;
    #[doc = include_str!("../../../book/src/estimator.md")]
    struct Estimator;
    #[doc = include_str!("../../../book/src/labels.md")]
    struct Labels;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
