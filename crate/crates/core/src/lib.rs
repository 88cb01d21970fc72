pub mod cli;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod teacher;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/getting-started.md")]
    pub struct GettingStarted;
    #[doc = include_str!("../../../book/src/tape.md")]
    pub struct Tape;
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub struct Geometry;
    #[doc = include_str!("../../../book/src/fields.md")]
    pub struct Fields;
    #[doc = include_str!("../../../book/src/diffusion.md")]
    pub struct Diffusion;
    #[doc = include_str!("../../../book/src/networks.md")]
    pub struct Networks;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/data.md")]
    pub struct Data;
    #[doc = include_str!("../../../book/src/ablations.md")]
    pub struct Ablations;
    #[doc = include_str!("../../../book/src/testing.md")]
    pub struct Testing;
}
