//! The chapters of the guide in `book/src`, one module each, so that
//! `cargo test --doc` compiles and runs every code listing in the book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/codes.md")]
pub mod codes {}

#[doc = include_str!("../../../book/src/noise.md")]
pub mod noise {}

#[doc = include_str!("../../../book/src/matching.md")]
pub mod matching {}

#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}

#[doc = include_str!("../../../book/src/transformer.md")]
pub mod transformer {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
