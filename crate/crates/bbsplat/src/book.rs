//! The user guide, compiled as documentation.
//!
//! Each module below embeds one chapter of the `book/` directory, so every
//! code snippet in the guide is built and run by `cargo test --doc`. The
//! rendered book is the same content; keep edits in the markdown files.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/scene-model.md")]
pub mod scene_model {}

#[doc = include_str!("../../../book/src/rendering.md")]
pub mod rendering {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/compression.md")]
pub mod compression {}

#[doc = include_str!("../../../book/src/meshing.md")]
pub mod meshing {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
