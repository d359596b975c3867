//! Compiles every chapter of the guide as a doctest, so the book cannot drift
//! from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/grid.md")]
pub mod grid {}
#[doc = include_str!("../../../book/src/solitons.md")]
pub mod solitons {}
#[doc = include_str!("../../../book/src/reduced.md")]
pub mod reduced {}
#[doc = include_str!("../../../book/src/pde.md")]
pub mod pde {}
#[doc = include_str!("../../../book/src/modulation.md")]
pub mod modulation {}
#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}
#[doc = include_str!("../../../book/src/shooting.md")]
pub mod shooting {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
