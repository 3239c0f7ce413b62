//! The guide's chapters, compiled as doctests so the snippets stay in sync
//! with the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}

#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}

#[doc = include_str!("../../../book/src/gp.md")]
pub mod gp {}

#[doc = include_str!("../../../book/src/scheduler.md")]
pub mod scheduler {}

#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
