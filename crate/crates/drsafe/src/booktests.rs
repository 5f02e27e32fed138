//! Runs the guide's code snippets as doctests so `cargo test --doc` keeps the
//! book in sync with the library.

#[doc = include_str!("../../../book/src/overview.md")]
pub struct Overview;
