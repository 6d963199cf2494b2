//! The book chapters, embedded so their code samples compile and run as
//! doc-tests. The rendered guide lives under `book/`; build it with
//! `mdbook build book`.

#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}

#[doc = include_str!("../../../book/src/knn-graphs.md")]
pub mod knn_graphs {}

#[doc = include_str!("../../../book/src/partitioning.md")]
pub mod partitioning {}

#[doc = include_str!("../../../book/src/overlap.md")]
pub mod overlap {}

#[doc = include_str!("../../../book/src/routing.md")]
pub mod routing {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
