//! Aggregation over compact manifolds for graph neural networks.
//!
//! Deep message-passing models smooth node embeddings toward a single point:
//! the usual neighborhood-averaging operators are contracted maps, so depth
//! erases the signal. This crate replaces Euclidean averaging with averaging
//! followed by radial projection onto a compact hypersurface
//! `M_U = { x : x U x^T = 1 }`, which breaks the contraction property, and
//! ships everything needed to study the difference:
//!
//! * [`graph`] — CSR graphs and the normalized aggregation operators,
//! * [`manifold`] — the `P_U` projection, push-forward/push-back charts and
//!   the geodesic metric on `M_U`,
//! * [`autodiff`] — a small reverse-mode tape covering exactly the ops the
//!   models need, plus Adam and Glorot initialization,
//! * [`models`] — SGC/GCN/GAT with vanilla, manifold, and trainable-manifold
//!   variants,
//! * [`contraction`] — an empirical lab for contraction conditions, collapse
//!   dynamics, and non-contraction witnesses,
//! * [`data`] — dataset files, synthetic stochastic-block-model graphs, and
//!   the missing-feature transform,
//! * [`experiment`] — a configuration-driven training and diagnostics
//!   harness used by the `acm` command-line tool.
//!
//! The guide in `book/` walks through the concepts; its code snippets are
//! compiled and run as part of `cargo test --doc`.

pub mod autodiff;
pub mod contraction;
pub mod data;
pub mod experiment;
pub mod graph;
pub mod manifold;
pub mod mat;
pub mod models;
pub mod rng;

#[cfg(doctest)]
mod book {
    //! The mdbook chapters double as doc-tests so the guide can never drift
    //! from the library.

    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs-and-aggregation.md")]
    mod graphs_and_aggregation {}
    #[doc = include_str!("../../../book/src/contraction.md")]
    mod contraction {}
    #[doc = include_str!("../../../book/src/compact-manifolds.md")]
    mod compact_manifolds {}
    #[doc = include_str!("../../../book/src/models-and-training.md")]
    mod models_and_training {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
