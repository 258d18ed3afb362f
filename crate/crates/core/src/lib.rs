//! Multimodal fusion, temporal graph convolution and deep Q-learning for
//! short-video recommendation.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: fp64 tensors with a reverse-mode tape, Adam, cosine
//!   annealing and gradient clipping.
//! - [`fusion`]: modality projection, a multi-head attention encoder over the
//!   (visual, text, audio) token sequence, and softmax-gated fusion.
//! - [`graph`]: timestamped interaction graphs, windowed snapshots, graph
//!   convolution and temporal attention over per-window node embeddings.
//! - [`agent`]: Q-network, replay buffer, TD loss against a target network,
//!   composite reward and the optimizer step.
//! - [`env`]: a seeded short-video platform simulator with JSONL event logs.
//! - [`metrics`]: F1, NDCG@k, MSE, MAE, hit rate and intra-list similarity.
//! - [`harness`]: configuration, training, evaluation, ablations, baselines,
//!   checkpoints and result files.

pub mod agent;
pub mod env;
mod error;
pub mod fusion;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod numerics;

pub use error::{Error, Result};

// Chapters of the guide in `book/`; their code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/agent.md")]
    mod agent {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
