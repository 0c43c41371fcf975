//! Trajectory auto-encoder with prompt tuning over offline reinforcement
//! learning data.
//!
//! The crate is layered bottom-up:
//!
//! * [`scalar`], [`tensor`], [`autodiff`], [`optim`], [`rng`] — a small
//!   scalar-generic numeric core: dense tensors, a reverse-mode gradient
//!   graph, an Adam optimizer with decoupled weight decay, and a splittable
//!   counter-based random stream.
//! * [`traj`] — plain trajectory containers shared by everything above the
//!   numeric core.
//! * [`model`] — the sequence model: a bidirectional trajectory encoder that
//!   pools a fixed-length policy prompt, a causal generator with action /
//!   reward / next-state heads, a residual prompt adaptor, and a binary
//!   checkpoint format.
//! * [`losses`] — supervised reconstruction, contrastive prompt objectives,
//!   and the prompt-improvement objectives.
//! * [`env`] — three toy environment families plus offline dataset
//!   generation and JSONL (de)serialization.
//! * [`pipeline`] — the two training stages (representation, improvement),
//!   the meta variants with task contexts, and metrics logging.
//! * [`eval`] — rollouts, normalized scores, a behavior-cloning baseline,
//!   and report generation.
//!
//! The numeric core is generic over [`scalar::Scalar`]; everything above it
//! uses the concrete `f64` aliases exported at the crate root.

pub mod autodiff;
pub mod env;
pub mod eval;
pub mod losses;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod traj;

pub use rng::RngStream;
pub use scalar::Scalar;

/// Concrete tensor type used by the model and everything above it.
pub type Tensor = tensor::Tensor<f64>;
/// Concrete gradient graph used by the model and everything above it.
pub type Graph = autodiff::Graph<f64>;
/// Concrete graph error alias.
pub type GraphError = autodiff::GraphError;
