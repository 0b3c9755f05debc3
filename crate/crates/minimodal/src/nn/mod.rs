//! Minimal neural-network layer library with hand-written backward passes.
//!
//! No framework: parameters live in a [`param::ParamStore`] arena, every
//! layer's `forward` returns a cache that its `backward` consumes, and
//! gradients accumulate into a [`param::Grads`] buffer indexed by parameter
//! id. The same code instantiates at `f32` (training) and `f64` (gradient
//! checks).

pub mod attention;
pub mod block;
pub mod embedding;
pub mod gradcheck;
pub mod linear;
pub mod mlp;
pub mod norm;
pub mod ops;
pub mod param;

pub use attention::MultiheadAttention;
pub use block::TransformerBlock;
pub use embedding::Embedding;
pub use linear::Linear;
pub use mlp::Mlp;
pub use norm::LayerNorm;
pub use param::{Grads, Init, ParamId, ParamStore};
