//! Desk-scale unified multimodal model.
//!
//! One shared decoder-only language backbone serves three tasks over a
//! synthetic scene world with exact ground truth:
//!
//! * text-to-image generation through a masked-autoregressive pathway whose
//!   continuous tokens are sampled by a small per-token diffusion head,
//! * image understanding through a bidirectional patch encoder feeding the
//!   backbone for answer prediction,
//! * instruction-based image editing conditioned on the encoded source image.
//!
//! Everything is driven by seeded generators and scores against a
//! deterministic oracle, so training, curation and evaluation are
//! reproducible end to end. See the book under `book/` for a guided tour.

pub mod backbone;
pub mod codec;
pub mod error;
pub mod gen;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod real;
pub mod rng;
pub mod oracle;
pub mod scene;
pub mod und;

pub use error::{Error, Result};
pub use real::Real;
