//! Shared language backbone: vocabulary, sequence layouts, attention
//! planning and the decoder-only transformer.

pub mod layout;
pub mod model;
pub mod vocab;

pub use layout::{Segment, SegmentKind, SequenceLayout};
pub use model::{understanding_loss, Backbone, LMConfig};
pub use vocab::Vocab;
