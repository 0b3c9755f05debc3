//! Generation pathway: mask planning, the forward noise process, the
//! masked-autoregressive encoder/decoder, the per-token diffusion head and
//! the guided ancestral sampler.

pub mod head;
pub mod mar;
pub mod mask;
pub mod noise;
pub mod sampler;

pub use head::{diffusion_loss, DiffusionHead, DiffusionHeadConfig};
pub use mar::{Mar, MarConfig};
pub use mask::{commit_counts, mask_ratio_at, sample_mask, MaskPlan};
pub use noise::{make_noisy, BetaSchedule, NoiseSchedule, NoisySample};
pub use sampler::{cfg_combine, denoise_chain, denoise_sample};
