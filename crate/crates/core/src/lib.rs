//! Conditional denoising diffusion for translating flat-panel detector CT
//! slices into multi-detector-CT-like images.
//!
//! The crate covers the whole desk-scale pipeline: HU windowing and volume
//! containers ([`volume`]), the diffusion process ([`diffusion`]), the U-Net
//! noise predictor ([`denoiser`]), training ([`trainer`]), a paired artifact
//! simulator ([`simulate`]) and HU-domain evaluation ([`metrics`]).

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod simulate;
pub mod trainer;
pub mod volume;

pub use denoiser::{build_denoiser, param_count, Denoiser, DenoiserConfig};
pub use diffusion::{make_schedule, NoisePredictor, NoiseSchedule, ScheduleConfig};
pub use error::{Error, Result};
pub use metrics::{evaluate_cases, MetricsConfig, MetricsReport};
pub use simulate::{make_paired_dataset, make_phantom, ArtifactRecipe, PairedSample, RecipeDistribution};
pub use trainer::{train, TrainingConfig, TrainingRecord};
pub use volume::{HuVolume, Modality, NormalizedSliceStack, WindowSpec};

/// Derive an independent stream seed from a base seed and an index (SplitMix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
