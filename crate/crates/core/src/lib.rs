//! Motion-corrected moving average (MCMA) for temporally consistent video
//! segmentation.
//!
//! The previous frame's fused encoder features are warped onto the current
//! frame with dense optical flow, blended with the current features by an
//! exponential moving average, and decoded:
//!
//! ```text
//! f'_j = alpha * E(x_j) + (1 - alpha) * W(f'_i, lambda * F)
//! y'_j = D(f'_j)
//! ```

pub mod error;
pub mod eval;
pub mod flow;
pub mod fusion;
pub mod io;
pub mod kv;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod types;
pub mod warping;

pub use error::{Error, Result};
pub use flow::{FarnebackEstimator, FlowEstimator, FlowParams};
pub use fusion::{ema_fuse, mcma_step, TemporalState};
pub use model::{Model, ModelSpec, SegmentationModel};
pub use pipeline::{run, run_parallel, run_sequential, RunOutput, StageTiming};
pub use types::{
    Executor, FeatureMap, FlowField, FlowScale, Frame, Method, ModelKind, PipelineConfig, SegmentationMask,
};
pub use warping::{warp_features, WarpConfig};
