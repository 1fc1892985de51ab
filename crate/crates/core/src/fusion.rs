//! Feature-space moving average with motion correction.
//!
//! Per frame `j` with fused state `f'_i` from the previous step:
//!
//! ```text
//! phi    = warp(f'_i, lambda * F)          F: backward flow on the feature grid
//! f'_j   = alpha * E(x_j) + (1 - alpha) * phi
//! y'_j   = D(f'_j)
//! ```
//!
//! The first frame initializes the state with its own encoder output.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::flow::{resize_flow, FlowEstimator};
use crate::model::SegmentationModel;
use crate::types::{FeatureMap, FlowField, Frame, Method, PipelineConfig, SegmentationMask};
use crate::warping::{warp_features, WarpConfig};

/// State carried from one frame to the next.
#[derive(Clone, Debug)]
pub struct TemporalState {
    /// Fused features of the last absorbed frame.
    pub state_features: FeatureMap,
    /// Last absorbed frame; the next flow is computed against it.
    pub prev_frame: Arc<Frame>,
    /// Number of frames absorbed so far.
    pub frame_index: usize,
}

/// Convex blend `alpha * curr + (1 - alpha) * warped_prev`, elementwise.
pub fn ema_fuse(curr: &FeatureMap, warped_prev: &FeatureMap, alpha: f32) -> Result<FeatureMap> {
    if !curr.same_shape(warped_prev) {
        return Err(Error::DimensionMismatch(format!(
            "fusing {:?} with {:?}",
            curr.shape(),
            warped_prev.shape()
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(curr.clone());
    }
    let data = curr
        .data()
        .iter()
        .zip(warped_prev.data())
        .map(|(&c, &p)| {
            let v = p + alpha * (c - p);
            if p <= c {
                v.clamp(p, c)
            } else {
                v.clamp(c, p)
            }
        })
        .collect();
    let (ch, h, w) = curr.shape();
    Ok(FeatureMap::from_raw(ch, h, w, data))
}

/// Wall-clock time spent in each stage of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepDurations {
    pub flow: Duration,
    pub encode: Duration,
    pub warp: Duration,
    pub fuse: Duration,
    pub decode: Duration,
}

/// Whether a step for `frame` needs optical flow under `cfg`.
pub(crate) fn needs_flow(state: Option<&TemporalState>, cfg: &PipelineConfig) -> bool {
    state.is_some() && cfg.method == Method::Mcma
}

pub(crate) fn check_frame(state: Option<&TemporalState>, frame: &Frame) -> Result<()> {
    if let Some(s) = state {
        if !s.prev_frame.same_dims(frame) {
            return Err(Error::DimensionMismatch(format!(
                "frame is {}x{}, sequence is {}x{}",
                frame.width(),
                frame.height(),
                s.prev_frame.width(),
                s.prev_frame.height()
            )));
        }
    }
    Ok(())
}

/// Folds one frame's encoder output (and, for motion correction, its raw
/// backward flow) into the state and decodes the result.
pub(crate) fn absorb(
    state: Option<TemporalState>,
    frame: Arc<Frame>,
    features: FeatureMap,
    flow: Option<FlowField>,
    model: &dyn SegmentationModel,
    cfg: &PipelineConfig,
    times: &mut StepDurations,
) -> Result<(TemporalState, SegmentationMask)> {
    let (fused, absorbed) = match (state, cfg.method) {
        (None, _) => (features, 1),
        (Some(s), Method::Baseline) => (features, s.frame_index + 1),
        (Some(s), method) => {
            if !s.state_features.same_shape(&features) {
                return Err(Error::DimensionMismatch(format!(
                    "features changed shape from {:?} to {:?}",
                    s.state_features.shape(),
                    features.shape()
                )));
            }
            let t = Instant::now();
            let prev = match (method, flow) {
                (Method::Mcma, Some(flow)) => {
                    let on_grid = resize_flow(&flow, features.height(), features.width());
                    warp_features(&s.state_features, &on_grid, WarpConfig { lambda: cfg.lambda })?
                }
                (Method::Mcma, None) => {
                    return Err(Error::InvalidConfig("motion correction requires a flow field".into()))
                }
                _ => s.state_features,
            };
            times.warp = t.elapsed();
            let t = Instant::now();
            let fused = ema_fuse(&features, &prev, cfg.alpha)?;
            times.fuse = t.elapsed();
            (fused, s.frame_index + 1)
        }
    };
    let t = Instant::now();
    let mask = model.decode(&fused)?;
    times.decode = t.elapsed();
    Ok((
        TemporalState {
            state_features: fused,
            prev_frame: frame,
            frame_index: absorbed,
        },
        mask,
    ))
}

/// One step with flow estimation and encoding run back to back.
pub(crate) fn step_sequential(
    state: Option<TemporalState>,
    frame: Arc<Frame>,
    model: &dyn SegmentationModel,
    estimator: &dyn FlowEstimator,
    cfg: &PipelineConfig,
    times: &mut StepDurations,
) -> Result<(TemporalState, SegmentationMask, Option<FlowField>)> {
    check_frame(state.as_ref(), &frame)?;
    let flow = if needs_flow(state.as_ref(), cfg) {
        let prev = &state.as_ref().expect("checked").prev_frame;
        let t = Instant::now();
        let flow = estimator.estimate(prev, &frame)?;
        times.flow = t.elapsed();
        Some(flow)
    } else {
        None
    };
    let t = Instant::now();
    let features = model.encode(&frame)?;
    times.encode = t.elapsed();
    let (state, mask) = absorb(state, frame, features, flow.clone(), model, cfg, times)?;
    Ok((state, mask, flow))
}

/// Advances the temporal state by one frame and returns the new state with
/// the frame's segmentation.
///
/// Honors `cfg.method`: the baseline ignores the state, EMA blends without
/// warping and MCMA warps the state by the estimated flow first.
pub fn mcma_step(
    state: Option<TemporalState>,
    frame: &Frame,
    model: &dyn SegmentationModel,
    estimator: &dyn FlowEstimator,
    cfg: &PipelineConfig,
) -> Result<(TemporalState, SegmentationMask)> {
    cfg.validate()?;
    let mut times = StepDurations::default();
    let (state, mask, _) = step_sequential(state, Arc::new(frame.clone()), model, estimator, cfg, &mut times)?;
    Ok((state, mask))
}
