//! Flow-guided bilinear warping of feature maps.
//!
//! Warping gathers: output cell `p` reads the input at `p + lambda * flow(p)`.
//! Sample positions outside the map are clamped to the border.

use crate::error::{Error, Result};
use crate::flow::plane::lattice;
use crate::types::{FeatureMap, FlowField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpConfig {
    /// Multiplier applied to the flow vectors.
    pub lambda: f32,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self { lambda: 2.0 }
    }
}

/// Linear interpolation that never leaves `[min(a, b), max(a, b)]`.
#[inline]
fn lerp_bounded(a: f32, b: f32, t: f32) -> f32 {
    if t == 0.0 {
        return a;
    }
    let v = a + t * (b - a);
    if a <= b {
        v.clamp(a, b)
    } else {
        v.clamp(b, a)
    }
}

/// Per-channel bilinear interpolation at column `x`, row `y`.
pub fn bilinear_sample(features: &FeatureMap, x: f32, y: f32) -> Vec<f32> {
    let (c, h, w) = features.shape();
    let (x0, x1, ax) = lattice(x, w);
    let (y0, y1, ay) = lattice(y, h);
    (0..c)
        .map(|ch| {
            let p = features.channel(ch);
            let top = lerp_bounded(p[y0 * w + x0], p[y0 * w + x1], ax);
            let bottom = lerp_bounded(p[y1 * w + x0], p[y1 * w + x1], ax);
            lerp_bounded(top, bottom, ay)
        })
        .collect()
}

/// Warps `features` by `lambda * flow`. The flow must already be on the
/// feature grid (see [`crate::flow::resize_flow`]).
pub fn warp_features(features: &FeatureMap, flow: &FlowField, cfg: WarpConfig) -> Result<FeatureMap> {
    let (c, h, w) = features.shape();
    if flow.height() != h || flow.width() != w {
        return Err(Error::DimensionMismatch(format!(
            "flow is {}x{}, features are {}x{}",
            flow.width(),
            flow.height(),
            w,
            h
        )));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be finite and nonnegative, got {}",
            cfg.lambda
        )));
    }
    if cfg.lambda == 0.0 {
        return Ok(features.clone());
    }

    let plane = h * w;
    let src = features.data();
    let mut out = vec![0.0f32; c * plane];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (x0, x1, ax) = lattice(x as f32 + cfg.lambda * flow.u()[i], w);
            let (y0, y1, ay) = lattice(y as f32 + cfg.lambda * flow.v()[i], h);
            let (r0, r1) = (y0 * w, y1 * w);
            // sample positions are shared by all channels
            for ch in 0..c {
                let p = &src[ch * plane..(ch + 1) * plane];
                let top = lerp_bounded(p[r0 + x0], p[r0 + x1], ax);
                let bottom = lerp_bounded(p[r1 + x0], p[r1 + x1], ax);
                out[ch * plane + i] = lerp_bounded(top, bottom, ay);
            }
        }
    }
    Ok(FeatureMap::from_raw(c, h, w, out))
}
