//! Dense optical flow between consecutive frames, flow resampling and
//! motion statistics.

mod expansion;
mod farneback;
pub(crate) mod plane;

pub use expansion::{polynomial_expansion, PolyExpansion};
pub use plane::Plane;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FlowField, FlowScale, Frame};
use plane::{lattice, lerp};

/// Tuning of the polynomial-expansion flow estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    /// Size ratio between consecutive pyramid levels, in `(0, 1)`.
    pub pyramid_scale: f32,
    /// Side of the averaging window for the displacement solve (odd).
    pub window_size: usize,
    pub iterations: usize,
    /// Side of the polynomial-fit neighbourhood (odd).
    pub poly_n: usize,
    pub poly_sigma: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            window_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let odd = |n: usize| n >= 3 && n % 2 == 1;
        if !odd(self.window_size) {
            return Err(Error::InvalidConfig(format!(
                "window_size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        if !odd(self.poly_n) {
            return Err(Error::InvalidConfig(format!(
                "poly_n must be odd and >= 3, got {}",
                self.poly_n
            )));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidConfig("pyramid_levels must be >= 1".into()));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pyramid_scale must lie in (0, 1), got {}",
                self.pyramid_scale
            )));
        }
        if !(self.poly_sigma > 0.0) {
            return Err(Error::InvalidConfig("poly_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Source of backward flow between two consecutive frames.
///
/// The returned field may live on a coarser grid than the frames; its
/// values are in pixels of that grid.
pub trait FlowEstimator: Send + Sync {
    fn estimate(&self, prev: &Frame, curr: &Frame) -> Result<FlowField>;
}

impl<T: FlowEstimator + ?Sized> FlowEstimator for &T {
    fn estimate(&self, prev: &Frame, curr: &Frame) -> Result<FlowField> {
        (**self).estimate(prev, curr)
    }
}

impl<T: FlowEstimator + ?Sized> FlowEstimator for std::sync::Arc<T> {
    fn estimate(&self, prev: &Frame, curr: &Frame) -> Result<FlowField> {
        (**self).estimate(prev, curr)
    }
}

/// Polynomial-expansion estimator run at a reduced resolution.
#[derive(Clone, Debug, Default)]
pub struct FarnebackEstimator {
    pub params: FlowParams,
    pub scale: FlowScale,
    /// Negates the estimate, turning backward flow into forward flow.
    pub negate: bool,
}

impl FarnebackEstimator {
    pub fn new(params: FlowParams, scale: FlowScale) -> Self {
        Self {
            params,
            scale,
            negate: false,
        }
    }
}

impl FlowEstimator for FarnebackEstimator {
    fn estimate(&self, prev: &Frame, curr: &Frame) -> Result<FlowField> {
        check_pair(prev, curr)?;
        self.params.validate()?;
        let d = self.scale.divisor();
        if prev.width() / d < 2 || prev.height() / d < 2 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} frame is too small for flow scale {}",
                prev.width(),
                prev.height(),
                self.scale
            )));
        }
        let p = luma_plane(prev).area_downscale(d);
        let c = luma_plane(curr).area_downscale(d);
        let flow = farneback::farneback(&c, &p, &self.params);
        Ok(if self.negate { flow.negated() } else { flow })
    }
}

fn check_pair(prev: &Frame, curr: &Frame) -> Result<()> {
    if !prev.same_dims(curr) {
        return Err(Error::DimensionMismatch(format!(
            "previous frame is {}x{}, current is {}x{}",
            prev.width(),
            prev.height(),
            curr.width(),
            curr.height()
        )));
    }
    Ok(())
}

/// Backward flow at full input resolution: for each pixel `p` of `curr`,
/// `p + flow(p)` is its source location in `prev`.
pub fn estimate_flow(prev: &Frame, curr: &Frame, params: &FlowParams) -> Result<FlowField> {
    FarnebackEstimator::new(params.clone(), FlowScale::Full).estimate(prev, curr)
}

/// Unrounded luminance as an `f32` plane.
pub fn luma_plane(frame: &Frame) -> Plane {
    let data = match frame.channels() {
        1 => frame.data().iter().map(|&v| v as f32).collect(),
        _ => frame
            .data()
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect(),
    };
    Plane::new(frame.width(), frame.height(), data)
}

/// Luma conversion, `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(frame: &Frame) -> Frame {
    if frame.channels() == 1 {
        return frame.clone();
    }
    let data = frame
        .data()
        .chunks_exact(3)
        .map(|p| ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8)
        .collect();
    Frame::new(frame.width(), frame.height(), 1, data)
        .expect("same dimensions")
        .with_index(frame.index())
}

/// Area-averaged downsample by the given scale.
pub fn downscale_frame(frame: &Frame, scale: FlowScale) -> Result<Frame> {
    let d = scale.divisor();
    if d == 1 {
        return Ok(frame.clone());
    }
    let (w, h, ch) = (frame.width() / d, frame.height() / d, frame.channels());
    if w < 2 || h < 2 {
        return Err(Error::DimensionMismatch(format!(
            "downscaling {}x{} by {d} leaves less than 2x2",
            frame.width(),
            frame.height()
        )));
    }
    let area = (d * d) as u32;
    let mut out = Vec::with_capacity(w * h * ch);
    for oy in 0..h {
        for ox in 0..w {
            for c in 0..ch {
                let mut acc = 0u32;
                for y in oy * d..(oy + 1) * d {
                    for x in ox * d..(ox + 1) * d {
                        acc += frame.pixel(x, y)[c] as u32;
                    }
                }
                out.push(((acc + area / 2) / area) as u8);
            }
        }
    }
    Ok(Frame::new(w, h, ch, out)?.with_index(frame.index()))
}

/// Bilinearly interpolates both components onto a `target_w x target_h`
/// grid (pixel-center aligned) without touching their magnitude.
pub fn interpolate_flow(flow: &FlowField, target_h: usize, target_w: usize) -> FlowField {
    let (u, v) = interpolate_components(flow.u(), flow.v(), flow.width(), flow.height(), target_w, target_h);
    FlowField::from_raw(target_h, target_w, u, v)
}

/// Resamples a flow field to a new grid and rescales the vectors so they
/// are expressed in target-grid pixels.
///
/// # Panics
///
/// If either target dimension is zero.
pub fn resize_flow(flow: &FlowField, target_h: usize, target_w: usize) -> FlowField {
    assert!(target_h > 0 && target_w > 0, "target grid must be non-empty");
    if target_h == flow.height() && target_w == flow.width() {
        return flow.clone();
    }
    let (u, v) = resize_components(flow.u(), flow.v(), flow.width(), flow.height(), target_w, target_h);
    FlowField::from_raw(target_h, target_w, u, v)
}

pub(crate) fn resize_components(
    u: &[f32],
    v: &[f32],
    sw: usize,
    sh: usize,
    tw: usize,
    th: usize,
) -> (Vec<f32>, Vec<f32>) {
    let (mut u, mut v) = interpolate_components(u, v, sw, sh, tw, th);
    let sx = tw as f64 / sw as f64;
    let sy = th as f64 / sh as f64;
    u.iter_mut().for_each(|x| *x = (*x as f64 * sx) as f32);
    v.iter_mut().for_each(|x| *x = (*x as f64 * sy) as f32);
    (u, v)
}

fn interpolate_components(
    u: &[f32],
    v: &[f32],
    sw: usize,
    sh: usize,
    tw: usize,
    th: usize,
) -> (Vec<f32>, Vec<f32>) {
    if sw == tw && sh == th {
        return (u.to_vec(), v.to_vec());
    }
    let rx = sw as f32 / tw as f32;
    let ry = sh as f32 / th as f32;
    let xs: Vec<_> = (0..tw).map(|x| lattice((x as f32 + 0.5) * rx - 0.5, sw)).collect();
    let mut ou = Vec::with_capacity(tw * th);
    let mut ov = Vec::with_capacity(tw * th);
    for y in 0..th {
        let (y0, y1, ay) = lattice((y as f32 + 0.5) * ry - 0.5, sh);
        let (r0, r1) = (y0 * sw, y1 * sw);
        for &(x0, x1, ax) in &xs {
            let s = |p: &[f32]| lerp(lerp(p[r0 + x0], p[r0 + x1], ax), lerp(p[r1 + x0], p[r1 + x1], ax), ay);
            ou.push(s(u));
            ov.push(s(v));
        }
    }
    (ou, ov)
}

/// Mean length of the displacement vectors.
pub fn mean_flow_magnitude(flow: &FlowField) -> f64 {
    let n = flow.u().len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = flow
        .u()
        .iter()
        .zip(flow.v())
        .map(|(&u, &v)| (u as f64).hypot(v as f64))
        .sum();
    sum / n as f64
}

/// Mean vector length after expressing the field in pixels of a
/// `width x height` grid (e.g. the input resolution).
pub fn mean_flow_magnitude_at(flow: &FlowField, height: usize, width: usize) -> f64 {
    let sx = width as f64 / flow.width() as f64;
    let sy = height as f64 / flow.height() as f64;
    let n = flow.u().len().max(1);
    flow.u()
        .iter()
        .zip(flow.v())
        .map(|(&u, &v)| (u as f64 * sx).hypot(v as f64 * sy))
        .sum::<f64>()
        / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(w: usize, h: usize, px: [u8; 3]) -> Frame {
        Frame::new(w, h, 3, px.repeat(w * h)).unwrap()
    }

    #[test]
    fn grayscale_values() {
        assert_eq!(to_grayscale(&rgb(2, 2, [255, 255, 255])).data(), &[255; 4]);
        assert_eq!(to_grayscale(&rgb(2, 2, [255, 0, 0])).data()[0], 76);
        let g = Frame::new(2, 2, 1, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(to_grayscale(&g), g);
    }

    #[test]
    fn downscale_dims_and_constants() {
        let f = rgb(640, 512, [9, 9, 9]);
        let half = downscale_frame(&f, FlowScale::Half).unwrap();
        assert_eq!((half.width(), half.height()), (320, 256));
        let quarter = downscale_frame(&f, FlowScale::Quarter).unwrap();
        assert_eq!((quarter.width(), quarter.height()), (160, 128));
        assert_eq!(downscale_frame(&f, FlowScale::Full).unwrap(), f);
        let c = Frame::new(4, 4, 1, vec![77; 16]).unwrap();
        let d = downscale_frame(&c, FlowScale::Half).unwrap();
        assert_eq!(d.data(), &[77; 4]);
        let tiny = Frame::new(6, 6, 1, vec![0; 36]).unwrap();
        assert!(downscale_frame(&tiny, FlowScale::Quarter).is_err());
    }

    #[test]
    fn resize_constant_field_scales_vectors() {
        let f = FlowField::constant(128, 160, 4.0, 0.0);
        let r = resize_flow(&f, 256, 320);
        assert!(r.u().iter().all(|&u| u == 8.0));
        assert!(r.v().iter().all(|&v| v == 0.0));
        assert_eq!(resize_flow(&f, 128, 160), f);
    }

    #[test]
    fn resize_bilinear_midpoint() {
        let f = FlowField::new(2, 2, vec![0.0, 2.0, 0.0, 2.0], vec![0.0; 4]).unwrap();
        let interp = interpolate_flow(&f, 3, 3);
        assert_eq!(interp.at(1, 1).0, 1.0);
        // 2 -> 3 columns also rescales by 3/2
        assert_eq!(resize_flow(&f, 3, 3).at(1, 1).0, 1.5);
    }

    #[test]
    fn resize_roundtrip_on_constant() {
        let f = FlowField::constant(128, 160, -2.75, 1.5);
        for (h, w) in [(256, 320), (64, 80), (32, 40)] {
            let back = resize_flow(&resize_flow(&f, h, w), 128, 160);
            assert_eq!(back, f);
        }
    }

    #[test]
    fn magnitudes() {
        assert_eq!(mean_flow_magnitude(&FlowField::zeros(3, 3)), 0.0);
        assert_eq!(mean_flow_magnitude(&FlowField::constant(3, 3, 3.0, 4.0)), 5.0);
        let f = FlowField::new(1, 4, vec![0.0; 4], vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(mean_flow_magnitude(&f), 1.0);
        let quarter = FlowField::constant(4, 4, 1.0, 0.0);
        assert_eq!(mean_flow_magnitude_at(&quarter, 16, 16), 4.0);
    }

    #[test]
    fn identical_frames_have_zero_flow() {
        let data: Vec<u8> = (0..48 * 40).map(|i| ((i * 7919) % 256) as u8).collect();
        let f = Frame::new(48, 40, 1, data).unwrap();
        let flow = estimate_flow(&f, &f, &FlowParams::default()).unwrap();
        assert!(flow.u().iter().chain(flow.v()).all(|&d| d.abs() < 0.05));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Frame::new(8, 8, 1, vec![0; 64]).unwrap();
        let b = Frame::new(8, 6, 1, vec![0; 48]).unwrap();
        assert!(matches!(
            estimate_flow(&a, &b, &FlowParams::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn params_validation() {
        assert!(FlowParams::default().validate().is_ok());
        let bad = FlowParams {
            window_size: 14,
            ..FlowParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = FlowParams {
            pyramid_levels: 0,
            ..FlowParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
