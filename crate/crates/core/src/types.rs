//! Domain containers shared by every stage of the pipeline.
//!
//! All containers validate their invariants on construction and are immutable
//! afterwards, so they can be handed between threads freely.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An 8-bit video frame, row-major with interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
    index: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::DimensionMismatch(format!(
                "frame must be at least 2x2, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::DimensionMismatch(format!(
                "frame must have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            index: 0,
        })
    }

    /// Sets the sequence position of this frame.
    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let off = (y * self.width + x) * self.channels;
        &self.data[off..off + self.channels]
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .field("index", &self.index)
            .finish_non_exhaustive()
    }
}

/// Encoder output of shape `C x h x w`, stored channel-major.
#[derive(Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a map from data already known to be finite.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::from_raw(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureMap")
            .field("channels", &self.channels)
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

/// Dense per-pixel displacement, in pixels of the field's own grid.
///
/// Fields produced by the estimators follow the backward convention: the
/// value at `p` points from a current-frame pixel to its source location
/// `p + (u, v)` in the previous frame.
#[derive(Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        let n = height * width;
        if u.len() != n || v.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: u.len().min(v.len()),
            });
        }
        if let Some(pos) = u.iter().chain(v.iter()).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self {
            height,
            width,
            u,
            v,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>) -> Self {
        debug_assert!(u.len() == height * width && v.len() == height * width);
        Self {
            height,
            width,
            u,
            v,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        let n = height * width;
        Self::from_raw(height, width, vec![u; n], vec![v; n])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Returns the field with both components negated.
    pub fn negated(&self) -> Self {
        Self::from_raw(
            self.height,
            self.width,
            self.u.iter().map(|x| -x).collect(),
            self.v.iter().map(|x| -x).collect(),
        )
    }
}

impl fmt::Debug for FlowField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowField")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

/// Per-pixel class labels at input resolution.
#[derive(Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::SizeMismatch {
                expected: height * width,
                found: labels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Checks every label against the class count `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize >= num_classes) {
            Some(l) => Err(Error::InvalidConfig(format!(
                "label {l} out of range for {num_classes} classes"
            ))),
            None => Ok(()),
        }
    }

    pub fn same_dims(&self, other: &SegmentationMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl fmt::Debug for SegmentationMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SegmentationMask")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

/// Resolution at which optical flow is computed, relative to the input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlowScale {
    #[default]
    Full,
    Half,
    Quarter,
}

impl FlowScale {
    pub const ALL: [FlowScale; 3] = [FlowScale::Full, FlowScale::Half, FlowScale::Quarter];

    pub fn divisor(self) -> usize {
        match self {
            FlowScale::Full => 1,
            FlowScale::Half => 2,
            FlowScale::Quarter => 4,
        }
    }

    pub fn factor(self) -> f64 {
        1.0 / self.divisor() as f64
    }
}

impl fmt::Display for FlowScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowScale::Full => "1",
            FlowScale::Half => "0.5",
            FlowScale::Quarter => "0.25",
        })
    }
}

impl FromStr for FlowScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "1.0" => Ok(FlowScale::Full),
            "0.5" | "1/2" => Ok(FlowScale::Half),
            "0.25" | "1/4" => Ok(FlowScale::Quarter),
            other => Err(Error::InvalidConfig(format!(
                "flow scale must be one of 1, 0.5, 0.25; got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Executor {
    #[default]
    Sequential,
    Parallel,
}

impl fmt::Display for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Executor::Sequential => "seq",
            Executor::Parallel => "par",
        })
    }
}

impl FromStr for Executor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq" | "sequential" => Ok(Executor::Sequential),
            "par" | "parallel" => Ok(Executor::Parallel),
            other => Err(Error::InvalidConfig(format!("unknown executor {other:?}"))),
        }
    }
}

/// Temporal treatment applied to the encoder features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Single-frame inference, no temporal information.
    Baseline,
    /// Feature-space moving average without motion correction.
    Ema,
    /// Moving average with the previous state warped by optical flow.
    #[default]
    Mcma,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::Ema, Method::Mcma];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Ema => "ema",
            Method::Mcma => "mcma",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "ema" => Ok(Method::Ema),
            "mcma" => Ok(Method::Mcma),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[default]
    Reference,
    FeatureFiles,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Reference => "reference",
            ModelKind::FeatureFiles => "feature-files",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(ModelKind::Reference),
            "feature-files" | "features" => Ok(ModelKind::FeatureFiles),
            other => Err(Error::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Run-level settings for the temporal segmentation pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Weight on the current frame's features, in `(0, 1]`.
    pub alpha: f32,
    /// Multiplier applied to the flow before warping.
    pub lambda: f32,
    pub flow_scale: FlowScale,
    pub num_classes: usize,
    pub executor: Executor,
    pub model: ModelKind,
    pub method: Method,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 2.0,
            flow_scale: FlowScale::Full,
            num_classes: 2,
            executor: Executor::Sequential,
            model: ModelKind::Reference,
            method: Method::Mcma,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be a finite nonnegative number, got {}",
                self.lambda
            )));
        }
        if !(2..=256).contains(&self.num_classes) {
            return Err(Error::InvalidConfig(format!(
                "class count must lie in [2, 256], got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_rejects_degenerate_dims() {
        assert!(Frame::new(1, 4, 1, vec![0; 4]).is_err());
        assert!(Frame::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(Frame::new(2, 2, 3, vec![0; 11]).is_err());
        assert!(Frame::new(2, 2, 3, vec![0; 12]).is_ok());
    }

    #[test]
    fn feature_map_rejects_non_finite() {
        assert!(matches!(
            FeatureMap::new(1, 1, 2, vec![0.0, f32::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(FeatureMap::new(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn flow_field_rejects_infinite() {
        assert!(FlowField::new(1, 2, vec![0.0, 1.0], vec![f32::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn mask_validation() {
        let m = SegmentationMask::new(1, 3, vec![0, 1, 2]).unwrap();
        assert!(m.validate(3).is_ok());
        assert!(m.validate(2).is_err());
    }

    #[test]
    fn config_ranges() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(cfg.lambda, 2.0);
        assert!(cfg.validate().is_ok());
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_ok());
        cfg.alpha = 1.01;
        assert!(cfg.validate().is_err());
        cfg.alpha = 0.5;
        cfg.lambda = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parse_enums() {
        assert_eq!("0.25".parse::<FlowScale>().unwrap(), FlowScale::Quarter);
        assert_eq!("1/2".parse::<FlowScale>().unwrap(), FlowScale::Half);
        assert!("0.3".parse::<FlowScale>().is_err());
        assert_eq!("par".parse::<Executor>().unwrap(), Executor::Parallel);
        assert_eq!("ema".parse::<Method>().unwrap(), Method::Ema);
    }
}
