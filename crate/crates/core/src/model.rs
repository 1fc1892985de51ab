//! Encoder/decoder partition of a segmentation model.
//!
//! The reference model is analytic: the encoder block-averages the frame by
//! `feature_stride` and scores each cell against one color prototype per
//! class; the decoder upsamples the scores bilinearly and takes the argmax.
//! The feature-files model reads encoder outputs exported by an external
//! network, one `MCFE` file per frame.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::flow::plane::{lattice, lerp};
use crate::io;
use crate::kv::{fmt_tuple, KvConfig};
use crate::types::{FeatureMap, Frame, ModelKind, SegmentationMask};

#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    pub color: [f32; 3],
    pub bias: f32,
}

impl Prototype {
    pub fn new(color: [u8; 3], bias: f32) -> Self {
        Self {
            color: color.map(f32::from),
            bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Input pixels per feature cell along each axis.
    pub feature_stride: usize,
    pub num_classes: usize,
    /// One per class; used by the reference model.
    pub prototypes: Vec<Prototype>,
    /// Standard deviation of Gaussian noise added to reference features.
    pub noise_std: f32,
    pub noise_seed: u64,
    pub feature_dir: Option<PathBuf>,
}

impl ModelSpec {
    pub fn reference(prototypes: Vec<Prototype>) -> Self {
        Self {
            kind: ModelKind::Reference,
            feature_stride: 4,
            num_classes: prototypes.len(),
            prototypes,
            noise_std: 0.0,
            noise_seed: 0,
            feature_dir: None,
        }
    }

    /// Reference model with one zero-bias prototype per class color.
    pub fn from_class_colors(colors: &[[u8; 3]]) -> Self {
        Self::reference(colors.iter().map(|&c| Prototype::new(c, 0.0)).collect())
    }

    pub fn feature_files(dir: impl Into<PathBuf>, num_classes: usize, feature_stride: usize) -> Self {
        Self {
            kind: ModelKind::FeatureFiles,
            feature_stride,
            num_classes,
            prototypes: Vec::new(),
            noise_std: 0.0,
            noise_seed: 0,
            feature_dir: Some(dir.into()),
        }
    }

    pub fn with_noise(mut self, std: f32, seed: u64) -> Self {
        self.noise_std = std;
        self.noise_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.num_classes) {
            return Err(Error::InvalidConfig(format!(
                "class count must lie in [2, 256], got {}",
                self.num_classes
            )));
        }
        if self.feature_stride == 0 {
            return Err(Error::InvalidConfig("feature_stride must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("noise_std must be finite and nonnegative".into()));
        }
        match self.kind {
            ModelKind::Reference if self.prototypes.len() != self.num_classes => {
                Err(Error::InvalidConfig(format!(
                    "{} prototypes for {} classes",
                    self.prototypes.len(),
                    self.num_classes
                )))
            }
            ModelKind::FeatureFiles if self.feature_dir.is_none() => {
                Err(Error::InvalidConfig("feature-files model needs a feature_dir".into()))
            }
            _ => Ok(()),
        }
    }

    /// Parses the `key = value` model format:
    /// `kind`, `feature_stride`, `num_classes`, `class.N.color`,
    /// `class.N.bias`, `noise_std`, `noise_seed`, `feature_dir`.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let kind: ModelKind = cfg.get_or("kind", ModelKind::Reference)?;
        let num_classes: usize = cfg.require("num_classes")?;
        let mut prototypes = Vec::new();
        if kind == ModelKind::Reference {
            for c in 0..num_classes {
                let color = cfg
                    .get_tuple::<u8, 3>(&format!("class.{c}.color"))?
                    .ok_or_else(|| Error::InvalidConfig(format!("missing class.{c}.color")))?;
                let bias = cfg.get_or(&format!("class.{c}.bias"), 0.0f32)?;
                prototypes.push(Prototype::new(color, bias));
            }
        }
        let spec = Self {
            kind,
            feature_stride: cfg.get_or("feature_stride", 4)?,
            num_classes,
            prototypes,
            noise_std: cfg.get_or("noise_std", 0.0)?,
            noise_seed: cfg.get_or("noise_seed", 0)?,
            feature_dir: cfg.get::<String>("feature_dir")?.map(PathBuf::from),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut cfg = KvConfig::default();
        cfg.set("kind", self.kind);
        cfg.set("feature_stride", self.feature_stride);
        cfg.set("num_classes", self.num_classes);
        for (c, p) in self.prototypes.iter().enumerate() {
            cfg.set(format!("class.{c}.color"), fmt_tuple(&p.color.map(|v| v as u8)));
            cfg.set(format!("class.{c}.bias"), p.bias);
        }
        cfg.set("noise_std", self.noise_std);
        cfg.set("noise_seed", self.noise_seed);
        if let Some(dir) = &self.feature_dir {
            cfg.set("feature_dir", dir.display());
        }
        cfg
    }
}

/// A segmentation network split into `encode` (frame to features) and
/// `decode` (features to mask).
pub trait SegmentationModel: Send + Sync {
    fn num_classes(&self) -> usize;
    fn encode(&self, frame: &Frame) -> Result<FeatureMap>;
    fn decode(&self, features: &FeatureMap) -> Result<SegmentationMask>;
}

impl<T: SegmentationModel + ?Sized> SegmentationModel for &T {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn encode(&self, frame: &Frame) -> Result<FeatureMap> {
        (**self).encode(frame)
    }
    fn decode(&self, features: &FeatureMap) -> Result<SegmentationMask> {
        (**self).decode(features)
    }
}

impl<T: SegmentationModel + ?Sized> SegmentationModel for std::sync::Arc<T> {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn encode(&self, frame: &Frame) -> Result<FeatureMap> {
        (**self).encode(frame)
    }
    fn decode(&self, features: &FeatureMap) -> Result<SegmentationMask> {
        (**self).decode(features)
    }
}

/// Model backed by a validated [`ModelSpec`].
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }
}

impl SegmentationModel for Model {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn encode(&self, frame: &Frame) -> Result<FeatureMap> {
        encode(frame, &self.spec)
    }

    fn decode(&self, features: &FeatureMap) -> Result<SegmentationMask> {
        decode(features, &self.spec)
    }
}

pub fn encode(frame: &Frame, spec: &ModelSpec) -> Result<FeatureMap> {
    match spec.kind {
        ModelKind::Reference => encode_reference(frame, spec),
        ModelKind::FeatureFiles => {
            let dir = spec
                .feature_dir
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("feature-files model needs a feature_dir".into()))?;
            let path = io::numbered_path(dir, frame.index(), "mcfe");
            if !path.exists() {
                return Err(Error::MissingFeatureFile(path));
            }
            io::read_features(&path)
        }
    }
}

fn encode_reference(frame: &Frame, spec: &ModelSpec) -> Result<FeatureMap> {
    let s = spec.feature_stride;
    if spec.prototypes.len() != spec.num_classes {
        return Err(Error::InvalidConfig(format!(
            "{} prototypes for {} classes",
            spec.prototypes.len(),
            spec.num_classes
        )));
    }
    if frame.width() % s != 0 || frame.height() % s != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} frame is not divisible by feature stride {s}",
            frame.width(),
            frame.height()
        )));
    }
    let (w, h) = (frame.width() / s, frame.height() / s);
    let plane = w * h;
    let ch = frame.channels();
    let norm = 1.0 / (s * s) as f32;
    let inv_range = 1.0 / (255.0f32 * 255.0);
    let mut data = vec![0.0f32; spec.num_classes * plane];
    for cy in 0..h {
        for cx in 0..w {
            let mut mean = [0.0f32; 3];
            for y in cy * s..(cy + 1) * s {
                for x in cx * s..(cx + 1) * s {
                    let px = frame.pixel(x, y);
                    for (k, m) in mean.iter_mut().enumerate() {
                        *m += px[if ch == 3 { k } else { 0 }] as f32;
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m *= norm);
            for (l, p) in spec.prototypes.iter().enumerate() {
                let d2: f32 = mean.iter().zip(&p.color).map(|(a, b)| (a - b) * (a - b)).sum();
                data[l * plane + cy * w + cx] = -d2 * inv_range + p.bias;
            }
        }
    }
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, spec.noise_std)
            .map_err(|e| Error::InvalidConfig(format!("noise_std: {e}")))?;
        let seed = spec.noise_seed ^ (frame.index() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        data.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    FeatureMap::new(spec.num_classes, h, w, data)
}

/// Bilinear upsampling by `feature_stride` followed by a per-pixel argmax;
/// ties go to the lowest class index.
pub fn decode(features: &FeatureMap, spec: &ModelSpec) -> Result<SegmentationMask> {
    if features.channels() != spec.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "features have {} channels, model has {} classes",
            features.channels(),
            spec.num_classes
        )));
    }
    let s = spec.feature_stride;
    upsample_argmax(features, features.height() * s, features.width() * s)
}

/// Argmax of the bilinearly upsampled (pixel-center aligned) class scores.
pub fn upsample_argmax(features: &FeatureMap, height: usize, width: usize) -> Result<SegmentationMask> {
    let (c, fh, fw) = features.shape();
    if c == 0 || c > 256 {
        return Err(Error::DimensionMismatch(format!("cannot decode {c} channels")));
    }
    let rx = fw as f32 / width as f32;
    let ry = fh as f32 / height as f32;
    let xs: Vec<_> = (0..width).map(|x| lattice((x as f32 + 0.5) * rx - 0.5, fw)).collect();
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, ay) = lattice((y as f32 + 0.5) * ry - 0.5, fh);
        for &(x0, x1, ax) in &xs {
            let mut best = f32::NEG_INFINITY;
            let mut best_class = 0u8;
            for l in 0..c {
                let p = features.channel(l);
                let top = lerp(p[y0 * fw + x0], p[y0 * fw + x1], ax);
                let bottom = lerp(p[y1 * fw + x0], p[y1 * fw + x1], ax);
                let score = lerp(top, bottom, ay);
                if score > best {
                    best = score;
                    best_class = l as u8;
                }
            }
            labels.push(best_class);
        }
    }
    SegmentationMask::new(height, width, labels)
}
