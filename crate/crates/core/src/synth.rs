//! Synthetic moving-shape sequences with ground-truth masks and flow.
//!
//! Objects are rigid rectangles or disks moving at constant velocity and
//! painted in list order over a (possibly panning) background. Every
//! surface carries seeded per-pixel intensity jitter that moves with it,
//! so flow is observable inside uniformly colored regions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{mean_flow_magnitude, FlowEstimator};
use crate::io;
use crate::kv::{fmt_tuple, KvConfig};
use crate::types::{FlowField, Frame, SegmentationMask};

/// Upper bound on per-axis object and pan speed, in pixels per frame.
pub const MAX_SPEED: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Rect { width: f64, height: f64 },
    Disk { radius: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub class: u8,
    /// Fill color; the class color when unset.
    pub color: Option<[u8; 3]>,
    /// Center at frame 0.
    pub position: (f64, f64),
    /// Displacement per frame.
    pub velocity: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// One prototype color per class; its length is the class count.
    pub class_colors: Vec<[u8; 3]>,
    pub background_class: u8,
    pub background_color: Option<[u8; 3]>,
    /// Per-frame motion of the background texture (camera pan).
    pub pan: (f64, f64),
    pub objects: Vec<ObjectSpec>,
    /// Half-range of the uniform per-pixel jitter, in gray levels.
    pub texture_amplitude: f32,
    /// Probability that a background pixel is recolored toward
    /// `label_noise_class` for a single frame.
    pub label_noise_rate: f64,
    pub label_noise_class: Option<u8>,
    /// Side of the square cells in which label noise is drawn.
    pub noise_patch: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 256,
            class_colors: vec![[60, 40, 40], [200, 120, 110]],
            background_class: 0,
            background_color: None,
            pan: (0.0, 0.0),
            objects: Vec::new(),
            texture_amplitude: 8.0,
            label_noise_rate: 0.0,
            label_noise_class: None,
            noise_patch: 8,
            frames: 100,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn num_classes(&self) -> usize {
        self.class_colors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width < 2 || self.height < 2 {
            return bad(format!("scene must be at least 2x2, got {}x{}", self.width, self.height));
        }
        if !(2..=256).contains(&self.num_classes()) {
            return bad(format!("need 2..=256 class colors, got {}", self.num_classes()));
        }
        if self.frames == 0 {
            return bad("scene needs at least one frame".into());
        }
        let in_range = |c: u8| (c as usize) < self.num_classes();
        if !in_range(self.background_class) {
            return bad(format!("background class {} out of range", self.background_class));
        }
        let fast = |(dx, dy): (f64, f64)| dx.abs() > MAX_SPEED || dy.abs() > MAX_SPEED;
        if fast(self.pan) {
            return bad(format!("pan {:?} exceeds {MAX_SPEED} px/frame", self.pan));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !in_range(o.class) {
                return bad(format!("object {i}: class {} out of range", o.class));
            }
            if fast(o.velocity) {
                return bad(format!("object {i}: velocity {:?} exceeds {MAX_SPEED} px/frame", o.velocity));
            }
            if !(o.position.0.is_finite() && o.position.1.is_finite()) {
                return bad(format!("object {i}: non-finite position"));
            }
        }
        if !(0.0..=1.0).contains(&self.label_noise_rate) {
            return bad(format!("label_noise_rate {} outside [0, 1]", self.label_noise_rate));
        }
        if self.label_noise_rate > 0.0 {
            match self.label_noise_class {
                Some(c) if in_range(c) => {}
                _ => return bad("label noise needs a valid label_noise_class".into()),
            }
        }
        if self.noise_patch == 0 {
            return bad("noise_patch must be positive".into());
        }
        if !(self.texture_amplitude >= 0.0) {
            return bad("texture_amplitude must be nonnegative".into());
        }
        Ok(())
    }

    /// Parses the documented `key = value` scene format.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let d = SceneSpec::default();
        let num_classes: usize = cfg.require("num_classes")?;
        let mut class_colors = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            class_colors.push(cfg.get_tuple::<u8, 3>(&format!("class.{c}.color"))?.ok_or_else(|| {
                Error::InvalidConfig(format!("missing class.{c}.color"))
            })?);
        }
        let pair = |key: &str, default: (f64, f64)| -> Result<(f64, f64)> {
            Ok(cfg.get_tuple::<f64, 2>(key)?.map_or(default, |[a, b]| (a, b)))
        };
        let mut objects = Vec::new();
        for i in 0..cfg.indexed_count("object") {
            let k = |s: &str| format!("object.{i}.{s}");
            let shape = match cfg.get_or::<String>(&k("shape"), "rect".into())?.as_str() {
                "rect" => {
                    let [width, height] = cfg
                        .get_tuple::<f64, 2>(&k("size"))?
                        .ok_or_else(|| Error::InvalidConfig(format!("missing {}", k("size"))))?;
                    Shape::Rect { width, height }
                }
                "disk" => Shape::Disk {
                    radius: cfg.require(&k("radius"))?,
                },
                other => return Err(Error::InvalidConfig(format!("unknown shape {other:?}"))),
            };
            objects.push(ObjectSpec {
                shape,
                class: cfg.require(&k("class"))?,
                color: cfg.get_tuple::<u8, 3>(&k("color"))?,
                position: pair(&k("position"), (0.0, 0.0))?,
                velocity: pair(&k("velocity"), (0.0, 0.0))?,
            });
        }
        let spec = SceneSpec {
            width: cfg.require("width")?,
            height: cfg.require("height")?,
            class_colors,
            background_class: cfg.get_or("background_class", d.background_class)?,
            background_color: cfg.get_tuple::<u8, 3>("background_color")?,
            pan: pair("pan", d.pan)?,
            objects,
            texture_amplitude: cfg.get_or("texture_amplitude", d.texture_amplitude)?,
            label_noise_rate: cfg.get_or("label_noise_rate", d.label_noise_rate)?,
            label_noise_class: cfg.get("label_noise_class")?,
            noise_patch: cfg.get_or("noise_patch", d.noise_patch)?,
            frames: cfg.get_or("frames", d.frames)?,
            seed: cfg.get_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut cfg = KvConfig::default();
        cfg.set("width", self.width);
        cfg.set("height", self.height);
        cfg.set("frames", self.frames);
        cfg.set("seed", self.seed);
        cfg.set("num_classes", self.num_classes());
        for (c, color) in self.class_colors.iter().enumerate() {
            cfg.set(format!("class.{c}.color"), fmt_tuple(color));
        }
        cfg.set("background_class", self.background_class);
        if let Some(color) = self.background_color {
            cfg.set("background_color", fmt_tuple(&color));
        }
        cfg.set("pan", fmt_tuple(&[self.pan.0, self.pan.1]));
        cfg.set("texture_amplitude", self.texture_amplitude);
        cfg.set("label_noise_rate", self.label_noise_rate);
        if let Some(c) = self.label_noise_class {
            cfg.set("label_noise_class", c);
        }
        cfg.set("noise_patch", self.noise_patch);
        for (i, o) in self.objects.iter().enumerate() {
            let k = |s: &str| format!("object.{i}.{s}");
            match o.shape {
                Shape::Rect { width, height } => {
                    cfg.set(k("shape"), "rect");
                    cfg.set(k("size"), fmt_tuple(&[width, height]));
                }
                Shape::Disk { radius } => {
                    cfg.set(k("shape"), "disk");
                    cfg.set(k("radius"), radius);
                }
            }
            cfg.set(k("class"), o.class);
            if let Some(color) = o.color {
                cfg.set(k("color"), fmt_tuple(&color));
            }
            cfg.set(k("position"), fmt_tuple(&[o.position.0, o.position.1]));
            cfg.set(k("velocity"), fmt_tuple(&[o.velocity.0, o.velocity.1]));
        }
        cfg
    }
}

/// Frames, masks and ground-truth backward flow of a generated scene.
/// `flows[0]` is the zero field.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub frames: Vec<Frame>,
    pub masks: Vec<SegmentationMask>,
    pub flows: Vec<FlowField>,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Writes `frames/NNNNNN.ppm`, `masks/NNNNNN.pgm` and `flow/NNNNNN.mcfl`.
    pub fn write_dataset(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["frames", "masks", "flow"] {
            io::create_dir(dir.join(sub))?;
        }
        for (i, ((frame, mask), flow)) in self.frames.iter().zip(&self.masks).zip(&self.flows).enumerate() {
            io::write_frame(frame, io::numbered_path(dir.join("frames"), i, "ppm"))?;
            io::write_mask(mask, io::numbered_path(dir.join("masks"), i, "pgm"))?;
            io::write_flow(flow, io::numbered_path(dir.join("flow"), i, "mcfl"))?;
        }
        Ok(())
    }
}

impl Shape {
    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            Shape::Rect { width, height } => {
                dx >= -width / 2.0 && dx < width / 2.0 && dy >= -height / 2.0 && dy < height / 2.0
            }
            Shape::Disk { radius } => dx * dx + dy * dy <= radius * radius,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Jitter in `[-1, 1)` attached to integer surface coordinates.
fn jitter(seed: u64, surface: u64, x: i64, y: i64) -> f32 {
    let h = splitmix(seed ^ splitmix(surface ^ splitmix((x as u64) ^ splitmix(y as u64))));
    (h >> 40) as f32 / (1u64 << 23) as f32 - 1.0
}

fn shade(color: [u8; 3], offset: f32) -> [u8; 3] {
    color.map(|c| (c as f32 + offset).round().clamp(0.0, 255.0) as u8)
}

/// Renders every frame of the scene with its mask and backward flow.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let bg_color = spec
        .background_color
        .unwrap_or(spec.class_colors[spec.background_class as usize]);
    let mut seq = SyntheticSequence {
        frames: Vec::with_capacity(spec.frames),
        masks: Vec::with_capacity(spec.frames),
        flows: Vec::with_capacity(spec.frames),
    };
    let amp = spec.texture_amplitude;

    for j in 0..spec.frames {
        let t = j as f64;
        let mut rgb = vec![0u8; w * h * 3];
        let mut labels = vec![spec.background_class; w * h];
        let mut u = vec![0f32; w * h];
        let mut v = vec![0f32; w * h];
        // topmost object index per pixel, usize::MAX for background
        let mut owner = vec![usize::MAX; w * h];

        let centers: Vec<(f64, f64)> = spec
            .objects
            .iter()
            .map(|o| (o.position.0 + t * o.velocity.0, o.position.1 + t * o.velocity.1))
            .collect();

        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (xf, yf) = (x as f64, y as f64);
                for (k, o) in spec.objects.iter().enumerate().rev() {
                    if o.shape.contains(xf - centers[k].0, yf - centers[k].1) {
                        owner[i] = k;
                        break;
                    }
                }
                let (color, surface, lx, ly, vel) = match owner[i] {
                    usize::MAX => (bg_color, 0u64, xf - t * spec.pan.0, yf - t * spec.pan.1, spec.pan),
                    k => {
                        let o = &spec.objects[k];
                        labels[i] = o.class;
                        let color = o.color.unwrap_or(spec.class_colors[o.class as usize]);
                        (color, k as u64 + 1, xf - t * o.velocity.0, yf - t * o.velocity.1, o.velocity)
                    }
                };
                let px = shade(color, amp * jitter(spec.seed, surface, lx.floor() as i64, ly.floor() as i64));
                rgb[3 * i..3 * i + 3].copy_from_slice(&px);
                if j > 0 {
                    u[i] = -vel.0 as f32;
                    v[i] = -vel.1 as f32;
                }
            }
        }

        if spec.label_noise_rate > 0.0 {
            let noise_class = spec.label_noise_class.expect("validated") as usize;
            let noise_color = spec.class_colors[noise_class];
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(spec.seed ^ splitmix(j as u64 + 1)));
            let p = spec.noise_patch;
            for py in (0..h).step_by(p) {
                for px in (0..w).step_by(p) {
                    if !rng.gen_bool(spec.label_noise_rate) {
                        continue;
                    }
                    for y in py..(py + p).min(h) {
                        for x in px..(px + p).min(w) {
                            let i = y * w + x;
                            if owner[i] != usize::MAX {
                                continue;
                            }
                            let lx = (x as f64 - t * spec.pan.0).floor() as i64;
                            let ly = (y as f64 - t * spec.pan.1).floor() as i64;
                            let c = shade(noise_color, amp * jitter(spec.seed, 0, lx, ly));
                            rgb[3 * i..3 * i + 3].copy_from_slice(&c);
                        }
                    }
                }
            }
        }

        seq.frames.push(Frame::new(w, h, 3, rgb)?.with_index(j));
        seq.masks.push(SegmentationMask::new(h, w, labels)?);
        seq.flows.push(FlowField::new(h, w, u, v)?);
    }
    Ok(seq)
}

/// Mean ground-truth flow magnitude of every frame.
pub fn motion_profile(seq: &SyntheticSequence) -> Vec<f64> {
    seq.flows.iter().map(mean_flow_magnitude).collect()
}

/// Serves the recorded ground-truth flow of the current frame's index.
#[derive(Clone, Debug)]
pub struct OracleFlow {
    flows: Vec<FlowField>,
}

impl OracleFlow {
    pub fn new(flows: Vec<FlowField>) -> Self {
        Self { flows }
    }
}

impl FlowEstimator for OracleFlow {
    fn estimate(&self, _prev: &Frame, curr: &Frame) -> Result<FlowField> {
        self.flows.get(curr.index()).cloned().ok_or_else(|| {
            Error::InvalidConfig(format!("no ground-truth flow for frame {}", curr.index()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_scene(velocity: (f64, f64)) -> SceneSpec {
        SceneSpec {
            width: 64,
            height: 48,
            frames: 10,
            objects: vec![ObjectSpec {
                shape: Shape::Disk { radius: 10.0 },
                class: 1,
                color: None,
                position: (30.0, 24.0),
                velocity,
            }],
            ..SceneSpec::default()
        }
    }

    #[test]
    fn static_disk_is_constant() {
        let seq = generate(&disk_scene((0.0, 0.0))).unwrap();
        assert_eq!(seq.len(), 10);
        for j in 1..10 {
            assert_eq!(seq.frames[j].data(), seq.frames[0].data());
            assert_eq!(seq.masks[j], seq.masks[0]);
            assert!(seq.flows[j].u().iter().chain(seq.flows[j].v()).all(|&d| d == 0.0));
        }
        assert!(motion_profile(&seq).iter().all(|&m| m == 0.0));
    }

    #[test]
    fn moving_rect_backward_flow() {
        let mut spec = disk_scene((2.0, 0.0));
        spec.objects[0].shape = Shape::Rect {
            width: 16.0,
            height: 12.0,
        };
        let seq = generate(&spec).unwrap();
        let j = 4;
        for y in 0..48 {
            for x in 0..64 {
                let flow = seq.flows[j].at(x, y);
                if seq.masks[j].get(x, y) == 1 {
                    assert_eq!(flow, (-2.0, 0.0));
                } else {
                    assert_eq!(flow, (0.0, 0.0));
                }
            }
        }
        // footprint of frame 4 starts at 30 - 8 + 8
        assert_eq!(seq.masks[j].get(30, 24), 1);
        assert_eq!(seq.masks[j].get(29, 24), 0);
    }

    #[test]
    fn determinism() {
        let mut spec = disk_scene((1.0, -1.0));
        spec.label_noise_rate = 0.1;
        spec.label_noise_class = Some(1);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for j in 0..a.len() {
            assert_eq!(a.frames[j], b.frames[j]);
        }
        spec.seed = 1;
        let c = generate(&spec).unwrap();
        assert_ne!(a.frames[3], c.frames[3]);
    }

    #[test]
    fn texture_moves_with_object() {
        let spec = disk_scene((3.0, 2.0));
        let seq = generate(&spec).unwrap();
        for y in 20..28 {
            for x in 26..34 {
                assert_eq!(seq.frames[2].pixel(x + 3, y + 2), seq.frames[1].pixel(x, y));
            }
        }
    }

    #[test]
    fn kv_roundtrip() {
        let mut spec = disk_scene((1.5, -2.0));
        spec.objects.push(ObjectSpec {
            shape: Shape::Rect {
                width: 4.0,
                height: 6.0,
            },
            class: 0,
            color: Some([1, 2, 3]),
            position: (5.0, 6.5),
            velocity: (0.0, 8.0),
        });
        spec.label_noise_rate = 0.25;
        spec.label_noise_class = Some(1);
        spec.background_color = Some([9, 9, 9]);
        let text = spec.to_kv().to_text();
        let back = SceneSpec::from_kv(&KvConfig::parse(&text).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn validation() {
        let mut spec = disk_scene((9.0, 0.0));
        assert!(spec.validate().is_err());
        spec.objects[0].velocity = (1.0, 0.0);
        spec.objects[0].class = 5;
        assert!(spec.validate().is_err());
        spec.objects[0].class = 1;
        spec.label_noise_rate = 0.1;
        assert!(spec.validate().is_err());
    }
}
