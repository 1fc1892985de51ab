#![allow(dead_code)]

use std::collections::BTreeMap;

use mcma::pipeline::run_sequential_with;
use mcma::synth::{ObjectSpec, OracleFlow, SceneSpec, Shape, SyntheticSequence};
use mcma::{FlowEstimator, FlowField, Frame, Method, Model, ModelSpec, PipelineConfig, SegmentationMask};

pub const CLASS_COLORS: [[u8; 3]; 2] = [[60, 40, 40], [200, 120, 110]];

/// Two objects crossing the frame in opposite directions over background
/// flicker of the object class.
pub fn moving_noisy_scene(speed: f64, seed: u64, frames: usize, noise_rate: f64) -> SceneSpec {
    SceneSpec {
        width: 320,
        height: 256,
        frames,
        seed,
        class_colors: CLASS_COLORS.to_vec(),
        texture_amplitude: 24.0,
        objects: vec![
            ObjectSpec {
                shape: Shape::Rect { width: 96.0, height: 80.0 },
                class: 1,
                color: None,
                position: (60.0, 80.0),
                velocity: (speed, 0.0),
            },
            ObjectSpec {
                shape: Shape::Disk { radius: 36.0 },
                class: 1,
                color: None,
                position: (260.0, 190.0),
                velocity: (-speed, -speed * 0.5),
            },
        ],
        label_noise_rate: noise_rate,
        label_noise_class: Some(1),
        noise_patch: 8,
        ..Default::default()
    }
}

pub fn noisy_model(seed: u64) -> Model {
    Model::new(ModelSpec::from_class_colors(&CLASS_COLORS).with_noise(0.02, seed)).unwrap()
}

pub struct Run {
    pub masks: Vec<SegmentationMask>,
    /// Flow used at each frame; absent for frame 0 and non-MCMA methods.
    pub flows: BTreeMap<usize, FlowField>,
}

pub fn run(frames: &[Frame], model: &Model, est: &dyn FlowEstimator, method: Method, alpha: f32, lambda: f32) -> Run {
    let cfg = PipelineConfig {
        alpha,
        lambda,
        method,
        num_classes: 2,
        ..Default::default()
    };
    let mut out = Run {
        masks: Vec::new(),
        flows: BTreeMap::new(),
    };
    run_sequential_with(frames.iter().cloned().map(Ok), model, est, &cfg, |o| {
        out.masks.push(o.mask);
        if let Some(f) = o.flow {
            out.flows.insert(o.index, f);
        }
        Ok(())
    })
    .unwrap();
    out
}

/// Replays flows recorded by an earlier run, so parameter sweeps do not
/// repeat the estimation.
pub fn replay(seq: &SyntheticSequence, flows: &BTreeMap<usize, FlowField>) -> OracleFlow {
    let (h, w) = flows.values().next().map_or((2, 2), |f| (f.height(), f.width()));
    let all = (0..seq.len())
        .map(|i| flows.get(&i).cloned().unwrap_or_else(|| FlowField::zeros(h, w)))
        .collect();
    OracleFlow::new(all)
}

pub fn indexed<T>(items: Vec<T>) -> BTreeMap<usize, T> {
    items.into_iter().enumerate().collect()
}
