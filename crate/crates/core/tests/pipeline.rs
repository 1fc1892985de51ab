mod common;

use std::time::Duration;

use mcma::pipeline::{run, run_parallel, run_sequential, run_with, Delayed};
use mcma::synth::{generate, ObjectSpec, OracleFlow, SceneSpec, Shape};
use mcma::{
    Error, Executor, FarnebackEstimator, FlowEstimator, FlowField, Frame, Method, Model, ModelSpec, PipelineConfig,
    Result,
};

fn small_scene(frames: usize) -> SceneSpec {
    SceneSpec {
        width: 48,
        height: 32,
        frames,
        label_noise_rate: 0.1,
        label_noise_class: Some(1),
        noise_patch: 4,
        objects: vec![ObjectSpec {
            shape: Shape::Rect { width: 12.0, height: 10.0 },
            class: 1,
            color: None,
            position: (10.0, 12.0),
            velocity: (2.0, 1.0),
        }],
        ..Default::default()
    }
}

fn model() -> Model {
    Model::new(ModelSpec::from_class_colors(&SceneSpec::default().class_colors).with_noise(0.05, 1)).unwrap()
}

fn ok_frames(frames: &[Frame]) -> impl Iterator<Item = Result<Frame>> + '_ {
    frames.iter().cloned().map(Ok)
}

#[test]
fn executors_match_and_runs_are_deterministic() {
    let seq = generate(&small_scene(50)).unwrap();
    let (m, est) = (model(), FarnebackEstimator::default());
    for method in Method::ALL {
        let cfg = PipelineConfig {
            method,
            ..Default::default()
        };
        let par_cfg = PipelineConfig {
            executor: Executor::Parallel,
            ..cfg.clone()
        };
        let a = run_sequential(ok_frames(&seq.frames), &m, &est, &cfg).unwrap();
        let b = run_sequential(ok_frames(&seq.frames), &m, &est, &cfg).unwrap();
        let c = run(ok_frames(&seq.frames), &m, &est, &par_cfg).unwrap();
        assert_eq!(a.masks, b.masks, "{method}");
        assert_eq!(a.masks, c.masks, "{method}");
        assert_eq!(c.timings.len(), 50);
        assert!(c.timings.iter().all(|t| t.executor == Executor::Parallel));
    }
}

#[test]
fn single_frame_is_the_baseline() {
    let seq = generate(&small_scene(1)).unwrap();
    let m = model();
    let out = run_sequential(ok_frames(&seq.frames), &m, &FarnebackEstimator::default(), &PipelineConfig::default())
        .unwrap();
    use mcma::SegmentationModel;
    assert_eq!(out.masks, vec![m.decode(&m.encode(&seq.frames[0]).unwrap()).unwrap()]);
}

#[test]
fn alpha_one_matches_baseline_under_both_executors() {
    let seq = generate(&small_scene(20)).unwrap();
    let (m, est) = (model(), FarnebackEstimator::default());
    let base = run_sequential(
        ok_frames(&seq.frames),
        &m,
        &est,
        &PipelineConfig {
            method: Method::Baseline,
            ..Default::default()
        },
    )
    .unwrap();
    for executor in [Executor::Sequential, Executor::Parallel] {
        let cfg = PipelineConfig {
            alpha: 1.0,
            executor,
            ..Default::default()
        };
        assert_eq!(run(ok_frames(&seq.frames), &m, &est, &cfg).unwrap().masks, base.masks);
    }
}

#[test]
fn hundred_frames_give_hundred_rows() {
    let seq = generate(&small_scene(100)).unwrap();
    let out = run_sequential(ok_frames(&seq.frames), &model(), &OracleFlow::new(seq.flows.clone()), &PipelineConfig::default())
        .unwrap();
    assert_eq!(out.masks.len(), 100);
    assert_eq!(out.timings.len(), 100);
    assert!(out.timings.iter().enumerate().all(|(i, t)| t.frame == i));
}

#[test]
fn dimension_change_reports_the_frame() {
    let seq = generate(&small_scene(5)).unwrap();
    let odd = Frame::new(16, 16, 3, vec![0; 16 * 16 * 3]).unwrap().with_index(5);
    for executor in [Executor::Sequential, Executor::Parallel] {
        let frames = ok_frames(&seq.frames).chain(std::iter::once(Ok(odd.clone())));
        let cfg = PipelineConfig {
            executor,
            ..Default::default()
        };
        let err = run(frames, &model(), &FarnebackEstimator::default(), &cfg).unwrap_err();
        assert_eq!(err.frame(), Some(5), "{err}");
        assert!(err.to_string().starts_with("frame 5:"));
    }
}

struct FailAt(usize);

impl FlowEstimator for FailAt {
    fn estimate(&self, _prev: &Frame, curr: &Frame) -> Result<FlowField> {
        if curr.index() == self.0 {
            return Err(Error::InvalidConfig("estimator gave up".into()));
        }
        Ok(FlowField::zeros(curr.height(), curr.width()))
    }
}

#[test]
fn stage_failures_carry_the_frame_index() {
    let seq = generate(&small_scene(8)).unwrap();
    for executor in [Executor::Sequential, Executor::Parallel] {
        let cfg = PipelineConfig {
            executor,
            ..Default::default()
        };
        let err = run(ok_frames(&seq.frames), &model(), &FailAt(3), &cfg).unwrap_err();
        assert_eq!(err.frame(), Some(3));
    }
    let source = std::iter::once(Err(Error::MalformedHeader("bad".into())));
    let err = run(source, &model(), &FailAt(0), &PipelineConfig::default()).unwrap_err();
    assert_eq!(err.frame(), Some(0));
}

#[test]
fn empty_source_is_an_error() {
    let none = std::iter::empty::<Result<Frame>>();
    assert!(run_sequential(none, &model(), &FarnebackEstimator::default(), &PipelineConfig::default()).is_err());
}

#[test]
fn outputs_stream_in_input_order() {
    let seq = generate(&small_scene(30)).unwrap();
    let cfg = PipelineConfig {
        executor: Executor::Parallel,
        ..Default::default()
    };
    let mut seen = Vec::new();
    let n = run_with(ok_frames(&seq.frames), &model(), &FarnebackEstimator::default(), &cfg, |o| {
        assert_eq!(o.flow.is_some(), o.index > 0);
        seen.push(o.index);
        Ok(())
    })
    .unwrap();
    assert_eq!(n, 30);
    assert_eq!(seen, (0..30).collect::<Vec<_>>());
}

#[test]
fn stage_timings_are_consistent_with_the_schedule() {
    let seq = generate(&small_scene(6)).unwrap();
    let delay = Duration::from_millis(3);
    let m = Delayed::new(model(), delay);
    let est = Delayed::new(FarnebackEstimator::default(), delay);
    let eps = 200.0;
    let s = run_sequential(ok_frames(&seq.frames), &m, &est, &PipelineConfig::default()).unwrap();
    for t in &s.timings {
        assert!(t.total_us >= t.flow_us + t.encode_us + t.warp_us + t.fuse_us + t.decode_us - eps, "{t:?}");
    }
    let cfg = PipelineConfig {
        executor: Executor::Parallel,
        ..Default::default()
    };
    let p = run_parallel(ok_frames(&seq.frames), &m, &est, &cfg).unwrap();
    for t in &p.timings {
        assert!(t.total_us >= t.flow_us.max(t.encode_us) + t.warp_us + t.fuse_us + t.decode_us - eps, "{t:?}");
    }
}

#[test]
fn oracle_flow_scenes_run_end_to_end() {
    let spec = common::moving_noisy_scene(3.0, 1, 6, 0.02);
    let seq = generate(&spec).unwrap();
    let r = common::run(&seq.frames, &common::noisy_model(1), &OracleFlow::new(seq.flows.clone()), Method::Mcma, 0.5, 1.0);
    assert_eq!(r.masks.len(), 6);
    assert_eq!(r.flows.len(), 5);
}
